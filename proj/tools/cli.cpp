// Copyright 2026 The FSMOD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "fsmod/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "fsmod/config.hpp"
#include "fsmod/dataset.hpp"
#include "fsmod/model.hpp"
#include "fsmod/testing/verification.hpp"

namespace fsmod {
namespace {

constexpr double kGradTolerance = 1e-6;

struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

// Config file (or defaults), then --set overrides, then --seed.
ExperimentConfig resolve(const Globals& g) {
  std::string text = to_text(g.config_path.empty() ? parse_config("") : load_config(g.config_path));
  std::map<std::string, std::string> overrides;
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw PreconditionError("--set expects key=value, got '" + s + "'");
    overrides[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (g.seed) overrides["seed"] = std::to_string(*g.seed);
  std::istringstream in(text);
  std::string merged;
  for (std::string line; std::getline(in, line);) {
    const std::string key = line.substr(0, line.find(" = "));
    if (auto it = overrides.find(key); it != overrides.end()) {
      line = key + " = " + it->second;
      overrides.erase(it);
    }
    merged += line + "\n";
  }
  for (const auto& [k, v] : overrides) merged += k + " = " + v + "\n";
  return parse_config(merged);
}

void echo(std::ostream& out, const std::string& command, const ExperimentConfig& cfg) {
  out << "# command = " << command << "\n";
  std::istringstream in(to_text(cfg));
  for (std::string line; std::getline(in, line);) out << "# " << line << "\n";
}

std::ofstream open_output(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  return f;
}

std::vector<int> parse_id_list(const std::string& text) {
  std::vector<int> ids;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != token.size()) throw PreconditionError("bad class id '" + token + "'");
    ids.push_back(v);
  }
  if (ids.empty()) throw PreconditionError("empty class id list");
  return ids;
}

void require_channels(const Dataset& data, const ExperimentConfig& cfg) {
  for (const auto& [id, pair] : data.pairs) {
    if (pair.rgb.dim(0) != cfg.data.channels) {
      throw DimensionError("image " + std::to_string(id) + " has " + std::to_string(pair.rgb.dim(0)) +
                           " channels, config expects " + std::to_string(cfg.data.channels));
    }
  }
}

std::string format(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

struct GenArgs {
  std::string out;
  std::int64_t first_id = 0;
  std::optional<std::size_t> images;
};

int cmd_gen(const GenArgs& a, ExperimentConfig cfg, std::ostream& out) {
  if (a.images) cfg.data.images = *a.images;
  echo(out, "gen", cfg);
  const Dataset data = generate_synthetic(cfg.data, cfg.seed, a.first_id);
  write_dataset(data, a.out);
  out << "images " << data.index.images.size() << " first_id " << a.first_id << "\n";
  out << "index " << (std::filesystem::path(a.out) / "annotations.txt").string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data, out, log, protos;
};

int cmd_train(const TrainArgs& a, const ExperimentConfig& cfg, std::ostream& out) {
  echo(out, "train", cfg);
  const Dataset data = load_dataset(a.data);
  require_channels(data, cfg);
  ParamStore params = init_model(cfg);
  const TrainLog log = run_training(data, cfg, params);
  if (a.log.empty()) {
    for (const auto& line : log.lines) out << line << "\n";
  } else {
    std::ofstream f = open_output(a.log);
    echo(f, "train", cfg);
    for (const auto& line : log.lines) f << line << "\n";
    if (!f) throw IoError("write failed: " + a.log);
  }
  write_params(a.out, params);
  out << "params " << a.out << " (" << params.parameter_count() << " values)\n";
  if (!a.protos.empty()) {
    const PrototypeSet protos = inference_prototypes(data, cfg, params);
    write_prototypes(a.protos, protos);
    out << "prototypes " << a.protos << " (" << protos.slots() << " classes, " << cfg.fewshot.seeds
        << " support sets)\n";
  }
  return kExitOk;
}

struct InferArgs {
  std::string data, params, protos, out;
};

int cmd_infer(const InferArgs& a, const ExperimentConfig& cfg, std::ostream& out) {
  echo(out, "infer", cfg);
  const Dataset data = load_dataset(a.data);
  require_channels(data, cfg);
  const ParamStore params = read_params(a.params);
  const PrototypeSet protos = read_prototypes(a.protos);
  const auto dets = infer_all(data, protos, cfg, params);
  std::ofstream f = open_output(a.out);
  write_detections(f, dets);
  if (!f) throw IoError("write failed: " + a.out);
  out << "detections " << dets.size() << " images " << data.index.images.size() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string dets, gts, novel;
};

int cmd_eval(const EvalArgs& a, const ExperimentConfig& cfg, std::ostream& out) {
  echo(out, "eval", cfg);
  const auto dets = read_detections(a.dets);
  const auto gts = read_ground_truth(a.gts);
  const std::vector<int> novel = a.novel.empty() ? cfg.split.novel : parse_id_list(a.novel);
  std::set<int> classes(novel.begin(), novel.end());
  for (const auto& g : gts) classes.insert(g.class_id);
  out << "class  split  gt  det  ap50\n";
  for (int c : classes) {
    const ApResult r = average_precision(dets, gts, c, 0.5);
    const bool is_novel = std::find(novel.begin(), novel.end(), c) != novel.end();
    out << c << "  " << (is_novel ? "novel" : cfg.split.is_base(c) ? "base" : "other") << "  " << r.num_gt << "  " << r.num_det << "  "
        << (r.undefined ? std::string("n/a") : format("%.4f", r.ap)) << "\n";
  }
  out << "nAP50 " << format("%.4f", nap50(dets, gts, novel)) << "\n";
  return kExitOk;
}

struct FuseArgs {
  std::string rgb, ir, mode = "cda", params, out;
};

int cmd_fuse(const FuseArgs& a, ExperimentConfig cfg, std::ostream& out) {
  const FeatureMap rgb = read_fmp1(a.rgb);
  const FeatureMap ir = read_fmp1(a.ir);
  if (!rgb.same_shape(ir)) {
    throw DimensionError("fuse: rgb " + to_string(rgb.shape()) + " vs ir " + to_string(ir.shape()));
  }
  cfg.fusion.mode = parse_fusion_mode(a.mode);
  cfg.data.channels = cfg.fusion.channels = cfg.cam.channels = rgb.dim(0);
  echo(out, "fuse", cfg);
  const ParamStore params = a.params.empty() ? init_model(cfg) : read_params(a.params);
  const FeatureMap fused = fuse(rgb, ir, cfg.fusion.mode, cfg.fusion, params);
  write_fmp1(a.out, fused);
  char sum[32];
  std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(checksum(fused)));
  out << "shape " << to_string(fused.shape()) << "\n";
  out << "checksum " << sum << "\n";
  return kExitOk;
}

int cmd_selftest(const std::string& fault, const ExperimentConfig& cfg, std::ostream& out) {
  echo(out, "selftest", cfg);
  out << "# checks = " << verify::selftest_checks().size() << "\n";
  if (fault == "softmax") debug::set_softmax_fault(true);
  std::vector<verify::CheckResult> results;
  try {
    results = verify::run_selftest();
  } catch (...) {
    debug::set_softmax_fault(false);
    throw;
  }
  debug::set_softmax_fault(false);
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << "\n";
    failed += r.passed ? 0 : 1;
  }
  out << "# " << (results.size() - failed) << "/" << results.size() << " passed\n";
  return failed == 0 ? kExitOk : kExitNumeric;
}

int cmd_gradcheck(std::size_t configurations, double eps, const ExperimentConfig& cfg,
                  std::ostream& out) {
  echo(out, "gradcheck", cfg);
  out << "# tolerance = " << format("%.0e", kGradTolerance) << "\n";
  out << "# eps = " << format("%.0e", eps) << "\n";
  bool ok = true;
  for (auto target : {verify::AuditTarget::kNeighborhood, verify::AuditTarget::kFusion,
                      verify::AuditTarget::kAggregation, verify::AuditTarget::kTrainLoss}) {
    for (std::size_t i = 0; i < configurations; ++i) {
      const auto r = verify::run_audit(target, cfg.seed + i, eps);
      const std::size_t above = r.check.count_above(kGradTolerance);
      ok = ok && above == 0;
      out << (above == 0 ? "PASS " : "FAIL ") << verify::to_string(target) << " seed=" << r.seed
          << " entries=" << r.check.entries << " above=" << above
          << " max_rel=" << format("%.3e", r.check.max_rel_error) << " worst=" << r.check.worst_key
          << "[" << r.check.worst_index << "]\n";
    }
  }
  return ok ? kExitOk : kExitNumeric;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot multispectral detection toolkit", "fsmod"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "flat key = value config file");
  app.add_option("--set", g.sets, "override one config key (key=value); repeatable");
  app.add_option("--seed", g.seed, "master seed");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic paired dataset");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--first-id", gen.first_id, "first image id");
  gen_cmd->add_option("--images", gen.images, "image count (overrides data.images)");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "base training and few-shot fine-tuning");
  train_cmd->add_option("--data", train.data, "annotation index")->required();
  train_cmd->add_option("--out", train.out, "parameter file to write")->required();
  train_cmd->add_option("--log", train.log, "per-step log file (default: stdout)");
  train_cmd->add_option("--protos", train.protos, "write seed-averaged prototypes here");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "detect on every image of an index");
  infer_cmd->add_option("--data", infer.data, "annotation index of query images")->required();
  infer_cmd->add_option("--params", infer.params, "trained parameters")->required();
  infer_cmd->add_option("--protos", infer.protos, "precomputed prototypes")->required();
  infer_cmd->add_option("--out", infer.out, "detections file")->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "per-class AP50 and nAP50");
  eval_cmd->add_option("--dets", eval.dets, "detections file")->required();
  eval_cmd->add_option("--gts", eval.gts, "ground-truth file")->required();
  eval_cmd->add_option("--novel", eval.novel, "comma-separated novel ids (default: split.novel)");

  FuseArgs fuse_args;
  auto* fuse_cmd = app.add_subcommand("fuse", "fuse one RGB/IR feature pair");
  fuse_cmd->add_option("--rgb", fuse_args.rgb, "RGB feature map")->required();
  fuse_cmd->add_option("--ir", fuse_args.ir, "IR feature map")->required();
  fuse_cmd->add_option("--mode", fuse_args.mode, "cda, concat or add")
      ->check(CLI::IsMember({"cda", "concat", "add", "cmi-stub"}));
  fuse_cmd->add_option("--params", fuse_args.params, "parameter file (default: seed init)");
  fuse_cmd->add_option("--out", fuse_args.out, "fused feature map")->required();

  std::string fault;
  auto* selftest_cmd = app.add_subcommand("selftest", "run every oracle comparison");
  selftest_cmd->add_option("--inject-fault", fault, "corrupt a kernel before running")
      ->check(CLI::IsMember({"softmax"}));

  std::size_t configurations = 3;
  double eps = 1e-5;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audits");
  grad_cmd->add_option("--configs", configurations, "seeded configurations per target")
      ->check(CLI::PositiveNumber);
  grad_cmd->add_option("--eps", eps, "central-difference step")->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  const ExperimentConfig cfg = resolve(g);
  if (*gen_cmd) return cmd_gen(gen, cfg, out);
  if (*train_cmd) return cmd_train(train, cfg, out);
  if (*infer_cmd) return cmd_infer(infer, cfg, out);
  if (*eval_cmd) return cmd_eval(eval, cfg, out);
  if (*fuse_cmd) return cmd_fuse(fuse_args, cfg, out);
  if (*selftest_cmd) return cmd_selftest(fault, cfg, out);
  return cmd_gradcheck(configurations, eps, cfg, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const SamplingError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NotImplementedError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {  // shape and precondition errors
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace fsmod
