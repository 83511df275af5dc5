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

#include "fsmod/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace fsmod {

std::vector<int> SplitSpec::all() const {
  std::vector<int> out(base);
  out.insert(out.end(), novel.begin(), novel.end());
  std::sort(out.begin(), out.end());
  return out;
}

bool SplitSpec::is_novel(int c) const { return std::find(novel.begin(), novel.end(), c) != novel.end(); }
bool SplitSpec::is_base(int c) const { return std::find(base.begin(), base.end(), c) != base.end(); }

void validate(const SplitSpec& split) {
  if (split.base.empty() || split.novel.empty()) {
    throw PreconditionError("split: base and novel class sets must be nonempty");
  }
  for (int c : split.novel) {
    if (split.is_base(c)) {
      throw PreconditionError("split: class " + std::to_string(c) + " is both base and novel");
    }
  }
  const auto all = split.all();
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
    throw PreconditionError("split: duplicate class id");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t used = 0;
  const long long n = std::stoll(v, &used);
  if (used != v.size() || n < 0) throw std::invalid_argument(v);
  return static_cast<std::size_t>(n);
}

double to_real(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return d;
}

std::vector<int> to_ids(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(static_cast<int>(to_size(item)));
  }
  return out;
}

std::string ids_text(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + std::to_string(ids[i]);
  return out;
}

// Shortest text that parses back to the same double.
std::string real_text(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field size_field(T ExperimentConfig::*group, std::size_t T::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) { (c.*group).*member = to_size(v); },
          [=](const ExperimentConfig& c) { return std::to_string((c.*group).*member); }};
}

template <typename T>
Field real_field(T ExperimentConfig::*group, double T::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) { (c.*group).*member = to_real(v); },
          [=](const ExperimentConfig& c) { return real_text((c.*group).*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", {[](C& c, const std::string& v) { c.seed = to_size(v); },
                [](const C& c) { return std::to_string(c.seed); }}},
      {"data.classes", {[](C& c, const std::string& v) { c.data.classes = static_cast<int>(to_size(v)); },
                        [](const C& c) { return std::to_string(c.data.classes); }}},
      {"data.images", size_field(&C::data, &DataConfig::images)},
      {"data.channels", size_field(&C::data, &DataConfig::channels)},
      {"data.height", size_field(&C::data, &DataConfig::height)},
      {"data.width", size_field(&C::data, &DataConfig::width)},
      {"data.objects", size_field(&C::data, &DataConfig::objects_per_image)},
      {"data.object_size", size_field(&C::data, &DataConfig::object_size)},
      {"data.noise", real_field(&C::data, &DataConfig::noise)},
      {"data.signal", real_field(&C::data, &DataConfig::signal)},
      {"data.ablate", {[](C& c, const std::string& v) {
                         if (v != "none" && v != "rgb" && v != "ir") throw std::invalid_argument(v);
                         c.data.ablate = v;
                       },
                       [](const C& c) { return c.data.ablate; }}},
      {"split.base", {[](C& c, const std::string& v) { c.split.base = to_ids(v); },
                      [](const C& c) { return ids_text(c.split.base); }}},
      {"split.novel", {[](C& c, const std::string& v) { c.split.novel = to_ids(v); },
                       [](const C& c) { return ids_text(c.split.novel); }}},
      {"fusion.mode", {[](C& c, const std::string& v) { c.fusion.mode = parse_fusion_mode(v); },
                       [](const C& c) { return to_string(c.fusion.mode); }}},
      {"fusion.na_k", size_field(&C::fusion, &FusionConfig::na_window)},
      {"fusion.r", size_field(&C::fusion, &FusionConfig::stride)},
      {"fusion.s", real_field(&C::fusion, &FusionConfig::offset_scale)},
      {"fusion.k_off", size_field(&C::fusion, &FusionConfig::offset_kernel)},
      {"cam.gate", {[](C& c, const std::string& v) { c.cam.gate = parse_gate_mode(v); },
                    [](const C& c) {
                      return std::string(c.cam.gate == GateMode::kFilter ? "filter" : "matrix");
                    }}},
      {"roi.output", size_field(&C::roi, &RoiAlignConfig::output)},
      {"roi.sampling", size_field(&C::roi, &RoiAlignConfig::sampling)},
      {"episode.t_max", size_field(&C::episode, &EpisodeConfig::max_slots)},
      {"episode.shots", size_field(&C::episode, &EpisodeConfig::support_shots)},
      {"fewshot.k", size_field(&C::fewshot, &FewShotConfig::shots)},
      {"fewshot.seeds", size_field(&C::fewshot, &FewShotConfig::seeds)},
      {"fewshot.active", size_field(&C::fewshot, &FewShotConfig::active)},
      {"head.alpha", real_field(&C::head, &HeadConfig::alpha)},
      {"head.score_thr", real_field(&C::head, &HeadConfig::score_threshold)},
      {"head.nms", real_field(&C::head, &HeadConfig::nms_iou)},
      {"train.base_steps", size_field(&C::train, &TrainConfig::base_steps)},
      {"train.finetune_steps", size_field(&C::train, &TrainConfig::finetune_steps)},
      {"train.lr", real_field(&C::train, &TrainConfig::lr)},
      {"train.lambda_meta", real_field(&C::train, &TrainConfig::lambda_meta)},
      {"train.lambda_cls", real_field(&C::train, &TrainConfig::lambda_cls)},
      {"train.lambda_box", real_field(&C::train, &TrainConfig::lambda_box)},
      {"train.alpha", real_field(&C::train, &TrainConfig::alpha)},
  };
  return table;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::map<std::string, const Field*> index;
  for (const auto& [k, f] : fields()) index[k] = &f;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ParseError("unknown config key '" + key + "'", lineno);
    if (!seen.insert(key).second) throw ParseError("duplicate config key '" + key + "'", lineno);
    try {
      it->second->set(cfg, value);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("invalid value '" + value + "' for " + key, lineno);
    }
  }
  cfg.fusion.channels = cfg.data.channels;
  cfg.cam.channels = cfg.data.channels;
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace fsmod
