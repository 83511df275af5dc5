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

#include "fsmod/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace fsmod {

const ImageRecord& DatasetIndex::image(std::int64_t image_id) const {
  for (const auto& rec : images)
    if (rec.image_id == image_id) return rec;
  throw PreconditionError("unknown image id " + std::to_string(image_id));
}

std::filesystem::path DatasetIndex::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : root / p;
}

std::vector<GroundTruth> DatasetIndex::ground_truth() const {
  std::vector<GroundTruth> out;
  for (const auto& rec : images) out.insert(out.end(), rec.boxes.begin(), rec.boxes.end());
  return out;
}

DatasetIndex parse_index(std::istream& in, const std::filesystem::path& root) {
  DatasetIndex index;
  index.root = root;
  std::set<std::int64_t> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const bool indented = line[0] == ' ' || line[0] == '\t';
    try {
      if (indented) {
        if (tok[0] != "box" || tok.size() != 6) {
          throw ParseError("expected 'box class_id x1 y1 x2 y2'", lineno);
        }
        if (index.images.empty()) throw ParseError("box record before any image header", lineno);
        GroundTruth gt;
        gt.image_id = index.images.back().image_id;
        gt.class_id = std::stoi(tok[1]);
        gt.box = {std::stod(tok[2]), std::stod(tok[3]), std::stod(tok[4]), std::stod(tok[5])};
        if (!gt.box.valid()) throw ParseError("invalid box: need x1<x2 and y1<y2", lineno);
        index.images.back().boxes.push_back(gt);
      } else {
        if (tok.size() < 3) throw ParseError("expected 'image_id rgb_path ir_path'", lineno);
        ImageRecord rec;
        rec.image_id = std::stoll(tok[0]);
        rec.rgb_path = tok[1];
        rec.ir_path = tok[2];
        for (std::size_t i = 3; i < tok.size(); ++i) rec.condition += (i > 3 ? " " : "") + tok[i];
        if (!ids.insert(rec.image_id).second) {
          throw ParseError("duplicate image id " + tok[0], lineno);
        }
        index.images.push_back(std::move(rec));
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::logic_error&) {
      throw ParseError("malformed number", lineno);
    }
  }
  return index;
}

DatasetIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open index " + path.string());
  DatasetIndex index = parse_index(in, path.parent_path());
  for (const auto& rec : index.images) {
    for (const auto& p : {rec.rgb_path, rec.ir_path}) {
      if (!std::filesystem::exists(index.resolve(p))) {
        throw IoError("image " + std::to_string(rec.image_id) + ": missing modality file " +
                      index.resolve(p).string());
      }
    }
  }
  return index;
}

void write_index(std::ostream& out, const DatasetIndex& index) {
  out << "# image_id rgb_path ir_path [condition]\n";
  char buf[160];
  for (const auto& rec : index.images) {
    out << rec.image_id << ' ' << rec.rgb_path << ' ' << rec.ir_path;
    if (!rec.condition.empty()) out << ' ' << rec.condition;
    out << '\n';
    for (const auto& gt : rec.boxes) {
      std::snprintf(buf, sizeof buf, "  box %d %.17g %.17g %.17g %.17g\n", gt.class_id, gt.box.x1,
                    gt.box.y1, gt.box.x2, gt.box.y2);
      out << buf;
    }
  }
}

void write_index(const std::filesystem::path& path, const DatasetIndex& index) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_index(out, index);
}

const ImagePair& Dataset::pair(std::int64_t image_id) const {
  auto it = pairs.find(image_id);
  if (it == pairs.end()) throw PreconditionError("no maps for image " + std::to_string(image_id));
  return it->second;
}

Dataset load_dataset(const std::filesystem::path& index_path) {
  Dataset data;
  data.index = load_index(index_path);
  for (const auto& rec : data.index.images) {
    ImagePair p{read_fmp1(data.index.resolve(rec.rgb_path)), read_fmp1(data.index.resolve(rec.ir_path))};
    if (!p.rgb.same_shape(p.ir)) {
      throw DimensionError("image " + std::to_string(rec.image_id) + ": modality shapes differ " +
                           to_string(p.rgb.shape()) + " vs " + to_string(p.ir.shape()));
    }
    for (const auto& gt : rec.boxes) {
      if (gt.box.x1 < 0 || gt.box.y1 < 0 || gt.box.x2 > static_cast<double>(p.rgb.dim(2)) ||
          gt.box.y2 > static_cast<double>(p.rgb.dim(1))) {
        throw PreconditionError("image " + std::to_string(rec.image_id) + ": box outside map");
      }
    }
    data.pairs.emplace(rec.image_id, std::move(p));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Synthetic generation

std::vector<ClassSignature> class_signatures(const DataConfig& cfg, std::uint64_t seed) {
  const std::size_t D = cfg.channels, half = D / 2;
  if (D < 2) throw PreconditionError("synthetic data needs at least 2 channels");
  std::mt19937_64 rng(derive_seed(seed, "signatures"));
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::bernoulli_distribution sign(0.5);
  const std::size_t banks = static_cast<std::size_t>(cfg.classes) / 2 + 1;
  auto draw_bank = [&] {
    std::vector<std::vector<double>> bank(banks, std::vector<double>(half));
    for (auto& v : bank)
      for (double& x : v) x = cfg.signal * mag(rng) * (sign(rng) ? 1.0 : -1.0);
    return bank;
  };
  const auto rgb_bank = draw_bank();
  const auto ir_bank = draw_bank();
  std::vector<ClassSignature> sigs(static_cast<std::size_t>(cfg.classes));
  for (std::size_t c = 0; c < sigs.size(); ++c) {
    sigs[c].rgb.assign(D, 0.0);
    sigs[c].ir.assign(D, 0.0);
    // classes pair up differently in each modality: (0,1)(2,3).. in RGB,
    // (1,2)(3,4).. in IR
    const auto& r = rgb_bank[c / 2];
    const auto& i = ir_bank[(c + 1) / 2];
    std::copy(r.begin(), r.end(), sigs[c].rgb.begin());
    std::copy(i.begin(), i.end(), sigs[c].ir.begin() + static_cast<long>(half));
  }
  return sigs;
}

Dataset generate_synthetic(const DataConfig& cfg, std::uint64_t seed, std::int64_t first_image_id) {
  if (cfg.classes < 1) throw PreconditionError("synthetic: need at least one class");
  if (cfg.object_size == 0 || cfg.object_size > cfg.height || cfg.object_size > cfg.width) {
    throw PreconditionError("synthetic: object size " + std::to_string(cfg.object_size) +
                            " does not fit a " + std::to_string(cfg.height) + "x" +
                            std::to_string(cfg.width) + " map");
  }
  const std::size_t D = cfg.channels, H = cfg.height, W = cfg.width, S = cfg.object_size;
  const auto sigs = class_signatures(cfg, seed);
  std::mt19937_64 rng(derive_seed(seed, "images." + std::to_string(first_image_id)));
  std::uniform_int_distribution<int> pick_class(0, cfg.classes - 1);
  std::uniform_int_distribution<std::size_t> pick_row(0, H - S), pick_col(0, W - S);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = static_cast<double>(S) / 3.0;

  Dataset data;
  for (std::size_t n = 0; n < cfg.images; ++n) {
    ImageRecord rec;
    rec.image_id = first_image_id + static_cast<std::int64_t>(n);
    rec.condition = "synthetic";
    ImagePair pair{Tensor::feature_map(D, H, W), Tensor::feature_map(D, H, W)};
    for (std::size_t o = 0; o < cfg.objects_per_image; ++o) {
      Box box;
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const auto r = static_cast<double>(pick_row(rng)), c = static_cast<double>(pick_col(rng));
        box = {c, r, c + static_cast<double>(S), r + static_cast<double>(S)};
        // keep a one-pixel gap between objects
        const Box grown{box.x1 - 1, box.y1 - 1, box.x2 + 1, box.y2 + 1};
        placed = std::none_of(rec.boxes.begin(), rec.boxes.end(),
                              [&](const GroundTruth& g) { return iou(grown, g.box) > 0.0; });
      }
      if (!placed) {
        throw PreconditionError("synthetic: cannot place " +
                                std::to_string(cfg.objects_per_image) + " objects of size " +
                                std::to_string(S) + " without overlap");
      }
      const int cls = pick_class(rng);
      rec.boxes.push_back({box, cls, rec.image_id});
      const double cx = 0.5 * (box.x1 + box.x2), cy = 0.5 * (box.y1 + box.y2);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double dy = static_cast<double>(i) + 0.5 - cy, dx = static_cast<double>(j) + 0.5 - cx;
          const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          for (std::size_t d = 0; d < D; ++d) {
            pair.rgb.at(d, i, j) += sigs[cls].rgb[d] * g;
            pair.ir.at(d, i, j) += sigs[cls].ir[d] * g;
          }
        }
    }
    for (double& v : pair.rgb.data()) v += cfg.noise * noise(rng);
    for (double& v : pair.ir.data()) v += cfg.noise * noise(rng);
    if (cfg.ablate != "none") {
      FeatureMap& target = cfg.ablate == "rgb" ? pair.rgb : pair.ir;
      const std::size_t lo = cfg.ablate == "rgb" ? 0 : D / 2, hi = cfg.ablate == "rgb" ? D / 2 : D;
      for (std::size_t d = lo; d < hi; ++d)
        for (std::size_t p = 0; p < H * W; ++p) target[d * H * W + p] = 0.0;
    }
    data.pairs.emplace(rec.image_id, std::move(pair));
    data.index.images.push_back(std::move(rec));
  }
  return data;
}

DatasetIndex write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "maps");
  DatasetIndex index = data.index;
  index.root = dir;
  for (auto& rec : index.images) {
    const std::string stem = "maps/" + std::to_string(rec.image_id);
    rec.rgb_path = stem + "_rgb.fmp";
    rec.ir_path = stem + "_ir.fmp";
    const ImagePair& p = data.pair(rec.image_id);
    write_fmp1(dir / rec.rgb_path, p.rgb);
    write_fmp1(dir / rec.ir_path, p.ir);
  }
  write_index(dir / "annotations.txt", index);
  std::ofstream gt(dir / "gt.txt");
  if (!gt) throw IoError("cannot write " + (dir / "gt.txt").string());
  write_ground_truth(gt, index.ground_truth());
  return index;
}

// ---------------------------------------------------------------------------
// Supports and episodes

bool SupportSet::contains(const SupportInstance& inst) const {
  auto it = per_class.find(inst.box.class_id);
  if (it == per_class.end()) return false;
  return std::find(it->second.begin(), it->second.end(), inst) != it->second.end();
}

namespace {

std::vector<SupportInstance> instances_of(const DatasetIndex& index, int cls) {
  std::vector<SupportInstance> out;
  for (const auto& rec : index.images)
    for (const auto& gt : rec.boxes)
      if (gt.class_id == cls) out.push_back({rec.image_id, gt});
  return out;
}

// k distinct picks from pool, kept in pool order.
std::vector<SupportInstance> draw(const std::vector<SupportInstance>& pool, std::size_t k,
                                  std::mt19937_64& rng) {
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<SupportInstance> out;
  for (std::size_t i : idx) out.push_back(pool[i]);
  return out;
}

}  // namespace

std::vector<SupportSet> build_supports(const DatasetIndex& index, const SplitSpec& split,
                                       std::size_t shots, std::size_t n_seeds,
                                       std::uint64_t master_seed,
                                       std::vector<std::string>* notes) {
  validate(split);
  if (shots == 0) throw PreconditionError("build_supports: K must be positive");
  std::map<int, std::vector<SupportInstance>> pools;
  for (int cls : split.all()) {
    pools[cls] = instances_of(index, cls);
    if (pools[cls].size() < shots) {
      throw SamplingError("class " + std::to_string(cls) + " has " +
                          std::to_string(pools[cls].size()) + " instances, K=" +
                          std::to_string(shots) + " requested");
    }
  }
  std::vector<SupportSet> sets;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                      static_cast<std::uint32_t>(master_seed >> 32), static_cast<std::uint32_t>(s)};
    std::mt19937_64 rng(seq);
    SupportSet set{s, shots, {}};
    for (const auto& [cls, pool] : pools) set.per_class[cls] = draw(pool, shots, rng);
    if (notes) {
      for (const auto& prev : sets) {
        for (const auto& [cls, inst] : set.per_class) {
          if (pools[cls].size() > shots && prev.per_class.at(cls) == inst) {
            notes->push_back("seeds " + std::to_string(prev.seed_index) + " and " +
                             std::to_string(s) + " drew identical supports for class " +
                             std::to_string(cls));
          }
        }
      }
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

namespace {

bool query_eligible(const ImageRecord& rec, const SplitSpec& split, Stage stage,
                    const SupportSet* active) {
  for (const auto& gt : rec.boxes) {
    if (!split.is_novel(gt.class_id)) continue;
    if (stage == Stage::kBase) return false;
    if (!active->contains({rec.image_id, gt})) return false;
  }
  return true;
}

}  // namespace

Episode sample_episode(const DatasetIndex& index, const SplitSpec& split, Stage stage,
                       const EpisodeConfig& cfg, const SupportSet* active, std::mt19937_64& rng) {
  validate(split);
  if (stage == Stage::kFinetune && !active) {
    throw PreconditionError("fine-tune episodes need an active support set");
  }
  if (cfg.max_slots == 0) throw PreconditionError("episode: T_max must be positive");
  std::vector<int> classes = stage == Stage::kBase ? split.base : split.all();
  std::sort(classes.begin(), classes.end());

  Episode ep;
  ep.stage = stage;
  const std::size_t n_slots = std::min(cfg.max_slots, classes.size());
  for (std::size_t i = 0; i < n_slots; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, classes.size() - 1);
    std::swap(classes[i], classes[pick(rng)]);
  }
  ep.slot_classes.assign(classes.begin(), classes.begin() + static_cast<long>(n_slots));
  for (int c : ep.slot_classes) {
    if (stage == Stage::kBase && split.is_novel(c)) {
      throw SamplingError("novel class " + std::to_string(c) + " drawn in a base episode");
    }
  }
  auto in_slots = [&](int c) {
    return std::find(ep.slot_classes.begin(), ep.slot_classes.end(), c) != ep.slot_classes.end();
  };

  std::vector<const ImageRecord*> candidates;
  for (const auto& rec : index.images) {
    if (!query_eligible(rec, split, stage, active)) continue;
    if (std::any_of(rec.boxes.begin(), rec.boxes.end(),
                    [&](const GroundTruth& g) { return in_slots(g.class_id); })) {
      candidates.push_back(&rec);
    }
  }
  if (candidates.empty()) throw SamplingError("no eligible query image for the sampled classes");
  std::uniform_int_distribution<std::size_t> pick_query(0, candidates.size() - 1);
  const ImageRecord& query = *candidates[pick_query(rng)];
  ep.query_image = query.image_id;
  for (const auto& gt : query.boxes)
    if (in_slots(gt.class_id)) ep.query_gt.push_back(gt);

  for (int c : ep.slot_classes) {
    std::vector<SupportInstance> pool =
        stage == Stage::kBase ? instances_of(index, c) : active->per_class.at(c);
    std::vector<SupportInstance> others;
    std::copy_if(pool.begin(), pool.end(), std::back_inserter(others),
                 [&](const SupportInstance& s) { return s.image_id != query.image_id; });
    if (!others.empty()) pool = std::move(others);
    ep.supports.push_back(draw(pool, std::min(cfg.support_shots, pool.size()), rng));
  }
  return ep;
}

bool respects_support_set(const Episode& ep, const SplitSpec& split, const SupportSet& active,
                          const DatasetIndex& index) {
  for (const auto& slot : ep.supports)
    for (const auto& inst : slot)
      if (split.is_novel(inst.box.class_id) && !active.contains(inst)) return false;
  const ImageRecord& query = index.image(ep.query_image);
  for (const auto& gt : query.boxes)
    if (split.is_novel(gt.class_id) && !active.contains({query.image_id, gt})) return false;
  return true;
}

}  // namespace fsmod
