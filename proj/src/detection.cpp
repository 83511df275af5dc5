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

#include "fsmod/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "fsmod/tensor.hpp"

namespace fsmod {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace {

std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

std::vector<bool> match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                        double threshold) {
  std::vector<bool> tp(dets.size(), false);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : score_order(dets)) {
    double best = threshold;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].image_id != dets[d].image_id || gts[g].class_id != dets[d].class_id) {
        continue;
      }
      const double o = iou(dets[d].box, gts[g].box);
      if (o >= best && (best_gt == gts.size() || o > best)) {
        best = o;
        best_gt = g;
      }
    }
    if (best_gt != gts.size()) {
      taken[best_gt] = true;
      tp[d] = true;
    }
  }
  return tp;
}

ApResult average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                           int class_id, double threshold) {
  std::vector<Detection> cls_dets;
  std::vector<GroundTruth> cls_gts;
  for (const auto& d : dets)
    if (d.class_id == class_id) cls_dets.push_back(d);
  for (const auto& g : gts)
    if (g.class_id == class_id) cls_gts.push_back(g);

  ApResult result;
  result.num_gt = cls_gts.size();
  result.num_det = cls_dets.size();
  if (cls_gts.empty()) {
    result.undefined = true;
    return result;
  }
  if (cls_dets.empty()) return result;

  const auto flags = match(cls_dets, cls_gts, threshold);
  const auto order = score_order(cls_dets);
  const std::size_t n = order.size();
  // Extended precision so exact rational APs round to the nearest double.
  std::vector<std::size_t> tps(n);
  std::vector<long double> precision(n);
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    ++(flags[order[k]] ? tp : fp);
    tps[k] = tp;
    precision[k] = static_cast<long double>(tp) / static_cast<long double>(tp + fp);
  }
  for (std::size_t k = n - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
  long double area = 0.0L;
  std::size_t prev_tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (tps[k] > prev_tp) {
      area += static_cast<long double>(tps[k] - prev_tp) * precision[k];
      prev_tp = tps[k];
    }
  }
  result.ap = static_cast<double>(area / static_cast<long double>(cls_gts.size()));
  return result;
}

double nap50(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
             const std::vector<int>& novel_class_ids) {
  if (novel_class_ids.empty()) throw PreconditionError("nap50: empty novel class set");
  double total = 0.0;
  for (int c : novel_class_ids) total += average_precision(dets, gts, c, 0.5).ap;
  return total / static_cast<double>(novel_class_ids.size());
}

namespace {

template <typename Record, typename Fill>
std::vector<Record> parse_records(std::istream& in, std::size_t expected_fields, Fill fill) {
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string t; fields >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    if (tokens.size() != expected_fields) {
      throw ParseError("expected " + std::to_string(expected_fields) + " fields, got " +
                       std::to_string(tokens.size()), lineno);
    }
    Record rec;
    try {
      fill(tokens, rec);
    } catch (const std::logic_error&) {
      throw ParseError("malformed number in record", lineno);
    }
    if (!rec.box.valid()) throw ParseError("invalid box (need x1<x2, y1<y2)", lineno);
    out.push_back(rec);
  }
  return out;
}

double parse_real(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

long long parse_int(const std::string& s) {
  std::size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

void put_box(std::ostream& out, const Box& b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, " %.17g %.17g %.17g %.17g", b.x1, b.y1, b.x2, b.y2);
  out << buf;
}

}  // namespace

std::vector<Detection> parse_detections(std::istream& in) {
  return parse_records<Detection>(in, 7, [](const auto& t, Detection& d) {
    d.image_id = parse_int(t[0]);
    d.class_id = static_cast<int>(parse_int(t[1]));
    d.score = parse_real(t[2]);
    d.box = {parse_real(t[3]), parse_real(t[4]), parse_real(t[5]), parse_real(t[6])};
    if (!std::isfinite(d.score)) throw std::invalid_argument("score");
  });
}

std::vector<GroundTruth> parse_ground_truth(std::istream& in) {
  return parse_records<GroundTruth>(in, 6, [](const auto& t, GroundTruth& g) {
    g.image_id = parse_int(t[0]);
    g.class_id = static_cast<int>(parse_int(t[1]));
    g.box = {parse_real(t[2]), parse_real(t[3]), parse_real(t[4]), parse_real(t[5])};
  });
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_detections(in);
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_ground_truth(in);
}

void write_detections(std::ostream& out, const std::vector<Detection>& dets) {
  out << "# image_id class_id score x1 y1 x2 y2\n";
  char buf[64];
  for (const auto& d : dets) {
    std::snprintf(buf, sizeof buf, " %.17g", d.score);
    out << d.image_id << ' ' << d.class_id << buf;
    put_box(out, d.box);
    out << '\n';
  }
}

void write_ground_truth(std::ostream& out, const std::vector<GroundTruth>& gts) {
  out << "# image_id class_id x1 y1 x2 y2\n";
  for (const auto& g : gts) {
    out << g.image_id << ' ' << g.class_id;
    put_box(out, g.box);
    out << '\n';
  }
}

std::vector<Detection> nms(std::vector<Detection> dets, double threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && k.image_id == d.image_id &&
             iou(k.box, d.box) >= threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace fsmod
