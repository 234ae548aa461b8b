#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "nlccam/cam.hpp"
#include "nlccam/combiner.hpp"
#include "nlccam/dataset.hpp"
#include "nlccam/localization.hpp"
#include "nlccam/metrics.hpp"
#include "nlccam/model.hpp"

namespace nlccam {

// Everything the localization path produces for one image.
struct Localization {
  ClassRanking ranking;
  Tensor map;           // combined map at feature resolution
  Box box;              // from `map`
  Tensor gt_known_map;  // with the true class forced to rank 1
  Box gt_known_box;
};

inline Localization localize(const Model& model, const Sample& sample, const CombinationFn& g, double tau) {
  const ForwardResult fwd = model.forward(sample.image);
  const Tensor& w_fc = model.params().fc_w;
  const std::size_t h = sample.image.extent(1), w = sample.image.extent(2);
  Localization loc;
  loc.ranking = rank_scores(fwd.logits);
  loc.map = ccam(fwd.features, w_fc, loc.ranking, g);
  loc.box = bbox_from_map(loc.map, tau, h, w);
  loc.gt_known_map = gt_known_ccam(fwd.features, w_fc, sample.label, loc.ranking, g);
  loc.gt_known_box = bbox_from_map(loc.gt_known_map, tau, h, w);
  return loc;
}

inline EvalRecord make_record(const Sample& sample, const Localization& loc) {
  EvalRecord r;
  r.id = sample.id;
  r.label = sample.label;
  r.gt_boxes = sample.boxes;
  const std::size_t n = std::min<std::size_t>(5, loc.ranking.num_classes());
  for (std::size_t i = 0; i < n; ++i) {
    r.top_classes.push_back(loc.ranking.order[i]);
    r.top_probs.push_back(loc.ranking.probs[i]);
  }
  r.pred_box = loc.box;
  r.gt_known_box = loc.gt_known_box;
  return r;
}

// Records sorted by image id.
inline std::vector<EvalRecord> evaluate(const Model& model, const Dataset& data, const CombinationFn& g,
                                        double tau) {
  std::vector<EvalRecord> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(make_record(s, localize(model, s, g, tau)));
  std::sort(out.begin(), out.end(), [](const EvalRecord& a, const EvalRecord& b) { return a.id < b.id; });
  return out;
}

// Reduces a top/bottom function so it fits K classes. Returns true if clipped.
inline bool clip_to_classes(CombinationFn& g, std::size_t num_classes) {
  auto* tb = std::get_if<TopBottom>(&g);
  if (!tb || tb->top + tb->bottom <= num_classes) return false;
  tb->top = std::min(tb->top, num_classes);
  tb->bottom = num_classes - tb->top;
  return true;
}

}  // namespace nlccam
