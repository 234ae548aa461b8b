#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "nlccam/error.hpp"
#include "nlccam/localization.hpp"

namespace nlccam {

inline constexpr double kIouThreshold = 0.5;

inline double iou(const Box& a, const Box& b) {
  const long long iw = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const long long ih = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const long long inter = iw * ih;
  const long long uni = a.area() + b.area() - inter;
  if (inter == 0 || uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct EvalRecord {
  std::string id;
  std::size_t label = 0;
  std::vector<Box> gt_boxes;
  std::vector<std::size_t> top_classes;  // best first, at most 5
  std::vector<double> top_probs;
  Box pred_box;
  // Box from the map built with the true class forced to rank 1. When absent
  // the GT-known judgment falls back to pred_box.
  std::optional<Box> gt_known_box;
};

struct Judgment {
  bool cls1 = false;
  bool cls5 = false;
  bool loc1 = false;
  bool loc5 = false;
  bool gt_known = false;
};

inline bool box_correct(const Box& pred, const std::vector<Box>& gt_boxes) {
  return std::any_of(gt_boxes.begin(), gt_boxes.end(),
                     [&](const Box& g) { return iou(pred, g) > kIouThreshold; });
}

inline Judgment judge(const EvalRecord& r) {
  Judgment j;
  const std::size_t n = std::min<std::size_t>(5, r.top_classes.size());
  j.cls1 = n > 0 && r.top_classes.front() == r.label;
  j.cls5 = std::find(r.top_classes.begin(), r.top_classes.begin() + static_cast<long>(n),
                     r.label) != r.top_classes.begin() + static_cast<long>(n);
  const bool box_ok = box_correct(r.pred_box, r.gt_boxes);
  j.loc1 = j.cls1 && box_ok;
  j.loc5 = j.cls5 && box_ok;
  j.gt_known = box_correct(r.gt_known_box.value_or(r.pred_box), r.gt_boxes);
  return j;
}

struct MetricLine {
  std::string name;
  double error_percent = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy_percent() const { return 100.0 - error_percent; }
};

struct ErrorReport {
  MetricLine cls_top1{"cls_top1_err"};
  MetricLine cls_top5{"cls_top5_err"};
  MetricLine loc_top1{"loc_top1_err"};
  MetricLine loc_top5{"loc_top5_err"};
  MetricLine gt_known{"gt_known_loc_err"};

  std::array<const MetricLine*, 5> lines() const {
    return {&cls_top1, &cls_top5, &loc_top1, &loc_top5, &gt_known};
  }
};

inline ErrorReport aggregate(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ValueError("cannot aggregate an empty record list");
  ErrorReport rep;
  for (const auto& r : records) {
    const Judgment j = judge(r);
    rep.cls_top1.correct += j.cls1;
    rep.cls_top5.correct += j.cls5;
    rep.loc_top1.correct += j.loc1;
    rep.loc_top5.correct += j.loc5;
    rep.gt_known.correct += j.gt_known;
  }
  const std::size_t total = records.size();
  for (MetricLine* m : {&rep.cls_top1, &rep.cls_top5, &rep.loc_top1, &rep.loc_top5, &rep.gt_known}) {
    m->total = total;
    m->error_percent = 100.0 * static_cast<double>(total - m->correct) / static_cast<double>(total);
  }
  return rep;
}

}  // namespace nlccam
