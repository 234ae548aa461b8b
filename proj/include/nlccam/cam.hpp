#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "nlccam/combiner.hpp"
#include "nlccam/error.hpp"
#include "nlccam/tensor.hpp"

namespace nlccam {

// Classes sorted by descending probability: order[k] is the class at rank k+1.
struct ClassRanking {
  std::vector<std::size_t> order;
  Tensor probs;  // aligned with `order`
  Tensor scores; // raw FC scores, indexed by class

  std::size_t num_classes() const { return order.size(); }
  std::size_t top() const { return order.front(); }
};

namespace detail {

inline void check_fc(const Tensor& w_fc, std::size_t channels, const char* what) {
  require_rank(w_fc, 2, what);
  if (w_fc.extent(0) != channels) {
    throw DimensionError(detail::concat(what, ": FC weight ", detail::shape_string(w_fc.shape()),
                                        " does not match ", channels, " feature channels"));
  }
}

inline void check_class(std::size_t c, std::size_t num_classes) {
  if (c >= num_classes) {
    throw ValueError(detail::concat("class index ", c, " outside [0, ", num_classes, ")"));
  }
}

}  // namespace detail

// Ranking from raw scores; ties go to the lower class index.
inline ClassRanking rank_scores(const Tensor& scores) {
  require_rank(scores, 1, "rank_scores");
  const std::size_t k = scores.size();
  ClassRanking r;
  r.order.resize(k);
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const Tensor p = softmax(scores);
  r.probs = Tensor({k});
  for (std::size_t i = 0; i < k; ++i) r.probs[i] = p[r.order[i]];
  r.scores = scores;
  return r;
}

inline Tensor class_scores(const Tensor& pooled, const Tensor& w_fc) {
  require_rank(pooled, 1, "class_scores");
  detail::check_fc(w_fc, pooled.size(), "class_scores");
  const std::size_t n = w_fc.extent(0), k = w_fc.extent(1);
  Tensor s({k});
  for (std::size_t ch = 0; ch < n; ++ch)
    for (std::size_t c = 0; c < k; ++c) s[c] += w_fc.at(ch, c) * pooled[ch];
  return s;
}

inline ClassRanking rank_classes(const Tensor& pooled, const Tensor& w_fc) {
  return rank_scores(class_scores(pooled, w_fc));
}

// M^c[h,w] = sum_n w[n,c] f[n,h,w]
inline Tensor class_map(const Tensor& f, const Tensor& w_fc, std::size_t c) {
  require_rank(f, 3, "class_map");
  detail::check_fc(w_fc, f.extent(0), "class_map");
  detail::check_class(c, w_fc.extent(1));
  const std::size_t n = f.extent(0), hw = f.extent(1) * f.extent(2);
  Tensor m({f.extent(1), f.extent(2)});
  for (std::size_t ch = 0; ch < n; ++ch) {
    const double w = w_fc.at(ch, c);
    const double* src = f.data().data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) m[i] += w * src[i];
  }
  return m;
}

// Per-channel weights of the combined map: sum_k g(k) w[:, c_k].
inline Tensor combined_weights(const Tensor& w_fc, const ClassRanking& ranking,
                               const CombinationFn& g) {
  require_rank(w_fc, 2, "combined_weights");
  const std::size_t n = w_fc.extent(0), k = w_fc.extent(1);
  if (ranking.order.size() != k) {
    throw DimensionError(detail::concat("ranking covers ", ranking.order.size(),
                                        " classes, FC weight has ", k));
  }
  const Tensor coeffs = weights_vector(g, k);
  Tensor out({n});
  for (std::size_t rank = 0; rank < k; ++rank) {
    const double gk = coeffs[rank];
    if (gk == 0.0) continue;
    const std::size_t c = ranking.order[rank];
    for (std::size_t ch = 0; ch < n; ++ch) out[ch] += gk * w_fc.at(ch, c);
  }
  return out;
}

inline Tensor ccam(const Tensor& f, const Tensor& w_fc, const ClassRanking& ranking,
                   const CombinationFn& g) {
  require_rank(f, 3, "ccam");
  detail::check_fc(w_fc, f.extent(0), "ccam");
  const Tensor w = combined_weights(w_fc, ranking, g);
  const std::size_t n = f.extent(0), hw = f.extent(1) * f.extent(2);
  Tensor m({f.extent(1), f.extent(2)});
  for (std::size_t ch = 0; ch < n; ++ch) {
    const double wc = w[ch];
    if (wc == 0.0) continue;
    const double* src = f.data().data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) m[i] += wc * src[i];
  }
  return m;
}

// Moves `gt` to rank 1; the other classes keep their relative order.
inline ClassRanking force_top(const ClassRanking& ranking, std::size_t gt) {
  detail::check_class(gt, ranking.num_classes());
  ClassRanking r = ranking;
  const auto it = std::find(r.order.begin(), r.order.end(), gt);
  const auto pos = static_cast<std::size_t>(it - r.order.begin());
  std::rotate(r.order.begin(), it, it + 1);
  const double p = ranking.probs[pos];
  for (std::size_t i = pos; i > 0; --i) r.probs[i] = ranking.probs[i - 1];
  r.probs[0] = p;
  return r;
}

inline Tensor gt_known_ccam(const Tensor& f, const Tensor& w_fc, std::size_t gt,
                            const ClassRanking& ranking, const CombinationFn& g) {
  return ccam(f, w_fc, force_top(ranking, gt), g);
}

}  // namespace nlccam
