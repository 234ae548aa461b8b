#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nlccam/model.hpp"
#include "nlccam/random.hpp"

namespace nlccam {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
// Denominator floor of the relative error: components whose analytic and
// numeric values are both below it are held to an absolute 1e-8, which sits
// well above central-difference rounding noise (~1e-10 at this step).
// Gradients that are exactly zero in theory (the last block's attention
// weights, see README) land here.
inline constexpr double kGradCheckFloor = 1e-4;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckGroup {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  bool passed(double tol = kGradCheckTolerance) const { return max_rel_error <= tol; }
};

// The small configuration used for end-to-end gradient checks.
inline ModelConfig small_config(std::uint64_t seed) {
  ModelConfig c;
  c.height = 16;
  c.width = 16;
  c.in_channels = 3;
  c.patch = 2;
  c.width1 = 8;
  c.width2 = 16;
  c.num_classes = 3;
  c.reduction = 8;
  c.seed = seed;
  return c;
}

struct GradCheckOptions {
  std::size_t batch = 2;
  // Give normalization scale/shift random values so the attention path
  // contributes to the loss (at zero init its gradients vanish identically).
  bool randomize_norm = true;
  // Fault injection: perturb one analytic gradient entry.
  bool corrupt_backward = false;
};

namespace detail {

inline double batch_loss(const Model& m, const std::vector<Tensor>& images,
                         const std::vector<std::size_t>& labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) loss += cross_entropy(m.forward(images[i]).logits, labels[i]).loss;
  return loss / static_cast<double>(images.size());
}

}  // namespace detail

inline GradCheckReport grad_check_model(const ModelConfig& cfg, std::uint64_t seed,
                                        const GradCheckOptions& opt = {}) {
  Model model = Model::initialize(cfg);
  if (opt.randomize_norm) {
    Rng rng = Rng::derived(seed, "gradcheck.norm");
    auto fill = [&](NonLocalParams& nl) {
      for (auto& v : nl.gamma.data()) v = rng.uniform(0.5, 1.5);
      for (auto& v : nl.beta.data()) v = rng.uniform(-0.5, 0.5);
    };
    if (model.params().nl_low) fill(*model.params().nl_low);
    if (model.params().nl_high) fill(*model.params().nl_high);
  }

  Rng data_rng = Rng::derived(seed, "gradcheck.data");
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < opt.batch; ++i) {
    Tensor img({cfg.in_channels, cfg.height, cfg.width});
    for (auto& v : img.data()) v = data_rng.uniform();
    images.push_back(std::move(img));
    labels.push_back(static_cast<std::size_t>(data_rng.below(cfg.num_classes)));
  }

  ModelParams analytic = ModelParams::zeros(cfg);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto fwd = model.forward(images[i]);
    auto lg = cross_entropy(fwd.logits, labels[i]);
    for (auto& v : lg.dlogits.data()) v /= static_cast<double>(images.size());
    detail::accumulate(analytic, model.backward(fwd, lg.dlogits));
  }
  if (opt.corrupt_backward) analytic.embed_w[0] += 1e-2;

  std::vector<Tensor*> grads;
  analytic.for_each([&](const std::string&, Tensor& t) { grads.push_back(&t); });

  GradCheckReport report;
  std::size_t gi = 0;
  model.params().for_each([&](const std::string& name, Tensor& param) {
    GradCheckGroup group{name, param.size()};
    const Tensor& g = *grads[gi++];
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param[i];
      param[i] = saved + kGradCheckStep;
      const double up = detail::batch_loss(model, images, labels);
      param[i] = saved - kGradCheckStep;
      const double down = detail::batch_loss(model, images, labels);
      param[i] = saved;
      const double numeric = (up - down) / (2.0 * kGradCheckStep);
      group.max_rel_error = std::max(group.max_rel_error, relative_error(g[i], numeric));
      group.max_abs_grad = std::max(group.max_abs_grad, std::abs(g[i]));
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(std::move(group));
  });
  return report;
}

}  // namespace nlccam
