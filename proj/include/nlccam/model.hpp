#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nlccam/cam.hpp"
#include "nlccam/dataset.hpp"
#include "nlccam/error.hpp"
#include "nlccam/nonlocal.hpp"
#include "nlccam/random.hpp"
#include "nlccam/storage.hpp"
#include "nlccam/tensor.hpp"

namespace nlccam {

struct ModelConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t in_channels = 3;
  std::size_t patch = 2;
  std::size_t width1 = 16;  // channels after patch embedding
  std::size_t width2 = 32;  // channels of the last feature map (N)
  std::size_t num_classes = 8;
  bool nl_low = true;
  bool nl_high = true;
  std::size_t reduction = 8;
  std::uint64_t seed = 0;

  std::size_t grid_h() const { return height / patch; }
  std::size_t grid_w() const { return width / patch; }
  std::size_t feature_h() const { return grid_h() / 2; }
  std::size_t feature_w() const { return grid_w() / 2; }
  std::size_t patch_dim() const { return in_channels * patch * patch; }

  void validate() const {
    if (patch == 0 || height == 0 || width == 0) throw ValueError("image and patch sizes must be positive");
    if (height % patch || width % patch) {
      throw ValueError(detail::concat("image ", height, "x", width, " is not divisible by patch ", patch));
    }
    if (grid_h() % 2 || grid_w() % 2) {
      throw ValueError(detail::concat("patch grid ", grid_h(), "x", grid_w(), " must be even for 2x2 pooling"));
    }
    if (num_classes < 2) throw ValueError("at least two classes are required");
    if (in_channels == 0 || width1 == 0 || width2 == 0) throw ValueError("channel widths must be positive");
    if (reduction == 0) throw ValueError("reduction ratio must be positive");
  }

  std::map<std::string, std::string> to_metadata() const {
    return {{"cfg.height", std::to_string(height)},         {"cfg.width", std::to_string(width)},
            {"cfg.in_channels", std::to_string(in_channels)}, {"cfg.patch", std::to_string(patch)},
            {"cfg.width1", std::to_string(width1)},         {"cfg.width2", std::to_string(width2)},
            {"cfg.num_classes", std::to_string(num_classes)}, {"cfg.nl_low", nl_low ? "1" : "0"},
            {"cfg.nl_high", nl_high ? "1" : "0"},           {"cfg.reduction", std::to_string(reduction)},
            {"cfg.seed", std::to_string(seed)}};
  }

  static ModelConfig from_metadata(const Checkpoint& ckpt) {
    auto num = [&](const char* key) {
      const std::string v = ckpt.meta(key);
      try {
        return static_cast<std::size_t>(std::stoull(v));
      } catch (const std::exception&) {
        throw FormatError(std::string("checkpoint: metadata ") + key + " is not a number: '" + v + "'");
      }
    };
    ModelConfig c;
    c.height = num("cfg.height");
    c.width = num("cfg.width");
    c.in_channels = num("cfg.in_channels");
    c.patch = num("cfg.patch");
    c.width1 = num("cfg.width1");
    c.width2 = num("cfg.width2");
    c.num_classes = num("cfg.num_classes");
    c.nl_low = ckpt.meta("cfg.nl_low") == "1";
    c.nl_high = ckpt.meta("cfg.nl_high") == "1";
    c.reduction = num("cfg.reduction");
    c.seed = num("cfg.seed");
    c.validate();
    return c;
  }
};

// All trainable tensors. Gradients use the same layout.
struct ModelParams {
  Tensor embed_w;  // width1 x (Cin*P*P)
  Tensor embed_b;  // width1
  Tensor proj_w;   // width2 x width1
  Tensor proj_b;   // width2
  Tensor fc_w;     // width2 x K
  std::optional<NonLocalParams> nl_low;
  std::optional<NonLocalParams> nl_high;

  static ModelParams zeros(const ModelConfig& cfg) {
    ModelParams p;
    p.embed_w = Tensor({cfg.width1, cfg.patch_dim()});
    p.embed_b = Tensor({cfg.width1});
    p.proj_w = Tensor({cfg.width2, cfg.width1});
    p.proj_b = Tensor({cfg.width2});
    p.fc_w = Tensor({cfg.width2, cfg.num_classes});
    if (cfg.nl_low) p.nl_low = NonLocalParams::zeros(cfg.width1, cfg.reduction);
    if (cfg.nl_high) p.nl_high = NonLocalParams::zeros(cfg.width2, cfg.reduction);
    return p;
  }

  // Visits every tensor with its checkpoint name, in a fixed order.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("embed.W", self.embed_w);
    fn("embed.b", self.embed_b);
    auto nl = [&](const std::string& prefix, auto& block) {
      fn(prefix + ".Wf", block.wf);
      fn(prefix + ".Wg", block.wg);
      fn(prefix + ".Wh", block.wh);
      fn(prefix + ".Wk", block.wk);
      fn(prefix + ".gamma", block.gamma);
      fn(prefix + ".beta", block.beta);
    };
    if (self.nl_low) nl("nl0", *self.nl_low);
    fn("proj.W", self.proj_w);
    fn("proj.b", self.proj_b);
    if (self.nl_high) nl("nl1", *self.nl_high);
    fn("fc.W", self.fc_w);
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, std::forward<Fn>(fn));
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, std::forward<Fn>(fn));
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for_each([&](const std::string& n, const Tensor&) { out.push_back(n); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }
};

struct ForwardCache {
  Tensor patches;  // (Cin*P*P) x L1
  Tensor pre1;     // width1 x L1, before ReLU
  std::optional<NonLocalCache> low;
  Tensor pre2;     // width2 x L2, before ReLU
  Tensor pooled_in;  // width1 x L2, pooled low-level map
  std::optional<NonLocalCache> high;
};

struct ForwardResult {
  Tensor logits;    // K
  Tensor features;  // N x H x W, the map the CAMs are built from
  Tensor pooled;    // N, spatial mean of `features`
  ForwardCache cache;
};

class Model {
 public:
  Model(ModelConfig cfg, ModelParams params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    check_params();
  }

  // He-uniform weights, U(+-sqrt(6 / fan_in)), from per-tensor streams;
  // biases and normalization parameters start at zero.
  static Model initialize(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p = ModelParams::zeros(cfg);
    p.for_each([&](const std::string& name, Tensor& t) {
      if (t.rank() != 2) return;
      const double s = std::sqrt(6.0 / static_cast<double>(t.extent(1)));
      Rng rng = Rng::derived(cfg.seed, name);
      for (auto& v : t.data()) v = rng.uniform(-s, s);
    });
    // fc.W is stored N x K, so its fan-in is the first extent.
    {
      const double s = std::sqrt(6.0 / static_cast<double>(cfg.width2));
      Rng rng = Rng::derived(cfg.seed, "fc.W");
      for (auto& v : p.fc_w.data()) v = rng.uniform(-s, s);
    }
    return Model(cfg, std::move(p));
  }

  static Model from_checkpoint(const Checkpoint& ckpt) {
    const ModelConfig cfg = ModelConfig::from_metadata(ckpt);
    ModelParams p = ModelParams::zeros(cfg);
    p.for_each([&](const std::string& name, Tensor& t) {
      const Tensor& stored = ckpt.get(name);
      if (stored.shape() != t.shape()) {
        throw DimensionError(detail::concat("checkpoint tensor '", name, "' has shape ",
                                            detail::shape_string(stored.shape()), ", expected ",
                                            detail::shape_string(t.shape())));
      }
      t = stored;
    });
    const auto expected = p.names();
    for (const auto& [name, t] : ckpt.tensors) {
      if (std::find(expected.begin(), expected.end(), name) == expected.end()) {
        throw FormatError("checkpoint: unexpected parameter '" + name + "'");
      }
    }
    return Model(cfg, std::move(p));
  }

  Checkpoint to_checkpoint(std::map<std::string, std::string> extra_meta = {}) const {
    Checkpoint ckpt;
    params_.for_each([&](const std::string& name, const Tensor& t) { ckpt.tensors.emplace(name, t); });
    ckpt.metadata = cfg_.to_metadata();
    for (auto& [k, v] : extra_meta) ckpt.metadata[k] = v;
    return ckpt;
  }

  const ModelConfig& config() const { return cfg_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  ForwardResult forward(const Tensor& image) const {
    if (image.rank() != 3 || image.extent(0) != cfg_.in_channels || image.extent(1) != cfg_.height ||
        image.extent(2) != cfg_.width) {
      throw DimensionError(detail::concat("model expects image [", cfg_.in_channels, "x", cfg_.height, "x",
                                          cfg_.width, "], got ", detail::shape_string(image.shape())));
    }
    ForwardResult r;
    ForwardCache& c = r.cache;
    const std::size_t gh = cfg_.grid_h(), gw = cfg_.grid_w(), l1 = gh * gw;
    const std::size_t fh = cfg_.feature_h(), fw = cfg_.feature_w(), l2 = fh * fw;
    const std::size_t w1 = cfg_.width1, w2 = cfg_.width2, pd = cfg_.patch_dim(), ps = cfg_.patch;

    c.patches = Tensor({pd, l1});
    for (std::size_t ch = 0; ch < cfg_.in_channels; ++ch)
      for (std::size_t dy = 0; dy < ps; ++dy)
        for (std::size_t dx = 0; dx < ps; ++dx) {
          const std::size_t row = (ch * ps + dy) * ps + dx;
          for (std::size_t y = 0; y < gh; ++y)
            for (std::size_t x = 0; x < gw; ++x)
              c.patches.at(row, y * gw + x) = image.at(ch, y * ps + dy, x * ps + dx);
        }

    c.pre1 = Tensor({w1, l1});
    detail::gemm(false, false, w1, l1, pd, params_.embed_w.data().data(), c.patches.data().data(),
                 c.pre1.data().data(), false);
    Tensor act1({w1, gh, gw});
    for (std::size_t ch = 0; ch < w1; ++ch)
      for (std::size_t i = 0; i < l1; ++i) {
        double& v = c.pre1.at(ch, i);
        v += params_.embed_b[ch];
        act1[ch * l1 + i] = v > 0.0 ? v : 0.0;
      }

    if (params_.nl_low) {
      auto out = nl_forward(act1, *params_.nl_low);
      act1 = std::move(out.y);
      c.low = std::move(out.cache);
    }

    c.pooled_in = Tensor({w1, l2});
    for (std::size_t ch = 0; ch < w1; ++ch)
      for (std::size_t y = 0; y < fh; ++y)
        for (std::size_t x = 0; x < fw; ++x) {
          const double s = act1.at(ch, 2 * y, 2 * x) + act1.at(ch, 2 * y, 2 * x + 1) +
                           act1.at(ch, 2 * y + 1, 2 * x) + act1.at(ch, 2 * y + 1, 2 * x + 1);
          c.pooled_in.at(ch, y * fw + x) = 0.25 * s;
        }

    c.pre2 = Tensor({w2, l2});
    detail::gemm(false, false, w2, l2, w1, params_.proj_w.data().data(), c.pooled_in.data().data(),
                 c.pre2.data().data(), false);
    Tensor act2({w2, fh, fw});
    for (std::size_t ch = 0; ch < w2; ++ch)
      for (std::size_t i = 0; i < l2; ++i) {
        double& v = c.pre2.at(ch, i);
        v += params_.proj_b[ch];
        act2[ch * l2 + i] = v > 0.0 ? v : 0.0;
      }

    if (params_.nl_high) {
      auto out = nl_forward(act2, *params_.nl_high);
      act2 = std::move(out.y);
      c.high = std::move(out.cache);
    }

    r.features = std::move(act2);
    r.pooled = spatial_mean(r.features);
    r.logits = class_scores(r.pooled, params_.fc_w);
    return r;
  }

  // Gradients of a loss with respect to every parameter, given dL/dlogits.
  ModelParams backward(const ForwardResult& fwd, const Tensor& dlogits) const {
    require_rank(dlogits, 1, "model backward");
    if (dlogits.size() != cfg_.num_classes) throw DimensionError("model backward: logit gradient size mismatch");
    const ForwardCache& c = fwd.cache;
    ModelParams g = ModelParams::zeros(cfg_);
    const std::size_t gh = cfg_.grid_h(), gw = cfg_.grid_w(), l1 = gh * gw;
    const std::size_t fh = cfg_.feature_h(), fw = cfg_.feature_w(), l2 = fh * fw;
    const std::size_t w1 = cfg_.width1, w2 = cfg_.width2, pd = cfg_.patch_dim(), k = cfg_.num_classes;

    Tensor dpooled({w2});
    for (std::size_t n = 0; n < w2; ++n)
      for (std::size_t cls = 0; cls < k; ++cls) {
        g.fc_w.at(n, cls) = fwd.pooled[n] * dlogits[cls];
        dpooled[n] += params_.fc_w.at(n, cls) * dlogits[cls];
      }

    Tensor dact2({w2, fh, fw});
    for (std::size_t n = 0; n < w2; ++n)
      for (std::size_t i = 0; i < l2; ++i) dact2[n * l2 + i] = dpooled[n] / static_cast<double>(l2);

    if (params_.nl_high) {
      auto b = nl_backward(*c.high, *params_.nl_high, dact2);
      dact2 = std::move(b.dx);
      g.nl_high = std::move(b.grads);
    }

    Tensor dpre2({w2, l2});
    for (std::size_t i = 0; i < w2 * l2; ++i) dpre2[i] = c.pre2[i] > 0.0 ? dact2[i] : 0.0;
    for (std::size_t n = 0; n < w2; ++n)
      for (std::size_t i = 0; i < l2; ++i) g.proj_b[n] += dpre2.at(n, i);
    detail::gemm(false, true, w2, w1, l2, dpre2.data().data(), c.pooled_in.data().data(),
                 g.proj_w.data().data(), false);
    Tensor dpooled_in({w1, l2});
    detail::gemm(true, false, w1, l2, w2, params_.proj_w.data().data(), dpre2.data().data(),
                 dpooled_in.data().data(), false);

    Tensor dact1({w1, gh, gw});
    for (std::size_t ch = 0; ch < w1; ++ch)
      for (std::size_t y = 0; y < gh; ++y)
        for (std::size_t x = 0; x < gw; ++x)
          dact1.at(ch, y, x) = 0.25 * dpooled_in.at(ch, (y / 2) * fw + x / 2);

    if (params_.nl_low) {
      auto b = nl_backward(*c.low, *params_.nl_low, dact1);
      dact1 = std::move(b.dx);
      g.nl_low = std::move(b.grads);
    }

    Tensor dpre1({w1, l1});
    for (std::size_t i = 0; i < w1 * l1; ++i) dpre1[i] = c.pre1[i] > 0.0 ? dact1[i] : 0.0;
    for (std::size_t ch = 0; ch < w1; ++ch)
      for (std::size_t i = 0; i < l1; ++i) g.embed_b[ch] += dpre1.at(ch, i);
    detail::gemm(false, true, w1, pd, l1, dpre1.data().data(), c.patches.data().data(),
                 g.embed_w.data().data(), false);
    return g;
  }

 private:
  void check_params() const {
    const ModelParams expected = ModelParams::zeros(cfg_);
    std::vector<std::pair<std::string, Shape>> want;
    expected.for_each([&](const std::string& n, const Tensor& t) { want.emplace_back(n, t.shape()); });
    std::vector<std::pair<std::string, Shape>> have;
    params_.for_each([&](const std::string& n, const Tensor& t) { have.emplace_back(n, t.shape()); });
    if (want != have) throw DimensionError("model parameters do not match the configuration");
  }

  ModelConfig cfg_;
  ModelParams params_;
};

inline ForwardResult forward(const Tensor& image, const Checkpoint& ckpt) {
  return Model::from_checkpoint(ckpt).forward(image);
}

struct LossAndGrad {
  double loss = 0.0;
  Tensor dlogits;
};

// Softmax cross-entropy for one example.
inline LossAndGrad cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ValueError(detail::concat("label ", label, " outside [0, ", logits.size(), ")"));
  }
  LossAndGrad r;
  r.dlogits = softmax(logits);
  double hi = logits[0];
  for (double v : logits.data()) hi = std::max(hi, v);
  double sum = 0.0;
  for (double v : logits.data()) sum += std::exp(v - hi);
  r.loss = std::log(sum) + hi - logits[label];
  r.dlogits[label] -= 1.0;
  return r;
}

struct TrainOptions {
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  // Called after each epoch with (epoch index, mean loss).
  std::function<void(std::size_t, double)> on_epoch;
};

struct TrainResult {
  Model model;
  std::vector<double> epoch_losses;

  Checkpoint checkpoint() const {
    std::map<std::string, std::string> meta{{"train.epochs", std::to_string(epoch_losses.size())}};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", epoch_losses.empty() ? 0.0 : epoch_losses.back());
    meta["train.final_loss"] = buf;
    return model.to_checkpoint(std::move(meta));
  }
};

namespace detail {

inline void axpy(double a, const Tensor& x, Tensor& y) {
  auto yd = y.data();
  const auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += a * xd[i];
}

inline void accumulate(ModelParams& into, const ModelParams& g) {
  std::vector<const Tensor*> src;
  g.for_each([&](const std::string&, const Tensor& t) { src.push_back(&t); });
  std::size_t i = 0;
  into.for_each([&](const std::string&, Tensor& t) { axpy(1.0, *src[i++], t); });
}

}  // namespace detail

// Mini-batch SGD on mean softmax cross-entropy. Starts from `init`.
inline TrainResult train(const Dataset& data, Model init, const TrainOptions& opt) {
  if (data.empty()) throw ValueError("cannot train on an empty dataset");
  if (opt.batch == 0) throw ValueError("batch size must be positive");
  const std::size_t k = init.config().num_classes;
  for (const auto& s : data) {
    if (s.label >= k) {
      throw ValueError(detail::concat("sample ", s.id, " has label ", s.label, " outside [0, ", k, ")"));
    }
  }

  TrainResult result{std::move(init), {}};
  Model& model = result.model;
  Rng rng = Rng::derived(opt.seed, "shuffle");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch) {
      const std::size_t end = std::min(order.size(), start + opt.batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      ModelParams grad = ModelParams::zeros(model.config());
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = data[order[b]];
        const ForwardResult fwd = model.forward(s.image);
        LossAndGrad lg = cross_entropy(fwd.logits, s.label);
        epoch_loss += lg.loss;
        for (auto& v : lg.dlogits.data()) v *= scale;
        detail::accumulate(grad, model.backward(fwd, lg.dlogits));
      }
      if (opt.lr != 0.0) {
        std::vector<const Tensor*> gs;
        grad.for_each([&](const std::string&, const Tensor& t) { gs.push_back(&t); });
        std::size_t i = 0;
        model.params().for_each([&](const std::string&, Tensor& t) { detail::axpy(-opt.lr, *gs[i++], t); });
      }
    }
    epoch_loss /= static_cast<double>(data.size());
    result.epoch_losses.push_back(epoch_loss);
    if (opt.on_epoch) opt.on_epoch(epoch, epoch_loss);
  }
  return result;
}

inline double predict_accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& s : data) {
    const auto fwd = model.forward(s.image);
    ok += rank_scores(fwd.logits).top() == s.label;
  }
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

}  // namespace nlccam
