#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "nlccam/dataset.hpp"
#include "nlccam/error.hpp"
#include "nlccam/localization.hpp"
#include "nlccam/random.hpp"
#include "nlccam/tensor.hpp"

namespace nlccam {

struct SynthConfig {
  std::size_t num_classes = 8;
  std::size_t train_per_class = 250;
  std::size_t test_per_class = 50;
  std::size_t size = 32;
  std::size_t blob_min = 10;
  std::size_t blob_max = 20;
  std::size_t texture_scale = 8;  // value-noise lattice spacing in pixels
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw ValueError("synthetic data needs at least two classes");
    if (size < 4) throw ValueError(detail::concat("image size ", size, " is too small"));
    if (blob_min == 0 || blob_min > blob_max) throw ValueError("blob size range is empty");
    if (blob_max > size) {
      throw ValueError(detail::concat("blob size ", blob_max, " does not fit in a ", size, "px image"));
    }
    if (texture_scale == 0) throw ValueError("texture scale must be positive");
    if (train_per_class == 0 && test_per_class == 0) throw ValueError("no images requested");
  }
};

inline constexpr std::size_t kSynthChannels = 3;

struct SynthDataset {
  Dataset train;
  Dataset test;
};

namespace detail {

// Smooth value noise: random lattice values, bilinearly interpolated.
inline void fill_background(Tensor& img, std::size_t scale, Rng& rng) {
  const std::size_t size = img.extent(1);
  const std::size_t cells = size / scale + 2;
  const double base = rng.uniform(0.25, 0.45);
  for (std::size_t ch = 0; ch < img.extent(0); ++ch) {
    std::vector<double> lattice(cells * cells);
    for (auto& v : lattice) v = rng.uniform(-0.15, 0.15);
    const double tint = rng.uniform(-0.05, 0.05);
    for (std::size_t y = 0; y < size; ++y) {
      const double fy = static_cast<double>(y) / static_cast<double>(scale);
      const auto y0 = static_cast<std::size_t>(fy);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < size; ++x) {
        const double fx = static_cast<double>(x) / static_cast<double>(scale);
        const auto x0 = static_cast<std::size_t>(fx);
        const double tx = fx - static_cast<double>(x0);
        const double a = lattice[y0 * cells + x0], b = lattice[y0 * cells + x0 + 1];
        const double c = lattice[(y0 + 1) * cells + x0], d = lattice[(y0 + 1) * cells + x0 + 1];
        const double v = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
        img.at(ch, y, x) = base + tint + v;
      }
    }
  }
}

// Saturated class colour from a hue evenly spaced around the wheel.
inline std::array<double, 3> class_color(std::size_t cls, std::size_t num_classes) {
  const double hue = 6.0 * static_cast<double>(cls) / static_cast<double>(num_classes);
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  switch (sector) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

inline Sample make_sample(const SynthConfig& cfg, std::size_t cls, const std::string& id, Rng& rng) {
  const std::size_t s = cfg.size;
  Tensor img({kSynthChannels, s, s});
  fill_background(img, cfg.texture_scale, rng);

  const auto bw = static_cast<int>(rng.between(static_cast<long long>(cfg.blob_min), static_cast<long long>(cfg.blob_max)));
  const auto bh = static_cast<int>(rng.between(static_cast<long long>(cfg.blob_min), static_cast<long long>(cfg.blob_max)));
  const auto x0 = static_cast<int>(rng.between(0, static_cast<long long>(s) - bw));
  const auto y0 = static_cast<int>(rng.between(0, static_cast<long long>(s) - bh));
  const Box box{x0, y0, x0 + bw, y0 + bh};

  // Grating: orientation and period are fixed per class, phase is random.
  const double theta = std::numbers::pi * static_cast<double>(cls) / static_cast<double>(cfg.num_classes);
  const double period = cls % 2 == 0 ? 4.0 : 6.0;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const auto color = class_color(cls, cfg.num_classes);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int y = box.y0; y < box.y1; ++y) {
    for (int x = box.x0; x < box.x1; ++x) {
      const double wave = std::sin(2.0 * std::numbers::pi * (x * ct + y * st) / period + phase);
      const double level = 0.65 + 0.35 * wave;
      for (std::size_t ch = 0; ch < kSynthChannels; ++ch) {
        img.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 0.1 + 0.9 * color[ch] * level;
      }
    }
  }
  return {id, std::move(img), cls, {box}};
}

inline Dataset make_split(const SynthConfig& cfg, const std::string& split, std::size_t per_class) {
  Rng rng = Rng::derived(cfg.seed, "synth." + split);
  Dataset out;
  out.reserve(per_class * cfg.num_classes);
  std::size_t idx = 0;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t cls = 0; cls < cfg.num_classes; ++cls) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%05zu", split.c_str(), idx++);
      out.push_back(make_sample(cfg, cls, id, rng));
    }
  }
  return out;
}

}  // namespace detail

inline SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  return {detail::make_split(cfg, "train", cfg.train_per_class),
          detail::make_split(cfg, "test", cfg.test_per_class)};
}

// Writes train/test tensors and `train.tsv`, `test.tsv` manifests under `dir`.
inline void save_dataset(const std::filesystem::path& dir, const SynthDataset& data) {
  save_split(dir, "train", data.train);
  save_split(dir, "test", data.test);
}

// Mean map value outside the box; 0 if the box covers the whole map.
inline double background_suppression_score(const Tensor& map, const Box& gt) {
  require_rank(map, 2, "background_suppression_score");
  const int h = static_cast<int>(map.extent(0)), w = static_cast<int>(map.extent(1));
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (gt.contains(x, y)) continue;
      sum += map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      ++n;
    }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace nlccam
