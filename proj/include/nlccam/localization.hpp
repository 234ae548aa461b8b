#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "nlccam/error.hpp"
#include "nlccam/tensor.hpp"

namespace nlccam {

// Pixel rectangle: x0,y0 inclusive, x1,y1 exclusive.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  bool valid() const { return x0 >= 0 && y0 >= 0 && x0 < x1 && y0 < y1; }
  bool within(int w, int h) const { return valid() && x1 <= w && y1 <= h; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline constexpr double kDefaultThreshold = 0.2;

// Min-max rescale to [0,1]; constant maps become all zeros.
inline Tensor normalize_map(const Tensor& m) {
  require_rank(m, 2, "normalize_map");
  const auto d = m.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  Tensor out(m.shape());
  const double range = *hi - *lo;
  // A flat map, up to rounding from resizing, normalizes to zeros.
  if (range <= 1e-12 * std::max({1.0, std::abs(*lo), std::abs(*hi)})) return out;
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = (d[i] - *lo) / range;
  out[static_cast<std::size_t>(hi - d.begin())] = 1.0;
  return out;
}

inline std::vector<std::uint8_t> threshold_mask(const Tensor& normalized, double tau) {
  std::vector<std::uint8_t> mask(normalized.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = normalized[i] >= tau ? 1 : 0;
  return mask;
}

// Tight box of the largest 8-connected component of `mask` (h x w). Equal
// areas resolve to the component whose first cell comes first in row-major
// order. Returns nothing for an empty mask.
inline std::optional<Box> largest_component_box(const std::vector<std::uint8_t>& mask,
                                                std::size_t h, std::size_t w) {
  std::vector<int> label(mask.size(), -1);
  std::vector<std::size_t> stack;
  std::optional<Box> best;
  long long best_area = 0;
  int next = 0;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || label[start] >= 0) continue;
    const int id = next++;
    long long area = 0;
    Box box{static_cast<int>(start % w), static_cast<int>(start / w),
            static_cast<int>(start % w) + 1, static_cast<int>(start / w) + 1};
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      ++area;
      const int cy = static_cast<int>(cur / w), cx = static_cast<int>(cur % w);
      box.x0 = std::min(box.x0, cx);
      box.y0 = std::min(box.y0, cy);
      box.x1 = std::max(box.x1, cx + 1);
      box.y1 = std::max(box.y1, cy + 1);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = cy + dy, nx = cx + dx;
          if ((dx == 0 && dy == 0) || ny < 0 || nx < 0 || ny >= static_cast<int>(h) ||
              nx >= static_cast<int>(w))
            continue;
          const std::size_t nb = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (mask[nb] && label[nb] < 0) {
            label[nb] = id;
            stack.push_back(nb);
          }
        }
      }
    }
    if (area > best_area) {
      best_area = area;
      best = box;
    }
  }
  return best;
}

inline Box bbox_from_map(const Tensor& m, double tau, std::size_t out_h, std::size_t out_w) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ValueError(detail::concat("threshold must lie in (0,1), got ", tau));
  }
  require_rank(m, 2, "bbox_from_map");
  const Tensor normalized = normalize_map(bilinear_resize(m, out_h, out_w));
  const auto mask = threshold_mask(normalized, tau);
  if (auto box = largest_component_box(mask, out_h, out_w)) return *box;
  return Box{0, 0, static_cast<int>(out_w), static_cast<int>(out_h)};
}

}  // namespace nlccam
