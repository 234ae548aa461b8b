#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "nlccam/error.hpp"
#include "nlccam/tensor.hpp"

namespace nlccam {

inline constexpr double kNormEpsilon = 1e-5;

inline std::size_t reduced_channels(std::size_t channels, std::size_t reduction) {
  if (reduction == 0) throw ValueError("non-local reduction ratio must be positive");
  return std::max<std::size_t>(1, channels / reduction);
}

// Weights of one non-local block. All projections are 1x1 (per location), no bias.
struct NonLocalParams {
  Tensor wf;     // C' x C, query embedding
  Tensor wg;     // C' x C, key embedding
  Tensor wh;     // C x C, value embedding
  Tensor wk;     // C x C, output projection
  Tensor gamma;  // C, normalization scale
  Tensor beta;   // C, normalization shift

  // Zero weights everywhere; callers fill the projections.
  static NonLocalParams zeros(std::size_t channels, std::size_t reduction) {
    const std::size_t cr = reduced_channels(channels, reduction);
    return {Tensor({cr, channels}), Tensor({cr, channels}), Tensor({channels, channels}),
            Tensor({channels, channels}), Tensor({channels}), Tensor({channels})};
  }

  std::size_t channels() const { return wh.extent(0); }
  std::size_t reduced() const { return wf.extent(0); }

  void validate() const {
    const std::size_t c = wh.rank() == 2 ? wh.extent(0) : 0;
    const bool ok = c > 0 && wf.rank() == 2 && wg.rank() == 2 && wh.rank() == 2 &&
                    wk.rank() == 2 && gamma.rank() == 1 && beta.rank() == 1 &&
                    wh.extent(1) == c && wk.extent(0) == c && wk.extent(1) == c &&
                    wf.extent(1) == c && wg.extent(1) == c && wf.extent(0) == wg.extent(0) &&
                    wf.extent(0) >= 1 && gamma.extent(0) == c && beta.extent(0) == c;
    if (!ok) {
      throw DimensionError(detail::concat(
          "inconsistent non-local parameter shapes: Wf ", detail::shape_string(wf.shape()), " Wg ",
          detail::shape_string(wg.shape()), " Wh ", detail::shape_string(wh.shape()), " Wk ",
          detail::shape_string(wk.shape()), " gamma ", detail::shape_string(gamma.shape()),
          " beta ", detail::shape_string(beta.shape())));
    }
  }
};

// Intermediates of one forward pass, everything backward needs.
struct NonLocalCache {
  std::size_t channels = 0, height = 0, width = 0;
  Tensor x;       // C x L
  Tensor fq;      // C' x L
  Tensor gk;      // C' x L
  Tensor hv;      // C x L
  Tensor alpha;   // L x L, columns sum to one
  Tensor o;       // C x L, hv * alpha
  Tensor normed;  // C x L, standardized k-projection
  std::vector<double> inv_std;  // per channel
};

struct NonLocalOutput {
  Tensor y;
  NonLocalCache cache;
};

namespace detail {

inline void check_nl_input(const Tensor& x, const NonLocalParams& p) {
  p.validate();
  require_rank(x, 3, "non-local input");
  if (x.extent(0) != p.channels()) {
    throw DimensionError(detail::concat("non-local input has ", x.extent(0),
                                        " channels, parameters expect ", p.channels()));
  }
}

// Softmax over the first index of an L x L score matrix, in place.
inline void column_softmax(Tensor& s) {
  const std::size_t l = s.extent(0);
  auto d = s.data();
  std::vector<double> hi(l, -INFINITY), sum(l, 0.0);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) hi[j] = std::max(hi[j], d[i * l + j]);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      double& v = d[i * l + j];
      v = std::exp(v - hi[j]);
      sum[j] += v;
    }
  for (std::size_t j = 0; j < l; ++j) sum[j] = 1.0 / sum[j];
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) d[i * l + j] *= sum[j];
}

inline Tensor project(const Tensor& w, const Tensor& x_flat) {
  const std::size_t out = w.extent(0), in = w.extent(1), l = x_flat.extent(1);
  Tensor r({out, l});
  gemm(false, false, out, l, in, w.data().data(), x_flat.data().data(), r.data().data(), false);
  return r;
}

}  // namespace detail

inline Tensor attention_matrix(const Tensor& x, const NonLocalParams& p) {
  detail::check_nl_input(x, p);
  const std::size_t c = x.extent(0), l = x.extent(1) * x.extent(2);
  const Tensor xf = x.reshaped({c, l});
  const Tensor fq = detail::project(p.wf, xf);
  const Tensor gk = detail::project(p.wg, xf);
  Tensor s({l, l});
  detail::gemm(true, false, l, l, fq.extent(0), fq.data().data(), gk.data().data(),
               s.data().data(), false);
  detail::column_softmax(s);
  return s;
}

inline NonLocalOutput nl_forward(const Tensor& x, const NonLocalParams& p) {
  detail::check_nl_input(x, p);
  NonLocalCache cache;
  const std::size_t c = x.extent(0), l = x.extent(1) * x.extent(2);
  cache.channels = c;
  cache.height = x.extent(1);
  cache.width = x.extent(2);
  cache.x = x.reshaped({c, l});
  cache.fq = detail::project(p.wf, cache.x);
  cache.gk = detail::project(p.wg, cache.x);
  cache.hv = detail::project(p.wh, cache.x);

  cache.alpha = Tensor({l, l});
  detail::gemm(true, false, l, l, cache.fq.extent(0), cache.fq.data().data(),
               cache.gk.data().data(), cache.alpha.data().data(), false);
  detail::column_softmax(cache.alpha);

  cache.o = Tensor({c, l});
  detail::gemm(false, false, c, l, l, cache.hv.data().data(), cache.alpha.data().data(),
               cache.o.data().data(), false);
  Tensor q = detail::project(p.wk, cache.o);

  cache.normed = Tensor({c, l});
  cache.inv_std.assign(c, 0.0);
  Tensor y({c, cache.height, cache.width});
  const double n = static_cast<double>(l);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* row = q.data().data() + ch * l;
    double mean = 0.0;
    for (std::size_t j = 0; j < l; ++j) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < l; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    cache.inv_std[ch] = inv;
    for (std::size_t j = 0; j < l; ++j) {
      const double z = (row[j] - mean) * inv;
      cache.normed.at(ch, j) = z;
      y[ch * l + j] = p.gamma[ch] * z + p.beta[ch] + cache.x.at(ch, j);
    }
  }
  return {std::move(y), std::move(cache)};
}

struct NonLocalBackward {
  Tensor dx;
  NonLocalParams grads;
};

inline NonLocalBackward nl_backward(const NonLocalCache& cache, const NonLocalParams& p,
                                    const Tensor& dy) {
  const std::size_t c = cache.channels, l = cache.height * cache.width;
  if (dy.rank() != 3 || dy.extent(0) != c || dy.extent(1) != cache.height ||
      dy.extent(2) != cache.width) {
    throw DimensionError(detail::concat("nl_backward: gradient shape ",
                                        detail::shape_string(dy.shape()), " does not match cache [",
                                        c, "x", cache.height, "x", cache.width, "]"));
  }
  if (p.channels() != c) throw DimensionError("nl_backward: parameters do not match cache");

  const std::size_t cr = p.reduced();
  NonLocalBackward out{Tensor({c, cache.height, cache.width}),
                       NonLocalParams::zeros(c, 1)};
  out.grads.wf = Tensor({cr, c});
  out.grads.wg = Tensor({cr, c});

  const double* g = dy.data().data();
  const double n = static_cast<double>(l);

  // Normalization: dq from dz = dy.
  Tensor dq({c, l});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* zr = cache.normed.data().data() + ch * l;
    const double* gr = g + ch * l;
    double sum_g = 0.0, sum_gz = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
      sum_g += gr[j];
      sum_gz += gr[j] * zr[j];
    }
    out.grads.gamma[ch] = sum_gz;
    out.grads.beta[ch] = sum_g;
    const double scale = p.gamma[ch] * cache.inv_std[ch] / n;
    for (std::size_t j = 0; j < l; ++j) {
      dq.at(ch, j) = scale * (n * gr[j] - sum_g - zr[j] * sum_gz);
    }
  }

  // q = Wk o
  detail::gemm(false, true, c, c, l, dq.data().data(), cache.o.data().data(),
               out.grads.wk.data().data(), false);
  Tensor dout({c, l});
  detail::gemm(true, false, c, l, c, p.wk.data().data(), dq.data().data(), dout.data().data(),
               false);

  // o = hv alpha
  Tensor dhv({c, l});
  detail::gemm(false, true, c, l, l, dout.data().data(), cache.alpha.data().data(),
               dhv.data().data(), false);
  Tensor dalpha({l, l});
  detail::gemm(true, false, l, l, c, cache.hv.data().data(), dout.data().data(),
               dalpha.data().data(), false);

  // Column softmax: ds[i,j] = a[i,j] (da[i,j] - sum_i' a[i',j] da[i',j])
  {
    const double* a = cache.alpha.data().data();
    double* d = dalpha.data().data();
    std::vector<double> dot(l, 0.0);
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < l; ++j) dot[j] += a[i * l + j] * d[i * l + j];
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < l; ++j) d[i * l + j] = a[i * l + j] * (d[i * l + j] - dot[j]);
  }
  const Tensor& ds = dalpha;

  // s = fq^T gk
  Tensor dfq({cr, l});
  detail::gemm(false, true, cr, l, l, cache.gk.data().data(), ds.data().data(),
               dfq.data().data(), false);
  Tensor dgk({cr, l});
  detail::gemm(false, false, cr, l, l, cache.fq.data().data(), ds.data().data(),
               dgk.data().data(), false);

  const double* xd = cache.x.data().data();
  detail::gemm(false, true, cr, c, l, dfq.data().data(), xd, out.grads.wf.data().data(), false);
  detail::gemm(false, true, cr, c, l, dgk.data().data(), xd, out.grads.wg.data().data(), false);
  detail::gemm(false, true, c, c, l, dhv.data().data(), xd, out.grads.wh.data().data(), false);

  double* dx = out.dx.data().data();
  std::copy(g, g + c * l, dx);
  detail::gemm(true, false, c, l, cr, p.wf.data().data(), dfq.data().data(), dx, true);
  detail::gemm(true, false, c, l, cr, p.wg.data().data(), dgk.data().data(), dx, true);
  detail::gemm(true, false, c, l, c, p.wh.data().data(), dhv.data().data(), dx, true);
  return out;
}

}  // namespace nlccam
