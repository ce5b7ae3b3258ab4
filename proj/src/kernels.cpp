#include "cnx/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>

#include "cnx/errors.hpp"

namespace cnx {

namespace {

void require_float(const Tensor& t, const char* what) {
  if (!t.is_float()) throw InputError(fmt::format("{} must be float32", what));
}

// Valid output range [lo, hi) along one spatial axis for kernel tap `k`.
struct TapRange {
  std::int64_t lo;
  std::int64_t hi;
};

TapRange tap_range(std::int64_t in, std::int64_t out, int stride, int padding, std::int64_t k) {
  // input index = o*stride - padding + k must lie in [0, in)
  std::int64_t lo = 0;
  std::int64_t off = k - padding;
  if (off < 0) lo = (-off + stride - 1) / stride;
  std::int64_t hi = out;
  // o*stride + off <= in - 1
  std::int64_t max_o = in - 1 - off;
  if (max_o < 0) return {0, 0};
  hi = std::min<std::int64_t>(out, max_o / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

Shape conv2d_output_shape(const Shape& x, const Shape& w, Conv2dParams p) {
  if (x.size() != 4) throw DimensionError(fmt::format("conv2d input must be rank 4, got {}", shape_str(x)));
  if (w.size() != 4) throw DimensionError(fmt::format("conv2d weight must be rank 4, got {}", shape_str(w)));
  if (p.groups < 1 || p.stride < 1 || p.padding < 0) {
    throw ConfigError(fmt::format("conv2d: invalid stride {} / padding {} / groups {}", p.stride, p.padding, p.groups));
  }
  const auto c = x[1];
  const auto o = w[0];
  if (c % p.groups != 0) throw ConfigError(fmt::format("conv2d: channels {} not divisible by groups {}", c, p.groups));
  if (o % p.groups != 0) throw ConfigError(fmt::format("conv2d: filters {} not divisible by groups {}", o, p.groups));
  if (w[1] != c / p.groups) {
    throw DimensionError(fmt::format("conv2d: axis 1 (input channels) mismatch: weight has {}, input gives {}/{}",
                                     w[1], c, p.groups));
  }
  const auto h_num = x[2] + 2 * p.padding - w[2];
  const auto w_num = x[3] + 2 * p.padding - w[3];
  if (h_num < 0 || h_num % p.stride != 0) {
    throw DimensionError(fmt::format("conv2d: axis 2 (height) {} does not tile with kernel {} stride {} pad {}",
                                     x[2], w[2], p.stride, p.padding));
  }
  if (w_num < 0 || w_num % p.stride != 0) {
    throw DimensionError(fmt::format("conv2d: axis 3 (width) {} does not tile with kernel {} stride {} pad {}",
                                     x[3], w[3], p.stride, p.padding));
  }
  return {x[0], o, h_num / p.stride + 1, w_num / p.stride + 1};
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, Conv2dParams p) {
  require_float(x, "conv2d input");
  require_float(w, "conv2d weight");
  const Shape out_shape = conv2d_output_shape(x.shape(), w.shape(), p);
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto oh = out_shape[2], ow = out_shape[3];
  const auto cg = c / p.groups, og = o / p.groups;
  if (bias && (bias->rank() != 1 || bias->dim(0) != o)) {
    throw DimensionError(fmt::format("conv2d: bias axis 0 must be {}, got {}", o, shape_str(bias->shape())));
  }

  Tensor y = Tensor::zeros(out_shape);
  auto yd = y.data();
  auto xd = x.data();
  auto wdat = w.data();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t oc = 0; oc < o; ++oc) {
      float* yp = yd.data() + ((b * o + oc) * oh) * ow;
      const float init = bias ? bias->data()[static_cast<std::size_t>(oc)] : 0.0f;
      std::fill(yp, yp + oh * ow, init);
      const std::int64_t g = oc / og;
      for (std::int64_t icg = 0; icg < cg; ++icg) {
        const std::int64_t ic = g * cg + icg;
        const float* xp = xd.data() + ((b * c + ic) * h) * wd;
        const float* wp = wdat.data() + ((oc * cg + icg) * kh) * kw;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          const auto ry = tap_range(h, oh, p.stride, p.padding, ky);
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const float wv = wp[ky * kw + kx];
            const auto rx = tap_range(wd, ow, p.stride, p.padding, kx);
            for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
              const float* xrow = xp + (oy * p.stride - p.padding + ky) * wd + (kx - p.padding);
              float* yrow = yp + oy * ow;
              for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) yrow[ox] += wv * xrow[ox * p.stride];
            }
          }
        }
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, Conv2dParams p, std::span<const float> dy,
                     std::span<float> dx, std::span<float> dw, std::span<float> db) {
  const Shape out_shape = conv2d_output_shape(x.shape(), w.shape(), p);
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto oh = out_shape[2], ow = out_shape[3];
  const auto cg = c / p.groups, og = o / p.groups;
  auto xd = x.data();
  auto wdat = w.data();

  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t oc = 0; oc < o; ++oc) {
      const float* dyp = dy.data() + ((b * o + oc) * oh) * ow;
      if (!db.empty()) {
        float s = 0.0f;
        for (std::int64_t i = 0; i < oh * ow; ++i) s += dyp[i];
        db[static_cast<std::size_t>(oc)] += s;
      }
      const std::int64_t g = oc / og;
      for (std::int64_t icg = 0; icg < cg; ++icg) {
        const std::int64_t ic = g * cg + icg;
        const float* xp = xd.data() + ((b * c + ic) * h) * wd;
        float* dxp = dx.empty() ? nullptr : dx.data() + ((b * c + ic) * h) * wd;
        const float* wp = wdat.data() + ((oc * cg + icg) * kh) * kw;
        float* dwp = dw.empty() ? nullptr : dw.data() + ((oc * cg + icg) * kh) * kw;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          const auto ry = tap_range(h, oh, p.stride, p.padding, ky);
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const auto rx = tap_range(wd, ow, p.stride, p.padding, kx);
            const float wv = wp[ky * kw + kx];
            float acc = 0.0f;
            for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
              const std::int64_t row = (oy * p.stride - p.padding + ky) * wd + (kx - p.padding);
              const float* dyrow = dyp + oy * ow;
              if (dwp) {
                const float* xrow = xp + row;
                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) acc += dyrow[ox] * xrow[ox * p.stride];
              }
              if (dxp) {
                float* dxrow = dxp + row;
                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) dxrow[ox * p.stride] += wv * dyrow[ox];
              }
            }
            if (dwp) dwp[ky * kw + kx] += acc;
          }
        }
      }
    }
  }
}

AxisView axis_view(const Shape& shape, int axis) {
  const int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError(fmt::format("axis {} out of range for {}", axis, shape_str(shape)));
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  v.features = shape[static_cast<std::size_t>(axis)];
  for (int i = axis + 1; i < r; ++i) v.inner *= shape[static_cast<std::size_t>(i)];
  return v;
}

namespace {

int normalize_axis(int axis, std::size_t rank) { return axis < 0 ? axis + static_cast<int>(rank) : axis; }

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias, int axis) {
  require_float(x, "linear input");
  require_float(w, "linear weight");
  if (w.rank() != 2) throw DimensionError(fmt::format("linear weight must be rank 2, got {}", shape_str(w.shape())));
  axis = normalize_axis(axis, x.rank());
  const auto v = axis_view(x.shape(), axis);
  const auto f_out = w.dim(0), f_in = w.dim(1);
  if (v.features != f_in) {
    throw DimensionError(fmt::format("linear: axis {} of input has {} features, weight expects {}", axis, v.features, f_in));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != f_out)) {
    throw DimensionError(fmt::format("linear: bias axis 0 must be {}, got {}", f_out, shape_str(bias->shape())));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = f_out;
  Tensor y = Tensor::zeros(out_shape);
  auto yd = y.data();
  auto xd = x.data();
  auto wd = w.data();
  const auto inner = v.inner;
  for (std::int64_t b = 0; b < v.outer; ++b) {
    const float* xb = xd.data() + b * f_in * inner;
    float* yb = yd.data() + b * f_out * inner;
    for (std::int64_t o = 0; o < f_out; ++o) {
      float* yrow = yb + o * inner;
      const float* wrow = wd.data() + o * f_in;
      if (inner == 1) {
        float acc = bias ? bias->data()[static_cast<std::size_t>(o)] : 0.0f;
        for (std::int64_t c = 0; c < f_in; ++c) acc += wrow[c] * xb[c];
        yrow[0] = acc;
        continue;
      }
      if (bias) std::fill(yrow, yrow + inner, bias->data()[static_cast<std::size_t>(o)]);
      for (std::int64_t c = 0; c < f_in; ++c) {
        const float wv = wrow[c];
        const float* xrow = xb + c * inner;
        for (std::int64_t p = 0; p < inner; ++p) yrow[p] += wv * xrow[p];
      }
    }
  }
  return y;
}

void linear_backward(const Tensor& x, const Tensor& w, int axis, std::span<const float> dy, std::span<float> dx,
                     std::span<float> dw, std::span<float> db) {
  axis = normalize_axis(axis, x.rank());
  const auto v = axis_view(x.shape(), axis);
  const auto f_out = w.dim(0), f_in = w.dim(1);
  auto xd = x.data();
  auto wd = w.data();
  const auto inner = v.inner;
  for (std::int64_t b = 0; b < v.outer; ++b) {
    const float* xb = xd.data() + b * f_in * inner;
    const float* dyb = dy.data() + b * f_out * inner;
    float* dxb = dx.empty() ? nullptr : dx.data() + b * f_in * inner;
    for (std::int64_t o = 0; o < f_out; ++o) {
      const float* dyrow = dyb + o * inner;
      const float* wrow = wd.data() + o * f_in;
      if (!db.empty()) {
        float s = 0.0f;
        for (std::int64_t p = 0; p < inner; ++p) s += dyrow[p];
        db[static_cast<std::size_t>(o)] += s;
      }
      float* dwrow = dw.empty() ? nullptr : dw.data() + o * f_in;
      for (std::int64_t c = 0; c < f_in; ++c) {
        const float* xrow = xb + c * inner;
        if (dwrow) {
          float acc = 0.0f;
          for (std::int64_t p = 0; p < inner; ++p) acc += dyrow[p] * xrow[p];
          dwrow[c] += acc;
        }
        if (dxb) {
          const float wv = wrow[c];
          float* dxrow = dxb + c * inner;
          for (std::int64_t p = 0; p < inner; ++p) dxrow[p] += wv * dyrow[p];
        }
      }
    }
  }
}

namespace {

void check_norm_params(const AxisView& v, const Tensor& gamma, const Tensor& beta, int axis) {
  if (gamma.rank() != 1 || gamma.dim(0) != v.features) {
    throw DimensionError(fmt::format("layer_norm: gamma must have {} features on axis {}, got {}", v.features, axis,
                                     shape_str(gamma.shape())));
  }
  if (beta.rank() != 1 || beta.dim(0) != v.features) {
    throw DimensionError(fmt::format("layer_norm: beta must have {} features on axis {}, got {}", v.features, axis,
                                     shape_str(beta.shape())));
  }
}

// Per-position mean and reciprocal std for one outer slab.
void norm_stats(const float* xb, std::int64_t features, std::int64_t inner, float eps, std::vector<float>& mean,
                std::vector<float>& rstd) {
  mean.assign(static_cast<std::size_t>(inner), 0.0f);
  rstd.assign(static_cast<std::size_t>(inner), 0.0f);
  for (std::int64_t c = 0; c < features; ++c) {
    const float* row = xb + c * inner;
    for (std::int64_t p = 0; p < inner; ++p) mean[static_cast<std::size_t>(p)] += row[p];
  }
  const float inv_f = 1.0f / static_cast<float>(features);
  for (auto& m : mean) m *= inv_f;
  for (std::int64_t c = 0; c < features; ++c) {
    const float* row = xb + c * inner;
    for (std::int64_t p = 0; p < inner; ++p) {
      const float d = row[p] - mean[static_cast<std::size_t>(p)];
      rstd[static_cast<std::size_t>(p)] += d * d;
    }
  }
  for (auto& r : rstd) r = 1.0f / std::sqrt(r * inv_f + eps);
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps, int axis) {
  require_float(x, "layer_norm input");
  if (!(eps > 0.0f)) throw ConfigError("layer_norm: eps must be positive");
  axis = normalize_axis(axis, x.rank());
  const auto v = axis_view(x.shape(), axis);
  check_norm_params(v, gamma, beta, axis);
  Tensor y = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto yd = y.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<float> mean, rstd;
  for (std::int64_t b = 0; b < v.outer; ++b) {
    const float* xb = xd.data() + b * v.features * v.inner;
    float* yb = yd.data() + b * v.features * v.inner;
    norm_stats(xb, v.features, v.inner, eps, mean, rstd);
    for (std::int64_t c = 0; c < v.features; ++c) {
      const float g = gd[static_cast<std::size_t>(c)], be = bd[static_cast<std::size_t>(c)];
      for (std::int64_t p = 0; p < v.inner; ++p) {
        const auto pi = static_cast<std::size_t>(p);
        yb[c * v.inner + p] = (xb[c * v.inner + p] - mean[pi]) * rstd[pi] * g + be;
      }
    }
  }
  return y;
}

void layer_norm_backward(const Tensor& x, const Tensor& gamma, float eps, int axis, std::span<const float> dy,
                         std::span<float> dx, std::span<float> dgamma, std::span<float> dbeta) {
  axis = normalize_axis(axis, x.rank());
  const auto v = axis_view(x.shape(), axis);
  auto xd = x.data();
  auto gd = gamma.data();
  std::vector<float> mean, rstd, sum_dxhat, sum_dxhat_xhat;
  const float inv_f = 1.0f / static_cast<float>(v.features);
  for (std::int64_t b = 0; b < v.outer; ++b) {
    const std::int64_t base = b * v.features * v.inner;
    const float* xb = xd.data() + base;
    const float* dyb = dy.data() + base;
    norm_stats(xb, v.features, v.inner, eps, mean, rstd);
    sum_dxhat.assign(static_cast<std::size_t>(v.inner), 0.0f);
    sum_dxhat_xhat.assign(static_cast<std::size_t>(v.inner), 0.0f);
    for (std::int64_t c = 0; c < v.features; ++c) {
      const float g = gd[static_cast<std::size_t>(c)];
      float dg = 0.0f, dbt = 0.0f;
      for (std::int64_t p = 0; p < v.inner; ++p) {
        const auto pi = static_cast<std::size_t>(p);
        const float xhat = (xb[c * v.inner + p] - mean[pi]) * rstd[pi];
        const float d = dyb[c * v.inner + p];
        dg += d * xhat;
        dbt += d;
        sum_dxhat[pi] += d * g;
        sum_dxhat_xhat[pi] += d * g * xhat;
      }
      if (!dgamma.empty()) dgamma[static_cast<std::size_t>(c)] += dg;
      if (!dbeta.empty()) dbeta[static_cast<std::size_t>(c)] += dbt;
    }
    if (dx.empty()) continue;
    float* dxb = dx.data() + base;
    for (std::int64_t c = 0; c < v.features; ++c) {
      const float g = gd[static_cast<std::size_t>(c)];
      for (std::int64_t p = 0; p < v.inner; ++p) {
        const auto pi = static_cast<std::size_t>(p);
        const float xhat = (xb[c * v.inner + p] - mean[pi]) * rstd[pi];
        const float dxhat = dyb[c * v.inner + p] * g;
        dxb[c * v.inner + p] +=
            rstd[pi] * (dxhat - sum_dxhat[pi] * inv_f - xhat * sum_dxhat_xhat[pi] * inv_f);
      }
    }
  }
}

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * static_cast<float>(M_SQRT1_2))); }

float gelu_derivative(float x) {
  const float cdf = 0.5f * (1.0f + std::erf(x * static_cast<float>(M_SQRT1_2)));
  const float pdf = std::exp(-0.5f * x * x) * static_cast<float>(0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
  require_float(x, "gelu input");
  Tensor y = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = gelu(xd[i]);
  return y;
}

void gelu_backward(const Tensor& x, std::span<const float> dy, std::span<float> dx) {
  auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) dx[i] += dy[i] * gelu_derivative(xd[i]);
}

Tensor global_avg_pool(const Tensor& x) {
  require_float(x, "global_avg_pool input");
  if (x.rank() != 4) throw DimensionError(fmt::format("global_avg_pool needs rank 4, got {}", shape_str(x.shape())));
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y = Tensor::zeros({n, c});
  auto xd = x.data();
  auto yd = y.data();
  for (std::int64_t i = 0; i < n * c; ++i) {
    float s = 0.0f;
    for (std::int64_t p = 0; p < hw; ++p) s += xd[static_cast<std::size_t>(i * hw + p)];
    yd[static_cast<std::size_t>(i)] = s / static_cast<float>(hw);
  }
  return y;
}

void global_avg_pool_backward(const Shape& x_shape, std::span<const float> dy, std::span<float> dx) {
  const auto nc = x_shape[0] * x_shape[1], hw = x_shape[2] * x_shape[3];
  const float inv = 1.0f / static_cast<float>(hw);
  for (std::int64_t i = 0; i < nc; ++i) {
    const float g = dy[static_cast<std::size_t>(i)] * inv;
    for (std::int64_t p = 0; p < hw; ++p) dx[static_cast<std::size_t>(i * hw + p)] += g;
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("add: shapes {} and {} differ", shape_str(a.shape()), shape_str(b.shape())));
  }
  Tensor y = a;
  y.drop_grad();
  auto yd = y.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += bd[i];
  return y;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError(fmt::format("softmax needs [N, K], got {}", shape_str(logits.shape())));
  const auto n = logits.dim(0), k = logits.dim(1);
  Tensor p = Tensor::zeros(logits.shape());
  auto ld = logits.data();
  auto pd = p.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = ld.data() + i * k;
    float* out = pd.data() + i * k;
    const float mx = *std::max_element(row, row + k);
    float s = 0.0f;
    for (std::int64_t j = 0; j < k; ++j) s += (out[j] = std::exp(row[j] - mx));
    for (std::int64_t j = 0; j < k; ++j) out[j] /= s;
  }
  return p;
}

CrossEntropyResult cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels) {
  if (logits.rank() != 2) {
    throw DimensionError(fmt::format("cross_entropy needs [N, K] logits, got {}", shape_str(logits.shape())));
  }
  const auto n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw DimensionError(fmt::format("cross_entropy: {} labels for batch of {}", labels.size(), n));
  }
  for (auto l : labels) {
    if (l < 0 || l >= k) throw InputError(fmt::format("cross_entropy: label {} outside [0, {})", l, k));
  }
  CrossEntropyResult r;
  r.dlogits.assign(static_cast<std::size_t>(n * k), 0.0f);
  auto ld = logits.data();
  double total = 0.0;
  const float inv_n = 1.0f / static_cast<float>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = ld.data() + i * k;
    const float mx = *std::max_element(row, row + k);
    float s = 0.0f;
    for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const float log_z = mx + std::log(s);
    const auto label = labels[static_cast<std::size_t>(i)];
    total += static_cast<double>(log_z - row[label]);
    for (std::int64_t j = 0; j < k; ++j) {
      const float pj = std::exp(row[j] - log_z);
      r.dlogits[static_cast<std::size_t>(i * k + j)] = (pj - (j == label ? 1.0f : 0.0f)) * inv_n;
    }
  }
  r.loss = static_cast<float>(total / static_cast<double>(n));
  return r;
}

std::vector<std::int64_t> argmax_rows(const Tensor& logits) {
  const auto n = logits.dim(0), k = logits.dim(1);
  auto ld = logits.data();
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = ld.data() + i * k;
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace cnx
