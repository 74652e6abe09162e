#include "wildfire/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "wildfire/rng.hpp"

namespace wildfire::ops {

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapCF = Eigen::Map<const MatF>;
using ArrF = Eigen::ArrayXf;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_output(Shape shape, bool track) {
  Tensor out(std::move(shape));
  if (track) out.set_requires_grad();
  return out;
}

void ensure_finite(const Tensor& t, const char* op) {
  const float* p = t.ptr();
  const Index n = t.numel();
  bool bad = false;
  for (Index i = 0; i < n; ++i) bad |= !std::isfinite(p[i]);
  if (bad) throw NumericError(std::string(op) + ": non-finite value in output");
}

void require_rank(const Tensor& t, int rank, const char* op, const char* what) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": " + what + " is undefined");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

float* grad_ptr(TensorImpl* t) { return grad_of(*t).data(); }

template <typename Fn>
void record(std::vector<Tensor> inputs, const Tensor& out, Fn&& fn) {
  active_tape()->record(std::move(inputs), out, std::forward<Fn>(fn));
}

MatD to_double(const float* p, Index rows, Index cols) {
  return MapCF(p, rows, cols).cast<double>();
}

void add_into(float* dst, const MatD& m) {
  const double* src = m.data();
  const Index n = m.size();
  for (Index i = 0; i < n; ++i) dst[i] += static_cast<float>(src[i]);
}

struct ConvGeometry {
  Index channels, height, width;  // image side
  Index kh, kw;
  int stride, pad;
  Index out_h, out_w;             // column side
};

// Writes the [C·Kh·Kw, out_h·out_w] patch matrix of one image into `col`,
// whose rows are `ld` apart (several images share one wide matrix).
void im2col(const float* img, const ConvGeometry& g, double* col, Index ld) {
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * ld;
        for (Index oi = 0; oi < g.out_h; ++oi) {
          const Index ii = oi * g.stride - g.pad + ki;
          double* dst = row + oi * g.out_w;
          if (ii < 0 || ii >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const float* src = img + (c * g.height + ii) * g.width;
          for (Index oj = 0; oj < g.out_w; ++oj) {
            const Index jj = oj * g.stride - g.pad + kj;
            dst[oj] = jj >= 0 && jj < g.width ? src[jj] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col, accumulating into a double image buffer.
void col2im(const double* col, Index ld, const ConvGeometry& g, double* img) {
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * ld;
        for (Index oi = 0; oi < g.out_h; ++oi) {
          const Index ii = oi * g.stride - g.pad + ki;
          if (ii < 0 || ii >= g.height) continue;
          double* dst = img + (c * g.height + ii) * g.width;
          for (Index oj = 0; oj < g.out_w; ++oj) {
            const Index jj = oj * g.stride - g.pad + kj;
            if (jj < 0 || jj >= g.width) continue;
            dst[jj] += row[oi * g.out_w + oj];
          }
        }
      }
    }
  }
}

// Samples per GEMM so that a patch matrix stays near 8M doubles.
Index batch_chunk(Index patch, Index positions, Index n) {
  const Index per = std::max<Index>(1, patch * positions);
  return std::clamp<Index>((Index{1} << 23) / per, 1, n);
}

// [C, nb·P] block of a batch of NCHW-like planes starting at sample s0.
void gather_planes(const float* src, Index s0, Index nb, Index channels, Index positions, MatD& dst) {
  dst.resize(channels, nb * positions);
  for (Index s = 0; s < nb; ++s) {
    for (Index c = 0; c < channels; ++c) {
      const float* p = src + ((s0 + s) * channels + c) * positions;
      double* d = dst.data() + c * nb * positions + s * positions;
      for (Index i = 0; i < positions; ++i) d[i] = p[i];
    }
  }
}

void check_conv_args(const char* op, const Tensor& x, const Tensor& k, const Tensor& b,
                     Index in_channels_axis_of_kernel, Index bias_extent, int stride, int padding) {
  require_rank(x, 4, op, "input");
  require_rank(k, 4, op, "kernel");
  if (x.dim(1) != in_channels_axis_of_kernel) {
    throw DimensionError(std::string(op) + ": input axis 1 (channels) = " +
                         std::to_string(x.dim(1)) + " does not match kernel channels " +
                         std::to_string(in_channels_axis_of_kernel));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != bias_extent)) {
    throw DimensionError(std::string(op) + ": bias must have shape [" +
                         std::to_string(bias_extent) + "], got " + shape_str(b.shape()));
  }
  if (stride < 1) throw DimensionError(std::string(op) + ": stride must be >= 1");
  if (padding < 0) throw DimensionError(std::string(op) + ": padding must be >= 0");
}

/// Row gather: out row r = in row index[r]; rows have `row_len` floats.
Tensor gather_rows(const Tensor& x, Index row_len, std::shared_ptr<std::vector<std::int32_t>> index,
                   Shape out_shape, const char* op) {
  const bool track = tracking({&x});
  Tensor out = make_output(std::move(out_shape), track);
  const Index rows = static_cast<Index>(index->size());
  if (rows * row_len != out.numel()) {
    throw DimensionError(std::string(op) + ": internal index/shape mismatch");
  }
  const float* src = x.ptr();
  float* dst = out.ptr();
  for (Index r = 0; r < rows; ++r) {
    std::copy_n(src + (*index)[static_cast<std::size_t>(r)] * row_len, row_len, dst + r * row_len);
  }
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* oi = out.impl();
    record({x}, out, [xi, oi, index, row_len, rows] {
      float* gx = grad_ptr(xi);
      const float* gy = oi->grad.data();
      for (Index r = 0; r < rows; ++r) {
        float* d = gx + (*index)[static_cast<std::size_t>(r)] * row_len;
        const float* s = gy + r * row_len;
        for (Index j = 0; j < row_len; ++j) d[j] += s[j];
      }
    });
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool track = tracking({&a, &b});
  Tensor out = make_output(a.shape(), track);
  {
    const float *pa = a.ptr(), *pb = b.ptr();
    float* po = out.ptr();
    const Index n = out.numel();
    for (Index i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  }
  ensure_finite(out, "add");
  if (track) {
    TensorImpl *ai = a.impl(), *bi = b.impl(), *oi = out.impl();
    record({a, b}, out, [ai, bi, oi] {
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        float* ga = grad_ptr(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bi->requires_grad) {
        float* gb = grad_ptr(bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool track = tracking({&a, &b});
  Tensor out = make_output(a.shape(), track);
  {
    const float *pa = a.ptr(), *pb = b.ptr();
    float* po = out.ptr();
    const Index n = out.numel();
    for (Index i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  }
  ensure_finite(out, "sub");
  if (track) {
    TensorImpl *ai = a.impl(), *bi = b.impl(), *oi = out.impl();
    record({a, b}, out, [ai, bi, oi] {
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        float* ga = grad_ptr(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bi->requires_grad) {
        float* gb = grad_ptr(bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool track = tracking({&a, &b});
  Tensor out = make_output(a.shape(), track);
  {
    const float *pa = a.ptr(), *pb = b.ptr();
    float* po = out.ptr();
    const Index n = out.numel();
    for (Index i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  }
  ensure_finite(out, "mul");
  if (track) {
    TensorImpl *ai = a.impl(), *bi = b.impl(), *oi = out.impl();
    record({a, b}, out, [ai, bi, oi] {
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        float* ga = grad_ptr(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        float* gb = grad_ptr(bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float factor) {
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), track);
  {
    const float* px = x.ptr();
    float* po = out.ptr();
    const Index n = out.numel();
    for (Index i = 0; i < n; ++i) po[i] = px[i] * factor;
  }
  ensure_finite(out, "scale");
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi, factor] {
      float* gx = grad_ptr(xi);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = make_output(Shape{1}, track);
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  out.ptr()[0] = static_cast<float>(acc);
  ensure_finite(out, "sum");
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi] {
      float* gx = grad_ptr(xi);
      const float g = oi->grad[0];
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = make_output(Shape{1}, track);
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  out.ptr()[0] = static_cast<float>(acc / n);
  ensure_finite(out, "mean");
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi, n] {
      float* gx = grad_ptr(xi);
      const float g = static_cast<float>(oi->grad[0] / n);
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor weighted_sum(const Tensor& x, std::span<const float> weights) {
  if (static_cast<Index>(weights.size()) != x.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                         " weights for tensor of shape " + shape_str(x.shape()));
  }
  const bool track = tracking({&x});
  Tensor out = make_output(Shape{1}, track);
  double acc = 0.0;
  for (Index i = 0; i < x.numel(); ++i) acc += static_cast<double>(weights[i]) * x.ptr()[i];
  out.ptr()[0] = static_cast<float>(acc);
  ensure_finite(out, "weighted_sum");
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    auto w = std::make_shared<std::vector<float>>(weights.begin(), weights.end());
    record({x}, out, [xi, oi, w] {
      float* gx = grad_ptr(xi);
      const float g = oi->grad[0];
      for (std::size_t i = 0; i < w->size(); ++i) gx[i] += g * (*w)[i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: cannot reshape " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  }
  const bool track = tracking({&x});
  Tensor out(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()));
  if (track) {
    out.set_requires_grad();
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi] {
      float* gx = grad_ptr(xi);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const int r = parts.front().rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("concat: axis out of range");
  Shape out_shape = parts.front().shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d != axis && p.dim(d) != parts.front().dim(d)) {
        throw DimensionError("concat: axis " + std::to_string(d) + " differs: " +
                             shape_str(p.shape()) + " vs " + shape_str(parts.front().shape()));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
    track = track || tracking({&p});
  }
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[static_cast<std::size_t>(d)];
  const Index out_axis = out_shape[static_cast<std::size_t>(axis)];
  Tensor out = make_output(out_shape, track);

  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const Index len = p.dim(axis);
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(p.ptr() + o * len * inner, len * inner,
                  out.ptr() + (o * out_axis + off) * inner);
    }
    off += len;
  }
  if (track) {
    std::vector<TensorImpl*> impls;
    std::vector<Index> lens;
    for (const auto& p : parts) {
      impls.push_back(p.impl());
      lens.push_back(p.dim(axis));
    }
    TensorImpl* oi = out.impl();
    record(parts, out, [impls, lens, offsets, oi, outer, inner, out_axis] {
      const float* g = oi->grad.data();
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (!impls[k]->requires_grad) continue;
        float* gp = grad_ptr(impls[k]);
        const Index len = lens[k];
        for (Index o = 0; o < outer; ++o) {
          const float* s = g + (o * out_axis + offsets[k]) * inner;
          float* d = gp + o * len * inner;
          for (Index j = 0; j < len * inner; ++j) d[j] += s[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations

Tensor relu(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), track);
  {
    const float* px = x.ptr();
    float* po = out.ptr();
    const Index n = out.numel();
    for (Index i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
  }
  count_flops(2ULL * static_cast<std::uint64_t>(x.numel()));
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi] {
      float* gx = grad_ptr(xi);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xi->data[i] > 0.0f) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), track);
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  {
    const auto v = ArrF::Map(x.ptr(), x.numel());
    ArrF::Map(out.ptr(), out.numel()) = 0.5f * v * (1.0f + (v * static_cast<float>(kInvSqrt2)).erf());
  }
  count_flops(2ULL * static_cast<std::uint64_t>(x.numel()));
  ensure_finite(out, "gelu");
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi] {
      constexpr double kInvSqrt2Pi = 0.39894228040143267794;
      const Index n = static_cast<Index>(oi->grad.size());
      const auto v = ArrF::Map(xi->data.data(), n);
      const auto g = ArrF::Map(oi->grad.data(), n);
      const ArrF cdf = 0.5f * (1.0f + (v * static_cast<float>(kInvSqrt2)).erf());
      const ArrF pdf = static_cast<float>(kInvSqrt2Pi) * (-0.5f * v * v).exp();
      ArrF::Map(grad_ptr(xi), n) += g * (cdf + v * pdf);
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), track);
  {
    const auto v = ArrF::Map(x.ptr(), x.numel());
    const ArrF e = (-v.abs()).exp();
    ArrF::Map(out.ptr(), out.numel()) = (v >= 0.0f).select(1.0f / (1.0f + e), e / (1.0f + e));
  }
  count_flops(2ULL * static_cast<std::uint64_t>(x.numel()));
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi] {
      float* gx = grad_ptr(xi);
      const float* g = oi->grad.data();
      const float* po = oi->data.data();
      const std::size_t n = oi->grad.size();
      for (std::size_t i = 0; i < n; ++i) {
        const double s = po[i];
        gx[i] += static_cast<float>(g[i] * s * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("softmax: axis out of range");
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < r; ++d) inner *= x.dim(d);
  const Index len = x.dim(axis);
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), track);
  std::vector<double> buf(static_cast<std::size_t>(len));
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const float* src = x.ptr() + o * len * inner + in;
      float* dst = out.ptr() + o * len * inner + in;
      double mx = src[0];
      for (Index k = 1; k < len; ++k) mx = std::max(mx, static_cast<double>(src[k * inner]));
      double total = 0.0;
      for (Index k = 0; k < len; ++k) {
        buf[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(src[k * inner]) - mx);
        total += buf[static_cast<std::size_t>(k)];
      }
      for (Index k = 0; k < len; ++k) {
        dst[k * inner] = static_cast<float>(buf[static_cast<std::size_t>(k)] / total);
      }
    }
  }
  count_flops(2ULL * static_cast<std::uint64_t>(x.numel()));
  ensure_finite(out, "softmax");
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi, outer, inner, len] {
      float* gx = grad_ptr(xi);
      const float* g = oi->grad.data();
      const float* y = oi->data.data();
      for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
          const Index base = o * len * inner + in;
          double dot = 0.0;
          for (Index k = 0; k < len; ++k) {
            dot += static_cast<double>(g[base + k * inner]) * y[base + k * inner];
          }
          for (Index k = 0; k < len; ++k) {
            const Index i = base + k * inner;
            gx[i] += static_cast<float>(y[i] * (g[i] - dot));
          }
        }
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, float rate, std::uint64_t key, Mode mode) {
  if (!(rate >= 0.0f && rate < 1.0f)) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0f) return x;
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), track);
  const float keep_scale = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<float>>(static_cast<std::size_t>(x.numel()));
  const std::uint64_t k = mix64(key);
  for (Index i = 0; i < x.numel(); ++i) {
    const float m = uniform_at(k, static_cast<std::uint64_t>(i)) < rate ? 0.0f : keep_scale;
    (*mask)[static_cast<std::size_t>(i)] = m;
    out.ptr()[i] = x.ptr()[i] * m;
  }
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi, mask] {
      float* gx = grad_ptr(xi);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
  require_rank(kernel, 4, "conv2d", "kernel");
  check_conv_args("conv2d", x, kernel, bias, kernel.dim(1), kernel.dim(0), stride, padding);
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " exceeds padded input (axes 2,3) of " + shape_str(x.shape()));
  }
  const Index ho = (h + 2 * padding - kh) / stride + 1;
  const Index wo = (w + 2 * padding - kw) / stride + 1;
  const ConvGeometry g{cin, h, w, kh, kw, stride, padding, ho, wo};
  const bool track = tracking({&x, &kernel, &bias});
  Tensor out = make_output({n, cout, ho, wo}, track);

  const Index patch = cin * kh * kw;
  const Index positions = ho * wo;
  const Index image = cin * h * w;
  const Index chunk = batch_chunk(patch, positions, n);
  const MatD wd = to_double(kernel.ptr(), cout, patch);
  MatD col, y;
  for (Index s0 = 0; s0 < n; s0 += chunk) {
    const Index nb = std::min(chunk, n - s0);
    const Index ld = nb * positions;
    col.resize(patch, ld);
    for (Index s = 0; s < nb; ++s) im2col(x.ptr() + (s0 + s) * image, g, col.data() + s * positions, ld);
    y.noalias() = wd * col;
    for (Index s = 0; s < nb; ++s) {
      float* dst = out.ptr() + (s0 + s) * cout * positions;
      for (Index c = 0; c < cout; ++c) {
        const double b = bias.defined() ? bias.ptr()[c] : 0.0;
        const double* src = y.data() + c * ld + s * positions;
        for (Index p = 0; p < positions; ++p) dst[c * positions + p] = static_cast<float>(src[p] + b);
      }
    }
  }
  count_flops(2ULL * static_cast<std::uint64_t>(kh * kw * cin * cout * positions * n));
  ensure_finite(out, "conv2d");

  if (track) {
    TensorImpl *xi = x.impl(), *ki = kernel.impl(), *oi = out.impl();
    TensorImpl* bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<Tensor> inputs{x, kernel};
    if (bias.defined()) inputs.push_back(bias);
    record(std::move(inputs), out, [xi, ki, bi, oi, g, n, cout, patch, positions, image, chunk] {
      const MatD wd = to_double(ki->data.data(), cout, patch);
      MatD gw = MatD::Zero(cout, patch);
      MatD col, dcol, gy;
      std::vector<double> dimg;
      for (Index s0 = 0; s0 < n; s0 += chunk) {
        const Index nb = std::min(chunk, n - s0);
        const Index ld = nb * positions;
        gather_planes(oi->grad.data(), s0, nb, cout, positions, gy);
        if (ki->requires_grad) {
          col.resize(patch, ld);
          for (Index s = 0; s < nb; ++s) {
            im2col(xi->data.data() + (s0 + s) * image, g, col.data() + s * positions, ld);
          }
          gw.noalias() += gy * col.transpose();
        }
        if (xi->requires_grad) {
          dcol.noalias() = wd.transpose() * gy;
          float* gx_all = grad_ptr(xi);
          for (Index s = 0; s < nb; ++s) {
            dimg.assign(static_cast<std::size_t>(image), 0.0);
            col2im(dcol.data() + s * positions, ld, g, dimg.data());
            float* gx = gx_all + (s0 + s) * image;
            for (std::size_t i = 0; i < dimg.size(); ++i) gx[i] += static_cast<float>(dimg[i]);
          }
        }
      }
      if (ki->requires_grad) add_into(grad_ptr(ki), gw);
      if (bi && bi->requires_grad) {
        float* gb = grad_ptr(bi);
        for (Index c = 0; c < cout; ++c) {
          double acc = 0.0;
          for (Index s = 0; s < n; ++s) {
            const float* gp = oi->grad.data() + (s * cout + c) * positions;
            for (Index p = 0; p < positions; ++p) acc += gp[p];
          }
          gb[c] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride,
                        int padding) {
  require_rank(kernel, 4, "conv2d_transpose", "kernel");
  check_conv_args("conv2d_transpose", x, kernel, bias, kernel.dim(0), kernel.dim(1), stride,
                  padding);
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const Index ho = (h - 1) * stride - 2 * padding + kh;
  const Index wo = (w - 1) * stride - 2 * padding + kw;
  if (ho <= 0 || wo <= 0) {
    throw DimensionError("conv2d_transpose: padding " + std::to_string(padding) +
                         " leaves no output for input " + shape_str(x.shape()));
  }
  // Geometry of the forward convolution this op is the adjoint of.
  const ConvGeometry g{cout, ho, wo, kh, kw, stride, padding, h, w};
  const bool track = tracking({&x, &kernel, &bias});
  Tensor out = make_output({n, cout, ho, wo}, track);

  const Index patch = cout * kh * kw;
  const Index positions = h * w;
  const Index out_size = cout * ho * wo;
  const Index chunk = batch_chunk(patch, positions, n);
  const MatD wd = to_double(kernel.ptr(), cin, patch);
  MatD col, xs;
  std::vector<double> img;
  for (Index s0 = 0; s0 < n; s0 += chunk) {
    const Index nb = std::min(chunk, n - s0);
    const Index ld = nb * positions;
    gather_planes(x.ptr(), s0, nb, cin, positions, xs);
    col.noalias() = wd.transpose() * xs;
    for (Index s = 0; s < nb; ++s) {
      img.assign(static_cast<std::size_t>(out_size), 0.0);
      col2im(col.data() + s * positions, ld, g, img.data());
      float* dst = out.ptr() + (s0 + s) * out_size;
      for (Index c = 0; c < cout; ++c) {
        const double b = bias.defined() ? bias.ptr()[c] : 0.0;
        for (Index p = 0; p < ho * wo; ++p) {
          dst[c * ho * wo + p] = static_cast<float>(img[static_cast<std::size_t>(c * ho * wo + p)] + b);
        }
      }
    }
  }
  count_flops(2ULL * static_cast<std::uint64_t>(kh * kw * cin * cout * positions * n));
  ensure_finite(out, "conv2d_transpose");

  if (track) {
    TensorImpl *xi = x.impl(), *ki = kernel.impl(), *oi = out.impl();
    TensorImpl* bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<Tensor> inputs{x, kernel};
    if (bias.defined()) inputs.push_back(bias);
    record(std::move(inputs), out, [xi, ki, bi, oi, g, n, cin, cout, patch, positions, out_size, chunk] {
      const MatD wd = to_double(ki->data.data(), cin, patch);
      MatD gw = MatD::Zero(cin, patch);
      MatD colg, gx, xs;
      for (Index s0 = 0; s0 < n; s0 += chunk) {
        const Index nb = std::min(chunk, n - s0);
        const Index ld = nb * positions;
        colg.resize(patch, ld);
        for (Index s = 0; s < nb; ++s) {
          im2col(oi->grad.data() + (s0 + s) * out_size, g, colg.data() + s * positions, ld);
        }
        if (xi->requires_grad) {
          gx.noalias() = wd * colg;
          float* dst = grad_ptr(xi);
          for (Index s = 0; s < nb; ++s) {
            for (Index c = 0; c < cin; ++c) {
              float* d = dst + ((s0 + s) * cin + c) * positions;
              const double* src = gx.data() + c * ld + s * positions;
              for (Index p = 0; p < positions; ++p) d[p] += static_cast<float>(src[p]);
            }
          }
        }
        if (ki->requires_grad) {
          gather_planes(xi->data.data(), s0, nb, cin, positions, xs);
          gw.noalias() += xs * colg.transpose();
        }
      }
      if (ki->requires_grad) add_into(grad_ptr(ki), gw);
      if (bi && bi->requires_grad) {
        float* gb = grad_ptr(bi);
        const Index plane = g.height * g.width;
        for (Index c = 0; c < cout; ++c) {
          double acc = 0.0;
          for (Index s = 0; s < n; ++s) {
            const float* gp = oi->grad.data() + s * out_size + c * plane;
            for (Index p = 0; p < plane; ++p) acc += gp[p];
          }
          gb[c] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& x) {
  require_rank(x, 4, "maxpool2d", "input");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("maxpool2d: spatial axes (2,3) must be even, got " + shape_str(x.shape()));
  }
  const Index ho = h / 2, wo = w / 2;
  const bool track = tracking({&x});
  Tensor out = make_output({n, c, ho, wo}, track);
  auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(out.numel()));
  const float* src = x.ptr();
  for (Index plane = 0; plane < n * c; ++plane) {
    const float* p = src + plane * h * w;
    for (Index i = 0; i < ho; ++i) {
      for (Index j = 0; j < wo; ++j) {
        const Index cand[4] = {(2 * i) * w + 2 * j, (2 * i) * w + 2 * j + 1,
                               (2 * i + 1) * w + 2 * j, (2 * i + 1) * w + 2 * j + 1};
        Index best = cand[0];
        for (int k = 1; k < 4; ++k) {
          if (p[cand[k]] > p[best]) best = cand[k];
        }
        const Index o = (plane * ho + i) * wo + j;
        out.ptr()[o] = p[best];
        (*argmax)[static_cast<std::size_t>(o)] = static_cast<std::int32_t>(plane * h * w + best);
      }
    }
  }
  if (track) {
    TensorImpl *xi = x.impl(), *oi = out.impl();
    record({x}, out, [xi, oi, argmax] {
      float* gx = grad_ptr(xi);
      const auto& g = oi->grad;
      for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  Mode mode, float eps, float momentum) {
  if (!(eps > 0.0f)) throw std::invalid_argument("batch_norm: eps must be positive");
  if (x.rank() < 2) throw DimensionError("batch_norm: input needs a channel axis");
  const Index n = x.dim(0), c = x.dim(1);
  const Index plane = x.numel() / (n * c);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &stats.mean, &stats.var}) {
    if (!t->defined() || t->numel() != c) {
      throw DimensionError("batch_norm: per-channel tensors must have " + std::to_string(c) +
                           " entries for input " + shape_str(x.shape()));
    }
  }
  const Index count = n * plane;
  if (mode == Mode::Train && count < 2) {
    throw DimensionError("batch_norm: train mode needs at least 2 values per channel, got " +
                         shape_str(x.shape()));
  }
  const bool track = tracking({&x, &gamma, &beta});
  Tensor out = make_output(x.shape(), track);
  auto xhat = std::make_shared<std::vector<float>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));

  for (Index ch = 0; ch < c; ++ch) {
    double mu, var;
    if (mode == Mode::Train) {
      double acc = 0.0;
      for (Index s = 0; s < n; ++s) {
        const float* p = x.ptr() + (s * c + ch) * plane;
        for (Index k = 0; k < plane; ++k) acc += p[k];
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (Index s = 0; s < n; ++s) {
        const float* p = x.ptr() + (s * c + ch) * plane;
        for (Index k = 0; k < plane; ++k) sq += (p[k] - mu) * (p[k] - mu);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      stats.mean.ptr()[ch] =
          static_cast<float>(momentum * stats.mean.ptr()[ch] + (1.0 - momentum) * mu);
      stats.var.ptr()[ch] =
          static_cast<float>(momentum * stats.var.ptr()[ch] + (1.0 - momentum) * unbiased);
    } else {
      mu = stats.mean.ptr()[ch];
      var = stats.var.ptr()[ch];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(ch)] = is;
    const double gm = gamma.ptr()[ch], bt = beta.ptr()[ch];
    for (Index s = 0; s < n; ++s) {
      const Index base = (s * c + ch) * plane;
      for (Index k = 0; k < plane; ++k) {
        const double xh = (x.ptr()[base + k] - mu) * is;
        (*xhat)[static_cast<std::size_t>(base + k)] = static_cast<float>(xh);
        out.ptr()[base + k] = static_cast<float>(gm * xh + bt);
      }
    }
  }
  count_flops(2ULL * static_cast<std::uint64_t>(x.numel()));
  ensure_finite(out, "batch_norm");

  if (track) {
    TensorImpl *xi = x.impl(), *gi = gamma.impl(), *bi = beta.impl(), *oi = out.impl();
    const bool train = mode == Mode::Train;
    record({x, gamma, beta}, out, [xi, gi, bi, oi, xhat, inv_std, n, c, plane, count, train] {
      const float* gy = oi->grad.data();
      for (Index ch = 0; ch < c; ++ch) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (Index s = 0; s < n; ++s) {
          const Index base = (s * c + ch) * plane;
          for (Index k = 0; k < plane; ++k) {
            sum_g += gy[base + k];
            sum_gx += static_cast<double>(gy[base + k]) * (*xhat)[static_cast<std::size_t>(base + k)];
          }
        }
        if (gi->requires_grad) grad_ptr(gi)[ch] += static_cast<float>(sum_gx);
        if (bi->requires_grad) grad_ptr(bi)[ch] += static_cast<float>(sum_g);
        if (!xi->requires_grad) continue;
        float* gx = grad_ptr(xi);
        const double scale_c = gi->data[static_cast<std::size_t>(ch)] * (*inv_std)[static_cast<std::size_t>(ch)];
        const double m = static_cast<double>(count);
        for (Index s = 0; s < n; ++s) {
          const Index base = (s * c + ch) * plane;
          for (Index k = 0; k < plane; ++k) {
            const double g = gy[base + k];
            if (train) {
              const double xh = (*xhat)[static_cast<std::size_t>(base + k)];
              gx[base + k] += static_cast<float>(scale_c * (g - sum_g / m - xh * sum_gx / m));
            } else {
              gx[base + k] += static_cast<float>(scale_c * g);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (!(eps > 0.0f)) throw std::invalid_argument("layer_norm: eps must be positive");
  const Index d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
  }
  const Index rows = x.numel() / d;
  const bool track = tracking({&x, &gamma, &beta});
  Tensor out = make_output(x.shape(), track);
  auto xhat = std::make_shared<std::vector<float>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) {
    const float* p = x.ptr() + r * d;
    double acc = 0.0;
    for (Index k = 0; k < d; ++k) acc += p[k];
    const double mu = acc / static_cast<double>(d);
    double sq = 0.0;
    for (Index k = 0; k < d; ++k) sq += (p[k] - mu) * (p[k] - mu);
    const double is = 1.0 / std::sqrt(sq / static_cast<double>(d) + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (Index k = 0; k < d; ++k) {
      const double xh = (p[k] - mu) * is;
      (*xhat)[static_cast<std::size_t>(r * d + k)] = static_cast<float>(xh);
      out.ptr()[r * d + k] = static_cast<float>(gamma.ptr()[k] * xh + beta.ptr()[k]);
    }
  }
  count_flops(2ULL * static_cast<std::uint64_t>(x.numel()));
  ensure_finite(out, "layer_norm");
  if (track) {
    TensorImpl *xi = x.impl(), *gi = gamma.impl(), *bi = beta.impl(), *oi = out.impl();
    record({x, gamma, beta}, out, [xi, gi, bi, oi, xhat, inv_std, rows, d] {
      const float* gy = oi->grad.data();
      std::vector<double> ggamma(static_cast<std::size_t>(d), 0.0), gbeta(static_cast<std::size_t>(d), 0.0);
      std::vector<double> gxh(static_cast<std::size_t>(d));
      for (Index r = 0; r < rows; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (Index k = 0; k < d; ++k) {
          const double g = gy[r * d + k];
          const double xh = (*xhat)[static_cast<std::size_t>(r * d + k)];
          ggamma[static_cast<std::size_t>(k)] += g * xh;
          gbeta[static_cast<std::size_t>(k)] += g;
          const double gh = g * gi->data[static_cast<std::size_t>(k)];
          gxh[static_cast<std::size_t>(k)] = gh;
          s1 += gh;
          s2 += gh * xh;
        }
        if (xi->requires_grad) {
          float* gx = grad_ptr(xi) + r * d;
          const double is = (*inv_std)[static_cast<std::size_t>(r)];
          const double dd = static_cast<double>(d);
          for (Index k = 0; k < d; ++k) {
            const double xh = (*xhat)[static_cast<std::size_t>(r * d + k)];
            gx[k] += static_cast<float>(is * (gxh[static_cast<std::size_t>(k)] - s1 / dd - xh * s2 / dd));
          }
        }
      }
      if (gi->requires_grad) {
        float* gg = grad_ptr(gi);
        for (Index k = 0; k < d; ++k) gg[k] += static_cast<float>(ggamma[static_cast<std::size_t>(k)]);
      }
      if (bi->requires_grad) {
        float* gb = grad_ptr(bi);
        for (Index k = 0; k < d; ++k) gb[k] += static_cast<float>(gbeta[static_cast<std::size_t>(k)]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dense and batched products

namespace {

constexpr Index kRowBlock = 256;

// Converts rows [r0, r0+nr) of a row-major float matrix into `dst`.
void rows_to_double(const float* src, Index r0, Index nr, Index cols, MatD& dst) {
  dst.resize(nr, cols);
  const float* p = src + r0 * cols;
  double* d = dst.data();
  for (Index i = 0; i < nr * cols; ++i) d[i] = p[i];
}

}  // namespace

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "dense", "weight");
  const Index din = weight.dim(0), dout = weight.dim(1);
  if (x.dim(-1) != din) {
    throw DimensionError("dense: input last axis = " + std::to_string(x.dim(-1)) +
                         " but weight axis 0 = " + std::to_string(din));
  }
  if (bias.defined() && bias.numel() != dout) {
    throw DimensionError("dense: bias must have " + std::to_string(dout) + " entries");
  }
  const Index rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  const bool track = tracking({&x, &weight, &bias});
  Tensor out = make_output(out_shape, track);
  const MatD wd = to_double(weight.ptr(), din, dout);
  MatD xd, y;
  for (Index r0 = 0; r0 < rows; r0 += kRowBlock) {
    const Index nr = std::min(kRowBlock, rows - r0);
    rows_to_double(x.ptr(), r0, nr, din, xd);
    y.noalias() = xd * wd;
    float* dst = out.ptr() + r0 * dout;
    for (Index r = 0; r < nr; ++r) {
      for (Index k = 0; k < dout; ++k) {
        dst[r * dout + k] = static_cast<float>(y(r, k) + (bias.defined() ? bias.ptr()[k] : 0.0f));
      }
    }
  }
  count_flops(2ULL * static_cast<std::uint64_t>(din * dout * rows));
  ensure_finite(out, "dense");
  if (track) {
    TensorImpl *xi = x.impl(), *wi = weight.impl(), *oi = out.impl();
    TensorImpl* bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    record(std::move(inputs), out, [xi, wi, bi, oi, rows, din, dout] {
      const MatD wd = to_double(wi->data.data(), din, dout);
      MatD gw = MatD::Zero(din, dout);
      std::vector<double> gb(static_cast<std::size_t>(dout), 0.0);
      MatD gy, xd, gx;
      for (Index r0 = 0; r0 < rows; r0 += kRowBlock) {
        const Index nr = std::min(kRowBlock, rows - r0);
        rows_to_double(oi->grad.data(), r0, nr, dout, gy);
        if (xi->requires_grad) {
          gx.noalias() = gy * wd.transpose();
          add_into(grad_ptr(xi) + r0 * din, gx);
        }
        if (wi->requires_grad) {
          rows_to_double(xi->data.data(), r0, nr, din, xd);
          gw.noalias() += xd.transpose() * gy;
        }
        if (bi && bi->requires_grad) {
          for (Index r = 0; r < nr; ++r) {
            for (Index k = 0; k < dout; ++k) gb[static_cast<std::size_t>(k)] += gy(r, k);
          }
        }
      }
      if (wi->requires_grad) add_into(grad_ptr(wi), gw);
      if (bi && bi->requires_grad) {
        float* g = grad_ptr(bi);
        for (Index k = 0; k < dout; ++k) g[k] += static_cast<float>(gb[static_cast<std::size_t>(k)]);
      }
    });
  }
  return out;
}

namespace {

// out[b] = A[b] · op(B[b]); transpose_b selects B[b]^T.
Tensor batched_product(const Tensor& a, const Tensor& b, bool transpose_b, const char* op) {
  require_rank(a, 3, op, "left operand");
  require_rank(b, 3, op, "right operand");
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index bk = transpose_b ? b.dim(2) : b.dim(1);
  const Index n = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != batch || bk != k) {
    throw DimensionError(std::string(op) + ": incompatible operands " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const bool track = tracking({&a, &b});
  Tensor out = make_output({batch, m, n}, track);
  // Rows of B as stored: [k, n] or, transposed, [n, k].
  const Index b_rows = transpose_b ? n : k, b_cols = transpose_b ? k : n;
  {
    MatD ad, bd, y;
    for (Index bb = 0; bb < batch; ++bb) {
      rows_to_double(a.ptr(), bb * m, m, k, ad);
      rows_to_double(b.ptr(), bb * b_rows, b_rows, b_cols, bd);
      if (transpose_b) {
        y.noalias() = ad.lazyProduct(bd.transpose());
      } else {
        y.noalias() = ad.lazyProduct(bd);
      }
      float* po = out.ptr() + bb * m * n;
      for (Index i = 0; i < m * n; ++i) po[i] = static_cast<float>(y.data()[i]);
    }
  }
  count_flops(2ULL * static_cast<std::uint64_t>(batch * m * k * n));
  ensure_finite(out, op);
  if (track) {
    TensorImpl *ai = a.impl(), *bi = b.impl(), *oi = out.impl();
    record({a, b}, out, [ai, bi, oi, batch, m, k, n, transpose_b, b_rows, b_cols] {
      MatD ad, bd, g, r;
      for (Index bb = 0; bb < batch; ++bb) {
        rows_to_double(oi->grad.data(), bb * m, m, n, g);
        if (ai->requires_grad) {
          rows_to_double(bi->data.data(), bb * b_rows, b_rows, b_cols, bd);
          // dA = G · op(B)^T
          if (transpose_b) {
            r.noalias() = g.lazyProduct(bd);
          } else {
            r.noalias() = g.lazyProduct(bd.transpose());
          }
          add_into(grad_ptr(ai) + bb * m * k, r);
        }
        if (bi->requires_grad) {
          rows_to_double(ai->data.data(), bb * m, m, k, ad);
          // dB = A^T · G, or its transpose when B entered transposed.
          if (transpose_b) {
            r.noalias() = g.transpose().lazyProduct(ad);
          } else {
            r.noalias() = ad.transpose().lazyProduct(g);
          }
          add_into(grad_ptr(bi) + bb * k * n, r);
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) { return batched_product(a, b, false, "bmm"); }
Tensor bmm_nt(const Tensor& a, const Tensor& b) { return batched_product(a, b, true, "bmm_nt"); }

// ---------------------------------------------------------------------------
// token-grid rearrangements

namespace {

using IndexVec = std::shared_ptr<std::vector<std::int32_t>>;

IndexVec make_index(Index size) {
  return std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(size));
}

void require_grid(const Tensor& x, Index side, const char* op) {
  require_rank(x, 3, op, "tokens");
  if (side <= 0 || x.dim(1) != side * side) {
    throw DimensionError(std::string(op) + ": token axis 1 = " + std::to_string(x.dim(1)) +
                         " is not a " + std::to_string(side) + "x" + std::to_string(side) + " grid");
  }
}

}  // namespace

Tensor nchw_to_tokens(const Tensor& x) {
  require_rank(x, 4, "nchw_to_tokens", "input");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto idx = make_index(x.numel());
  for (Index s = 0; s < n; ++s) {
    for (Index t = 0; t < hw; ++t) {
      for (Index ch = 0; ch < c; ++ch) {
        (*idx)[static_cast<std::size_t>((s * hw + t) * c + ch)] =
            static_cast<std::int32_t>((s * c + ch) * hw + t);
      }
    }
  }
  return gather_rows(x, 1, idx, {n, hw, c}, "nchw_to_tokens");
}

Tensor tokens_to_nchw(const Tensor& x, Index height, Index width) {
  require_rank(x, 3, "tokens_to_nchw", "tokens");
  const Index n = x.dim(0), hw = x.dim(1), c = x.dim(2);
  if (hw != height * width) {
    throw DimensionError("tokens_to_nchw: axis 1 = " + std::to_string(hw) + " is not " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  auto idx = make_index(x.numel());
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) {
      for (Index t = 0; t < hw; ++t) {
        (*idx)[static_cast<std::size_t>((s * c + ch) * hw + t)] =
            static_cast<std::int32_t>((s * hw + t) * c + ch);
      }
    }
  }
  return gather_rows(x, 1, idx, {n, c, height, width}, "tokens_to_nchw");
}

Tensor roll_grid(const Tensor& x, Index side, Index shift) {
  require_grid(x, side, "roll_grid");
  const Index n = x.dim(0), d = x.dim(2);
  const Index s = ((shift % side) + side) % side;
  auto idx = make_index(n * side * side);
  for (Index b = 0; b < n; ++b) {
    for (Index i = 0; i < side; ++i) {
      for (Index j = 0; j < side; ++j) {
        const Index src = ((i + s) % side) * side + (j + s) % side;
        (*idx)[static_cast<std::size_t>(b * side * side + i * side + j)] =
            static_cast<std::int32_t>(b * side * side + src);
      }
    }
  }
  return gather_rows(x, d, idx, x.shape(), "roll_grid");
}

Tensor window_partition(const Tensor& x, Index side, Index window) {
  require_grid(x, side, "window_partition");
  if (window <= 0 || side % window != 0) {
    throw DimensionError("window_partition: grid side " + std::to_string(side) +
                         " is not divisible by window " + std::to_string(window));
  }
  const Index n = x.dim(0), d = x.dim(2), per = side / window, t = window * window;
  auto idx = make_index(n * side * side);
  Index r = 0;
  for (Index b = 0; b < n; ++b) {
    for (Index wi = 0; wi < per; ++wi) {
      for (Index wj = 0; wj < per; ++wj) {
        for (Index a = 0; a < window; ++a) {
          for (Index c = 0; c < window; ++c) {
            (*idx)[static_cast<std::size_t>(r++)] = static_cast<std::int32_t>(
                b * side * side + (wi * window + a) * side + wj * window + c);
          }
        }
      }
    }
  }
  return gather_rows(x, d, idx, {n * per * per, t, d}, "window_partition");
}

Tensor window_reverse(const Tensor& x, Index side, Index window) {
  require_rank(x, 3, "window_reverse", "windows");
  if (window <= 0 || side % window != 0 || x.dim(1) != window * window) {
    throw DimensionError("window_reverse: windows " + shape_str(x.shape()) +
                         " do not tile a grid of side " + std::to_string(side));
  }
  const Index per = side / window, nw = per * per;
  if (x.dim(0) % nw != 0) throw DimensionError("window_reverse: window count mismatch");
  const Index n = x.dim(0) / nw, d = x.dim(2);
  auto idx = make_index(n * side * side);
  for (Index b = 0; b < n; ++b) {
    for (Index wi = 0; wi < per; ++wi) {
      for (Index wj = 0; wj < per; ++wj) {
        for (Index a = 0; a < window; ++a) {
          for (Index c = 0; c < window; ++c) {
            const Index token = (wi * window + a) * side + wj * window + c;
            const Index src = (b * nw + wi * per + wj) * window * window + a * window + c;
            (*idx)[static_cast<std::size_t>(b * side * side + token)] = static_cast<std::int32_t>(src);
          }
        }
      }
    }
  }
  return gather_rows(x, d, idx, {n, side * side, d}, "window_reverse");
}

Tensor split_heads(const Tensor& qkv, int heads, int which) {
  require_rank(qkv, 3, "split_heads", "qkv");
  if (heads <= 0 || qkv.dim(2) % (3 * heads) != 0 || which < 0 || which > 2) {
    throw DimensionError("split_heads: feature axis " + std::to_string(qkv.dim(2)) +
                         " not divisible into 3 x " + std::to_string(heads) + " heads");
  }
  const Index b = qkv.dim(0), t = qkv.dim(1), dh = qkv.dim(2) / (3 * heads);
  auto idx = make_index(b * heads * t);
  for (Index bb = 0; bb < b; ++bb) {
    for (Index h = 0; h < heads; ++h) {
      for (Index i = 0; i < t; ++i) {
        (*idx)[static_cast<std::size_t>((bb * heads + h) * t + i)] =
            static_cast<std::int32_t>((bb * t + i) * 3 * heads + which * heads + h);
      }
    }
  }
  return gather_rows(qkv, dh, idx, {b * heads, t, dh}, "split_heads");
}

Tensor merge_heads(const Tensor& x, int heads) {
  require_rank(x, 3, "merge_heads", "input");
  if (heads <= 0 || x.dim(0) % heads != 0) throw DimensionError("merge_heads: batch not divisible by heads");
  const Index b = x.dim(0) / heads, t = x.dim(1), dh = x.dim(2);
  auto idx = make_index(b * t * heads);
  for (Index bb = 0; bb < b; ++bb) {
    for (Index i = 0; i < t; ++i) {
      for (Index h = 0; h < heads; ++h) {
        (*idx)[static_cast<std::size_t>((bb * t + i) * heads + h)] =
            static_cast<std::int32_t>((bb * heads + h) * t + i);
      }
    }
  }
  return gather_rows(x, dh, idx, {b, t, heads * dh}, "merge_heads");
}

Tensor add_window_mask(const Tensor& scores, const Tensor& mask, int heads) {
  require_rank(scores, 3, "add_window_mask", "scores");
  require_rank(mask, 3, "add_window_mask", "mask");
  const Index t = scores.dim(1);
  const Index nw = mask.dim(0);
  if (scores.dim(2) != t || mask.dim(1) != t || mask.dim(2) != t) {
    throw DimensionError("add_window_mask: mask " + shape_str(mask.shape()) +
                         " incompatible with scores " + shape_str(scores.shape()));
  }
  const bool track = tracking({&scores});
  Tensor out = make_output(scores.shape(), track);
  for (Index b = 0; b < scores.dim(0); ++b) {
    const Index w = (b / heads) % nw;
    for (Index k = 0; k < t * t; ++k) {
      out.ptr()[b * t * t + k] = scores.ptr()[b * t * t + k] + mask.ptr()[w * t * t + k];
    }
  }
  if (track) {
    TensorImpl *si = scores.impl(), *oi = out.impl();
    record({scores}, out, [si, oi] {
      float* gs = grad_ptr(si);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    });
  }
  return out;
}

Tensor space_to_depth_tokens(const Tensor& x, Index side) {
  require_grid(x, side, "space_to_depth_tokens");
  if (side % 2 != 0) {
    throw DimensionError("space_to_depth_tokens: grid side " + std::to_string(side) + " is odd");
  }
  const Index n = x.dim(0), d = x.dim(2), half = side / 2;
  // Group order (row, col): (0,0), (1,0), (0,1), (1,1).
  constexpr Index kOff[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  auto idx = make_index(n * side * side);
  for (Index b = 0; b < n; ++b) {
    for (Index i = 0; i < half; ++i) {
      for (Index j = 0; j < half; ++j) {
        for (Index q = 0; q < 4; ++q) {
          const Index src = (2 * i + kOff[q][0]) * side + 2 * j + kOff[q][1];
          (*idx)[static_cast<std::size_t>(((b * half + i) * half + j) * 4 + q)] =
              static_cast<std::int32_t>(b * side * side + src);
        }
      }
    }
  }
  return gather_rows(x, d, idx, {n, half * half, 4 * d}, "space_to_depth_tokens");
}

Tensor depth_to_space_tokens(const Tensor& x, Index side) {
  require_grid(x, side, "depth_to_space_tokens");
  if (x.dim(2) % 4 != 0) {
    throw DimensionError("depth_to_space_tokens: feature axis " + std::to_string(x.dim(2)) +
                         " not divisible by 4");
  }
  const Index n = x.dim(0), c = x.dim(2) / 4, big = 2 * side;
  // Feature blocks ordered (p1, p2) row-major: (0,0), (0,1), (1,0), (1,1).
  auto idx = make_index(n * big * big);
  for (Index b = 0; b < n; ++b) {
    for (Index i = 0; i < big; ++i) {
      for (Index j = 0; j < big; ++j) {
        const Index src_token = (i / 2) * side + j / 2;
        const Index block = (i % 2) * 2 + (j % 2);
        (*idx)[static_cast<std::size_t>(b * big * big + i * big + j)] =
            static_cast<std::int32_t>((b * side * side + src_token) * 4 + block);
      }
    }
  }
  return gather_rows(x, c, idx, {n, big * big, c}, "depth_to_space_tokens");
}

Tensor shifted_window_mask(Index side, Index window, Index shift) {
  if (window <= 0 || side % window != 0) {
    throw DimensionError("shifted_window_mask: grid side " + std::to_string(side) +
                         " is not divisible by window " + std::to_string(window));
  }
  // Region label of each (already shifted) grid position.
  auto region = [&](Index p) -> Index {
    if (p < side - window) return 0;
    if (p < side - shift) return 1;
    return 2;
  };
  const Index per = side / window, t = window * window;
  Tensor mask({per * per, t, t});
  for (Index wi = 0; wi < per; ++wi) {
    for (Index wj = 0; wj < per; ++wj) {
      std::vector<Index> label(static_cast<std::size_t>(t));
      for (Index a = 0; a < window; ++a) {
        for (Index c = 0; c < window; ++c) {
          label[static_cast<std::size_t>(a * window + c)] =
              region(wi * window + a) * 3 + region(wj * window + c);
        }
      }
      float* m = mask.ptr() + (wi * per + wj) * t * t;
      for (Index p = 0; p < t; ++p) {
        for (Index q = 0; q < t; ++q) {
          m[p * t + q] = label[static_cast<std::size_t>(p)] == label[static_cast<std::size_t>(q)]
                             ? 0.0f
                             : kAttentionMaskValue;
        }
      }
    }
  }
  return mask;
}

Tensor window_attention(const Tensor& x, Index side, int heads, Index window, Index shift,
                        const AttentionWeights& weights) {
  require_grid(x, side, "window_attention");
  const Index d = x.dim(2);
  if (heads <= 0 || d % heads != 0) {
    throw DimensionError("window_attention: feature axis " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  if (window <= 0 || side % window != 0) {
    throw DimensionError("window_attention: grid side " + std::to_string(side) +
                         " is not divisible by window " + std::to_string(window));
  }
  if (shift != 0 && shift != window / 2) {
    throw std::invalid_argument("window_attention: shift must be 0 or window/2");
  }
  Tensor tokens = shift > 0 ? roll_grid(x, side, shift) : x;
  Tensor windows = window_partition(tokens, side, window);
  Tensor qkv = dense(windows, weights.qkv_weight, weights.qkv_bias);
  Tensor q = split_heads(qkv, heads, 0);
  Tensor k = split_heads(qkv, heads, 1);
  Tensor v = split_heads(qkv, heads, 2);
  const float scale_factor = 1.0f / std::sqrt(static_cast<float>(d / heads));
  Tensor scores = scale(bmm_nt(q, k), scale_factor);
  if (shift > 0) scores = add_window_mask(scores, shifted_window_mask(side, window, shift), heads);
  Tensor attn = softmax(scores, -1);
  Tensor mixed = merge_heads(bmm(attn, v), heads);
  Tensor projected = dense(mixed, weights.proj_weight, weights.proj_bias);
  Tensor merged = window_reverse(projected, side, window);
  return shift > 0 ? roll_grid(merged, side, -shift) : merged;
}

Tensor patch_merge(const Tensor& x, Index side, const Tensor& weight) {
  return dense(space_to_depth_tokens(x, side), weight, Tensor{});
}

Tensor patch_expand(const Tensor& x, Index side, const Tensor& weight) {
  require_grid(x, side, "patch_expand");
  return depth_to_space_tokens(dense(x, weight, Tensor{}), side);
}

// ---------------------------------------------------------------------------
// loss

LossResult masked_weighted_bce(const Tensor& logits, const Tensor& labels, float pos_weight) {
  require_rank(logits, 4, "masked_weighted_bce", "logits");
  require_rank(labels, 3, "masked_weighted_bce", "labels");
  if (logits.dim(1) != 1 || logits.dim(0) != labels.dim(0) || logits.dim(2) != labels.dim(1) ||
      logits.dim(3) != labels.dim(2)) {
    throw DimensionError("masked_weighted_bce: logits " + shape_str(logits.shape()) +
                         " incompatible with labels " + shape_str(labels.shape()));
  }
  const Index total = logits.numel();
  Index unmasked = 0;
  for (Index i = 0; i < total; ++i) {
    if (labels.ptr()[i] != -1.0f) ++unmasked;
  }
  const bool track = tracking({&logits});
  LossResult result;
  result.unmasked = unmasked;
  result.all_masked = unmasked == 0;
  result.loss = make_output(Shape{1}, track);

  auto softplus = [](double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); };
  double acc = 0.0;
  for (Index i = 0; i < total; ++i) {
    const float y = labels.ptr()[i];
    if (y == -1.0f) continue;
    const double z = logits.ptr()[i];
    acc += y == 1.0f ? pos_weight * softplus(-z) : softplus(z);
  }
  result.loss.ptr()[0] = unmasked > 0 ? static_cast<float>(acc / static_cast<double>(unmasked)) : 0.0f;
  ensure_finite(result.loss, "masked_weighted_bce");

  if (track) {
    TensorImpl *li = logits.impl(), *oi = result.loss.impl();
    auto lab = std::make_shared<std::vector<float>>(labels.data().begin(), labels.data().end());
    record({logits}, result.loss, [li, oi, lab, unmasked, pos_weight] {
      float* gz = grad_ptr(li);
      if (unmasked == 0) return;
      const double g = oi->grad[0] / static_cast<double>(unmasked);
      for (std::size_t i = 0; i < lab->size(); ++i) {
        const float y = (*lab)[i];
        if (y == -1.0f) continue;
        const double z = li->data[i];
        const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        const double d = y == 1.0f ? pos_weight * (s - 1.0) : s;
        gz[i] += static_cast<float>(g * d);
      }
    });
  }
  return result;
}

}  // namespace wildfire::ops
