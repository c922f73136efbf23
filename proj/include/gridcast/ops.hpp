#pragma once

// Forward and backward kernels for the layer set of the forecasting U-Net.
// All spatial tensors are (C, H, W); batches are handled by the caller.

#include <algorithm>
#include <utility>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline void require_rank(Index rank, Index expected, const char* op, const char* arg, const Shape& s) {
  require(rank == expected, std::string(op) + ": " + arg + " must have rank " + std::to_string(expected) +
                                ", got shape " + to_string(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct ConvGeometry {
  Index in_channels, height, width;
  Index out_channels, kernel, pad, stride;
  Index out_height, out_width;

  Index patch() const { return in_channels * kernel * kernel; }
  Index out_pixels() const { return out_height * out_width; }
};

template <typename Scalar>
ConvGeometry conv_geometry(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                           Index pad, Index stride) {
  detail::require_rank(x.rank(), 3, "conv2d", "input", x.shape());
  detail::require_rank(w.rank(), 4, "conv2d", "weight", w.shape());
  detail::require(w.dim(2) == w.dim(3) && w.dim(2) >= 1, "conv2d: kernel must be square, got " + to_string(w.shape()));
  detail::require(w.dim(1) == x.dim(0), "conv2d: input has " + std::to_string(x.dim(0)) +
                                            " channels but weight " + to_string(w.shape()) + " expects " +
                                            std::to_string(w.dim(1)));
  detail::require(b.size() == w.dim(0), "conv2d: bias " + to_string(b.shape()) + " does not match " +
                                            std::to_string(w.dim(0)) + " output channels");
  detail::require(pad >= 0 && stride >= 1, "conv2d: pad must be >= 0 and stride >= 1");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), pad, stride, 0, 0};
  const Index span_h = g.height + 2 * pad - g.kernel;
  const Index span_w = g.width + 2 * pad - g.kernel;
  detail::require(span_h >= 0 && span_w >= 0, "conv2d: kernel larger than padded input " + to_string(x.shape()));
  g.out_height = span_h / stride + 1;
  g.out_width = span_w / stride + 1;
  return g;
}

namespace detail {

// Output columns [lo, hi) read in-bounds input for kernel column kx.
inline std::pair<Index, Index> valid_columns(const ConvGeometry& g, Index kx) {
  Index lo = 0, hi = g.out_width;
  while (lo < hi && lo * g.stride + kx - g.pad < 0) ++lo;
  while (hi > lo && (hi - 1) * g.stride + kx - g.pad >= g.width) --hi;
  return {lo, hi};
}

}  // namespace detail

/// Unfolds (C, H, W) into a (C*k*k, H'*W') patch matrix.
template <typename Scalar>
Tensor<Scalar> im2col(const Tensor<Scalar>& x, const ConvGeometry& g) {
  auto cols = Tensor<Scalar>::uninitialized({g.patch(), g.out_pixels()});
  Scalar* out = cols.data();
  const Scalar* in = x.data();
  for (Index c = 0; c < g.in_channels; ++c) {
    for (Index ky = 0; ky < g.kernel; ++ky) {
      for (Index kx = 0; kx < g.kernel; ++kx) {
        const auto [lo, hi] = detail::valid_columns(g, kx);
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const Index iy = oy * g.stride + ky - g.pad;
          Scalar* row = out + oy * g.out_width;
          if (iy < 0 || iy >= g.height) {
            std::fill(row, row + g.out_width, Scalar(0));
            continue;
          }
          const Scalar* src = in + (c * g.height + iy) * g.width + kx - g.pad;
          std::fill(row, row + lo, Scalar(0));
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, row + lo);
          } else {
            for (Index ox = lo; ox < hi; ++ox) row[ox] = src[ox * g.stride];
          }
          std::fill(row + hi, row + g.out_width, Scalar(0));
        }
        out += g.out_pixels();
      }
    }
  }
  return cols;
}

/// Folds a patch matrix back onto (C, H, W), summing overlapping contributions.
template <typename Scalar>
Tensor<Scalar> col2im(const Tensor<Scalar>& cols, const ConvGeometry& g) {
  Tensor<Scalar> x({g.in_channels, g.height, g.width});
  const Scalar* src = cols.data();
  Scalar* out = x.data();
  for (Index c = 0; c < g.in_channels; ++c) {
    for (Index ky = 0; ky < g.kernel; ++ky) {
      for (Index kx = 0; kx < g.kernel; ++kx) {
        const auto [lo, hi] = detail::valid_columns(g, kx);
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const Index iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.height) continue;
          const Scalar* row = src + oy * g.out_width;
          Scalar* dst = out + (c * g.height + iy) * g.width + kx - g.pad;
          for (Index ox = lo; ox < hi; ++ox) dst[ox * g.stride] += row[ox];
        }
        src += g.out_pixels();
      }
    }
  }
  return x;
}

// Stride-1 convolutions skip im2col: one GEMM of the tap-stacked weights
// (k*k*C_out, C_in) with the input gives every tap's response, which is then
// shifted into place. Same arithmetic, far less memory traffic when C_in is large.
namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
RowMatrix<Scalar> stack_taps(const Tensor<Scalar>& w, const ConvGeometry& g) {
  const Index kk = g.kernel * g.kernel;
  RowMatrix<Scalar> s(kk * g.out_channels, g.in_channels);
  for (Index o = 0; o < g.out_channels; ++o) {
    for (Index c = 0; c < g.in_channels; ++c) {
      const Scalar* src = w.data() + (o * g.in_channels + c) * kk;
      for (Index k = 0; k < kk; ++k) s(k * g.out_channels + o, c) = src[k];
    }
  }
  return s;
}

template <typename Scalar>
void unstack_taps(const RowMatrix<Scalar>& s, const ConvGeometry& g, Tensor<Scalar>& w) {
  const Index kk = g.kernel * g.kernel;
  for (Index o = 0; o < g.out_channels; ++o) {
    for (Index c = 0; c < g.in_channels; ++c) {
      Scalar* dst = w.data() + (o * g.in_channels + c) * kk;
      for (Index k = 0; k < kk; ++k) dst[k] = s(k * g.out_channels + o, c);
    }
  }
}

/// Visits every (tap, output row) pair with an in-bounds input row.
template <typename Fn>
void for_each_tap_row(const ConvGeometry& g, Fn&& fn) {
  for (Index ky = 0; ky < g.kernel; ++ky) {
    for (Index kx = 0; kx < g.kernel; ++kx) {
      const auto [lo, hi] = valid_columns(g, kx);
      if (lo >= hi) continue;
      for (Index oy = 0; oy < g.out_height; ++oy) {
        const Index iy = oy + ky - g.pad;
        if (iy < 0 || iy >= g.height) continue;
        fn(ky * g.kernel + kx, oy, iy, lo, hi, kx - g.pad);
      }
    }
  }
}

/// Strided and small convolutions go through im2col; the patch matrix is
/// cheap there and saves restacking the weights.
inline bool use_im2col(const ConvGeometry& g) { return g.stride != 1 || g.out_pixels() <= 1024; }

template <typename Scalar>
Tensor<Scalar> conv2d_shifted(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                              const ConvGeometry& g) {
  const RowMatrix<Scalar> z = stack_taps(w, g) * x.matrix(g.in_channels, g.height * g.width);
  auto y = Tensor<Scalar>::uninitialized({g.out_channels, g.out_height, g.out_width});
  for (Index o = 0; o < g.out_channels; ++o) {
    std::fill(y.data() + o * g.out_pixels(), y.data() + (o + 1) * g.out_pixels(), b[o]);
  }
  for_each_tap_row(g, [&](Index k, Index oy, Index iy, Index lo, Index hi, Index shift) {
    for (Index o = 0; o < g.out_channels; ++o) {
      Scalar* dst = y.data() + o * g.out_pixels() + oy * g.out_width;
      const Scalar* src = z.data() + (k * g.out_channels + o) * g.height * g.width + iy * g.width + shift;
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(dst + lo, hi - lo) +=
          Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(src + lo, hi - lo);
    }
  });
  return y;
}

}  // namespace detail

/// Cross-correlation of x (C_in, H, W) with w (C_out, C_in, k, k) plus per-channel bias.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b, Index pad,
                      Index stride = 1) {
  const ConvGeometry g = conv_geometry(x, w, b, pad, stride);
  if (!detail::use_im2col(g)) return detail::conv2d_shifted(x, w, b, g);
  const Tensor<Scalar> cols = im2col(x, g);
  auto y = Tensor<Scalar>::uninitialized({g.out_channels, g.out_height, g.out_width});
  auto out = y.matrix(g.out_channels, g.out_pixels());
  out.noalias() = w.matrix(g.out_channels, g.patch()) * cols.matrix(g.patch(), g.out_pixels());
  out.colwise() += b.array().matrix();
  return y;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> dx, dw, db;
};

/// Gradients of a stride-1 conv2d from its forward input `x`.
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward_shifted(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& dy,
                                          const ConvGeometry& g, bool need_dx = true) {
  detail::require(g.stride == 1, "conv2d_backward_shifted: stride must be 1");
  const Index hw = g.height * g.width;
  // d[k*C_out + o] is dy[o] moved to the input positions tap k reads from.
  detail::RowMatrix<Scalar> d = detail::RowMatrix<Scalar>::Zero(g.kernel * g.kernel * g.out_channels, hw);
  detail::for_each_tap_row(g, [&](Index k, Index oy, Index iy, Index lo, Index hi, Index shift) {
    for (Index o = 0; o < g.out_channels; ++o) {
      const Scalar* src = dy.data() + o * g.out_pixels() + oy * g.out_width;
      Scalar* dst = d.data() + (k * g.out_channels + o) * hw + iy * g.width + shift;
      std::copy(src + lo, src + hi, dst + lo);
    }
  });
  ConvGrads<Scalar> grads;
  const auto xm = x.matrix(g.in_channels, hw);
  const detail::RowMatrix<Scalar> dstack = d * xm.transpose();
  grads.dw = Tensor<Scalar>::uninitialized(w.shape());
  detail::unstack_taps(dstack, g, grads.dw);
  grads.db = Tensor<Scalar>({g.out_channels});
  grads.db.array() = dy.matrix(g.out_channels, g.out_pixels()).rowwise().sum().array();
  if (need_dx) {
    grads.dx = Tensor<Scalar>::uninitialized(x.shape());
    grads.dx.matrix(g.in_channels, hw).noalias() = detail::stack_taps(w, g).transpose() * d;
  }
  return grads;
}

/// Gradients of conv2d. `cols` is the im2col of the forward input; pass
/// `need_dx = false` to skip the input gradient.
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& cols, const Tensor<Scalar>& w, const Tensor<Scalar>& dy,
                                  const ConvGeometry& g, bool need_dx = true) {
  ConvGrads<Scalar> grads;
  const auto dy_m = dy.matrix(g.out_channels, g.out_pixels());
  grads.dw = Tensor<Scalar>::uninitialized(w.shape());
  grads.dw.matrix(g.out_channels, g.patch()).noalias() = dy_m * cols.matrix(g.patch(), g.out_pixels()).transpose();
  grads.db = Tensor<Scalar>({g.out_channels});
  grads.db.array() = dy_m.rowwise().sum().array();
  if (need_dx) {
    auto dcols = Tensor<Scalar>::uninitialized({g.patch(), g.out_pixels()});
    dcols.matrix(g.patch(), g.out_pixels()).noalias() = w.matrix(g.out_channels, g.patch()).transpose() * dy_m;
    grads.dx = col2im(dcols, g);
  }
  return grads;
}

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                                  const Tensor<Scalar>& dy, Index pad, Index stride = 1) {
  const ConvGeometry g = conv_geometry(x, w, b, pad, stride);
  if (!detail::use_im2col(g)) return conv2d_backward_shifted(x, w, dy, g);
  return conv2d_backward(im2col(x, g), w, dy, g);
}

// ---------------------------------------------------------------------------
// conv_transpose2d (stride 2, kernel 2x2)
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
void check_conv_transpose(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  require_rank(x.rank(), 3, "conv_transpose2d", "input", x.shape());
  require_rank(w.rank(), 4, "conv_transpose2d", "weight", w.shape());
  require(w.dim(2) == 2 && w.dim(3) == 2, "conv_transpose2d: kernel must be 2x2, got " + to_string(w.shape()));
  require(w.dim(0) == x.dim(0), "conv_transpose2d: input has " + std::to_string(x.dim(0)) +
                                    " channels but weight " + to_string(w.shape()) + " expects " +
                                    std::to_string(w.dim(0)));
  require(b.size() == w.dim(1), "conv_transpose2d: bias " + to_string(b.shape()) + " does not match " +
                                    std::to_string(w.dim(1)) + " output channels");
}

}  // namespace detail

/// Stride-2 transposed convolution: x (C_in, H, W), w (C_in, C_out, 2, 2) -> (C_out, 2H, 2W).
template <typename Scalar>
Tensor<Scalar> conv_transpose2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  detail::check_conv_transpose(x, w, b);
  const Index cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(1);
  // cols(co*4 + a*2 + c, i*W + j) = sum_ci w(ci, co, a, c) * x(ci, i, j)
  typename Tensor<Scalar>::RowMatrix cols = w.matrix(cin, cout * 4).transpose() * x.matrix(cin, h * wd);
  Tensor<Scalar> y({cout, 2 * h, 2 * wd});
  for (Index co = 0; co < cout; ++co) {
    for (Index a = 0; a < 2; ++a) {
      for (Index c = 0; c < 2; ++c) {
        const Scalar* src = cols.data() + (co * 4 + a * 2 + c) * h * wd;
        for (Index i = 0; i < h; ++i) {
          Scalar* dst = y.data() + (co * 2 * h + 2 * i + a) * 2 * wd + c;
          for (Index j = 0; j < wd; ++j) dst[2 * j] = src[i * wd + j] + b[co];
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
ConvGrads<Scalar> conv_transpose2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                                            const Tensor<Scalar>& dy, bool need_dx = true) {
  const Index cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(1);
  detail::require(dy.rank() == 3 && dy.dim(0) == cout && dy.dim(1) == 2 * h && dy.dim(2) == 2 * wd,
                  "conv_transpose2d_backward: upstream gradient has shape " + to_string(dy.shape()));
  typename Tensor<Scalar>::RowMatrix dcols(cout * 4, h * wd);
  for (Index co = 0; co < cout; ++co) {
    for (Index a = 0; a < 2; ++a) {
      for (Index c = 0; c < 2; ++c) {
        Scalar* dst = dcols.data() + (co * 4 + a * 2 + c) * h * wd;
        for (Index i = 0; i < h; ++i) {
          const Scalar* src = dy.data() + (co * 2 * h + 2 * i + a) * 2 * wd + c;
          for (Index j = 0; j < wd; ++j) dst[i * wd + j] = src[2 * j];
        }
      }
    }
  }
  ConvGrads<Scalar> grads;
  grads.dw = Tensor<Scalar>(w.shape());
  grads.dw.matrix(cin, cout * 4).noalias() = x.matrix(cin, h * wd) * dcols.transpose();
  grads.db = Tensor<Scalar>({cout});
  grads.db.array() = dy.matrix(cout, 4 * h * wd).rowwise().sum().array();
  if (need_dx) {
    grads.dx = Tensor<Scalar>(x.shape());
    grads.dx.matrix(cin, h * wd).noalias() = w.matrix(cin, cout * 4) * dcols;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// maxpool2
// ---------------------------------------------------------------------------

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> out;
  std::vector<Index> argmax;  // flat row-major index into the pooled input
};

/// 2x2 max pooling with stride 2. Ties go to the first element in row-major window order.
template <typename Scalar>
PoolResult<Scalar> maxpool2(const Tensor<Scalar>& x) {
  detail::require_rank(x.rank(), 3, "maxpool2", "input", x.shape());
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  detail::require(h % 2 == 0 && w % 2 == 0, "maxpool2: spatial dims must be even, got " + to_string(x.shape()));
  PoolResult<Scalar> r{Tensor<Scalar>({c, h / 2, w / 2}), {}};
  r.argmax.resize(static_cast<std::size_t>(r.out.size()));
  Index o = 0;
  for (Index ch = 0; ch < c; ++ch) {
    for (Index i = 0; i < h / 2; ++i) {
      for (Index j = 0; j < w / 2; ++j, ++o) {
        const Index base = (ch * h + 2 * i) * w + 2 * j;
        const Index window[4] = {base, base + 1, base + w, base + w + 1};
        Index best = window[0];
        for (Index k = 1; k < 4; ++k) {
          if (x[window[k]] > x[best]) best = window[k];
        }
        r.out[o] = x[best];
        r.argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Shape& input_shape, const std::vector<Index>& argmax, const Tensor<Scalar>& dy) {
  detail::require(static_cast<Index>(argmax.size()) == dy.size(), "maxpool2_backward: argmax/gradient size mismatch");
  Tensor<Scalar> dx(input_shape);
  for (Index o = 0; o < dy.size(); ++o) dx[argmax[static_cast<std::size_t>(o)]] += dy[o];
  return dx;
}

// ---------------------------------------------------------------------------
// group_norm
// ---------------------------------------------------------------------------

template <typename Scalar>
struct GroupNormResult {
  Tensor<Scalar> out;
  Tensor<Scalar> mean;  // per group
  Tensor<Scalar> rstd;  // per group, 1/sqrt(var + eps)
};

/// Group normalization over groups of `channels_per_group` consecutive channels.
template <typename Scalar>
GroupNormResult<Scalar> group_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                                   Index channels_per_group, Scalar eps = Scalar(1e-5)) {
  detail::require_rank(x.rank(), 3, "group_norm", "input", x.shape());
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  detail::require(channels_per_group >= 1 && c % channels_per_group == 0,
                  "group_norm: " + std::to_string(c) + " channels not divisible into groups of " +
                      std::to_string(channels_per_group));
  detail::require(gamma.size() == c && beta.size() == c, "group_norm: affine parameters must have " +
                                                             std::to_string(c) + " entries");
  detail::require(eps > Scalar(0), "group_norm: eps must be positive");
  const Index groups = c / channels_per_group, n = channels_per_group * hw;
  GroupNormResult<Scalar> r{Tensor<Scalar>(x.shape()), Tensor<Scalar>({groups}), Tensor<Scalar>({groups})};
  for (Index g = 0; g < groups; ++g) {
    const auto seg = x.array().segment(g * n, n);
    const Scalar mean = seg.mean();
    const Scalar var = (seg - mean).square().mean();
    const Scalar rstd = Scalar(1) / std::sqrt(var + eps);
    r.mean[g] = mean;
    r.rstd[g] = rstd;
    for (Index k = 0; k < channels_per_group; ++k) {
      const Index ch = g * channels_per_group + k;
      r.out.array().segment(ch * hw, hw) = (x.array().segment(ch * hw, hw) - mean) * (rstd * gamma[ch]) + beta[ch];
    }
  }
  return r;
}

template <typename Scalar>
struct GroupNormGrads {
  Tensor<Scalar> dx, dgamma, dbeta;
};

template <typename Scalar>
GroupNormGrads<Scalar> group_norm_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                           const GroupNormResult<Scalar>& fwd, const Tensor<Scalar>& dy,
                                           Index channels_per_group, bool need_dx = true) {
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  const Index groups = c / channels_per_group, n = channels_per_group * hw;
  GroupNormGrads<Scalar> grads{Tensor<Scalar>(x.shape()), Tensor<Scalar>({c}), Tensor<Scalar>({c})};
  typename Tensor<Scalar>::Storage xhat(n), dxhat(n);
  for (Index g = 0; g < groups; ++g) {
    const Scalar mean = fwd.mean[g], rstd = fwd.rstd[g];
    xhat = (x.array().segment(g * n, n) - mean) * rstd;
    for (Index k = 0; k < channels_per_group; ++k) {
      const Index ch = g * channels_per_group + k;
      const auto dy_ch = dy.array().segment(ch * hw, hw);
      grads.dgamma[ch] = (dy_ch * xhat.segment(k * hw, hw)).sum();
      grads.dbeta[ch] = dy_ch.sum();
      dxhat.segment(k * hw, hw) = dy_ch * gamma[ch];
    }
    if (need_dx) {
      const Scalar sum_d = dxhat.sum();
      const Scalar sum_dx = (dxhat * xhat).sum();
      grads.dx.array().segment(g * n, n) =
          (rstd / Scalar(n)) * (Scalar(n) * dxhat - sum_d - xhat * sum_dx);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// relu, concat, pad/crop, mse
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.shape(), x.array().max(Scalar(0)));
}

/// Subgradient 0 at x == 0.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
  return Tensor<Scalar>(x.shape(), (x.array() > Scalar(0)).select(dy.array(), Scalar(0)));
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank(a.rank(), 3, "concat_channels", "first operand", a.shape());
  detail::require_rank(b.rank(), 3, "concat_channels", "second operand", b.shape());
  detail::require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
                  "concat_channels: spatial mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<Scalar> y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  y.array().head(a.size()) = a.array();
  y.array().tail(b.size()) = b.array();
  return y;
}

/// Zero-pads (C, H, W) on the bottom/right to (C, out_h, out_w).
template <typename Scalar>
Tensor<Scalar> pad_bottom_right(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  detail::require_rank(x.rank(), 3, "pad", "input", x.shape());
  detail::require(out_h >= x.dim(1) && out_w >= x.dim(2), "pad: target smaller than input " + to_string(x.shape()));
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<Scalar> y({c, out_h, out_w});
  for (Index ch = 0; ch < c; ++ch) {
    for (Index i = 0; i < h; ++i) {
      std::copy_n(x.data() + (ch * h + i) * w, w, y.data() + (ch * out_h + i) * out_w);
    }
  }
  return y;
}

/// Keeps the top-left (C, out_h, out_w) block.
template <typename Scalar>
Tensor<Scalar> crop_top_left(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  detail::require_rank(x.rank(), 3, "crop", "input", x.shape());
  detail::require(out_h <= x.dim(1) && out_w <= x.dim(2), "crop: target larger than input " + to_string(x.shape()));
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<Scalar> y({c, out_h, out_w});
  for (Index ch = 0; ch < c; ++ch) {
    for (Index i = 0; i < out_h; ++i) {
      std::copy_n(x.data() + (ch * h + i) * w, out_w, y.data() + (ch * out_h + i) * out_w);
    }
  }
  return y;
}

/// Mean of squared differences; accumulates in double.
template <typename Scalar>
Scalar mse(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  detail::require(pred.shape() == target.shape(),
                  "mse: shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  detail::require(pred.size() > 0, "mse: empty operands");
  const double sum = (pred.array() - target.array()).template cast<double>().square().sum();
  return static_cast<Scalar>(sum / static_cast<double>(pred.size()));
}

template <typename Scalar>
Tensor<Scalar> mse_backward(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, Scalar dloss = Scalar(1)) {
  const Scalar scale = Scalar(2) * dloss / static_cast<Scalar>(pred.size());
  return Tensor<Scalar>(pred.shape(), (pred.array() - target.array()) * scale);
}

}  // namespace gridcast
