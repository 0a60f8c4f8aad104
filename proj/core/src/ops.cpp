// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "psnas/error.hpp"

namespace psnas::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using StoragePtr = std::shared_ptr<detail::Storage<T>>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  if (!x.defined() || x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
  }
}

template <typename T>
void accumulate(const StoragePtr<T>& s, std::span<const T> g) {
  if (!s->requires_grad) return;
  auto dst = s->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, k, ho, wo;
  int stride, pad;
};

ConvGeom conv_geometry(const Shape& xs, std::size_t cout, std::size_t k, int stride, int pad,
                       const char* op) {
  if (k % 2 == 0) throw ShapeError(std::string(op) + ": kernel size must be odd");
  if (stride < 1) throw ShapeError(std::string(op) + ": stride must be positive");
  if (pad < 0) throw ShapeError(std::string(op) + ": padding must be non-negative");
  const long h = static_cast<long>(xs[2]), w = static_cast<long>(xs[3]);
  const long kk = static_cast<long>(k);
  if (h + 2 * pad < kk || w + 2 * pad < kk) throw ShapeError(std::string(op) + ": input smaller than kernel");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], cout, k, 0, 0, stride, pad};
  g.ho = static_cast<std::size_t>((h + 2 * pad - kk) / stride + 1);
  g.wo = static_cast<std::size_t>((w + 2 * pad - kk) / stride + 1);
  return g;
}

// Output index range [lo, hi) along one axis for kernel offset kofs, such
// that o*stride + kofs - pad lies inside [0, extent).
inline void valid_range(long extent, long out_extent, long kofs, long stride, long pad, long& lo, long& hi) {
  const long shift = kofs - pad;
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  hi = (extent - 1 - shift) >= 0 ? (extent - 1 - shift) / stride + 1 : 0;
  hi = std::min(hi, out_extent);
  if (lo > hi) lo = hi;
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const long k = static_cast<long>(g.k), s = g.stride, p = g.pad;
  const long ho = static_cast<long>(g.ho), wo = static_cast<long>(g.wo);
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * g.h * g.w;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * g.ho * g.wo;
        std::fill(row, row + g.ho * g.wo, T(0));
        long oy0, oy1, ox0, ox1;
        valid_range(h, ho, ky, s, p, oy0, oy1);
        valid_range(w, wo, kx, s, p, ox0, ox1);
        for (long oy = oy0; oy < oy1; ++oy) {
          const T* src = xc + (oy * s + ky - p) * w + kx - p;
          T* dst = row + oy * wo;
          for (long ox = ox0; ox < ox1; ++ox) dst[ox] = src[ox * s];
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* dx) {
  const long k = static_cast<long>(g.k), s = g.stride, p = g.pad;
  const long ho = static_cast<long>(g.ho), wo = static_cast<long>(g.wo);
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* dc = dx + c * g.h * g.w;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * g.ho * g.wo;
        long oy0, oy1, ox0, ox1;
        valid_range(h, ho, ky, s, p, oy0, oy1);
        valid_range(w, wo, kx, s, p, ox0, ox1);
        for (long oy = oy0; oy < oy1; ++oy) {
          T* dst = dc + (oy * s + ky - p) * w + kx - p;
          const T* src = row + oy * wo;
          for (long ox = ox0; ox < ox1; ++ox) dst[ox * s] += src[ox];
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise and reductions

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (tape.tracks({&a, &b})) {
    tape.record({a.storage(), b.storage()}, out, [sa = a.storage(), sb = b.storage()](std::span<const T> g) {
      accumulate(sa, g);
      accumulate(sb, g);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (tape.tracks({&a, &b})) {
    tape.record({a.storage(), b.storage()}, out, [sa = a.storage(), sb = b.storage()](std::span<const T> g) {
      accumulate(sa, g);
      if (sb->requires_grad) {
        auto gb = sb->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (tape.tracks({&a, &b})) {
    tape.record({a.storage(), b.storage()}, out, [sa = a.storage(), sb = b.storage()](std::span<const T> g) {
      if (sa->requires_grad) {
        auto ga = sa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sb->data[i];
      }
      if (sb->requires_grad) {
        auto gb = sb->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * sa->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (tape.tracks({&a})) {
    tape.record({a.storage()}, out, [sa = a.storage(), factor](std::span<const T> g) {
      auto ga = sa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
  if (tape.tracks({&x})) {
    tape.record({x.storage()}, out, [sx = x.storage()](std::span<const T> g) {
      auto gx = sx->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (sx->data[i] > T(0)) gx[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out(Shape{1}, acc);
  if (tape.tracks({&x})) {
    tape.record({x.storage()}, out, [sx = x.storage()](std::span<const T> g) {
      auto gx = sx->grad_buffer();
      for (auto& v : gx) v += g[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  return scale(tape, sum(tape, x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out(Shape{m, n});
  MatMap<T>(out.data().data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
  if (tape.tracks({&a, &b})) {
    tape.record({a.storage(), b.storage()}, out, [sa = a.storage(), sb = b.storage(), m, k, n](std::span<const T> g) {
      ConstMatMap<T> G(g.data(), m, n);
      if (sa->requires_grad) {
        MatMap<T>(sa->grad_buffer().data(), m, k).noalias() += G * ConstMatMap<T>(sb->data.data(), k, n).transpose();
      }
      if (sb->requires_grad) {
        MatMap<T>(sb->grad_buffer().data(), k, n).noalias() += ConstMatMap<T>(sa->data.data(), m, k).transpose() * G;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const auto batch = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input features " + std::to_string(in) + " vs weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) throw ShapeError("linear: bias shape");
  Tensor<T> out(Shape{batch, outf});
  MatMap<T> Y(out.data().data(), batch, outf);
  Y.noalias() = ConstMatMap<T>(x.data().data(), batch, in) * ConstMatMap<T>(weight.data().data(), outf, in).transpose();
  if (bias.defined()) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < outf; ++o) Y(b, o) += bias[o];
  }
  if (tape.tracks({&x, &weight, &bias})) {
    StoragePtr<T> sbias = bias.defined() ? bias.storage() : nullptr;
    tape.record({x.storage(), weight.storage(), sbias}, out,
                [sx = x.storage(), sw = weight.storage(), sbias, batch, in, outf](std::span<const T> g) {
                  ConstMatMap<T> G(g.data(), batch, outf);
                  if (sx->requires_grad) {
                    MatMap<T>(sx->grad_buffer().data(), batch, in).noalias() +=
                        G * ConstMatMap<T>(sw->data.data(), outf, in);
                  }
                  if (sw->requires_grad) {
                    MatMap<T>(sw->grad_buffer().data(), outf, in).noalias() +=
                        G.transpose() * ConstMatMap<T>(sx->data.data(), batch, in);
                  }
                  if (sbias && sbias->requires_grad) {
                    auto gb = sbias->grad_buffer();
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t o = 0; o < outf; ++o) gb[o] += G(b, o);
                  }
                });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel, int stride, int padding) {
  require_rank(x, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  if (kernel.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel " +
                     shape_str(kernel.shape()));
  }
  if (kernel.dim(2) != kernel.dim(3)) throw ShapeError("conv2d: kernel must be square");
  const ConvGeom g = conv_geometry(x.shape(), kernel.dim(0), kernel.dim(2), stride, padding, "conv2d");
  const bool direct = g.k == 1 && g.stride == 1 && g.pad == 0;
  const std::size_t rows = g.cin * g.k * g.k, npix = g.ho * g.wo;

  Tensor<T> out(Shape{g.batch, g.cout, g.ho, g.wo});
  std::vector<T> cols(direct ? 0 : rows * npix);
  ConstMatMap<T> W(kernel.data().data(), g.cout, rows);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* xb = x.data().data() + b * g.cin * g.h * g.w;
    const T* colp = xb;
    if (!direct) {
      im2col(xb, g, cols.data());
      colp = cols.data();
    }
    MatMap<T>(out.data().data() + b * g.cout * npix, g.cout, npix).noalias() = W * ConstMatMap<T>(colp, rows, npix);
  }

  if (tape.tracks({&x, &kernel})) {
    tape.record({x.storage(), kernel.storage()}, out,
                [sx = x.storage(), sk = kernel.storage(), g, direct, rows, npix](std::span<const T> grad) {
                  std::vector<T> cols(direct ? 0 : rows * npix);
                  std::vector<T> dcols(rows * npix);
                  ConstMatMap<T> W(sk->data.data(), g.cout, rows);
                  for (std::size_t b = 0; b < g.batch; ++b) {
                    const T* xb = sx->data.data() + b * g.cin * g.h * g.w;
                    ConstMatMap<T> G(grad.data() + b * g.cout * npix, g.cout, npix);
                    if (sk->requires_grad) {
                      const T* colp = xb;
                      if (!direct) {
                        im2col(xb, g, cols.data());
                        colp = cols.data();
                      }
                      MatMap<T>(sk->grad_buffer().data(), g.cout, rows).noalias() +=
                          G * ConstMatMap<T>(colp, rows, npix).transpose();
                    }
                    if (sx->requires_grad) {
                      T* dxb = sx->grad_buffer().data() + b * g.cin * g.h * g.w;
                      if (direct) {
                        MatMap<T>(dxb, rows, npix).noalias() += W.transpose() * G;
                      } else {
                        MatMap<T>(dcols.data(), rows, npix).noalias() = W.transpose() * G;
                        col2im(dcols.data(), g, dxb);
                      }
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel, int stride, int padding) {
  require_rank(x, 4, "depthwise_conv2d");
  require_rank(kernel, 4, "depthwise_conv2d");
  if (kernel.dim(0) != x.dim(1) || kernel.dim(1) != 1 || kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) + " for input " + shape_str(x.shape()));
  }
  const ConvGeom g = conv_geometry(x.shape(), x.dim(1), kernel.dim(2), stride, padding, "depthwise_conv2d");
  Tensor<T> out(Shape{g.batch, g.cin, g.ho, g.wo});
  const long k = static_cast<long>(g.k), s = g.stride, p = g.pad;
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  const long ho = static_cast<long>(g.ho), wo = static_cast<long>(g.wo);

  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t c = 0; c < g.cin; ++c) {
      const T* in = x.data().data() + (b * g.cin + c) * g.h * g.w;
      T* o = out.data().data() + (b * g.cin + c) * g.ho * g.wo;
      const T* kc = kernel.data().data() + c * g.k * g.k;
      for (long ky = 0; ky < k; ++ky) {
        long oy0, oy1;
        valid_range(h, ho, ky, s, p, oy0, oy1);
        for (long kx = 0; kx < k; ++kx) {
          long ox0, ox1;
          valid_range(w, wo, kx, s, p, ox0, ox1);
          const T wv = kc[ky * k + kx];
          for (long oy = oy0; oy < oy1; ++oy) {
            const T* src = in + (oy * s + ky - p) * w + kx - p;
            T* dst = o + oy * wo;
            for (long ox = ox0; ox < ox1; ++ox) dst[ox] += wv * src[ox * s];
          }
        }
      }
    }
  }

  if (tape.tracks({&x, &kernel})) {
    tape.record({x.storage(), kernel.storage()}, out,
                [sx = x.storage(), sk = kernel.storage(), g](std::span<const T> grad) {
                  const long k = static_cast<long>(g.k), s = g.stride, p = g.pad;
                  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
                  const long ho = static_cast<long>(g.ho), wo = static_cast<long>(g.wo);
                  T* dk = sk->requires_grad ? sk->grad_buffer().data() : nullptr;
                  T* dxall = sx->requires_grad ? sx->grad_buffer().data() : nullptr;
                  for (std::size_t b = 0; b < g.batch; ++b) {
                    for (std::size_t c = 0; c < g.cin; ++c) {
                      const std::size_t plane = (b * g.cin + c);
                      const T* in = sx->data.data() + plane * g.h * g.w;
                      const T* go = grad.data() + plane * g.ho * g.wo;
                      const T* kc = sk->data.data() + c * g.k * g.k;
                      for (long ky = 0; ky < k; ++ky) {
                        long oy0, oy1;
                        valid_range(h, ho, ky, s, p, oy0, oy1);
                        for (long kx = 0; kx < k; ++kx) {
                          long ox0, ox1;
                          valid_range(w, wo, kx, s, p, ox0, ox1);
                          const T wv = kc[ky * k + kx];
                          T acc = 0;
                          for (long oy = oy0; oy < oy1; ++oy) {
                            const long off = (oy * s + ky - p) * w + kx - p;
                            const T* gr = go + oy * wo;
                            if (dk) {
                              const T* src = in + off;
                              for (long ox = ox0; ox < ox1; ++ox) acc += gr[ox] * src[ox * s];
                            }
                            if (dxall) {
                              T* dst = dxall + plane * g.h * g.w + off;
                              for (long ox = ox0; ox < ox1; ++ox) dst[ox * s] += wv * gr[ox];
                            }
                          }
                          if (dk) dk[c * g.k * g.k + ky * k + kx] += acc;
                        }
                      }
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> add_channel_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x, 4, "add_channel_bias");
  const auto batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (bias.rank() != 1 || bias.dim(0) != ch) throw ShapeError("add_channel_bias: bias shape " + shape_str(bias.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const T* src = x.data().data() + (b * ch + c) * hw;
      T* dst = out.data().data() + (b * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + bias[c];
    }
  if (tape.tracks({&x, &bias})) {
    tape.record({x.storage(), bias.storage()}, out,
                [sx = x.storage(), sb = bias.storage(), batch, ch, hw](std::span<const T> g) {
                  accumulate(sx, g);
                  if (sb->requires_grad) {
                    auto gb = sb->grad_buffer();
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t c = 0; c < ch; ++c) {
                        const T* gp = g.data() + (b * ch + c) * hw;
                        T acc = 0;
                        for (std::size_t i = 0; i < hw; ++i) acc += gp[i];
                        gb[c] += acc;
                      }
                  }
                });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization

template <typename T>
Tensor<T> batch_norm2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormBuffers<T>& buffers, BnMode mode, T eps, T momentum) {
  require_rank(x, 4, "batch_norm2d");
  const auto batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t count = batch * hw;
  if (gamma.defined() && (gamma.rank() != 1 || gamma.dim(0) != ch)) throw ShapeError("batch_norm2d: gamma shape");
  if (beta.defined() && (beta.rank() != 1 || beta.dim(0) != ch)) throw ShapeError("batch_norm2d: beta shape");
  if (!buffers.running_mean.defined() || buffers.running_mean.numel() != ch || buffers.running_var.numel() != ch) {
    throw ShapeError("batch_norm2d: running statistics do not match channel count");
  }
  const bool batch_stats = mode != BnMode::kEval;
  if (batch_stats && count < 2) throw ShapeError("batch_norm2d: train mode needs at least 2 values per channel");

  std::vector<T> inv_std(ch);
  std::vector<T> xhat(x.numel());
  Tensor<T> out(x.shape());
  const T* xd = x.data().data();
  for (std::size_t c = 0; c < ch; ++c) {
    T mu, var;
    if (batch_stats) {
      double acc = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xd + (b * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      }
      mu = static_cast<T>(acc / static_cast<double>(count));
      double sq = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xd + (b * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = static_cast<double>(p[i]) - static_cast<double>(mu);
          sq += d * d;
        }
      }
      var = static_cast<T>(sq / static_cast<double>(count));
      if (mode == BnMode::kTrain) {
        const T unbiased = var * static_cast<T>(count) / static_cast<T>(count - 1);
        buffers.running_mean[c] = (T(1) - momentum) * buffers.running_mean[c] + momentum * mu;
        buffers.running_var[c] = (T(1) - momentum) * buffers.running_var[c] + momentum * unbiased;
      }
    } else {
      mu = buffers.running_mean[c];
      var = buffers.running_var[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[c] = is;
    const T gm = gamma.defined() ? gamma[c] : T(1);
    const T bt = beta.defined() ? beta[c] : T(0);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (xd[base + i] - mu) * is;
        xhat[base + i] = xh;
        out[base + i] = gm * xh + bt;
      }
    }
  }

  if (tape.tracks({&x, &gamma, &beta})) {
    StoragePtr<T> sg = gamma.defined() ? gamma.storage() : nullptr;
    StoragePtr<T> sb = beta.defined() ? beta.storage() : nullptr;
    tape.record({x.storage(), sg, sb}, out,
                [sx = x.storage(), sg, sb, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, ch, hw,
                 batch_stats](std::span<const T> g) {
                  const T n = static_cast<T>(batch * hw);
                  T* dx = sx->requires_grad ? sx->grad_buffer().data() : nullptr;
                  T* dg = sg && sg->requires_grad ? sg->grad_buffer().data() : nullptr;
                  T* db = sb && sb->requires_grad ? sb->grad_buffer().data() : nullptr;
                  for (std::size_t c = 0; c < ch; ++c) {
                    const T gm = sg ? sg->data[c] : T(1);
                    T sum_g = 0, sum_gx = 0;
                    for (std::size_t b = 0; b < batch; ++b) {
                      const std::size_t base = (b * ch + c) * hw;
                      for (std::size_t i = 0; i < hw; ++i) {
                        sum_g += g[base + i];
                        sum_gx += g[base + i] * xhat[base + i];
                      }
                    }
                    if (dg) dg[c] += sum_gx;
                    if (db) db[c] += sum_g;
                    if (!dx) continue;
                    const T is = inv_std[c];
                    for (std::size_t b = 0; b < batch; ++b) {
                      const std::size_t base = (b * ch + c) * hw;
                      if (batch_stats) {
                        // dxhat = g*gamma; dx = is/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                        const T k = gm * is / n;
                        for (std::size_t i = 0; i < hw; ++i) {
                          dx[base + i] += k * (n * g[base + i] - sum_g - xhat[base + i] * sum_gx);
                        }
                      } else {
                        for (std::size_t i = 0; i < hw; ++i) dx[base + i] += g[base + i] * gm * is;
                      }
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize_channels(Tape<T>& tape, const Tensor<T>& x, T eps) {
  require_rank(x, 4, "l2_normalize_channels");
  if (x.dim(1) != 3) throw ShapeError("l2_normalize_channels: channel dimension must be 3");
  const auto batch = x.dim(0), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  std::vector<T> norms(batch * hw);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* p = x.data().data() + b * 3 * hw;
    T* o = out.data().data() + b * 3 * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const T n = std::sqrt(p[i] * p[i] + p[hw + i] * p[hw + i] + p[2 * hw + i] * p[2 * hw + i]);
      const T d = std::max(n, eps);
      norms[b * hw + i] = n;
      for (int c = 0; c < 3; ++c) o[c * hw + i] = p[c * hw + i] / d;
    }
  }
  if (tape.tracks({&x})) {
    tape.record({x.storage()}, out,
                [sx = x.storage(), norms = std::move(norms), batch, hw, eps](std::span<const T> g) {
                  auto gx = sx->grad_buffer();
                  for (std::size_t b = 0; b < batch; ++b) {
                    const T* p = sx->data.data() + b * 3 * hw;
                    const T* gp = g.data() + b * 3 * hw;
                    T* dx = gx.data() + b * 3 * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                      const T n = norms[b * hw + i];
                      if (n >= eps) {
                        const T y0 = p[i] / n, y1 = p[hw + i] / n, y2 = p[2 * hw + i] / n;
                        const T dot = y0 * gp[i] + y1 * gp[hw + i] + y2 * gp[2 * hw + i];
                        dx[i] += (gp[i] - y0 * dot) / n;
                        dx[hw + i] += (gp[hw + i] - y1 * dot) / n;
                        dx[2 * hw + i] += (gp[2 * hw + i] - y2 * dot) / n;
                      } else {
                        for (int c = 0; c < 3; ++c) dx[c * hw + i] += gp[c * hw + i] / eps;
                      }
                    }
                  }
                });
  }
  return out;
}

// ---------------------------------------------------------------------------
// structure

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& x : xs) require_rank(x, 4, "concat_channels");
  const auto batch = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.dim(0) != batch || x.dim(2) != h || x.dim(3) != w) {
      throw ShapeError("concat_channels: mismatched " + shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
    }
    total += x.dim(1);
  }
  const std::size_t hw = h * w;
  Tensor<T> out(Shape{batch, total, h, w});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const auto c = x.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(x.data().data() + b * c * hw, c * hw, out.data().data() + (b * total + off) * hw);
    }
    off += c;
  }
  if (tape.tracks(xs)) {
    std::vector<StoragePtr<T>> ins;
    for (const auto& x : xs) ins.push_back(x.storage());
    tape.record(ins, out, [ins, offsets, batch, total, hw](std::span<const T> g) {
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        const auto c = ins[k]->shape[1];
        auto gx = ins[k]->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
          const T* src = g.data() + (b * total + offsets[k]) * hw;
          T* dst = gx.data() + b * c * hw;
          for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(Tape<T>& tape, const Tensor<T>& x, std::size_t start, std::size_t count) {
  require_rank(x, 4, "slice_channels");
  const auto batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (count == 0 || start + count > ch) throw ShapeError("slice_channels: range out of bounds");
  Tensor<T> out(Shape{batch, count, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(x.data().data() + (b * ch + start) * hw, count * hw, out.data().data() + b * count * hw);
  }
  if (tape.tracks({&x})) {
    tape.record({x.storage()}, out, [sx = x.storage(), batch, ch, hw, start, count](std::span<const T> g) {
      auto gx = sx->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = g.data() + b * count * hw;
        T* dst = gx.data() + (b * ch + start) * hw;
        for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reduce_max_over_set(Tape<T>& tape, const Tensor<T>& x, std::size_t groups) {
  require_rank(x, 4, "reduce_max_over_set");
  if (groups == 0 || x.dim(0) % groups != 0) {
    throw ShapeError("reduce_max_over_set: batch " + std::to_string(x.dim(0)) + " not divisible into " +
                     std::to_string(groups) + " sets");
  }
  const std::size_t n = x.dim(0) / groups;
  const std::size_t inner = x.numel() / x.dim(0);
  Shape os = x.shape();
  os[0] = groups;
  Tensor<T> out(os);
  std::vector<std::uint32_t> arg(out.numel(), 0);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    T* o = out.data().data() + gi * inner;
    std::uint32_t* a = arg.data() + gi * inner;
    std::copy_n(x.data().data() + gi * n * inner, inner, o);
    for (std::size_t k = 1; k < n; ++k) {
      const T* src = x.data().data() + (gi * n + k) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        if (src[i] > o[i]) {
          o[i] = src[i];
          a[i] = static_cast<std::uint32_t>(k);
        }
      }
    }
  }
  if (tape.tracks({&x})) {
    tape.record({x.storage()}, out, [sx = x.storage(), arg = std::move(arg), groups, n, inner](std::span<const T> g) {
      auto gx = sx->grad_buffer();
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t o = gi * inner + i;
          gx[(gi * n + arg[o]) * inner + i] += g[o];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> repeat_batch(Tape<T>& tape, const Tensor<T>& x, std::size_t n) {
  if (n == 0) throw ShapeError("repeat_batch: count must be positive");
  const std::size_t groups = x.dim(0), inner = x.numel() / groups;
  Shape os = x.shape();
  os[0] = groups * n;
  Tensor<T> out(os);
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(x.data().data() + gi * inner, inner, out.data().data() + (gi * n + k) * inner);
  if (tape.tracks({&x})) {
    tape.record({x.storage()}, out, [sx = x.storage(), groups, n, inner](std::span<const T> g) {
      auto gx = sx->grad_buffer();
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t k = 0; k < n; ++k) {
          const T* src = g.data() + (gi * n + k) * inner;
          T* dst = gx.data() + gi * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const auto batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{batch, ch});
  for (std::size_t i = 0; i < batch * ch; ++i) {
    const T* p = x.data().data() + i * hw;
    T acc = 0;
    for (std::size_t j = 0; j < hw; ++j) acc += p[j];
    out[i] = acc / static_cast<T>(hw);
  }
  if (tape.tracks({&x})) {
    tape.record({x.storage()}, out, [sx = x.storage(), batch, ch, hw](std::span<const T> g) {
      auto gx = sx->grad_buffer();
      for (std::size_t i = 0; i < batch * ch; ++i) {
        const T v = g[i] / static_cast<T>(hw);
        T* d = gx.data() + i * hw;
        for (std::size_t j = 0; j < hw; ++j) d[j] += v;
      }
    });
  }
  return out;
}

namespace {

struct Interp {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Interp interp_table(std::size_t in, std::size_t out) {
  Interp t;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto l = static_cast<std::size_t>(src);
    if (l > in - 1) l = in - 1;
    t.lo.push_back(l);
    t.hi.push_back(std::min(l + 1, in - 1));
    t.frac.push_back(src - static_cast<double>(l));
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(Tape<T>& tape, const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "upsample_bilinear");
  const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ty = interp_table(h, out_h);
  auto tx = interp_table(w, out_w);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), out_h, out_w});
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* in = x.data().data() + pl * h * w;
    T* o = out.data().data() + pl * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      const T* r0 = in + ty.lo[oy] * w;
      const T* r1 = in + ty.hi[oy] * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const T top = r0[tx.lo[ox]] * (T(1) - fx) + r0[tx.hi[ox]] * fx;
        const T bot = r1[tx.lo[ox]] * (T(1) - fx) + r1[tx.hi[ox]] * fx;
        o[oy * out_w + ox] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  if (tape.tracks({&x})) {
    tape.record({x.storage()}, out,
                [sx = x.storage(), ty = std::move(ty), tx = std::move(tx), planes, h, w, out_h,
                 out_w](std::span<const T> g) {
                  auto gx = sx->grad_buffer();
                  for (std::size_t pl = 0; pl < planes; ++pl) {
                    T* d = gx.data() + pl * h * w;
                    const T* gp = g.data() + pl * out_h * out_w;
                    for (std::size_t oy = 0; oy < out_h; ++oy) {
                      const T fy = static_cast<T>(ty.frac[oy]);
                      T* r0 = d + ty.lo[oy] * w;
                      T* r1 = d + ty.hi[oy] * w;
                      for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const T fx = static_cast<T>(tx.frac[ox]);
                        const T v = gp[oy * out_w + ox];
                        r0[tx.lo[ox]] += v * (T(1) - fy) * (T(1) - fx);
                        r0[tx.hi[ox]] += v * (T(1) - fy) * fx;
                        r1[tx.lo[ox]] += v * fy * (T(1) - fx);
                        r1[tx.hi[ox]] += v * fy * fx;
                      }
                    }
                  }
                });
  }
  return out;
}

// ---------------------------------------------------------------------------
// relaxation

template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
  require_rank(x, 2, "softmax_rows");
  const auto rows = x.dim(0), k = x.dim(1);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * k;
    T* o = out.data().data() + r * k;
    T mx = in[0];
    for (std::size_t j = 0; j < k; ++j) {
      if (!std::isfinite(in[j])) throw NumericError("softmax_rows: non-finite input");
      mx = std::max(mx, in[j]);
    }
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < k; ++j) o[j] /= z;
  }
  if (tape.tracks({&x})) {
    tape.record({x.storage()}, out,
                [sx = x.storage(), yv = std::vector<T>(out.data().begin(), out.data().end()), rows, k](std::span<const T> g) {
                  auto gx = sx->grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r) {
                    T dot = 0;
                    for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * yv[r * k + j];
                    for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += yv[r * k + j] * (g[r * k + j] - dot);
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> mix(Tape<T>& tape, std::span<const Tensor<T>> candidates, const Tensor<T>& weights, std::size_t row) {
  require_rank(weights, 2, "mix");
  if (row >= weights.dim(0) || candidates.size() != weights.dim(1)) {
    throw ShapeError("mix: " + std::to_string(candidates.size()) + " candidates for weights " +
                     shape_str(weights.shape()) + " row " + std::to_string(row));
  }
  const Tensor<T>* ref = nullptr;
  for (const auto& c : candidates) {
    if (!c.defined()) continue;
    if (ref && c.shape() != ref->shape()) {
      throw ShapeError("mix: candidate shapes differ " + shape_str(c.shape()) + " vs " + shape_str(ref->shape()));
    }
    ref = &c;
  }
  if (!ref) throw ShapeError("mix: all candidates are zero");
  const std::size_t k = weights.dim(1);
  Tensor<T> out(ref->shape());
  auto o = out.data();
  for (std::size_t j = 0; j < k; ++j) {
    if (!candidates[j].defined()) continue;
    const T wj = weights[row * k + j];
    auto c = candidates[j].data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += wj * c[i];
  }
  bool track = tape.tracks({&weights});
  for (const auto& c : candidates) track = track || (tape.recording() && c.defined() && c.requires_grad());
  if (track) {
    std::vector<StoragePtr<T>> ins;
    for (const auto& c : candidates) ins.push_back(c.defined() ? c.storage() : nullptr);
    ins.push_back(weights.storage());
    tape.record(ins, out, [ins, row, k](std::span<const T> g) {
      const auto& sw = ins.back();
      for (std::size_t j = 0; j < k; ++j) {
        const auto& sc = ins[j];
        if (!sc) continue;
        const T wj = sw->data[row * k + j];
        if (sc->requires_grad) {
          auto gc = sc->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gc[i] += wj * g[i];
        }
        if (sw->requires_grad) {
          T acc = 0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * sc->data[i];
          sw->grad_buffer()[row * k + j] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses

template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> targets) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const auto batch = logits.dim(0), k = logits.dim(1);
  if (targets.size() != batch) throw ShapeError("softmax_cross_entropy: target count differs from batch");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw ValidationError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0," +
                            std::to_string(k) + ")");
    }
  }
  std::vector<T> prob(batch * k);
  T total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* l = logits.data().data() + b * k;
    T mx = l[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, l[j]);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += (prob[b * k + j] = std::exp(l[j] - mx));
    for (std::size_t j = 0; j < k; ++j) prob[b * k + j] /= z;
    total += std::log(z) + mx - l[targets[b]];
  }
  Tensor<T> out(Shape{1}, total / static_cast<T>(batch));
  if (tape.tracks({&logits})) {
    std::vector<int> tg(targets.begin(), targets.end());
    tape.record({logits.storage()}, out,
                [sl = logits.storage(), prob = std::move(prob), tg = std::move(tg), batch, k](std::span<const T> g) {
                  auto gl = sl->grad_buffer();
                  const T s = g[0] / static_cast<T>(batch);
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t j = 0; j < k; ++j) {
                      const T onehot = static_cast<int>(j) == tg[b] ? T(1) : T(0);
                      gl[b * k + j] += s * (prob[b * k + j] - onehot);
                    }
                });
  }
  return out;
}

template <typename T>
Tensor<T> cosine_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& truth, const Tensor<T>& mask) {
  require_rank(pred, 4, "cosine_loss");
  require_same_shape(pred, truth, "cosine_loss");
  if (pred.dim(1) != 3) throw ShapeError("cosine_loss: expected 3 channels");
  require_rank(mask, 4, "cosine_loss");
  const auto batch = pred.dim(0), hw = pred.dim(2) * pred.dim(3);
  if (mask.dim(1) != 1 || mask.dim(2) != pred.dim(2) || mask.dim(3) != pred.dim(3) ||
      (mask.dim(0) != 1 && mask.dim(0) != batch)) {
    throw ShapeError("cosine_loss: mask shape " + shape_str(mask.shape()));
  }
  const bool shared_mask = mask.dim(0) == 1;
  T m = 0;
  T acc = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* mk = mask.data().data() + (shared_mask ? 0 : b * hw);
    const T* p = pred.data().data() + b * 3 * hw;
    const T* t = truth.data().data() + b * 3 * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      if (mk[i] == T(0)) continue;
      m += 1;
      acc += T(1) - (p[i] * t[i] + p[hw + i] * t[hw + i] + p[2 * hw + i] * t[2 * hw + i]);
    }
  }
  if (m == T(0)) throw ValidationError("cosine_loss: empty mask");
  Tensor<T> out(Shape{1}, acc / m);
  if (tape.tracks({&pred})) {
    tape.record({pred.storage()}, out,
                [sp = pred.storage(), st = truth.storage(), sm = mask.storage(), batch, hw, m,
                 shared_mask](std::span<const T> g) {
                  auto gp = sp->grad_buffer();
                  const T s = -g[0] / m;
                  for (std::size_t b = 0; b < batch; ++b) {
                    const T* mk = sm->data.data() + (shared_mask ? 0 : b * hw);
                    const T* t = st->data.data() + b * 3 * hw;
                    T* d = gp.data() + b * 3 * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                      if (mk[i] == T(0)) continue;
                      for (int c = 0; c < 3; ++c) d[c * hw + i] += s * t[c * hw + i];
                    }
                  }
                });
  }
  return out;
}

// ---------------------------------------------------------------------------

#define PSNAS_INSTANTIATE_OPS(T)                                                                               \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sub(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                                     \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                                         \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                                          \
  template Tensor<T> mean(Tape<T>&, const Tensor<T>&);                                                         \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> linear(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, int, int);                           \
  template Tensor<T> depthwise_conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, int, int);                 \
  template Tensor<T> add_channel_bias(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> batch_norm2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                  BatchNormBuffers<T>&, BnMode, T, T);                                         \
  template Tensor<T> l2_normalize_channels(Tape<T>&, const Tensor<T>&, T);                                     \
  template Tensor<T> concat_channels(Tape<T>&, std::span<const Tensor<T>>);                                    \
  template Tensor<T> slice_channels(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> reduce_max_over_set(Tape<T>&, const Tensor<T>&, std::size_t);                             \
  template Tensor<T> repeat_batch(Tape<T>&, const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> global_avg_pool(Tape<T>&, const Tensor<T>&);                                              \
  template Tensor<T> upsample_bilinear(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> softmax_rows(Tape<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> mix(Tape<T>&, std::span<const Tensor<T>>, const Tensor<T>&, std::size_t);                 \
  template Tensor<T> softmax_cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const int>);                  \
  template Tensor<T> cosine_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

PSNAS_INSTANTIATE_OPS(float)
PSNAS_INSTANTIATE_OPS(double)

}  // namespace psnas::ad
