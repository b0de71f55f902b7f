#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "evpose/tensor.hpp"

namespace evpose::nd {

// Diagnostic hook: negates the sigmoid backward rule so the gradient suite
// can prove it catches a wrong adjoint. Never set outside that fixture.
inline bool& sign_flip_sigmoid_backward() {
  static bool flag = false;
  return flag;
}

namespace detail {

inline int int_ceil_div(int a, int b) { return a > 0 ? (a + b - 1) / b : a / b; }

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                      const char* op) {
  if (a->shape != b->shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
}

struct ConvDims {
  int n, ci, ih, iw, co, kh, kw, oh, ow, stride, pad;
};

// out[n,co,oy,ox] += sum_{ci,ky,kx} x[n,ci,oy*s+ky-p,ox*s+kx-p] * w[co,ci,ky,kx]
template <typename T>
void conv_gather(const T* x, const T* w, T* out, const ConvDims& d) {
  for (int n = 0; n < d.n; ++n)
    for (int co = 0; co < d.co; ++co) {
      T* oplane = out + (static_cast<size_t>(n) * d.co + co) * d.oh * d.ow;
      for (int ci = 0; ci < d.ci; ++ci) {
        const T* iplane =
            x + (static_cast<size_t>(n) * d.ci + ci) * d.ih * d.iw;
        const T* wk = w + (static_cast<size_t>(co) * d.ci + ci) * d.kh * d.kw;
        for (int ky = 0; ky < d.kh; ++ky)
          for (int kx = 0; kx < d.kw; ++kx) {
            const T wv = wk[ky * d.kw + kx];
            if (wv == T{0}) continue;
            const int ox_lo = std::max(0, int_ceil_div(d.pad - kx, d.stride));
            const int ox_hi = std::min(
                d.ow, (d.iw - 1 - kx + d.pad) / d.stride + 1);
            if (ox_lo >= ox_hi) continue;
            for (int oy = 0; oy < d.oh; ++oy) {
              const int iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.ih) continue;
              const T* irow = iplane + static_cast<size_t>(iy) * d.iw +
                              (ox_lo * d.stride + kx - d.pad);
              T* orow = oplane + static_cast<size_t>(oy) * d.ow;
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                orow[ox] += wv * irow[(ox - ox_lo) * d.stride];
            }
          }
      }
    }
}

// din[n,ci,oy*s+ky-p,ox*s+kx-p] += w[co,ci,ky,kx] * dout[n,co,oy,ox]
template <typename T>
void conv_scatter(const T* dout, const T* w, T* din, const ConvDims& d) {
  for (int n = 0; n < d.n; ++n)
    for (int co = 0; co < d.co; ++co) {
      const T* oplane =
          dout + (static_cast<size_t>(n) * d.co + co) * d.oh * d.ow;
      for (int ci = 0; ci < d.ci; ++ci) {
        T* iplane = din + (static_cast<size_t>(n) * d.ci + ci) * d.ih * d.iw;
        const T* wk = w + (static_cast<size_t>(co) * d.ci + ci) * d.kh * d.kw;
        for (int ky = 0; ky < d.kh; ++ky)
          for (int kx = 0; kx < d.kw; ++kx) {
            const T wv = wk[ky * d.kw + kx];
            if (wv == T{0}) continue;
            const int ox_lo = std::max(0, int_ceil_div(d.pad - kx, d.stride));
            const int ox_hi = std::min(
                d.ow, (d.iw - 1 - kx + d.pad) / d.stride + 1);
            if (ox_lo >= ox_hi) continue;
            for (int oy = 0; oy < d.oh; ++oy) {
              const int iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.ih) continue;
              T* irow = iplane + static_cast<size_t>(iy) * d.iw +
                        (ox_lo * d.stride + kx - d.pad);
              const T* orow = oplane + static_cast<size_t>(oy) * d.ow;
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                irow[(ox - ox_lo) * d.stride] += wv * orow[ox];
            }
          }
      }
    }
}

// dw[co,ci,ky,kx] += sum_{n,oy,ox} x[n,ci,oy*s+ky-p,ox*s+kx-p] * dout[n,co,oy,ox]
template <typename T>
void conv_weight_grad(const T* x, const T* dout, T* dw, const ConvDims& d) {
  for (int n = 0; n < d.n; ++n)
    for (int co = 0; co < d.co; ++co) {
      const T* oplane =
          dout + (static_cast<size_t>(n) * d.co + co) * d.oh * d.ow;
      for (int ci = 0; ci < d.ci; ++ci) {
        const T* iplane =
            x + (static_cast<size_t>(n) * d.ci + ci) * d.ih * d.iw;
        T* wk = dw + (static_cast<size_t>(co) * d.ci + ci) * d.kh * d.kw;
        for (int ky = 0; ky < d.kh; ++ky)
          for (int kx = 0; kx < d.kw; ++kx) {
            const int ox_lo = std::max(0, int_ceil_div(d.pad - kx, d.stride));
            const int ox_hi = std::min(
                d.ow, (d.iw - 1 - kx + d.pad) / d.stride + 1);
            if (ox_lo >= ox_hi) continue;
            T acc{0};
            for (int oy = 0; oy < d.oh; ++oy) {
              const int iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.ih) continue;
              const T* irow = iplane + static_cast<size_t>(iy) * d.iw +
                              (ox_lo * d.stride + kx - d.pad);
              const T* orow = oplane + static_cast<size_t>(oy) * d.ow;
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                acc += irow[(ox - ox_lo) * d.stride] * orow[ox];
            }
            wk[ky * d.kw + kx] += acc;
          }
      }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = tensor<T>(a->shape);
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] + b->v[i];
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad)
    tape.record([a, b, out] {
      if (!out->has_grad()) return;
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < out->g.size(); ++i) a->g[i] += out->g[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < out->g.size(); ++i) b->g[i] += out->g[i];
      }
    });
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = tensor<T>(a->shape);
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] * b->v[i];
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad)
    tape.record([a, b, out] {
      if (!out->has_grad()) return;
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < out->g.size(); ++i)
          a->g[i] += out->g[i] * b->v[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < out->g.size(); ++i)
          b->g[i] += out->g[i] * a->v[i];
      }
    });
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  auto out = tensor<T>(x->shape);
  for (size_t i = 0; i < out->v.size(); ++i)
    out->v[i] = T{1} / (T{1} + std::exp(-x->v[i]));
  out->requires_grad = x->requires_grad;
  if (out->requires_grad)
    tape.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const T sign = sign_flip_sigmoid_backward() ? T{-1} : T{1};
      for (size_t i = 0; i < out->g.size(); ++i)
        x->g[i] += sign * out->g[i] * out->v[i] * (T{1} - out->v[i]);
    });
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) {
  auto out = tensor<T>(x->shape);
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = std::tanh(x->v[i]);
  out->requires_grad = x->requires_grad;
  if (out->requires_grad)
    tape.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i)
        x->g[i] += out->g[i] * (T{1} - out->v[i] * out->v[i]);
    });
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  auto out = tensor<T>(x->shape);
  for (size_t i = 0; i < out->v.size(); ++i)
    out->v[i] = x->v[i] > T{0} ? x->v[i] : T{0};
  out->requires_grad = x->requires_grad;
  if (out->requires_grad)
    tape.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i)
        if (x->v[i] > T{0}) x->g[i] += out->g[i];
    });
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  auto out = tensor<T>(x->shape);
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = x->v[i] * factor;
  out->requires_grad = x->requires_grad;
  if (out->requires_grad)
    tape.record([x, out, factor] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i)
        x->g[i] += out->g[i] * factor;
    });
  return out;
}

// x + s broadcast over every element; s is a {1} tensor so a learned
// scalar can enter the graph.
template <typename T>
Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& s) {
  if (s->numel() != 1)
    throw std::invalid_argument("add_scalar: s must be scalar");
  auto out = tensor<T>(x->shape);
  const T sv = s->v[0];
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = x->v[i] + sv;
  out->requires_grad = x->requires_grad || s->requires_grad;
  if (out->requires_grad)
    tape.record([x, s, out] {
      if (!out->has_grad()) return;
      if (x->requires_grad) {
        x->ensure_grad();
        for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += out->g[i];
      }
      if (s->requires_grad) {
        s->ensure_grad();
        T acc{0};
        for (size_t i = 0; i < out->g.size(); ++i) acc += out->g[i];
        s->g[0] += acc;
      }
    });
  return out;
}

// x + table[index] broadcast over every element, with the gradient routed
// into that single table entry.
template <typename T>
Tensor<T> add_entry(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& table,
                    int index) {
  if (index < 0 || index >= table->numel())
    throw std::invalid_argument("add_entry: index out of range");
  auto out = tensor<T>(x->shape);
  const T sv = table->v[index];
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = x->v[i] + sv;
  out->requires_grad = x->requires_grad || table->requires_grad;
  if (out->requires_grad)
    tape.record([x, table, out, index] {
      if (!out->has_grad()) return;
      if (x->requires_grad) {
        x->ensure_grad();
        for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += out->g[i];
      }
      if (table->requires_grad) {
        table->ensure_grad();
        T acc{0};
        for (size_t i = 0; i < out->g.size(); ++i) acc += out->g[i];
        table->g[index] += acc;
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and structure
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_tensors(Tape<T>& tape, std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("sum_tensors: empty list");
  auto out = tensor<T>(xs[0]->shape);
  for (const auto& x : xs) {
    detail::check_same_shape(xs[0], x, "sum_tensors");
    for (size_t i = 0; i < out->v.size(); ++i) out->v[i] += x->v[i];
    out->requires_grad = out->requires_grad || x->requires_grad;
  }
  if (out->requires_grad) {
    std::vector<Tensor<T>> srcs(xs.begin(), xs.end());
    tape.record([srcs, out] {
      if (!out->has_grad()) return;
      for (const auto& x : srcs)
        if (x->requires_grad) {
          x->ensure_grad();
          for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += out->g[i];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  auto out = tensor<T>({1});
  T acc{0};
  for (T v : x->v) acc += v;
  out->v[0] = acc;
  out->requires_grad = x->requires_grad;
  if (out->requires_grad)
    tape.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->g.size(); ++i) x->g[i] += out->g[0];
    });
  return out;
}

// Sum of squared differences reduced to a scalar.
template <typename T>
Tensor<T> sse(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check_same_shape(pred, target, "sse");
  auto out = tensor<T>({1});
  T acc{0};
  for (size_t i = 0; i < pred->v.size(); ++i) {
    const T d = pred->v[i] - target->v[i];
    acc += d * d;
  }
  out->v[0] = acc;
  out->requires_grad = pred->requires_grad || target->requires_grad;
  if (out->requires_grad)
    tape.record([pred, target, out] {
      if (!out->has_grad()) return;
      const T go = out->g[0];
      if (pred->requires_grad) {
        pred->ensure_grad();
        for (size_t i = 0; i < pred->v.size(); ++i)
          pred->g[i] += T{2} * (pred->v[i] - target->v[i]) * go;
      }
      if (target->requires_grad) {
        target->ensure_grad();
        for (size_t i = 0; i < pred->v.size(); ++i)
          target->g[i] -= T{2} * (pred->v[i] - target->v[i]) * go;
      }
    });
  return out;
}

// SSE over NCHW maps with whole channels masked out (mask length = C).
template <typename T>
Tensor<T> masked_sse(Tape<T>& tape, const Tensor<T>& pred,
                     const Tensor<T>& target, std::vector<char> mask) {
  detail::check_same_shape(pred, target, "masked_sse");
  if (pred->shape.size() != 4)
    throw std::invalid_argument("masked_sse: expected NCHW");
  const int C = pred->shape[1];
  if (static_cast<int>(mask.size()) != C)
    throw std::invalid_argument("masked_sse: mask length != channels");
  const size_t plane = static_cast<size_t>(pred->shape[2]) * pred->shape[3];
  const int N = pred->shape[0];
  auto out = tensor<T>({1});
  T acc{0};
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      if (!mask[c]) continue;
      const size_t base = (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) {
        const T d = pred->v[base + i] - target->v[base + i];
        acc += d * d;
      }
    }
  out->v[0] = acc;
  out->requires_grad = pred->requires_grad || target->requires_grad;
  if (out->requires_grad)
    tape.record([pred, target, out, mask = std::move(mask), plane, N, C] {
      if (!out->has_grad()) return;
      const T go = out->g[0];
      if (pred->requires_grad) pred->ensure_grad();
      if (target->requires_grad) target->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          if (!mask[c]) continue;
          const size_t base = (static_cast<size_t>(n) * C + c) * plane;
          for (size_t i = 0; i < plane; ++i) {
            const T d = T{2} * (pred->v[base + i] - target->v[base + i]) * go;
            if (pred->requires_grad) pred->g[base + i] += d;
            if (target->requires_grad) target->g[base + i] -= d;
          }
        }
    });
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty list");
  for (const auto& x : xs)
    if (x->shape.size() != 4)
      throw std::invalid_argument("concat_channels: expected NCHW, got " +
                                  shape_str(x));
  const int N = xs[0]->shape[0], H = xs[0]->shape[2], W = xs[0]->shape[3];
  int C = 0;
  for (const auto& x : xs) {
    if (x->shape[0] != N || x->shape[2] != H || x->shape[3] != W)
      throw std::invalid_argument(
          "concat_channels: spatial/batch mismatch " + shape_str(xs[0]) +
          " vs " + shape_str(x));
    C += x->shape[1];
  }
  auto out = tensor<T>({N, C, H, W});
  const size_t plane = static_cast<size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    size_t c_off = 0;
    for (const auto& x : xs) {
      const size_t cs = static_cast<size_t>(x->shape[1]);
      std::copy_n(x->v.begin() + n * cs * plane, cs * plane,
                  out->v.begin() + (n * C + c_off) * plane);
      c_off += cs;
      out->requires_grad = out->requires_grad || x->requires_grad;
    }
  }
  if (out->requires_grad) {
    std::vector<Tensor<T>> srcs(xs.begin(), xs.end());
    tape.record([srcs, out, N, C, plane] {
      if (!out->has_grad()) return;
      for (int n = 0; n < N; ++n) {
        size_t c_off = 0;
        for (const auto& x : srcs) {
          const size_t cs = static_cast<size_t>(x->shape[1]);
          if (x->requires_grad) {
            x->ensure_grad();
            const T* src = out->g.data() + (n * C + c_off) * plane;
            T* dst = x->g.data() + n * cs * plane;
            for (size_t i = 0; i < cs * plane; ++i) dst[i] += src[i];
          }
          c_off += cs;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// Cross-correlation, NCHW input, [Co,Ci,KH,KW] weight, optional {Co} bias.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b, int stride, int pad) {
  if (x->shape.size() != 4 || w->shape.size() != 4)
    throw std::invalid_argument("conv2d: expected NCHW input " + shape_str(x) +
                                " and OIHW weight " + shape_str(w));
  if (stride < 1 || pad < 0)
    throw std::invalid_argument("conv2d: bad stride/pad");
  detail::ConvDims d;
  d.n = x->shape[0];
  d.ci = x->shape[1];
  d.ih = x->shape[2];
  d.iw = x->shape[3];
  d.co = w->shape[0];
  d.kh = w->shape[2];
  d.kw = w->shape[3];
  d.stride = stride;
  d.pad = pad;
  if (w->shape[1] != d.ci)
    throw std::invalid_argument("conv2d: channel mismatch input " +
                                shape_str(x) + " weight " + shape_str(w));
  d.oh = (d.ih + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.iw + 2 * pad - d.kw) / stride + 1;
  if (d.ih + 2 * pad < d.kh || d.iw + 2 * pad < d.kw)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  if (b && (b->shape.size() != 1 || b->shape[0] != d.co))
    throw std::invalid_argument("conv2d: bias shape mismatch " + shape_str(b));

  auto out = tensor<T>({d.n, d.co, d.oh, d.ow});
  const size_t oplane = static_cast<size_t>(d.oh) * d.ow;
  if (b)
    for (int n = 0; n < d.n; ++n)
      for (int co = 0; co < d.co; ++co)
        std::fill_n(out->v.begin() + (static_cast<size_t>(n) * d.co + co) *
                                         oplane,
                    oplane, b->v[co]);
  detail::conv_gather(x->v.data(), w->v.data(), out->v.data(), d);

  out->requires_grad =
      x->requires_grad || w->requires_grad || (b && b->requires_grad);
  if (out->requires_grad)
    tape.record([x, w, b, out, d, oplane] {
      if (!out->has_grad()) return;
      if (x->requires_grad) {
        x->ensure_grad();
        detail::conv_scatter(out->g.data(), w->v.data(), x->g.data(), d);
      }
      if (w->requires_grad) {
        w->ensure_grad();
        detail::conv_weight_grad(x->v.data(), out->g.data(), w->g.data(), d);
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        for (int n = 0; n < d.n; ++n)
          for (int co = 0; co < d.co; ++co) {
            const T* src =
                out->g.data() + (static_cast<size_t>(n) * d.co + co) * oplane;
            T acc{0};
            for (size_t i = 0; i < oplane; ++i) acc += src[i];
            b->g[co] += acc;
          }
      }
    });
  return out;
}

// Adjoint of conv2d's linear map. Weight layout [Ci,Co,KH,KW] where Ci is
// this op's input channel count, so a conv2d weight buffer shared with the
// matching conv realizes the exact adjoint.
template <typename T>
Tensor<T> conv_transpose2d(Tape<T>& tape, const Tensor<T>& x,
                           const Tensor<T>& w, const Tensor<T>& b, int stride,
                           int pad, int output_padding = 0) {
  if (x->shape.size() != 4 || w->shape.size() != 4)
    throw std::invalid_argument("conv_transpose2d: expected NCHW input " +
                                shape_str(x) + " and IOHW weight " +
                                shape_str(w));
  if (stride < 1 || pad < 0 || output_padding < 0)
    throw std::invalid_argument("conv_transpose2d: bad stride/pad");
  if (w->shape[0] != x->shape[1])
    throw std::invalid_argument("conv_transpose2d: channel mismatch input " +
                                shape_str(x) + " weight " + shape_str(w));

  // Reuse the conv kernels with roles swapped: this op's input plays the
  // conv output and vice versa.
  detail::ConvDims d;
  d.n = x->shape[0];
  d.co = x->shape[1];       // conv-side "out" channels = our input channels
  d.oh = x->shape[2];
  d.ow = x->shape[3];
  d.ci = w->shape[1];       // our output channels
  d.kh = w->shape[2];
  d.kw = w->shape[3];
  d.stride = stride;
  d.pad = pad;
  d.ih = (d.oh - 1) * stride - 2 * pad + d.kh + output_padding;
  d.iw = (d.ow - 1) * stride - 2 * pad + d.kw + output_padding;
  if (d.ih <= 0 || d.iw <= 0)
    throw std::invalid_argument("conv_transpose2d: empty output shape");
  if (b && (b->shape.size() != 1 || b->shape[0] != d.ci))
    throw std::invalid_argument("conv_transpose2d: bias shape mismatch " +
                                shape_str(b));

  auto out = tensor<T>({d.n, d.ci, d.ih, d.iw});
  const size_t oplane = static_cast<size_t>(d.ih) * d.iw;
  if (b)
    for (int n = 0; n < d.n; ++n)
      for (int ci = 0; ci < d.ci; ++ci)
        std::fill_n(out->v.begin() + (static_cast<size_t>(n) * d.ci + ci) *
                                         oplane,
                    oplane, b->v[ci]);
  detail::conv_scatter(x->v.data(), w->v.data(), out->v.data(), d);

  out->requires_grad =
      x->requires_grad || w->requires_grad || (b && b->requires_grad);
  if (out->requires_grad)
    tape.record([x, w, b, out, d, oplane] {
      if (!out->has_grad()) return;
      if (x->requires_grad) {
        x->ensure_grad();
        detail::conv_gather(out->g.data(), w->v.data(), x->g.data(), d);
      }
      if (w->requires_grad) {
        w->ensure_grad();
        detail::conv_weight_grad(out->g.data(), x->v.data(), w->g.data(), d);
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        for (int n = 0; n < d.n; ++n)
          for (int ci = 0; ci < d.ci; ++ci) {
            const T* src =
                out->g.data() + (static_cast<size_t>(n) * d.ci + ci) * oplane;
            T acc{0};
            for (size_t i = 0; i < oplane; ++i) acc += src[i];
            b->g[ci] += acc;
          }
      }
    });
  return out;
}

}  // namespace evpose::nd
