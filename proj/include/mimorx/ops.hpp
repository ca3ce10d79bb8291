// Differentiable operations on Var<T>.
//
// Complex tensors carry gradients as (d/d re, d/d im) plane pairs, so every
// backward rule below is written directly on the planes. Inner products go
// through Eigen; convolutions are im2col + GEMM with the im2col buffer kept
// alive for the backward pass. Complex convolutions and matmuls follow the
// plane decomposition (A+iB)(C+iD) = (AC-BD) + i(AD+BC).

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <optional>
#include <utility>

#include "mimorx/autograd.hpp"
#include "mimorx/tensor.hpp"

namespace mimorx {

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<EMat<T>> mat_view(std::vector<T>& v, int64_t rows, int64_t cols) {
  return Eigen::Map<EMat<T>>(v.data(), rows, cols);
}

template <typename T>
Eigen::Map<const EMat<T>> mat_view(const std::vector<T>& v, int64_t rows, int64_t cols) {
  return Eigen::Map<const EMat<T>>(v.data(), rows, cols);
}

template <typename T>
std::shared_ptr<Node<T>> make_node(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                                   std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) n->needs_grad = n->needs_grad || p->needs_grad;
  if (n->needs_grad) n->backprop = std::move(backprop);
  return n;
}

inline void require(bool cond, const char* msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av, bv, "add");
  detail::require(av.is_complex() == bv.is_complex(), "add: mixed real/complex");
  Tensor<T> out = Tensor<T>::like(av);
  for (size_t i = 0; i < av.re.size(); ++i) out.re[i] = av.re[i] + bv.re[i];
  for (size_t i = 0; i < av.im.size(); ++i) out.im[i] = av.im[i] + bv.im[i];
  auto an = a.node(), bn = b.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    an->accum_grad(n.grad);
    bn->accum_grad(n.grad);
  }));
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  const auto& av = a.value();
  Tensor<T> out = Tensor<T>::like(av);
  for (size_t i = 0; i < av.re.size(); ++i) out.re[i] = c * av.re[i];
  for (size_t i = 0; i < av.im.size(); ++i) out.im[i] = c * av.im[i];
  auto an = a.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an}, [an, c](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    for (size_t i = 0; i < n.grad.re.size(); ++i) g.re[i] += c * n.grad.re[i];
    for (size_t i = 0; i < n.grad.im.size(); ++i) g.im[i] += c * n.grad.im[i];
  }));
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return add(a, neg(b));
}

// Elementwise product. Complex inputs multiply as complex numbers, real
// inputs as plain reals.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av, bv, "mul");
  detail::require(av.is_complex() == bv.is_complex(), "mul: mixed real/complex");
  Tensor<T> out = Tensor<T>::like(av);
  const bool cplx = av.is_complex();
  if (cplx) {
    for (size_t i = 0; i < av.re.size(); ++i) {
      out.re[i] = av.re[i] * bv.re[i] - av.im[i] * bv.im[i];
      out.im[i] = av.re[i] * bv.im[i] + av.im[i] * bv.re[i];
    }
  } else {
    for (size_t i = 0; i < av.re.size(); ++i) out.re[i] = av.re[i] * bv.re[i];
  }
  auto an = a.node(), bn = b.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an, bn}, [an, bn, cplx](Node<T>& n) {
    const auto& av = an->value;
    const auto& bv = bn->value;
    const auto& g = n.grad;
    if (an->needs_grad) {
      auto& ga = an->grad_buffer();
      if (cplx) {
        for (size_t i = 0; i < g.re.size(); ++i) {
          ga.re[i] += g.re[i] * bv.re[i] + g.im[i] * bv.im[i];
          ga.im[i] += -g.re[i] * bv.im[i] + g.im[i] * bv.re[i];
        }
      } else {
        for (size_t i = 0; i < g.re.size(); ++i) ga.re[i] += g.re[i] * bv.re[i];
      }
    }
    if (bn->needs_grad) {
      auto& gb = bn->grad_buffer();
      if (cplx) {
        for (size_t i = 0; i < g.re.size(); ++i) {
          gb.re[i] += g.re[i] * av.re[i] + g.im[i] * av.im[i];
          gb.im[i] += -g.re[i] * av.im[i] + g.im[i] * av.re[i];
        }
      } else {
        for (size_t i = 0; i < g.re.size(); ++i) gb.re[i] += g.re[i] * av.re[i];
      }
    }
  }));
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  const auto& av = a.value();
  detail::require(!av.is_complex(), "relu: real tensors only");
  Tensor<T> out = Tensor<T>::like(av);
  for (size_t i = 0; i < av.re.size(); ++i) out.re[i] = av.re[i] > T(0) ? av.re[i] : T(0);
  auto an = a.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    for (size_t i = 0; i < n.grad.re.size(); ++i)
      if (an->value.re[i] > T(0)) g.re[i] += n.grad.re[i];
  }));
}

// Split activation for complex tensors: ReLU applied independently to the
// real and imaginary planes.
template <typename T>
Var<T> crelu(const Var<T>& a) {
  const auto& av = a.value();
  detail::require(av.is_complex(), "crelu: complex tensors only");
  Tensor<T> out = Tensor<T>::like(av);
  for (size_t i = 0; i < av.re.size(); ++i) out.re[i] = av.re[i] > T(0) ? av.re[i] : T(0);
  for (size_t i = 0; i < av.im.size(); ++i) out.im[i] = av.im[i] > T(0) ? av.im[i] : T(0);
  auto an = a.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    for (size_t i = 0; i < n.grad.re.size(); ++i)
      if (an->value.re[i] > T(0)) g.re[i] += n.grad.re[i];
    for (size_t i = 0; i < n.grad.im.size(); ++i)
      if (an->value.im[i] > T(0)) g.im[i] += n.grad.im[i];
  }));
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  const auto& av = a.value();
  detail::require(!av.is_complex(), "sigmoid: real tensors only");
  Tensor<T> out = Tensor<T>::like(av);
  for (size_t i = 0; i < av.re.size(); ++i) {
    T x = av.re[i];
    out.re[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }
  auto an = a.node();
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(out);
  n->parents = {an};
  n->needs_grad = an->needs_grad;
  auto* raw = n.get();
  if (n->needs_grad)
    n->backprop = [an, raw](Node<T>& nn) {
      auto& g = an->grad_buffer();
      for (size_t i = 0; i < nn.grad.re.size(); ++i) {
        T s = raw->value.re[i];
        g.re[i] += nn.grad.re[i] * s * (T(1) - s);
      }
    };
  return Var<T>(std::move(n));
}

// ---------------------------------------------------------------------------
// Plane manipulation

template <typename T>
Var<T> real_part(const Var<T>& a) {
  const auto& av = a.value();
  detail::require(av.is_complex(), "real_part: complex input required");
  Tensor<T> out;
  out.shape = av.shape;
  out.re = av.re;
  auto an = a.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    for (size_t i = 0; i < n.grad.re.size(); ++i) g.re[i] += n.grad.re[i];
  }));
}

template <typename T>
Var<T> imag_part(const Var<T>& a) {
  const auto& av = a.value();
  detail::require(av.is_complex(), "imag_part: complex input required");
  Tensor<T> out;
  out.shape = av.shape;
  out.re = av.im;
  auto an = a.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    for (size_t i = 0; i < n.grad.re.size(); ++i) g.im[i] += n.grad.re[i];
  }));
}

template <typename T>
Var<T> make_complex(const Var<T>& re, const Var<T>& im) {
  const auto& rv = re.value();
  const auto& iv = im.value();
  require_same_shape(rv, iv, "make_complex");
  detail::require(!rv.is_complex() && !iv.is_complex(), "make_complex: real inputs required");
  Tensor<T> out;
  out.shape = rv.shape;
  out.re = rv.re;
  out.im = iv.re;
  auto rn = re.node(), in = im.node();
  return Var<T>(detail::make_node<T>(std::move(out), {rn, in}, [rn, in](Node<T>& n) {
    if (rn->needs_grad) {
      auto& g = rn->grad_buffer();
      for (size_t i = 0; i < n.grad.re.size(); ++i) g.re[i] += n.grad.re[i];
    }
    if (in->needs_grad) {
      auto& g = in->grad_buffer();
      for (size_t i = 0; i < n.grad.im.size(); ++i) g.re[i] += n.grad.im[i];
    }
  }));
}

// [.., C] complex -> [.., 2C] real: per entry the real plane occupies
// channels [0, C) and the imaginary plane channels [C, 2C).
template <typename T>
Var<T> complex_to_real_channels(const Var<T>& a) {
  const auto& av = a.value();
  detail::require(av.is_complex(), "complex_to_real_channels: complex input required");
  detail::require(av.rank() >= 1, "complex_to_real_channels: rank >= 1 required");
  const int C = av.shape.back();
  const int64_t rows = av.numel() / C;
  Shape oshape = av.shape;
  oshape.back() = 2 * C;
  Tensor<T> out = Tensor<T>::real(oshape);
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) {
      out.re[r * 2 * C + c] = av.re[r * C + c];
      out.re[r * 2 * C + C + c] = av.im[r * C + c];
    }
  auto an = a.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an}, [an, C, rows](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        g.re[r * C + c] += n.grad.re[r * 2 * C + c];
        g.im[r * C + c] += n.grad.re[r * 2 * C + C + c];
      }
  }));
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  const auto& av = a.value();
  detail::require(shape_numel(shape) == av.numel(), "reshape: element count mismatch");
  Tensor<T> out = av;
  out.shape = std::move(shape);
  auto an = a.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    if (!an->needs_grad) return;
    Tensor<T> g = n.grad;
    g.shape = an->value.shape;
    an->accum_grad(g);
  }));
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int c0, int c1) {
  const auto& av = a.value();
  detail::require(av.rank() >= 1, "slice_channels: rank >= 1 required");
  const int C = av.shape.back();
  detail::require(0 <= c0 && c0 < c1 && c1 <= C, "slice_channels: bad channel range");
  const int W = c1 - c0;
  const int64_t rows = av.numel() / C;
  Shape oshape = av.shape;
  oshape.back() = W;
  Tensor<T> out = av.is_complex() ? Tensor<T>::complex(oshape) : Tensor<T>::real(oshape);
  for (int64_t r = 0; r < rows; ++r) {
    for (int c = 0; c < W; ++c) {
      out.re[r * W + c] = av.re[r * C + c0 + c];
      if (av.is_complex()) out.im[r * W + c] = av.im[r * C + c0 + c];
    }
  }
  auto an = a.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an}, [an, c0, W, C, rows](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < W; ++c) {
        g.re[r * C + c0 + c] += n.grad.re[r * W + c];
        if (!n.grad.im.empty()) g.im[r * C + c0 + c] += n.grad.im[r * W + c];
      }
  }));
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_channels: empty input list");
  const auto& first = parts[0].value();
  const bool cplx = first.is_complex();
  int Ctot = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    detail::require(v.rank() == first.rank(), "concat_channels: rank mismatch");
    detail::require(v.is_complex() == cplx, "concat_channels: mixed real/complex");
    for (int d = 0; d + 1 < v.rank(); ++d)
      detail::require(v.shape[static_cast<size_t>(d)] == first.shape[static_cast<size_t>(d)],
                      "concat_channels: leading dims mismatch");
    Ctot += v.shape.back();
  }
  Shape oshape = first.shape;
  oshape.back() = Ctot;
  const int64_t rows = shape_numel(oshape) / Ctot;
  Tensor<T> out = cplx ? Tensor<T>::complex(oshape) : Tensor<T>::real(oshape);
  std::vector<int> offs;
  int off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    const int C = v.shape.back();
    offs.push_back(off);
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        out.re[r * Ctot + off + c] = v.re[r * C + c];
        if (cplx) out.im[r * Ctot + off + c] = v.im[r * C + c];
      }
    off += C;
  }
  std::vector<std::shared_ptr<Node<T>>> pn;
  for (const auto& p : parts) pn.push_back(p.node());
  return Var<T>(detail::make_node<T>(std::move(out), pn, [pn, offs, Ctot, rows](Node<T>& n) {
    for (size_t k = 0; k < pn.size(); ++k) {
      if (!pn[k]->needs_grad) continue;
      auto& g = pn[k]->grad_buffer();
      const int C = pn[k]->value.shape.back();
      const int off = offs[k];
      for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) {
          g.re[r * C + c] += n.grad.re[r * Ctot + off + c];
          if (!n.grad.im.empty()) g.im[r * C + c] += n.grad.im[r * Ctot + off + c];
        }
    }
  }));
}

// Channel rewiring: out[.., c] = a[.., index[c]]. Source channels may repeat;
// the backward pass scatter-adds into each source once per use.
template <typename T>
Var<T> gather_channels(const Var<T>& a, const std::vector<int>& index) {
  const auto& av = a.value();
  detail::require(av.rank() >= 1, "gather_channels: rank >= 1 required");
  detail::require(!index.empty(), "gather_channels: empty index");
  const int C = av.shape.back();
  for (int c : index)
    detail::require(0 <= c && c < C, "gather_channels: index out of range");
  const int W = static_cast<int>(index.size());
  const int64_t rows = av.numel() / C;
  Shape oshape = av.shape;
  oshape.back() = W;
  Tensor<T> out = av.is_complex() ? Tensor<T>::complex(oshape) : Tensor<T>::real(oshape);
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < W; ++c) {
      out.re[r * W + c] = av.re[r * C + index[c]];
      if (av.is_complex()) out.im[r * W + c] = av.im[r * C + index[c]];
    }
  auto an = a.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an}, [an, index, W, C, rows](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < W; ++c) {
        g.re[r * C + index[c]] += n.grad.re[r * W + c];
        if (!n.grad.im.empty()) g.im[r * C + index[c]] += n.grad.im[r * W + c];
      }
  }));
}

// ---------------------------------------------------------------------------
// Linear algebra

// Strict 2-D matrix product, real or complex.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require(av.rank() == 2 && bv.rank() == 2, "matmul: rank-2 tensors required");
  if (av.shape[1] != bv.shape[0])
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(av.shape) + " vs " +
                     shape_str(bv.shape));
  detail::require(av.is_complex() == bv.is_complex(), "matmul: mixed real/complex");
  const int64_t m = av.shape[0], k = av.shape[1], nn = bv.shape[1];
  const bool cplx = av.is_complex();
  Tensor<T> out = cplx ? Tensor<T>::complex({static_cast<int>(m), static_cast<int>(nn)})
                       : Tensor<T>::real({static_cast<int>(m), static_cast<int>(nn)});
  {
    auto Ar = detail::mat_view(av.re, m, k);
    auto Br = detail::mat_view(bv.re, k, nn);
    auto Cr = detail::mat_view(out.re, m, nn);
    Cr.noalias() = Ar * Br;
    if (cplx) {
      auto Ai = detail::mat_view(av.im, m, k);
      auto Bi = detail::mat_view(bv.im, k, nn);
      auto Ci = detail::mat_view(out.im, m, nn);
      Cr.noalias() -= Ai * Bi;
      Ci.noalias() = Ar * Bi;
      Ci.noalias() += Ai * Br;
    }
  }
  auto an = a.node(), bn = b.node();
  return Var<T>(detail::make_node<T>(std::move(out), {an, bn}, [an, bn, m, k, nn, cplx](Node<T>& n) {
    auto Gr = detail::mat_view(n.grad.re, m, nn);
    const auto& av = an->value;
    const auto& bv = bn->value;
    auto Ar = detail::mat_view(av.re, m, k);
    auto Br = detail::mat_view(bv.re, k, nn);
    if (an->needs_grad) {
      auto& ga = an->grad_buffer();
      auto GAr = detail::mat_view(ga.re, m, k);
      GAr.noalias() += Gr * Br.transpose();
      if (cplx) {
        auto Gi = detail::mat_view(n.grad.im, m, nn);
        auto Bi = detail::mat_view(bv.im, k, nn);
        auto GAi = detail::mat_view(ga.im, m, k);
        GAr.noalias() += Gi * Bi.transpose();
        GAi.noalias() += Gi * Br.transpose();
        GAi.noalias() -= Gr * Bi.transpose();
      }
    }
    if (bn->needs_grad) {
      auto& gb = bn->grad_buffer();
      auto GBr = detail::mat_view(gb.re, k, nn);
      GBr.noalias() += Ar.transpose() * Gr;
      if (cplx) {
        auto Gi = detail::mat_view(n.grad.im, m, nn);
        auto Ai = detail::mat_view(av.im, m, k);
        auto GBi = detail::mat_view(gb.im, k, nn);
        GBr.noalias() += Ai.transpose() * Gi;
        GBi.noalias() += Ar.transpose() * Gi;
        GBi.noalias() -= Ai.transpose() * Gr;
      }
    }
  }));
}

// Per-row affine map: x [.., Ci] -> [.., Co] with weight W [Co, Ci].
// Equivalent to a 1x1 convolution over the grid.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  detail::require(xv.rank() >= 1 && wv.rank() == 2, "linear: bad ranks");
  const int Ci = xv.shape.back();
  detail::require(wv.shape[1] == Ci, "linear: weight columns must match input channels");
  detail::require(xv.is_complex() == wv.is_complex(), "linear: mixed real/complex");
  const int Co = wv.shape[0];
  const int64_t rows = xv.numel() / Ci;
  const bool cplx = xv.is_complex();
  Shape oshape = xv.shape;
  oshape.back() = Co;
  Tensor<T> out = cplx ? Tensor<T>::complex(oshape) : Tensor<T>::real(oshape);
  {
    auto X = detail::mat_view(xv.re, rows, Ci);
    auto W = detail::mat_view(wv.re, Co, Ci);
    auto Y = detail::mat_view(out.re, rows, Co);
    Y.noalias() = X * W.transpose();
    if (cplx) {
      auto Xi = detail::mat_view(xv.im, rows, Ci);
      auto Wi = detail::mat_view(wv.im, Co, Ci);
      auto Yi = detail::mat_view(out.im, rows, Co);
      Y.noalias() -= Xi * Wi.transpose();
      Yi.noalias() = X * Wi.transpose();
      Yi.noalias() += Xi * W.transpose();
    }
  }
  auto xn = x.node(), wn = w.node();
  return Var<T>(
      detail::make_node<T>(std::move(out), {xn, wn}, [xn, wn, rows, Ci, Co, cplx](Node<T>& n) {
        auto Gr = detail::mat_view(n.grad.re, rows, Co);
        const auto& xv = xn->value;
        const auto& wv = wn->value;
        auto X = detail::mat_view(xv.re, rows, Ci);
        auto W = detail::mat_view(wv.re, Co, Ci);
        if (xn->needs_grad) {
          auto& gx = xn->grad_buffer();
          auto GXr = detail::mat_view(gx.re, rows, Ci);
          GXr.noalias() += Gr * W;
          if (cplx) {
            auto Gi = detail::mat_view(n.grad.im, rows, Co);
            auto Wi = detail::mat_view(wv.im, Co, Ci);
            auto GXi = detail::mat_view(gx.im, rows, Ci);
            GXr.noalias() += Gi * Wi;
            GXi.noalias() += Gi * W;
            GXi.noalias() -= Gr * Wi;
          }
        }
        if (wn->needs_grad) {
          auto& gw = wn->grad_buffer();
          auto GWr = detail::mat_view(gw.re, Co, Ci);
          GWr.noalias() += Gr.transpose() * X;
          if (cplx) {
            auto Gi = detail::mat_view(n.grad.im, rows, Co);
            auto Xi = detail::mat_view(xv.im, rows, Ci);
            auto GWi = detail::mat_view(gw.im, Co, Ci);
            GWr.noalias() += Gi.transpose() * Xi;
            GWi.noalias() += Gi.transpose() * X;
            GWi.noalias() -= Gr.transpose() * Xi;
          }
        }
      }));
}

// Broadcast add of a per-channel bias b [C] onto x [.., C].
template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b) {
  const auto& xv = x.value();
  const auto& bv = b.value();
  detail::require(bv.rank() == 1 && bv.shape[0] == xv.shape.back(),
                  "add_channel_bias: bias length must match channels");
  detail::require(xv.is_complex() == bv.is_complex(), "add_channel_bias: mixed real/complex");
  const int C = xv.shape.back();
  const int64_t rows = xv.numel() / C;
  Tensor<T> out = xv;
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) {
      out.re[r * C + c] += bv.re[c];
      if (xv.is_complex()) out.im[r * C + c] += bv.im[c];
    }
  auto xn = x.node(), bn = b.node();
  return Var<T>(detail::make_node<T>(std::move(out), {xn, bn}, [xn, bn, rows, C](Node<T>& n) {
    if (xn->needs_grad) xn->accum_grad(n.grad);
    if (bn->needs_grad) {
      auto& gb = bn->grad_buffer();
      for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) {
          gb.re[c] += n.grad.re[r * C + c];
          if (!n.grad.im.empty()) gb.im[c] += n.grad.im[r * C + c];
        }
    }
  }));
}

// ---------------------------------------------------------------------------
// Convolutions

enum class ConvMode { kFull, kDepthwise };

namespace detail {

// Zero-padded im2col for a [F, S, C] grid and odd kh x kw kernel with the
// given dilation; output is [F*S, kh*kw*C] row-major.
template <typename T>
void im2col(const std::vector<T>& x, int F, int S, int C, int kh, int kw, int dil,
            std::vector<T>& cols) {
  const int ph = (kh - 1) / 2 * dil;
  const int pw = (kw - 1) / 2 * dil;
  const int64_t K = static_cast<int64_t>(kh) * kw * C;
  cols.assign(static_cast<size_t>(F) * S * K, T(0));
  for (int i = 0; i < F; ++i)
    for (int j = 0; j < S; ++j) {
      T* row = cols.data() + (static_cast<int64_t>(i) * S + j) * K;
      for (int u = 0; u < kh; ++u) {
        const int si = i + u * dil - ph;
        if (si < 0 || si >= F) continue;
        for (int v = 0; v < kw; ++v) {
          const int sj = j + v * dil - pw;
          if (sj < 0 || sj >= S) continue;
          const T* src = x.data() + (static_cast<int64_t>(si) * S + sj) * C;
          T* dst = row + (static_cast<int64_t>(u) * kw + v) * C;
          for (int c = 0; c < C; ++c) dst[c] = src[c];
        }
      }
    }
}

// Adds the columns gradient back onto the input grid (transpose of im2col).
template <typename T>
void col2im_add(const std::vector<T>& cols, int F, int S, int C, int kh, int kw, int dil,
                std::vector<T>& gx) {
  const int ph = (kh - 1) / 2 * dil;
  const int pw = (kw - 1) / 2 * dil;
  const int64_t K = static_cast<int64_t>(kh) * kw * C;
  for (int i = 0; i < F; ++i)
    for (int j = 0; j < S; ++j) {
      const T* row = cols.data() + (static_cast<int64_t>(i) * S + j) * K;
      for (int u = 0; u < kh; ++u) {
        const int si = i + u * dil - ph;
        if (si < 0 || si >= F) continue;
        for (int v = 0; v < kw; ++v) {
          const int sj = j + v * dil - pw;
          if (sj < 0 || sj >= S) continue;
          T* dst = gx.data() + (static_cast<int64_t>(si) * S + sj) * C;
          const T* src = row + (static_cast<int64_t>(u) * kw + v) * C;
          for (int c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
}

}  // namespace detail

// Full convolution (cross-correlation) of x [F, S, Cin] with kernels
// [kh, kw, Cin, Cout], zero same-padding, odd kernel sizes. Real or complex;
// the complex variant combines four real convolutions.
template <typename T>
Var<T> conv2d_full(const Var<T>& x, const Var<T>& k, int dilation = 1) {
  const auto& xv = x.value();
  const auto& kv = k.value();
  detail::require(xv.rank() == 3 && kv.rank() == 4, "conv2d: x must be [F,S,C], k [kh,kw,Cin,Cout]");
  const int F = xv.shape[0], S = xv.shape[1], Ci = xv.shape[2];
  const int kh = kv.shape[0], kw = kv.shape[1], Co = kv.shape[3];
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d: kernel sizes must be odd");
  if (dilation < 1) throw ConfigError("conv2d: dilation must be >= 1");
  detail::require(kv.shape[2] == Ci, "conv2d: kernel Cin mismatch");
  detail::require(xv.is_complex() == kv.is_complex(), "conv2d: mixed real/complex");
  const bool cplx = xv.is_complex();
  const int64_t N = static_cast<int64_t>(F) * S;
  const int64_t K = static_cast<int64_t>(kh) * kw * Ci;

  auto colsR = std::make_shared<std::vector<T>>();
  auto colsI = std::make_shared<std::vector<T>>();
  detail::im2col(xv.re, F, S, Ci, kh, kw, dilation, *colsR);
  if (cplx) detail::im2col(xv.im, F, S, Ci, kh, kw, dilation, *colsI);

  Tensor<T> out = cplx ? Tensor<T>::complex({F, S, Co}) : Tensor<T>::real({F, S, Co});
  {
    auto Xr = detail::mat_view(*colsR, N, K);
    auto Kr = detail::mat_view(kv.re, K, Co);
    auto Yr = detail::mat_view(out.re, N, Co);
    Yr.noalias() = Xr * Kr;
    if (cplx) {
      auto Xi = detail::mat_view(*colsI, N, K);
      auto Ki = detail::mat_view(kv.im, K, Co);
      auto Yi = detail::mat_view(out.im, N, Co);
      Yr.noalias() -= Xi * Ki;
      Yi.noalias() = Xr * Ki;
      Yi.noalias() += Xi * Kr;
    }
  }
  auto xn = x.node(), kn = k.node();
  return Var<T>(detail::make_node<T>(
      std::move(out), {xn, kn},
      [xn, kn, colsR, colsI, F, S, Ci, kh, kw, Co, dilation, N, K, cplx](Node<T>& n) {
        auto Gr = detail::mat_view(n.grad.re, N, Co);
        const auto& kv = kn->value;
        auto Kr = detail::mat_view(kv.re, K, Co);
        auto Xr = detail::mat_view(*colsR, N, K);
        if (kn->needs_grad) {
          auto& gk = kn->grad_buffer();
          auto GKr = detail::mat_view(gk.re, K, Co);
          GKr.noalias() += Xr.transpose() * Gr;
          if (cplx) {
            auto Gi = detail::mat_view(n.grad.im, N, Co);
            auto Xi = detail::mat_view(*colsI, N, K);
            auto GKi = detail::mat_view(gk.im, K, Co);
            GKr.noalias() += Xi.transpose() * Gi;
            GKi.noalias() += Xr.transpose() * Gi;
            GKi.noalias() -= Xi.transpose() * Gr;
          }
        }
        if (xn->needs_grad) {
          auto& gx = xn->grad_buffer();
          std::vector<T> gcols(static_cast<size_t>(N) * K);
          auto GC = detail::mat_view(gcols, N, K);
          GC.noalias() = Gr * Kr.transpose();
          if (cplx) {
            auto Gi = detail::mat_view(n.grad.im, N, Co);
            auto Ki = detail::mat_view(kv.im, K, Co);
            GC.noalias() += Gi * Ki.transpose();
            detail::col2im_add(gcols, F, S, Ci, kh, kw, dilation, gx.re);
            GC.noalias() = Gi * Kr.transpose();
            GC.noalias() -= Gr * Ki.transpose();
            detail::col2im_add(gcols, F, S, Ci, kh, kw, dilation, gx.im);
          } else {
            detail::col2im_add(gcols, F, S, Ci, kh, kw, dilation, gx.re);
          }
        }
      }));
}

// Depthwise convolution: x [F, S, C] with one kh x kw kernel per channel,
// k [kh, kw, C]. Real or complex.
template <typename T>
Var<T> conv2d_depthwise(const Var<T>& x, const Var<T>& k, int dilation = 1) {
  const auto& xv = x.value();
  const auto& kv = k.value();
  detail::require(xv.rank() == 3 && kv.rank() == 3, "conv2d_depthwise: x [F,S,C], k [kh,kw,C]");
  const int F = xv.shape[0], S = xv.shape[1], C = xv.shape[2];
  const int kh = kv.shape[0], kw = kv.shape[1];
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d: kernel sizes must be odd");
  if (dilation < 1) throw ConfigError("conv2d: dilation must be >= 1");
  detail::require(kv.shape[2] == C, "conv2d_depthwise: channel mismatch");
  detail::require(xv.is_complex() == kv.is_complex(), "conv2d: mixed real/complex");
  const bool cplx = xv.is_complex();
  const int ph = (kh - 1) / 2 * dilation;
  const int pw = (kw - 1) / 2 * dilation;

  // (xr,xi) x (kr,ki) -> (xr*kr - xi*ki, xr*ki + xi*kr) accumulated per tap.
  auto run = [&](const std::vector<T>& xs, const std::vector<T>& ks, std::vector<T>& ys, T sgn) {
    for (int i = 0; i < F; ++i)
      for (int j = 0; j < S; ++j)
        for (int u = 0; u < kh; ++u) {
          const int si = i + u * dilation - ph;
          if (si < 0 || si >= F) continue;
          for (int v = 0; v < kw; ++v) {
            const int sj = j + v * dilation - pw;
            if (sj < 0 || sj >= S) continue;
            const T* xp = xs.data() + (static_cast<int64_t>(si) * S + sj) * C;
            const T* kp = ks.data() + (static_cast<int64_t>(u) * kw + v) * C;
            T* yp = ys.data() + (static_cast<int64_t>(i) * S + j) * C;
            for (int c = 0; c < C; ++c) yp[c] += sgn * xp[c] * kp[c];
          }
        }
  };

  Tensor<T> out = cplx ? Tensor<T>::complex({F, S, C}) : Tensor<T>::real({F, S, C});
  run(xv.re, kv.re, out.re, T(1));
  if (cplx) {
    run(xv.im, kv.im, out.re, T(-1));
    run(xv.re, kv.im, out.im, T(1));
    run(xv.im, kv.re, out.im, T(1));
  }

  auto xn = x.node(), kn = k.node();
  return Var<T>(detail::make_node<T>(
      std::move(out), {xn, kn}, [xn, kn, F, S, C, kh, kw, dilation, ph, pw, cplx](Node<T>& n) {
        const auto& xv = xn->value;
        const auto& kv = kn->value;
        const bool wx = xn->needs_grad;
        const bool wk = kn->needs_grad;
        auto* gx = wx ? &xn->grad_buffer() : nullptr;
        auto* gk = wk ? &kn->grad_buffer() : nullptr;
        // One pass over taps: for output grad g at (i,j) and tap (u,v):
        //   gx[si,sj] += g . k[u,v]   (complex: times conj-structure)
        //   gk[u,v]  += g . x[si,sj]
        for (int i = 0; i < F; ++i)
          for (int j = 0; j < S; ++j) {
            const int64_t yo = (static_cast<int64_t>(i) * S + j) * C;
            for (int u = 0; u < kh; ++u) {
              const int si = i + u * dilation - ph;
              if (si < 0 || si >= F) continue;
              for (int v = 0; v < kw; ++v) {
                const int sj = j + v * dilation - pw;
                if (sj < 0 || sj >= S) continue;
                const int64_t xo = (static_cast<int64_t>(si) * S + sj) * C;
                const int64_t ko = (static_cast<int64_t>(u) * kw + v) * C;
                for (int c = 0; c < C; ++c) {
                  const T gr = n.grad.re[yo + c];
                  const T gi = cplx ? n.grad.im[yo + c] : T(0);
                  if (wx) {
                    gx->re[xo + c] += gr * kv.re[ko + c] + (cplx ? gi * kv.im[ko + c] : T(0));
                    if (cplx) gx->im[xo + c] += -gr * kv.im[ko + c] + gi * kv.re[ko + c];
                  }
                  if (wk) {
                    gk->re[ko + c] += gr * xv.re[xo + c] + (cplx ? gi * xv.im[xo + c] : T(0));
                    if (cplx) gk->im[ko + c] += -gr * xv.im[xo + c] + gi * xv.re[xo + c];
                  }
                }
              }
            }
          }
      }));
}

// Spec-facing dispatch; kernels are [kh,kw,Cin,Cout] for kFull and
// [kh,kw,C] for kDepthwise.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels, ConvMode mode, int dilation = 1) {
  return mode == ConvMode::kFull ? conv2d_full(x, kernels, dilation)
                                 : conv2d_depthwise(x, kernels, dilation);
}

// ---------------------------------------------------------------------------
// Reductions

// Sum of all elements of a real tensor.
template <typename T>
Var<T> sum_all(const Var<T>& a) {
  const auto& av = a.value();
  detail::require(!av.is_complex(), "sum_all: real tensors only");
  T s = T(0);
  for (T v : av.re) s += v;
  auto an = a.node();
  return Var<T>(detail::make_node<T>(Tensor<T>::scalar(s), {an}, [an](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    const T gs = n.grad.re[0];
    for (size_t i = 0; i < g.re.size(); ++i) g.re[i] += gs;
  }));
}

// Sum of squared moduli: sum(re^2) + sum(im^2). Real scalar output.
template <typename T>
Var<T> sum_squares(const Var<T>& a) {
  const auto& av = a.value();
  T s = T(0);
  for (T v : av.re) s += v * v;
  for (T v : av.im) s += v * v;
  auto an = a.node();
  return Var<T>(detail::make_node<T>(Tensor<T>::scalar(s), {an}, [an](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    const T gs = n.grad.re[0];
    for (size_t i = 0; i < g.re.size(); ++i) g.re[i] += gs * T(2) * an->value.re[i];
    for (size_t i = 0; i < g.im.size(); ++i) g.im[i] += gs * T(2) * an->value.im[i];
  }));
}

// L1 norm of a tensor: sum |re| + sum |im| (subgradient 0 at 0).
template <typename T>
Var<T> l1_norm(const Var<T>& a) {
  const auto& av = a.value();
  T s = T(0);
  for (T v : av.re) s += std::abs(v);
  for (T v : av.im) s += std::abs(v);
  auto an = a.node();
  return Var<T>(detail::make_node<T>(Tensor<T>::scalar(s), {an}, [an](Node<T>& n) {
    if (!an->needs_grad) return;
    auto& g = an->grad_buffer();
    const T gs = n.grad.re[0];
    auto sgn = [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); };
    for (size_t i = 0; i < g.re.size(); ++i) g.re[i] += gs * sgn(an->value.re[i]);
    for (size_t i = 0; i < g.im.size(); ++i) g.im[i] += gs * sgn(an->value.im[i]);
  }));
}

}  // namespace mimorx
