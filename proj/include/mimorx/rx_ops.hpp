// Receiver-specific differentiable ops: the maximal-ratio-combining
// transformation, the imaginary-plane scaling used by the multiplicative
// transformation, and the masked binary cross-entropy driving training.

#pragma once

#include <cmath>

#include "mimorx/ops.hpp"

namespace mimorx {

// out.re = x.re, out.im = w2 (*) x.im with w2 real [C] broadcast over the
// leading dims of a complex x [.., C].
template <typename T>
Var<T> scale_imag(const Var<T>& x, const Var<T>& w2) {
  const auto& xv = x.value();
  const auto& wv = w2.value();
  detail::require(xv.is_complex(), "scale_imag: complex input required");
  detail::require(!wv.is_complex() && wv.rank() == 1 && wv.shape[0] == xv.shape.back(),
                  "scale_imag: w2 must be real [C] matching input channels");
  const int C = xv.shape.back();
  const int64_t rows = xv.numel() / C;
  Tensor<T> out = Tensor<T>::like(xv);
  out.re = xv.re;
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) out.im[r * C + c] = wv.re[c] * xv.im[r * C + c];
  auto xn = x.node(), wn = w2.node();
  return Var<T>(detail::make_node<T>(std::move(out), {xn, wn}, [xn, wn, rows, C](Node<T>& n) {
    const auto& xv = xn->value;
    const auto& wv = wn->value;
    if (xn->needs_grad) {
      auto& gx = xn->grad_buffer();
      for (size_t i = 0; i < n.grad.re.size(); ++i) gx.re[i] += n.grad.re[i];
      for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) gx.im[r * C + c] += wv.re[c] * n.grad.im[r * C + c];
    }
    if (wn->needs_grad) {
      auto& gw = wn->grad_buffer();
      for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) gw.re[c] += xv.im[r * C + c] * n.grad.im[r * C + c];
    }
  }));
}

// Maximal-ratio combining per resource element: for channel branch output
// h [F, S, M, R] and signal branch output y [F, S, R],
//   out[i,j,k] = h_k^H y / ||h_k||^2,  h_k = h[i,j,k,:].
// Rows whose squared norm falls below `norm_floor` produce zero output and
// propagate zero gradient (the quotient is ill-conditioned there).
template <typename T>
Var<T> mrc_combine(const Var<T>& h, const Var<T>& y, T norm_floor = T(1e-12)) {
  const auto& hv = h.value();
  const auto& yv = y.value();
  detail::require(hv.rank() == 4 && yv.rank() == 3, "mrc_combine: h [F,S,M,R], y [F,S,R]");
  detail::require(hv.is_complex() && yv.is_complex(), "mrc_combine: complex inputs required");
  const int F = hv.shape[0], S = hv.shape[1], M = hv.shape[2], R = hv.shape[3];
  detail::require(yv.shape[0] == F && yv.shape[1] == S && yv.shape[2] == R,
                  "mrc_combine: grid/antenna dims disagree");
  Tensor<T> out = Tensor<T>::complex({F, S, M});
  // Cache 1/||h_k||^2 (0 for floored rows) for the backward pass.
  auto inv_norm = std::make_shared<std::vector<T>>(static_cast<size_t>(F) * S * M, T(0));
  for (int i = 0; i < F; ++i)
    for (int j = 0; j < S; ++j) {
      const int64_t yb = (static_cast<int64_t>(i) * S + j) * R;
      for (int k = 0; k < M; ++k) {
        const int64_t hb = ((static_cast<int64_t>(i) * S + j) * M + k) * R;
        T nrm = T(0), accr = T(0), acci = T(0);
        for (int r = 0; r < R; ++r) {
          const T hr = hv.re[hb + r], hi = hv.im[hb + r];
          const T yr = yv.re[yb + r], yi = yv.im[yb + r];
          nrm += hr * hr + hi * hi;
          // conj(h) * y
          accr += hr * yr + hi * yi;
          acci += hr * yi - hi * yr;
        }
        const int64_t o = (static_cast<int64_t>(i) * S + j) * M + k;
        if (nrm < norm_floor) continue;
        (*inv_norm)[o] = T(1) / nrm;
        out.re[o] = accr / nrm;
        out.im[o] = acci / nrm;
      }
    }
  auto hn = h.node(), yn = y.node();
  return Var<T>(detail::make_node<T>(
      std::move(out), {hn, yn}, [hn, yn, inv_norm, F, S, M, R](Node<T>& n) {
        const auto& hv = hn->value;
        const auto& yv = yn->value;
        const bool wh = hn->needs_grad;
        const bool wy = yn->needs_grad;
        auto* gh = wh ? &hn->grad_buffer() : nullptr;
        auto* gy = wy ? &yn->grad_buffer() : nullptr;
        // With u = conj(h).y (elementwise expanded: u = sum_r conj(h_r) y_r)
        // and out = u / nrm:
        //   d out / d y_r   follows from u:    gy_r += conj-structure(h_r) g
        //   d out / d h_r   has a u term and a -u/nrm^2 * d nrm term.
        for (int i = 0; i < F; ++i)
          for (int j = 0; j < S; ++j) {
            const int64_t yb = (static_cast<int64_t>(i) * S + j) * R;
            for (int k = 0; k < M; ++k) {
              const int64_t o = (static_cast<int64_t>(i) * S + j) * M + k;
              const T inv = (*inv_norm)[o];
              if (inv == T(0)) continue;
              const int64_t hb = o * R;
              const T gr = n.grad.re[o] * inv;
              const T gi = n.grad.im[o] * inv;
              // d nrm coefficient: -(g . out) * inv, where out = u * inv.
              const T gn = -(n.grad.re[o] * n.value.re[o] + n.grad.im[o] * n.value.im[o]) * inv;
              for (int r = 0; r < R; ++r) {
                const T hr = hv.re[hb + r], hi = hv.im[hb + r];
                const T yr = yv.re[yb + r], yi = yv.im[yb + r];
                if (wy) {
                  // u_re = hr*yr + hi*yi, u_im = hr*yi - hi*yr
                  gy->re[yb + r] += gr * hr - gi * hi;
                  gy->im[yb + r] += gr * hi + gi * hr;
                }
                if (wh) {
                  gh->re[hb + r] += gr * yr + gi * yi + T(2) * gn * hr;
                  gh->im[hb + r] += gr * yi - gi * yr + T(2) * gn * hi;
                }
              }
            }
          }
      }));
}

// Per-element record of the masked binary cross-entropy forward pass.
template <typename T>
struct BceStats {
  T loss = T(0);
  int64_t active = 0;
};

// Mean binary cross-entropy with logits over masked entries.
//   loss = mean_{mask=1} [ softplus(l_c) - l_c * target ],  l_c = clamp(l, +-clip)
// `target` is the probability assigned to the logit-positive outcome and
// `mask` selects contributing entries; both are plain tensors (no gradient).
// Entries clipped away receive zero gradient.
template <typename T>
Var<T> bce_with_logits_masked(const Var<T>& logits, const Tensor<T>& target,
                              const Tensor<T>& mask, T clip = T(30)) {
  const auto& lv = logits.value();
  detail::require(!lv.is_complex(), "bce_with_logits_masked: real logits required");
  require_same_shape(lv, target, "bce_with_logits_masked(target)");
  require_same_shape(lv, mask, "bce_with_logits_masked(mask)");
  int64_t active = 0;
  for (T m : mask.re)
    if (m != T(0)) ++active;
  if (active == 0) throw ConfigError("bce_with_logits_masked: mask selects no entries");
  T loss = T(0);
  for (size_t i = 0; i < lv.re.size(); ++i) {
    if (mask.re[i] == T(0)) continue;
    T lc = std::min(clip, std::max(-clip, lv.re[i]));
    // softplus(x) = max(x,0) + log1p(exp(-|x|))
    T sp = std::max(lc, T(0)) + std::log1p(std::exp(-std::abs(lc)));
    loss += sp - lc * target.re[i];
  }
  loss /= static_cast<T>(active);
  auto ln = logits.node();
  auto tgt = std::make_shared<Tensor<T>>(target);
  auto msk = std::make_shared<Tensor<T>>(mask);
  return Var<T>(
      detail::make_node<T>(Tensor<T>::scalar(loss), {ln}, [ln, tgt, msk, clip, active](Node<T>& n) {
        if (!ln->needs_grad) return;
        auto& g = ln->grad_buffer();
        const T gs = n.grad.re[0] / static_cast<T>(active);
        for (size_t i = 0; i < g.re.size(); ++i) {
          if (msk->re[i] == T(0)) continue;
          const T l = ln->value.re[i];
          if (l > clip || l < -clip) continue;
          const T s = l >= T(0) ? T(1) / (T(1) + std::exp(-l)) : std::exp(l) / (T(1) + std::exp(l));
          g.re[i] += gs * (s - tgt->re[i]);
        }
      }));
}

}  // namespace mimorx
