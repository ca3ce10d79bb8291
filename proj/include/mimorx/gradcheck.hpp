// Central finite-difference verification of analytic gradients.
//
// The caller supplies leaf parameters and a builder that re-evaluates the
// scalar loss graph from their current values. Each scalar entry (real and
// imaginary planes) is perturbed with a per-element step proportional to its
// magnitude, floored so that tiny entries still move.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mimorx/autograd.hpp"
#include "mimorx/tensor.hpp"

namespace mimorx {

template <typename T>
struct GradCheckReport {
  T max_rel_err = T(0);
  std::string worst_entry;  // e.g. "param2.im[17]"
};

namespace detail {

template <typename T>
T loss_value(const std::function<Var<T>()>& build) {
  Var<T> loss = build();
  const auto& v = loss.value();
  if (v.is_complex() || v.numel() != 1)
    throw ShapeError("grad_check: loss must be a real scalar, got " + shape_str(v.shape));
  if (!std::isfinite(v.re[0]))
    throw NumericError("grad_check: non-finite loss " + std::to_string(v.re[0]));
  return v.re[0];
}

}  // namespace detail

// Returns max over all parameter entries of
//   |analytic - central| / max(|analytic|, |central|, 1e-12).
// Step per entry: eps * max(|x|, 1e-4).
template <typename T>
GradCheckReport<T> grad_check(const std::function<Var<T>()>& build, const std::vector<Var<T>>& params,
                              T eps = T(1e-5)) {
  static_assert(sizeof(T) >= 8, "grad_check requires 64-bit evaluation");
  if (!(eps >= T(1e-7) && eps <= T(1e-4)))
    throw ConfigError("grad_check: eps must lie in [1e-7, 1e-4]");

  // Analytic gradients. Leaves can carry accumulations from earlier
  // backward passes, so start each probed parameter from a clean buffer.
  for (const auto& p : params) {
    if (!p.node()->needs_grad)
      throw ConfigError("grad_check: parameter does not require gradients");
    p.node()->grad = Tensor<T>{};
  }
  {
    Var<T> loss = build();
    detail::loss_value<T>([&] { return loss; });
    backward(loss);
  }
  std::vector<Tensor<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.push_back(p.node()->grad_buffer());
    p.node()->grad = Tensor<T>{};
  }

  GradCheckReport<T> report;
  auto probe = [&](std::vector<T>& plane, const std::vector<T>& gplane, size_t pi, const char* tag) {
    for (size_t i = 0; i < plane.size(); ++i) {
      const T x0 = plane[i];
      const T step = eps * std::max(std::abs(x0), T(1e-4));
      plane[i] = x0 + step;
      const T lp = detail::loss_value(build);
      plane[i] = x0 - step;
      const T lm = detail::loss_value(build);
      plane[i] = x0;
      const T central = (lp - lm) / (T(2) * step);
      const T a = gplane[i];
      const T rel = std::abs(a - central) / std::max({std::abs(a), std::abs(central), T(1e-12)});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_entry =
            "param" + std::to_string(pi) + "." + tag + "[" + std::to_string(i) + "]";
      }
    }
  };
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& val = params[pi].node()->value;
    probe(val.re, analytic[pi].re, pi, "re");
    if (val.is_complex()) probe(val.im, analytic[pi].im, pi, "im");
  }
  return report;
}

}  // namespace mimorx
