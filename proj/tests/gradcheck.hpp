#pragma once

// Central finite-difference oracle for the autodiff engine. Independent of
// every backward rule: it only evaluates forward passes.

#include "vfx/ops.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace vfx::testing {

using Rng = std::mt19937_64;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer<double> b(shape.numel());
  for (auto& v : b) v = u(rng);
  return Tensor<double>(std::move(shape), std::move(b), true);
}

/// Projects an arbitrary-shape output onto a scalar with fixed random weights,
/// so one backward pass checks a full vector-Jacobian product.
inline Tensor<double> project(const Tensor<double>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Buffer<double> w(out.numel());
  for (auto& v : w) v = u(rng);
  return sum(mul(out, Tensor<double>(out.shape(), w)));
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  double analytic_norm = 0.0;
};

/// Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// for each input, reporting the worst.
inline GradCheckResult gradcheck(const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& f,
                                 std::vector<Tensor<double>> inputs, double h = 1e-4) {
  for (auto& t : inputs) t.zero_grad();
  f(inputs).backward();
  GradCheckResult result;
  for (auto& t : inputs) {
    const Buffer<double> analytic = t.has_grad() ? t.grad() : Buffer<double>::Zero(t.numel());
    Buffer<double> numeric(t.numel());
    {
      NoGradGuard guard;
      for (Eigen::Index i = 0; i < t.numel(); ++i) {
        const double orig = t.mutable_value()[i];
        t.mutable_value()[i] = orig + h;
        const double fp = f(inputs).item();
        t.mutable_value()[i] = orig - h;
        const double fm = f(inputs).item();
        t.mutable_value()[i] = orig;
        numeric[i] = (fp - fm) / (2 * h);
      }
    }
    const double denom = std::max({analytic.matrix().norm(), numeric.matrix().norm(), 1e-10});
    result.max_relative_error =
        std::max(result.max_relative_error, (analytic - numeric).matrix().norm() / denom);
    result.analytic_norm = std::max(result.analytic_norm, analytic.matrix().norm());
  }
  return result;
}

}  // namespace vfx::testing
