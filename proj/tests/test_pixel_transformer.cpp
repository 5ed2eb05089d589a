#include "doctest.h"
#include "gradcheck.hpp"

#include "vfx/pixel_transformer.hpp"

#include <cmath>

using namespace vfx;
using vfx::testing::gradcheck;
using vfx::testing::project;
using vfx::testing::random_tensor;
using T = Tensor<double>;

namespace {

int mirror(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - i - 1;
  return i;
}

// Direct evaluation of the advection sum, one output pixel at a time.
double eq2_pixel(const T& x, const T& theta, int kappa, int b, int ch, int i, int j) {
  const int c = x.dim(1), h = x.dim(2), w = x.dim(3), side = 2 * kappa + 1;
  double acc = 0;
  for (int k = -kappa; k <= kappa; ++k)
    for (int l = -kappa; l <= kappa; ++l) {
      const int t = (k + kappa) * side + (l + kappa);
      const double wt = theta.value()[((b * side * side + t) * h + i) * w + j];
      acc += wt * x.value()[((b * c + ch) * h + mirror(i - k, h)) * w + mirror(j - l, w)];
    }
  return acc;
}

T identity_kernels(int n, int h, int w, int kappa) {
  const int side = 2 * kappa + 1;
  auto t = T::zeros(Shape{n, side * side, h, w});
  const int center = kappa * side + kappa;
  for (int b = 0; b < n; ++b)
    for (int p = 0; p < h * w; ++p) t.mutable_value()[(b * side * side + center) * h * w + p] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("apply_kernels: identity kernels reproduce the input") {
  vfx::testing::Rng rng(1);
  auto x = random_tensor(Shape{2, 3, 7, 5}, rng, 0, 1);
  KernelField<double> id(identity_kernels(2, 7, 5, 2), 2);
  auto y = apply_kernels(x, id);
  CHECK((y.value() - x.value()).abs().maxCoeff() == 0.0);
}

TEST_CASE("apply_kernels: uniform 3x3 kernels on a 3x3 image") {
  auto x = T::from(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  KernelField<double> uniform(T::full(Shape{1, 9, 3, 3}, 1.0 / 9.0), 1);
  auto y = apply_kernels(x, uniform);
  CHECK(y.value()[4] == doctest::Approx(5.0));
  // Top-left window rows {1,0,0} x cols {1,0,0}: 5+4+4+2+1+1+2+1+1 = 21.
  CHECK(y.value()[0] == doctest::Approx(21.0 / 9.0));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(y.value()[i * 3 + j] == doctest::Approx(eq2_pixel(x, uniform.weights(), 1, 0, 0, i, j)));
}

TEST_CASE("apply_kernels: one-hot (1,0) tap shifts content down a row") {
  vfx::testing::Rng rng(2);
  auto x = random_tensor(Shape{1, 2, 5, 4}, rng, 0, 1);
  auto t = T::zeros(Shape{1, 25, 5, 4});
  KernelField<double> probe(identity_kernels(1, 5, 4, 2), 2);
  const int tap = probe.tap_index(1, 0);
  for (int p = 0; p < 20; ++p) t.mutable_value()[tap * 20 + p] = 1.0;
  auto y = apply_kernels(x, KernelField<double>(t, 2));
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j) {
        const int src = i == 0 ? 0 : i - 1;  // row 0 reflects to itself
        CHECK(y.value()[(c * 5 + i) * 4 + j] == x.value()[(c * 5 + src) * 4 + j]);
      }
}

TEST_CASE("apply_kernels matches direct evaluation on random 6x6 cases") {
  vfx::testing::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor(Shape{1, 3, 6, 6}, rng, 0, 1);
    auto field = kernel_field_from_logits(random_tensor(Shape{1, 25, 6, 6}, rng, -3, 3), 2);
    auto y = apply_kernels(x, field);
    double worst = 0;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
          worst = std::max(worst, std::abs(y.value()[(c * 6 + i) * 6 + j] - eq2_pixel(x, field.weights(), 2, 0, c, i, j)));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("apply_kernels is linear in the image") {
  vfx::testing::Rng rng(4);
  auto field = kernel_field_from_logits(random_tensor(Shape{1, 25, 8, 8}, rng, -2, 2), 2);
  auto x = random_tensor(Shape{1, 3, 8, 8}, rng);
  auto z = random_tensor(Shape{1, 3, 8, 8}, rng);
  const double a = 0.7, b = -1.3;
  auto lhs = apply_kernels(add(affine(x, a, 0.0), affine(z, b, 0.0)), field);
  auto rhs = add(affine(apply_kernels(x, field), a, 0.0), affine(apply_kernels(z, field), b, 0.0));
  CHECK((lhs.value() - rhs.value()).abs().maxCoeff() < 1e-5);
}

TEST_CASE("KernelField rejects unnormalized or negative weights") {
  CHECK_THROWS_AS(KernelField<double>(T::full(Shape{1, 9, 2, 2}, 0.2), 1), ContractError);
  auto neg = T::full(Shape{1, 9, 1, 1}, 0.0);
  neg.mutable_value()[0] = 1.5;
  neg.mutable_value()[1] = -0.5;
  CHECK_THROWS_AS(KernelField<double>(neg, 1), ContractError);
  CHECK_THROWS_AS(KernelField<double>(T::full(Shape{1, 8, 2, 2}, 0.125), 1), DimensionError);
  vfx::testing::Rng rng(0);
  auto x = random_tensor(Shape{1, 1, 4, 4}, rng);
  KernelField<double> f(identity_kernels(1, 3, 4, 1), 1);
  CHECK_THROWS_AS(apply_kernels(x, f), DimensionError);
}

TEST_CASE("kernel_field_from_logits") {
  auto uniform = kernel_field_from_logits(T::zeros(Shape{1, 25, 3, 3}), 2);
  for (double v : uniform.weights().value()) CHECK(v == doctest::Approx(1.0 / 25.0));
  auto logits = T::zeros(Shape{1, 25, 1, 1});
  logits.mutable_value()[7] = 50.0;
  auto peaked = kernel_field_from_logits(logits, 2);
  CHECK(peaked.weights().value()[7] > 1.0 - 1e-15);
  CHECK_THROWS_AS(kernel_field_from_logits(T::zeros(Shape{1, 9, 2, 2}), 2), DimensionError);

  vfx::testing::Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto f = kernel_field_from_logits(random_tensor(Shape{2, 25, 3, 3}, rng, -30, 30), 2);
    // Re-validate through the checking constructor.
    CHECK_NOTHROW(KernelField<double>(f.weights(), 2));
  }
}

TEST_CASE("composite") {
  auto prev = T::full(Shape{1, 3, 2, 2}, 0.2);
  auto tr = T::full(Shape{1, 3, 2, 2}, 0.6);
  CHECK((composite(prev, tr, BackgroundMask<double>(T::full(Shape{1, 1, 2, 2}, 1.0))).value() - 0.2).abs().maxCoeff() == 0.0);
  CHECK((composite(prev, tr, BackgroundMask<double>(T::full(Shape{1, 1, 2, 2}, 0.0))).value() - 0.6).abs().maxCoeff() == 0.0);
  CHECK((composite(prev, tr, BackgroundMask<double>(T::full(Shape{1, 1, 2, 2}, 0.5))).value() - 0.4).abs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(BackgroundMask<double>(T::full(Shape{1, 1, 2, 2}, 1.5)), ContractError);
  CHECK_THROWS_AS(composite(prev, T::full(Shape{1, 3, 2, 3}, 0.6), BackgroundMask<double>(T::full(Shape{1, 1, 2, 2}, 0.5))),
                  DimensionError);
}

TEST_CASE("pixel provenance: outputs stay inside the window hull") {
  vfx::testing::Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_tensor(Shape{1, 3, 6, 6}, rng, 0, 1);
    auto field = kernel_field_from_logits(random_tensor(Shape{1, 25, 6, 6}, rng, -10, 10), 2);
    auto mask = BackgroundMask<double>(sigmoid(random_tensor(Shape{1, 1, 6, 6}, rng, -4, 4)));
    auto y = composite(x, apply_kernels(x, field), mask);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
          double lo = 1e9, hi = -1e9;
          for (int k = -2; k <= 2; ++k)
            for (int l = -2; l <= 2; ++l) {
              const double v = x.value()[(c * 6 + mirror(i - k, 6)) * 6 + mirror(j - l, 6)];
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
          const double out = y.value()[(c * 6 + i) * 6 + j];
          CHECK(out >= lo - 1e-12);
          CHECK(out <= hi + 1e-12);
        }
  }
}

TEST_CASE("gradient check: transformer and compositing (8x8)") {
  vfx::testing::Rng rng(9);
  auto res = gradcheck(
      [](std::vector<T>& in) {
        auto field = kernel_field_from_logits(in[1], 2);
        auto mask = BackgroundMask<double>(sigmoid(in[2]));
        return project(composite(in[0], apply_kernels(in[0], field), mask));
      },
      {random_tensor(Shape{1, 2, 8, 8}, rng, 0, 1), random_tensor(Shape{1, 25, 8, 8}, rng, -2, 2),
       random_tensor(Shape{1, 1, 8, 8}, rng, -2, 2)});
  CHECK(res.max_relative_error < 1e-4);
}
