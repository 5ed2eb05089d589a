#include "doctest.h"
#include "gradcheck.hpp"

#include "vfx/features.hpp"

#include <cmath>

using namespace vfx;
using vfx::testing::gradcheck;
using vfx::testing::project;
using vfx::testing::random_tensor;
using T = Tensor<double>;

namespace {

// Gaussian blob of the given width centred at (cy, cx), replicated to c channels.
T blob(int n, int c, double cy, double cx, double sigma) {
  auto t = T::zeros(Shape{1, c, n, n});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double r2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
        t.mutable_value()[(ch * n + i) * n + j] = 0.1 + 0.8 * std::exp(-r2 / (2 * sigma * sigma));
      }
  return t;
}

struct MeanFlow {
  double u = 0, v = 0;
};

// Mean flow over the blob's half-maximum region.
MeanFlow mean_over_support(const T& flow, const T& image) {
  const int n = image.dim(2);
  MeanFlow m;
  int count = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (image.value()[i * n + j] < 0.5) continue;
      m.u += flow.value()[i * n + j];
      m.v += flow.value()[n * n + i * n + j];
      ++count;
    }
  m.u /= count;
  m.v /= count;
  return m;
}

}  // namespace

TEST_CASE("warp_bilinear: integer flow is an exact shift") {
  vfx::testing::Rng rng(1);
  auto img = random_tensor(Shape{1, 2, 5, 6}, rng);
  auto flow = T::zeros(Shape{1, 2, 5, 6});
  for (int q = 0; q < 30; ++q) flow.mutable_value()[30 + q] = 1.0;  // v = +1
  auto out = warp_bilinear(img, flow);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 6; ++j) {
        const int src = std::min(i + 1, 4);
        CHECK(out.value()[(c * 5 + i) * 6 + j] == doctest::Approx(img.value()[(c * 5 + src) * 6 + j]));
      }
  // Half-pixel horizontal offset averages neighbours.
  auto half = T::full(Shape{1, 2, 5, 6}, 0.0);
  for (int q = 0; q < 30; ++q) half.mutable_value()[q] = 0.5;
  auto mid = warp_bilinear(img, half);
  CHECK(mid.value()[0] == doctest::Approx(0.5 * (img.value()[0] + img.value()[1])));
  CHECK_THROWS_AS(warp_bilinear(img, T::zeros(Shape{1, 2, 5, 5})), DimensionError);
}

TEST_CASE("gradient check: warp_bilinear") {
  vfx::testing::Rng rng(2);
  auto res = gradcheck([](std::vector<T>& in) { return project(warp_bilinear(in[0], in[1])); },
                       {random_tensor(Shape{1, 2, 6, 6}, rng), random_tensor(Shape{1, 2, 6, 6}, rng, -0.45, 0.45)});
  CHECK(res.max_relative_error < 1e-6);
}

TEST_CASE("style features: shapes, zeros, determinism") {
  StyleFeatureNet<double> net;
  REQUIRE(net.layer_count() == 5);
  vfx::testing::Rng rng(3);
  auto x = random_tensor(Shape{2, 3, 64, 64}, rng, 0, 1);
  auto a = net.features(x);
  auto b = StyleFeatureNet<double>().features(x);
  const std::vector<int> ch{16, 32, 64, 64, 64};
  for (int l = 0; l < 5; ++l) {
    CHECK(a[l].shape() == Shape{2, ch[l], 64 >> (l + 1), 64 >> (l + 1)});
    CHECK((a[l].value() - b[l].value()).abs().maxCoeff() == 0.0);
  }
  for (const auto& f : net.features(T::zeros(Shape{1, 3, 64, 64}))) CHECK(f.value().abs().maxCoeff() == 0.0);
  StyleNetConfig other;
  other.seed = 99;
  CHECK((StyleFeatureNet<double>(other).features(x)[0].value() - a[0].value()).abs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(net.features(T::zeros(Shape{1, 1, 8, 8})), DimensionError);
}

TEST_CASE("style features are translation covariant away from borders") {
  StyleFeatureNet<double> net;
  vfx::testing::Rng rng(4);
  const int n = 32;
  auto x = random_tensor(Shape{1, 3, n, n}, rng, 0, 1);
  for (int layer = 0; layer < 2; ++layer) {
    const int stride = 2 << layer;  // pooling factor after this layer
    auto shifted = T::zeros(x.shape());
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          shifted.mutable_value()[(c * n + i) * n + j] = x.value()[(c * n + std::max(i - stride, 0)) * n + j];
    const T fa = net.features(x)[layer];
    const T fb = net.features(shifted)[layer];
    const int m = fa.dim(2), chans = fa.dim(1);
    double worst = 0;
    for (int c = 0; c < chans; ++c)
      for (int i = 3; i < m - 3; ++i)
        for (int j = 3; j < m - 3; ++j)
          worst = std::max(worst, std::abs(fb.value()[(c * m + i + 1) * m + j] - fa.value()[(c * m + i) * m + j]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("gradient check: style features") {
  StyleNetConfig cfg;
  cfg.channels = {3, 4, 4};
  StyleFeatureNet<double> net(cfg);
  vfx::testing::Rng rng(5);
  auto res = gradcheck(
      [&](std::vector<T>& in) {
        auto f = net.features(in[0]);
        return project(f[0], 1) + project(f[1], 2) + project(f[2], 3);
      },
      {random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1)});
  CHECK(res.max_relative_error < 1e-4);
}

TEST_CASE("flow: identical frames give zero flow at every scale") {
  FlowExtractor<double> flow;
  vfx::testing::Rng rng(6);
  auto a = random_tensor(Shape{1, 3, 64, 64}, rng, 0, 1);
  auto pyr = flow(a, a);
  REQUIRE(pyr.scales.size() == 3);
  for (int s = 0; s < 3; ++s) {
    CHECK(pyr.scales[s].shape() == Shape{1, 2, 64 >> s, 64 >> s});
    CHECK(pyr.scales[s].value().abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("flow: recovers downward shifts of a smooth blob") {
  FlowExtractor<double> flow;
  const int n = 64;
  const double sigma = n / 12.0;
  for (int shift : {1, 2}) {
    auto a = blob(n, 3, 30, 33, sigma);
    auto b = blob(n, 3, 30 + shift, 33, sigma);
    auto pyr = flow(a, b);
    auto m = mean_over_support(pyr.flow(), a);
    INFO("shift " << shift << " u " << m.u << " v " << m.v);
    CHECK(std::abs(m.u) < 0.25);
    CHECK(std::abs(m.v - shift) < 0.25);
  }
}

TEST_CASE("flow: swapping frames approximately negates the flow") {
  FlowExtractor<double> flow;
  const int n = 64;
  auto a = blob(n, 1, 31, 30, n / 12.0);
  auto b = blob(n, 1, 32, 31.5, n / 12.0);
  auto fwd = flow(a, b).flow();
  auto bwd = flow(b, a).flow();
  const double mean_abs = (fwd.value() + bwd.value()).abs().mean();
  CHECK(mean_abs < 0.3);
  CHECK(fwd.value().abs().maxCoeff() <= 8.0);
}

TEST_CASE("flow: input validation") {
  FlowExtractor<double> flow;
  CHECK_THROWS_AS(flow(T::zeros(Shape{1, 3, 8, 8}), T::zeros(Shape{1, 3, 8, 4})), DimensionError);
  CHECK_THROWS_AS(flow(T::zeros(Shape{1, 3, 6, 6}), T::zeros(Shape{1, 3, 6, 6})), DimensionError);
  CHECK_THROWS_AS(to_grayscale(T::zeros(Shape{1, 2, 4, 4})), DimensionError);
  FlowConfig bad;
  bad.iterations = 0;
  CHECK_THROWS_AS(FlowExtractor<double>{bad}, ContractError);
}

TEST_CASE("gradient check: flow features reach both frames") {
  FlowExtractor<double> flow;
  vfx::testing::Rng rng(7);
  auto res = gradcheck(
      [&](std::vector<T>& in) {
        auto pyr = flow(in[0], in[1]);
        return project(pyr.scales[0], 1) + project(pyr.scales[1], 2) + project(pyr.scales[2], 3);
      },
      {random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1), random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1)});
  CHECK(res.max_relative_error < 1e-4);
  CHECK(res.analytic_norm > 0.0);
}
