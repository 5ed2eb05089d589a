#include "doctest.h"
#include "gradcheck.hpp"

#include "vfx/losses.hpp"

#include <cmath>
#include <numeric>

using namespace vfx;
using vfx::testing::gradcheck;
using vfx::testing::random_tensor;
using T = Tensor<double>;

namespace {

// Independent Gram oracle for one sample: G[a][b] = sum_p F[a,p] F[b,p] / (C*P).
std::vector<double> gram_oracle(const T& f, int sample) {
  const int c = f.dim(1), p = f.dim(2) * f.dim(3);
  std::vector<double> g(static_cast<size_t>(c * c), 0.0);
  for (int a = 0; a < c; ++a)
    for (int b = 0; b < c; ++b) {
      double acc = 0;
      for (int q = 0; q < p; ++q)
        acc += f.value()[(sample * c + a) * p + q] * f.value()[(sample * c + b) * p + q];
      g[static_cast<size_t>(a * c + b)] = acc / (c * p);
    }
  return g;
}

double gram_distance_oracle(const std::vector<T>& fa, const std::vector<T>& fb) {
  double total = 0;
  for (size_t l = 0; l < fa.size(); ++l) {
    const int n = fa[l].dim(0);
    for (int s = 0; s < n; ++s) {
      auto ga = gram_oracle(fa[l], s), gb = gram_oracle(fb[l], s);
      for (size_t k = 0; k < ga.size(); ++k) total += (ga[k] - gb[k]) * (ga[k] - gb[k]) / n;
    }
  }
  return total;
}

double mse_oracle(const T& a, const T& b) {
  double acc = 0;
  for (Eigen::Index i = 0; i < a.numel(); ++i) acc += (a.value()[i] - b.value()[i]) * (a.value()[i] - b.value()[i]);
  return acc / static_cast<double>(a.numel());
}

StyleNetConfig small_style() {
  StyleNetConfig c;
  c.channels = {4, 6, 6};
  return c;
}

DiscriminatorConfig small_disc(int in_channels) {
  DiscriminatorConfig c;
  c.in_channels = in_channels;
  c.channels = {4, 4, 6, 6};
  return c;
}

T shifted_blob(int n, double cy, double cx) {
  auto t = T::zeros(Shape{1, 3, n, n});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        t.mutable_value()[(c * n + i) * n + j] =
            0.2 + 0.6 * std::exp(-((i - cy) * (i - cy) + (j - cx) * (j - cx)) / (2.0 * 9.0));
  return t;
}

}  // namespace

TEST_CASE("mse_loss") {
  auto a = T::full(Shape{1, 3, 4, 4}, 0.3);
  CHECK(mse_loss(a, a).item() == 0.0);
  CHECK(mse_loss(a, T::full(Shape{1, 3, 4, 4}, 0.4)).item() == doctest::Approx(0.01).epsilon(1e-12));
  vfx::testing::Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor(Shape{1, 1, 4, 4}, rng), y = random_tensor(Shape{1, 1, 4, 4}, rng);
    CHECK(std::abs(mse_loss(x, y).item() - mse_oracle(x, y)) < 1e-7);
  }
  CHECK_THROWS_AS(mse_loss(a, T::zeros(Shape{1, 3, 4, 5})), DimensionError);
}

TEST_CASE("gram: worked example and symmetry properties") {
  auto f = T::from(Shape{1, 2, 1, 2}, {1, 2, 3, 4});
  auto g = gram(f);
  CHECK(g.value()[0] == doctest::Approx(1.25));
  CHECK(g.value()[1] == doctest::Approx(2.75));
  CHECK(g.value()[2] == doctest::Approx(2.75));
  CHECK(g.value()[3] == doctest::Approx(6.25));
  CHECK(gram(T::zeros(Shape{1, 3, 2, 2})).value().abs().maxCoeff() == 0.0);

  vfx::testing::Rng rng(2);
  auto x = random_tensor(Shape{1, 3, 3, 4}, rng);
  auto gx = gram(x);
  for (int a = 0; a < 3; ++a) {
    CHECK(gx.value()[a * 3 + a] >= 0.0);
    for (int b = 0; b < 3; ++b) CHECK(std::abs(gx.value()[a * 3 + b] - gx.value()[b * 3 + a]) < 1e-12);
  }
  // Spatial permutation: reverse the 12 positions of every channel.
  auto rev = T::zeros(x.shape());
  for (int c = 0; c < 3; ++c)
    for (int q = 0; q < 12; ++q) rev.mutable_value()[c * 12 + q] = x.value()[c * 12 + 11 - q];
  CHECK((gram(rev).value() - gx.value()).abs().maxCoeff() < 1e-12);
  // Channel permutation (0,1,2) -> (2,0,1) permutes rows and columns alike.
  const int perm[3] = {2, 0, 1};
  auto px = T::zeros(x.shape());
  for (int c = 0; c < 3; ++c)
    for (int q = 0; q < 12; ++q) px.mutable_value()[c * 12 + q] = x.value()[perm[c] * 12 + q];
  auto gp = gram(px);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) CHECK(std::abs(gp.value()[a * 3 + b] - gx.value()[perm[a] * 3 + perm[b]]) < 1e-12);
  // Against the loop oracle.
  auto oracle = gram_oracle(x, 0);
  for (int k = 0; k < 9; ++k) CHECK(std::abs(gx.value()[k] - oracle[static_cast<size_t>(k)]) < 1e-12);
}

TEST_CASE("style and content losses") {
  StyleFeatureNet<double> net(small_style());
  vfx::testing::Rng rng(3);
  auto y = random_tensor(Shape{1, 3, 16, 16}, rng, 0, 1);
  auto s = random_tensor(Shape{1, 3, 16, 16}, rng, 0, 1);
  CHECK(style_loss(net, y, y).item() == 0.0);
  CHECK(content_loss(net, y, y).item() == 0.0);
  const double st = style_loss(net, y, s).item();
  const double ct = content_loss(net, y, s).item();
  CHECK(st > 0.0);
  CHECK(ct > 0.0);
  const auto fy = net.features(y), fs = net.features(s);
  CHECK(std::abs(st - gram_distance_oracle(fy, fs)) < 1e-10);
  double content = 0;
  for (size_t l = 0; l < fy.size(); ++l) content += mse_oracle(fy[l], fs[l]);
  CHECK(std::abs(ct - content) < 1e-6);

  // Single layer on 2x2 frames: one pooled position per channel.
  StyleNetConfig one;
  one.channels = {3};
  StyleFeatureNet<double> tiny(one);
  auto a = random_tensor(Shape{1, 3, 2, 2}, rng, 0, 1);
  auto b = random_tensor(Shape{1, 3, 2, 2}, rng, 0, 1);
  const auto fa = tiny.features(a), fb = tiny.features(b);
  REQUIRE(fa[0].shape() == Shape{1, 3, 1, 1});
  double hand = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double d = (fa[0].value()[i] * fa[0].value()[j] - fb[0].value()[i] * fb[0].value()[j]) / 3.0;
      hand += d * d;
    }
  CHECK(style_loss(tiny, a, b).item() == doctest::Approx(hand).epsilon(1e-10));
}

TEST_CASE("flow loss: zero on identical pairs, positive on motion mismatch") {
  FlowConfig fc;
  FlowExtractor<double> flow(fc);
  const int n = 32;
  auto a = shifted_blob(n, 14, 15), b = shifted_blob(n, 15, 15);
  for (auto mode : {FlowLossMode::kDirect, FlowLossMode::kGram}) {
    CHECK(flow_loss(flow, a, b, a, b, mode).item() == 0.0);
    CHECK(flow_loss(flow, a, a, a, b, mode).item() > 0.0);
  }
  // Single-scale direct mode equals the flow MSE by hand.
  FlowConfig single;
  single.scales = 1;
  FlowExtractor<double> flat(single);
  auto c = shifted_blob(n, 14, 16);
  const T fy = flat(a, c).flow(), fs = flat(a, b).flow();
  CHECK(std::abs(flow_loss(flat, a, c, a, b, FlowLossMode::kDirect).item() - mse_oracle(fy, fs)) < 1e-12);
}

TEST_CASE("discriminator output and adversarial losses") {
  Discriminator<double> d(small_disc(3));
  vfx::testing::Rng rng(4);
  auto x = random_tensor(Shape{3, 3, 16, 16}, rng, 0, 1);
  auto p = d(x);
  CHECK(p.shape() == Shape{3, 1, 1, 1});
  for (double v : p.value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  Discriminator<double> half(small_disc(3));
  half.parameters().fill_zero();
  auto losses = adversarial_losses(half, x, x);
  CHECK(losses.d_loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(losses.g_loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(discriminator_bce(T::full(Shape{2, 1, 1, 1}, 1.0), T::full(Shape{2, 1, 1, 1}, 0.0)).item() == 0.0);
  CHECK(discriminator_bce(T::full(Shape{1, 1, 1, 1}, 0.0), T::full(Shape{1, 1, 1, 1}, 0.0)).item() ==
        doctest::Approx(-0.5 * std::log(1e-7)));
  double last = 1e9;
  for (double q = 0.05; q < 1.0; q += 0.05) {
    const double g = generator_bce(T::full(Shape{1, 1, 1, 1}, q)).item();
    CHECK(g < last);
    CHECK(g >= 0.0);
    last = g;
  }
  CHECK_THROWS_AS(d(random_tensor(Shape{1, 2, 16, 16}, rng)), DimensionError);
}

TEST_CASE("loss presets and validation") {
  for (auto name : kLossPresets) CHECK_NOTHROW(LossConfig::preset(name).validate());
  auto ofs = LossConfig::preset("OF+S");
  CHECK(ofs.flow_mode == FlowLossMode::kGram);
  CHECK(ofs.style == 1.0);
  CHECK(ofs.flow == 1.0);
  CHECK(LossConfig::preset("MSE+GAN").adversarial_frame == 0.1);
  auto gan = LossConfig::preset("GAN");
  CHECK(gan.needs_frame_discriminator());
  CHECK(gan.needs_flow_discriminator());
  CHECK_THROWS_AS(LossConfig::preset("L1"), LookupError);
  CHECK_THROWS_AS(LossConfig{}.validate(), ConfigError);
  LossConfig neg;
  neg.mse = -1;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("total_loss: averaging, linearity, breakdown, missing modules") {
  vfx::testing::Rng rng(5);
  std::vector<T> source;
  for (int i = 0; i < 4; ++i) source.push_back(random_tensor(Shape{1, 3, 16, 16}, rng, 0, 1).detach());
  RolloutResult<double> same;
  for (int i = 1; i < 4; ++i) {
    same.inputs.push_back(source[static_cast<size_t>(i - 1)]);
    same.frames.push_back(source[static_cast<size_t>(i)]);
  }
  LossModules<double> none;
  CHECK(total_loss(LossConfig::preset("MSE"), same, source, none).total.item() == 0.0);

  RolloutResult<double> gen;
  for (int i = 1; i < 4; ++i) {
    gen.inputs.push_back(i == 1 ? source[0] : gen.frames.back());
    gen.frames.push_back(random_tensor(Shape{1, 3, 16, 16}, rng, 0, 1));
  }
  LossConfig twice;
  twice.mse = 2.0;
  double expected = 0;
  for (size_t i = 0; i < 3; ++i) expected += mse_oracle(gen.frames[i], source[i + 1]);
  CHECK(total_loss(twice, gen, source, none).total.item() == doctest::Approx(2.0 * expected / 3.0).epsilon(1e-12));

  StyleFeatureNet<double> net(small_style());
  FlowExtractor<double> flow;
  LossModules<double> mods;
  mods.style_net = &net;
  mods.flow = &flow;
  auto br = total_loss(LossConfig::preset("OF+S"), gen, source, mods);
  REQUIRE(br.terms.size() == 2);
  CHECK(br.terms[0].first == "style");
  CHECK(br.terms[1].first == "flow");
  CHECK(std::abs(br.terms[0].second + br.terms[1].second - br.total.item()) < 1e-6);

  CHECK_THROWS_AS(total_loss(LossConfig::preset("GAN"), gen, source, mods), ConfigError);
  CHECK_THROWS_AS(total_loss(LossConfig::preset("C+S"), gen, source, none), ConfigError);
  std::vector<T> short_source(source.begin(), source.begin() + 2);
  CHECK_THROWS_AS(total_loss(LossConfig::preset("MSE"), gen, short_source, none), ContractError);

  Discriminator<double> da(small_disc(3)), df(small_disc(2));
  mods.frame_discriminator = &da;
  mods.flow_discriminator = &df;
  auto gan = total_loss(LossConfig::preset("GAN"), gen, source, mods);
  CHECK(gan.terms.size() == 2);
  CHECK(gan.total.item() > 0.0);
}

TEST_CASE("gradient check: every loss w.r.t. generated frames") {
  vfx::testing::Rng rng(6);
  StyleFeatureNet<double> net(small_style());
  FlowExtractor<double> flow;
  Discriminator<double> da(small_disc(3)), df(small_disc(2));
  const auto s0 = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1).detach();
  const auto s1 = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1).detach();
  const auto s2 = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1).detach();
  LossModules<double> mods{&net, &flow, &da, &df};
  for (auto name : kLossPresets) {
    LossConfig cfg = LossConfig::preset(name);
    for (auto mode : {FlowLossMode::kDirect, FlowLossMode::kGram}) {
      cfg.flow_mode = mode;
      auto res = gradcheck(
          [&](std::vector<T>& in) {
            RolloutResult<double> r;
            r.inputs = {s0, in[0]};
            r.frames = {in[0], in[1]};
            return total_loss(cfg, r, {s0, s1, s2}, mods).total;
          },
          {random_tensor(Shape{1, 3, 8, 8}, rng, 0.1, 0.9), random_tensor(Shape{1, 3, 8, 8}, rng, 0.1, 0.9)});
      INFO(name);
      CHECK(res.max_relative_error < 1e-4);
      CHECK(res.analytic_norm > 0.0);
    }
  }
  auto content = gradcheck([&](std::vector<T>& in) { return content_loss(net, in[0], s1); },
                           {random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1)});
  CHECK(content.max_relative_error < 1e-4);
}
