#include "doctest.h"

#include "vfx/evaluation.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

using namespace vfx;

namespace {

VideoClip pattern_clip(int n) {
  VideoClip c = VideoClip::blank(1, n, n, 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      c.data[i * n + j] = static_cast<float>(0.5 + 0.2 * std::sin(2 * std::numbers::pi * i / 7.0) *
                                                       std::cos(2 * std::numbers::pi * j / 5.0) +
                                             0.1 * std::sin(2 * std::numbers::pi * (i + 2 * j) / 11.0));
  return c;
}

}  // namespace

TEST_CASE("psnr") {
  VideoClip a = VideoClip::blank(2, 4, 4, 3), b = VideoClip::blank(2, 4, 4, 3);
  a.data.setConstant(0.5f);
  b.data.setConstant(0.6f);
  const double m = mse(a, b);
  CHECK(m == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(std::abs(psnr_from_mse(0.01) - 20.0) < 1e-9);
  CHECK(psnr_from_mse(1.0) == 0.0);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(std::abs(psnr(a, b) - 10 * std::log10(1.0 / m)) < 1e-6);
  CHECK_THROWS_AS(mse(a, VideoClip::blank(1, 4, 4, 3)), DimensionError);
}

TEST_CASE("ssim matches a reference implementation") {
  VideoClip x = pattern_clip(24);
  VideoClip inv = x;
  inv.data = 1.0f - x.data;
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  // Reference values from scikit-image structural_similarity with Gaussian
  // weights (sigma 1.5), population covariance and data range 1.
  CHECK(ssim(x, inv) == doctest::Approx(-0.9297448242129395).epsilon(1e-5));
  VideoClip y = x;
  for (int i = 0; i < 24; ++i)
    for (int j = 0; j < 24; ++j)
      y.data[i * 24 + j] = std::clamp(
          static_cast<float>(x.data[i * 24 + j] + 0.05 * std::cos(2 * std::numbers::pi * (3 * i - j) / 9.0)), 0.0f, 1.0f);
  CHECK(ssim(x, y) == doctest::Approx(0.9547583397625781).epsilon(1e-5));
  CHECK(std::abs(ssim(x, y) - ssim(y, x)) < 1e-7);

  VideoClip c1 = VideoClip::blank(1, 12, 12, 3), c2 = VideoClip::blank(1, 12, 12, 3);
  c1.data.setConstant(0.3f);
  c2.data.setConstant(0.3f);
  CHECK(ssim(c1, c2) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ssim(VideoClip::blank(1, 10, 12, 1), VideoClip::blank(1, 10, 12, 1)), ContractError);
}

TEST_CASE("multi_rate_best") {
  auto src = generate_clip(EffectSpec::make(Effect::kMelt, 2, 4), 24, 16, 16).clip;
  auto gen = sample_sequence(src, 8, 2, 0, false, false);
  auto r = multi_rate_best(gen, src, {1, 2, 3});
  REQUIRE(r.per_rate.size() == 3);
  CHECK(r.mse == 0.0);
  CHECK(r.per_rate[1].mse == 0.0);
  CHECK(r.per_rate[0].mse > 0.0);
  CHECK(r.psnr == kPsnrCap);
  for (const auto& m : r.per_rate) {
    CHECK(r.mse <= m.mse);
    CHECK(r.psnr >= m.psnr);
    CHECK(r.ssim >= m.ssim);
  }
  auto single = multi_rate_best(gen, src, {1});
  CHECK(single.mse == mse(gen, sample_sequence(src, 8, 1, 0, false, false)));
  auto more = multi_rate_best(gen, src, {1, 3});
  CHECK(more.mse <= single.mse);
  // Rate 4 needs 29 frames: skipped; rates only above the limit fail.
  CHECK(multi_rate_best(gen, src, {1, 4}).per_rate.size() == 1);
  CHECK_THROWS_AS(multi_rate_best(gen, src, {4, 5}), ContractError);
}

TEST_CASE("first_frame_baseline") {
  auto src = generate_clip(EffectSpec::make(Effect::kMelt, 1, 9), 8, 16, 16).clip;
  auto base = first_frame_baseline(src, 8);
  CHECK(base.length == 8);
  for (int t = 1; t < 8; ++t)
    CHECK((Eigen::Map<const Buffer<float>>(base.frame_data(t), base.frame_size()) ==
           Eigen::Map<const Buffer<float>>(base.frame_data(0), base.frame_size()))
              .all());
  CHECK(mse(first_frame_baseline(base, 8), base) == 0.0);
  CHECK(mse(base, src) > 0.0);
  CHECK_THROWS_AS(first_frame_baseline(src, 0), ContractError);
}

TEST_CASE("aggregate means") {
  MetricReport a, b;
  a.mse = 0.1;
  a.psnr = 10;
  a.ssim = 0.5;
  b.mse = 0.3;
  b.psnr = 20;
  b.ssim = 0.7;
  auto g = aggregate({a, b});
  CHECK(g.mse == doctest::Approx(0.2));
  CHECK(g.psnr == doctest::Approx(15));
  CHECK(g.ssim == doctest::Approx(0.6));
}

TEST_CASE("utility classifier: probabilities, memorisation, chance and permutation control") {
  std::vector<LabeledClip> clips;
  const std::vector<Effect> effects{Effect::kMelt, Effect::kBloom, Effect::kSwirl, Effect::kShrink};
  for (int k = 0; k < 6; ++k)
    for (size_t e = 0; e < 4; ++e) {
      auto clip = generate_clip(EffectSpec::make(effects[e], 2, 1000 + k * 4 + e), 4, 16, 16).clip;
      clips.push_back({clip, effect_label(effects[e])});
    }
  ClassifierConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.iterations = 300;
  UtilityClassifier random_clf(cfg);
  auto p = random_clf.predict_proba(clips[0].clip);
  CHECK(p.size() == 4);
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));

  auto fit = data_utility(clips, clips, cfg);
  CHECK(fit.accuracy >= 0.9);

  // Untrained classifiers sit near chance on a balanced set.
  double acc = 0;
  for (std::uint64_t s = 0; s < 8; ++s) {
    ClassifierConfig c = cfg;
    c.seed = 50 + s;
    acc += UtilityClassifier(c).accuracy(clips);
  }
  CHECK(std::abs(acc / 8 - 0.25) <= 0.1);

  // Rotating every label turns a fitted classifier into a wrong one.
  auto permuted = clips;
  for (auto& lc : permuted) lc.label = (lc.label + 1) % 4;
  ClassifierConfig c = cfg;
  UtilityClassifier clf(c);
  clf.fit(clips);
  CHECK(clf.accuracy(permuted) < 0.35);

  std::vector<LabeledClip> one_class(clips.begin(), clips.begin() + 1);
  CHECK_THROWS_AS(data_utility(one_class, clips, cfg), ConfigError);

  CHECK(fit.predictions.size() == clips.size());
  int agree = 0;
  for (size_t i = 0; i < clips.size(); ++i) agree += fit.predictions[i] == clips[i].label;
  CHECK(fit.accuracy == doctest::Approx(agree / static_cast<double>(clips.size())));
}

TEST_CASE("permuted_label_accuracy matches its expectation") {
  // Expected agreement under a uniform shuffle is sum_c n_pred(c) n_label(c) / N^2.
  const std::vector<int> predictions{0, 0, 0, 0, 1, 1, 2, 3, 3, 3};
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3, 0, 0};
  const double expected = (4.0 * 4 + 2.0 * 2 + 1.0 * 1 + 3.0 * 2) / 100.0;
  CHECK(permuted_label_accuracy(predictions, labels, 20000, 7) == doctest::Approx(expected).epsilon(0.02));
  CHECK(permuted_label_accuracy(labels, labels, 1, 3) <= 1.0);
  CHECK(permuted_label_accuracy(predictions, labels, 50, 9) == permuted_label_accuracy(predictions, labels, 50, 9));
  CHECK_THROWS_AS(permuted_label_accuracy(predictions, {0, 1}, 5, 1), DimensionError);
  CHECK_THROWS_AS(permuted_label_accuracy({}, {}, 5, 1), ContractError);
}
