#include "doctest.h"

#include "vfx/config.hpp"
#include "vfx/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace vfx;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny(const char* preset = "MSE") {
  TrainConfig cfg;
  cfg.model.height = cfg.model.width = 8;
  cfg.model.encoder_channels = {4, 4, 4};
  cfg.model.decoder_channels = {4, 4, 4};
  cfg.model.stage_kernel = 3;
  cfg.model.embedding_dim = 2;
  cfg.loss = LossConfig::preset(preset);
  cfg.style.channels = {4, 4};
  cfg.frame_discriminator.channels = {4, 4};
  cfg.flow_discriminator.channels = {4, 4};
  cfg.flow.scales = 2;
  cfg.flow.iterations = 5;
  cfg.learning_rate = 1e-3;
  cfg.batch = 2;
  cfg.sequence_length = 4;
  cfg.iterations = 6;
  cfg.validation_interval = 0;
  cfg.seed = 17;
  return cfg;
}

std::vector<VideoClip> tiny_corpus(int size = 8) {
  CorpusConfig cc;
  cc.clips_per_effect = 3;
  cc.native_length = 10;
  cc.height = cc.width = size;
  return generate_corpus(cc);
}

std::vector<const VideoClip*> pool_of(const std::vector<VideoClip>& clips, Effect e) {
  std::vector<const VideoClip*> out;
  for (const auto& c : clips)
    if (c.category.broad == e) out.push_back(&c);
  return out;
}

std::vector<Buffer<float>> snapshot(const ParameterList<float>& p) {
  std::vector<Buffer<float>> out;
  for (const auto& [_, t] : p.named()) out.push_back(t.value());
  return out;
}

bool same(const std::vector<Buffer<float>>& a, const std::vector<Buffer<float>>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!(a[i] == b[i]).all()) return false;
  return true;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "vfx_test_train" / name;
  fs::remove_all(dir);
  return dir;
}

size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("teacher forcing schedule") {
  CHECK(teacher_forcing_prob(0) == doctest::Approx(900.0 / 901.0).epsilon(1e-12));
  CHECK(std::abs(teacher_forcing_prob(0) - 0.998890) < 1e-6);
  // Crossover where e^(itr/900) = 900.
  const double crossover = 900.0 * std::log(900.0);
  CHECK(std::abs(crossover - 6122) < 1);
  CHECK(std::abs(teacher_forcing_prob(6122) - 0.5) < 1e-3);
  CHECK(teacher_forcing_prob(6121) > 0.5);
  CHECK(teacher_forcing_prob(6123) < 0.5);
  CHECK(teacher_forcing_prob(10000) == 0.0);
  CHECK(teacher_forcing_prob(9999) > 0.0);
  CHECK(teacher_forcing_prob(50, 50) == 0.0);
  for (int i = 1; i < 12000; ++i) CHECK_FALSE(teacher_forcing_prob(i) > teacher_forcing_prob(i - 1));
  CHECK_THROWS_AS(teacher_forcing_prob(-1), ContractError);
}

TEST_CASE("config validation") {
  TrainConfig cfg = tiny();
  cfg.sequence_length = 1;
  CHECK_THROWS_AS(Trainer{cfg}, ConfigError);
  cfg = tiny();
  cfg.batch = 0;
  CHECK_THROWS_AS(Trainer{cfg}, ConfigError);
  cfg = tiny();
  cfg.validation_interval = 10;
  CHECK_THROWS_AS(Trainer{cfg}, ConfigError);
}

TEST_CASE("make_batch and sample_batch") {
  const auto clips = tiny_corpus();
  TrainBatch b = make_batch({clips[0], clips[1]});
  REQUIRE(b.frames.size() == 10);
  CHECK(b.frames[3].shape() == Shape{2, 3, 8, 8});
  CHECK(b.categories.size() == 2);
  CHECK((b.frames[3].value().segment(192, 192) == frame_tensor<float>(clips[1], 3).value()).all());

  Trainer tr(tiny());
  const auto pool = pool_of(clips, Effect::kMelt);
  const TrainBatch s1 = tr.sample_batch(pool), s2 = tr.sample_batch(pool);
  REQUIRE(s1.frames.size() == 4);
  CHECK(s1.frames[0].shape() == Shape{2, 3, 8, 8});
  for (size_t t = 0; t < 4; ++t) CHECK((s1.frames[t].value() == s2.frames[t].value()).all());
  for (const auto& c : s1.categories) CHECK(c.broad == Effect::kMelt);
  CHECK_THROWS_AS(tr.step(make_batch({clips[0]})), ContractError);
}

TEST_CASE("a loss with no active term leaves parameters unchanged") {
  TrainConfig cfg = tiny();
  cfg.loss = LossConfig{};
  Trainer tr(cfg);
  const auto before = snapshot(tr.model().parameters());
  const auto clips = tiny_corpus();
  const auto pool = pool_of(clips, Effect::kMelt);
  for (int i = 0; i < 3; ++i) {
    const StepReport r = tr.step(tr.sample_batch(pool));
    CHECK(r.loss == 0.0);
    CHECK(r.grad_norm_post == 0.0);
  }
  CHECK(tr.iteration() == 3);
  CHECK(same(before, snapshot(tr.model().parameters())));
}

TEST_CASE("post-clip gradient norm never exceeds the bound") {
  TrainConfig cfg = tiny("C+S");
  cfg.iterations = 12;
  cfg.clip_norm = 1e-4;
  Trainer tr(cfg);
  const auto clips = tiny_corpus();
  const auto res = train(tr, clips, {});
  REQUIRE(res.steps.size() == 12);
  bool clipped = false;
  for (const auto& r : res.steps) {
    CHECK(r.grad_norm_post <= cfg.clip_norm + 1e-7);
    clipped = clipped || r.grad_norm_pre > cfg.clip_norm;
    if (r.grad_norm_pre <= cfg.clip_norm) CHECK(r.grad_norm_post == doctest::Approx(r.grad_norm_pre));
  }
  CHECK(clipped);
}

TEST_CASE("identical seeds give identical trajectories; resume matches") {
  const auto clips = tiny_corpus();
  TrainConfig cfg = tiny("OF+S");
  cfg.iterations = 6;
  Trainer a(cfg), b(cfg);
  const auto ra = train(a, clips, {}), rb = train(b, clips, {});
  REQUIRE(ra.steps.size() == 6);
  for (size_t i = 0; i < 6; ++i) {
    CHECK(ra.steps[i].loss == rb.steps[i].loss);
    CHECK(ra.steps[i].grad_norm_pre == rb.steps[i].grad_norm_pre);
  }
  CHECK(same(snapshot(a.model().parameters()), snapshot(b.model().parameters())));

  TrainConfig other = cfg;
  other.seed = 18;
  Trainer c(other);
  CHECK(train(c, clips, {}).steps[0].loss != ra.steps[0].loss);

  TrainConfig half = cfg;
  half.iterations = 3;
  Trainer first(half);
  train(first, clips, {});
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(first.to_checkpoint("")));
  Trainer resumed(cfg);
  resumed.restore(ck);
  CHECK(resumed.iteration() == 3);
  const auto rest = train(resumed, clips, {});
  REQUIRE(rest.steps.size() == 3);
  for (size_t i = 0; i < 3; ++i) CHECK(rest.steps[i].loss == ra.steps[3 + i].loss);
  CHECK(same(snapshot(resumed.model().parameters()), snapshot(a.model().parameters())));

  TrainConfig wrong = cfg;
  wrong.model.encoder_channels = {4, 4, 8};
  wrong.model.decoder_channels = {8, 4, 4};
  Trainer mismatched(wrong);
  CHECK_THROWS_AS(mismatched.restore(ck), FormatError);
}

TEST_CASE("adversarial training: discriminators update and parameters stay finite") {
  TrainConfig cfg = tiny("GAN");
  cfg.iterations = 200;
  cfg.batch = 1;
  cfg.sequence_length = 3;
  Trainer tr(cfg);
  REQUIRE(tr.frame_discriminator());
  REQUIRE(tr.flow_discriminator());
  const auto d_before = snapshot(tr.frame_discriminator()->parameters());
  const auto res = train(tr, tiny_corpus(), {});
  for (const auto& r : res.steps) {
    REQUIRE(r.frame_d_loss);
    REQUIRE(r.flow_d_loss);
    CHECK(std::isfinite(*r.frame_d_loss));
    CHECK(std::isfinite(*r.flow_d_loss));
  }
  CHECK(res.steps.front().noise_std == doctest::Approx(cfg.noise_std));
  CHECK(res.steps.back().noise_std < res.steps.front().noise_std);
  for (auto* list : {&tr.model().parameters(), &tr.frame_discriminator()->parameters(),
                     &tr.flow_discriminator()->parameters()})
    for (const auto& [name, t] : list->named()) CHECK_MESSAGE(t.value().allFinite(), name);
  CHECK_FALSE(same(d_before, snapshot(tr.frame_discriminator()->parameters())));
}

TEST_CASE("a non-finite loss aborts with the term breakdown") {
  TrainConfig cfg = tiny();
  cfg.loss.content = 1.0;
  Trainer tr(cfg);
  for (const auto& [name, t] : tr.model().parameters().named()) {
    if (name.find("bias") != std::string::npos) {
      Tensor<float> p = t;
      p.mutable_value().setConstant(std::numeric_limits<float>::quiet_NaN());
    }
  }
  const auto clips = tiny_corpus();
#ifndef NDEBUG
  // Debug builds stop at the first op producing a non-finite value.
  CHECK_THROWS_AS(tr.step(tr.sample_batch(pool_of(clips, Effect::kMelt))), ContractError);
  return;
#endif
  try {
    tr.step(tr.sample_batch(pool_of(clips, Effect::kMelt)));
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("mse=") != std::string::npos);
    CHECK(msg.find("content=") != std::string::npos);
  }
}

TEST_CASE("train writes logs and checkpoints") {
  const auto clips = tiny_corpus(16);
  TrainConfig cfg = tiny();
  cfg.model.height = cfg.model.width = 16;
  cfg.iterations = 0;
  RunConfig rc;
  rc.train = cfg;
  const std::string text = serialize_run_config(rc);

  const fs::path empty_dir = scratch("zero");
  Trainer idle(cfg);
  const auto none = train(idle, clips, {}, {empty_dir, text});
  CHECK(none.steps.empty());
  CHECK(fs::exists(empty_dir / "final.efck"));
  CHECK(line_count(empty_dir / "train_log.csv") == 1);
  const Checkpoint ck0 = load_checkpoint(empty_dir / "final.efck");
  CHECK(ck0.config_text == text);
  CHECK(ck0.at("trainer/iteration").as_u64() == 0);

  cfg.iterations = 4;
  cfg.checkpoint_interval = 2;
  cfg.validation_interval = 2;
  cfg.validation_clips = 2;
  cfg.sequence_length = 3;
  const fs::path dir = scratch("run");
  Trainer tr(cfg);
  const auto res = train(tr, clips, clips, {dir, text});
  CHECK(line_count(dir / "train_log.csv") == 5);
  CHECK(line_count(dir / "validation.csv") == 3);
  REQUIRE(res.validation.size() == 2);
  CHECK(res.validation[1].iteration == 4);
  CHECK(res.validation[1].mse > 0);
  CHECK(fs::exists(dir / "checkpoint_2.efck"));
  CHECK_FALSE(fs::exists(dir / "checkpoint_4.efck"));
  CHECK(res.final_checkpoint == dir / "final.efck");
  std::ifstream log(dir / "train_log.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header == "iter,term,value,grad_norm_pre,grad_norm_post,tf_prob");

  // Resuming appends to the existing log.
  TrainConfig longer = cfg;
  longer.iterations = 6;
  Trainer more(longer);
  more.restore(load_checkpoint(dir / "final.efck"));
  train(more, clips, {}, {dir, text});
  CHECK(line_count(dir / "train_log.csv") == 7);

  TrainConfig bloom = cfg;
  bloom.model.effect = Effect::kBloom;
  std::vector<VideoClip> melt_only;
  for (const auto& c : clips)
    if (c.category.broad == Effect::kMelt) melt_only.push_back(c);
  Trainer wrong(bloom);
  CHECK_THROWS_AS(train(wrong, melt_only, {}), ContractError);
  Trainer small(tiny());
  CHECK_THROWS_AS(train(small, clips, {}), DimensionError);
}

TEST_CASE("animate returns the first frame followed by the rollout") {
  Trainer tr(tiny());
  const auto clip = tiny_corpus()[0];
  const VideoClip out = animate(tr.model(), clip, clip.category, 5);
  CHECK(out.length == 6);
  CHECK((Eigen::Map<const Buffer<float>>(out.frame_data(0), out.frame_size()) ==
         Eigen::Map<const Buffer<float>>(clip.frame_data(0), clip.frame_size()))
            .all());
  CHECK(out.data.minCoeff() >= 0.0f);
  CHECK(out.data.maxCoeff() <= 1.0f);
}
