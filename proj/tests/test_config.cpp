#include "doctest.h"

#include "vfx/config.hpp"

using namespace vfx;

TEST_CASE("serialize then parse is a fixed point") {
  RunConfig cfg;
  const std::string text = serialize_run_config(cfg);
  const ParsedConfig parsed = parse_run_config(text);
  CHECK(parsed.notices.empty());
  CHECK(serialize_run_config(parsed.config) == text);

  cfg.train.learning_rate = 3.3e-5;
  cfg.train.noise_std = 0.1;
  cfg.train.seed = 18446744073709551615ULL;
  cfg.train.augment = false;
  cfg.train.loss = LossConfig::preset("OF+S");
  cfg.train.loss.flow_mode = FlowLossMode::kDirect;
  cfg.train.model.encoder_channels = {8, 16, 24};
  cfg.train.model.effect = Effect::kSwirl;
  cfg.train.flow.smoothness = 0.1 + 0.2;
  cfg.data.corpus.effects = {Effect::kShrink, Effect::kMelt};
  cfg.data.corpus_dir = "some dir/with spaces";
  const std::string custom = serialize_run_config(cfg);
  const RunConfig back = parse_run_config(custom).config;
  CHECK(serialize_run_config(back) == custom);
  CHECK(back.train.learning_rate == 3.3e-5);
  CHECK(back.train.flow.smoothness == 0.1 + 0.2);
  CHECK(back.train.seed == 18446744073709551615ULL);
  CHECK(back.train.loss.flow == 1.0);
  CHECK(back.train.loss.flow_mode == FlowLossMode::kDirect);
  CHECK(back.train.model.effect == Effect::kSwirl);
  CHECK(back.data.corpus.effects == std::vector<Effect>{Effect::kShrink, Effect::kMelt});
  CHECK(back.data.corpus_dir == "some dir/with spaces");
}

TEST_CASE("missing keys fall back to defaults with a notice") {
  const ParsedConfig p = parse_run_config("# only comments\n\n   \n");
  CHECK(p.notices.size() == run_config_keys().size());
  CHECK(p.notices.front().find("train.learning_rate") != std::string::npos);
  CHECK(p.config.train.learning_rate == 1e-5);
  CHECK(p.config.train.batch == 4);
  CHECK(p.config.train.iterations == 50000);
  CHECK(p.config.train.model.kappa == 2);
  CHECK(p.config.train.sequence_length == 8);

  const ParsedConfig q = parse_run_config("train.batch = 2   # trailing comment\n");
  CHECK(q.config.train.batch == 2);
  CHECK(q.notices.size() == run_config_keys().size() - 1);
}

TEST_CASE("preset then explicit overrides") {
  const RunConfig c = parse_run_config("loss.style = 2\nloss.preset = OF+S\n").config;
  CHECK(c.train.loss.name == "OF+S");
  CHECK(c.train.loss.flow == 1.0);
  CHECK(c.train.loss.style == 2.0);
  CHECK(c.train.loss.mse == 0.0);
  const RunConfig custom = parse_run_config("loss.preset = custom\nloss.content = 0.5\n").config;
  CHECK(custom.train.loss.content == 0.5);
  CHECK(custom.train.loss.mse == 0.0);
}

TEST_CASE("invalid configurations are rejected with the line") {
  auto message = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("accepted");
  };
  CHECK(message("train.batch = 4\ntrain.bach = 4\n").find("line 2") != std::string::npos);
  CHECK(message("train.bach = 4\n").find("unknown key 'train.bach'") != std::string::npos);
  CHECK(message("train.batch = 4\ntrain.batch = 5\n").find("repeated") != std::string::npos);
  CHECK(message("train.batch = four\n").find("train.batch") != std::string::npos);
  CHECK(message("train.batch 4\n").find("expected") != std::string::npos);
  CHECK(message("train.augment = yes\n") != "accepted");
  CHECK(message("loss.preset = VGG\n") != "accepted");
  CHECK(message("loss.flow_mode = sideways\n") != "accepted");
  CHECK(message("model.effect = boil\n") != "accepted");
  CHECK(message("train.sequence_length = 1\n") != "accepted");
  CHECK(message("train.learning_rate = -1\n") != "accepted");
  CHECK(message("loss.mse = -0.5\n") != "accepted");
  CHECK(message("model.encoder_channels = 8,,16\n") != "accepted");
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), IoError);
}
