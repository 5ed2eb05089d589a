#include "vfx/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vfx {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("'" + std::string(v) + "' is not a valid number");
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool parse_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("'" + std::string(v) + "' is not true or false");
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::vector<int> parse_ints(std::string_view v) {
  std::vector<int> out;
  for (auto item : split_list(v)) out.push_back(parse_number<int>(item));
  if (out.empty()) throw ConfigError("expected a comma-separated list of integers");
  return out;
}

std::string format_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename T, typename Access>
Field number(std::string key, Access access) {
  return {std::move(key), [access](const RunConfig& c) { return format_number(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, std::string_view v) { access(c) = parse_number<T>(v); }};
}

template <typename Access>
Field flag(std::string key, Access access) {
  return {std::move(key), [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [access](RunConfig& c, std::string_view v) { access(c) = parse_bool(v); }};
}

template <typename Access>
Field ints(std::string key, Access access) {
  return {std::move(key), [access](const RunConfig& c) { return format_ints(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, std::string_view v) { access(c) = parse_ints(v); }};
}

template <typename Access>
Field text(std::string key, Access access) {
  return {std::move(key), [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
          [access](RunConfig& c, std::string_view v) { access(c) = std::string(v); }};
}

void add_discriminator(std::vector<Field>& f, const std::string& section, DiscriminatorConfig TrainConfig::*member) {
  auto d = [member](RunConfig& c) -> DiscriminatorConfig& { return c.train.*member; };
  f.push_back(ints(section + ".channels", [d](RunConfig& c) -> auto& { return d(c).channels; }));
  f.push_back(number<int>(section + ".kernel", [d](RunConfig& c) -> auto& { return d(c).kernel; }));
  f.push_back(number<double>(section + ".leak", [d](RunConfig& c) -> auto& { return d(c).leak; }));
  f.push_back(number<std::uint64_t>(section + ".seed", [d](RunConfig& c) -> auto& { return d(c).seed; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
#define VFX_FIELD(kind, T, key, expr) f.push_back(kind<T>(key, [](RunConfig& c) -> auto& { return expr; }))
#define VFX_PLAIN(kind, key, expr) f.push_back(kind(key, [](RunConfig& c) -> auto& { return expr; }))
    VFX_FIELD(number, double, "train.learning_rate", c.train.learning_rate);
    VFX_FIELD(number, int, "train.batch", c.train.batch);
    VFX_FIELD(number, int, "train.iterations", c.train.iterations);
    VFX_FIELD(number, int, "train.sequence_length", c.train.sequence_length);
    VFX_FIELD(number, double, "train.clip_norm", c.train.clip_norm);
    VFX_FIELD(number, int, "train.tf_warmup", c.train.tf_warmup);
    VFX_FIELD(number, double, "train.noise_std", c.train.noise_std);
    VFX_FIELD(number, std::uint64_t, "train.seed", c.train.seed);
    VFX_FIELD(number, int, "train.max_skip", c.train.max_skip);
    VFX_PLAIN(flag, "train.augment", c.train.augment);
    VFX_FIELD(number, int, "train.validation_interval", c.train.validation_interval);
    VFX_FIELD(number, int, "train.validation_clips", c.train.validation_clips);
    VFX_FIELD(number, int, "train.checkpoint_interval", c.train.checkpoint_interval);

    f.push_back({"loss.preset", [](const RunConfig& c) { return c.train.loss.name; },
                 [](RunConfig& c, std::string_view v) { c.train.loss.name = std::string(v); }});
    VFX_FIELD(number, double, "loss.mse", c.train.loss.mse);
    VFX_FIELD(number, double, "loss.content", c.train.loss.content);
    VFX_FIELD(number, double, "loss.style", c.train.loss.style);
    VFX_FIELD(number, double, "loss.flow", c.train.loss.flow);
    VFX_FIELD(number, double, "loss.adversarial_frame", c.train.loss.adversarial_frame);
    VFX_FIELD(number, double, "loss.adversarial_flow", c.train.loss.adversarial_flow);
    f.push_back({"loss.flow_mode",
                 [](const RunConfig& c) {
                   return std::string(c.train.loss.flow_mode == FlowLossMode::kGram ? "gram" : "direct");
                 },
                 [](RunConfig& c, std::string_view v) {
                   if (v == "gram") c.train.loss.flow_mode = FlowLossMode::kGram;
                   else if (v == "direct") c.train.loss.flow_mode = FlowLossMode::kDirect;
                   else throw ConfigError("'" + std::string(v) + "' is not gram or direct");
                 }});

    VFX_FIELD(number, int, "model.height", c.train.model.height);
    VFX_FIELD(number, int, "model.width", c.train.model.width);
    VFX_FIELD(number, int, "model.channels", c.train.model.channels);
    VFX_PLAIN(ints, "model.encoder_channels", c.train.model.encoder_channels);
    VFX_PLAIN(ints, "model.decoder_channels", c.train.model.decoder_channels);
    VFX_FIELD(number, int, "model.stage_kernel", c.train.model.stage_kernel);
    VFX_FIELD(number, int, "model.lstm_kernel", c.train.model.lstm_kernel);
    VFX_FIELD(number, int, "model.embedding_dim", c.train.model.embedding_dim);
    VFX_FIELD(number, int, "model.fine_count", c.train.model.fine_count);
    f.push_back({"model.effect", [](const RunConfig& c) { return std::string(effect_name(c.train.model.effect)); },
                 [](RunConfig& c, std::string_view v) {
                   try {
                     c.train.model.effect = parse_effect(v);
                   } catch (const LookupError& e) {
                     throw ConfigError(e.what());
                   }
                 }});
    VFX_FIELD(number, int, "model.kappa", c.train.model.kappa);
    VFX_PLAIN(flag, "model.skip_connections", c.train.model.skip_connections);
    VFX_PLAIN(flag, "model.direct_rgb", c.train.model.direct_rgb);
    VFX_FIELD(number, std::uint64_t, "model.seed", c.train.model.seed);

    VFX_PLAIN(ints, "style.channels", c.train.style.channels);
    VFX_FIELD(number, int, "style.kernel", c.train.style.kernel);
    VFX_FIELD(number, std::uint64_t, "style.seed", c.train.style.seed);

    VFX_FIELD(number, int, "flow.scales", c.train.flow.scales);
    VFX_FIELD(number, int, "flow.iterations", c.train.flow.iterations);
    VFX_FIELD(number, double, "flow.smoothness", c.train.flow.smoothness);
    VFX_FIELD(number, double, "flow.max_displacement", c.train.flow.max_displacement);

    add_discriminator(f, "frame_discriminator", &TrainConfig::frame_discriminator);
    add_discriminator(f, "flow_discriminator", &TrainConfig::flow_discriminator);

    VFX_PLAIN(text, "data.corpus_dir", c.data.corpus_dir);
    VFX_PLAIN(text, "data.output_dir", c.data.output_dir);
    VFX_FIELD(number, int, "data.clips_per_effect", c.data.corpus.clips_per_effect);
    VFX_FIELD(number, int, "data.native_length", c.data.corpus.native_length);
    VFX_FIELD(number, int, "data.fine_count", c.data.corpus.fine_count);
    VFX_FIELD(number, int, "data.height", c.data.corpus.height);
    VFX_FIELD(number, int, "data.width", c.data.corpus.width);
    f.push_back({"data.effects",
                 [](const RunConfig& c) {
                   std::string s;
                   for (size_t i = 0; i < c.data.corpus.effects.size(); ++i)
                     s += (i ? "," : "") + std::string(effect_name(c.data.corpus.effects[i]));
                   return s;
                 },
                 [](RunConfig& c, std::string_view v) {
                   c.data.corpus.effects.clear();
                   try {
                     for (auto name : split_list(v)) c.data.corpus.effects.push_back(parse_effect(name));
                   } catch (const LookupError& e) {
                     throw ConfigError(e.what());
                   }
                   if (c.data.corpus.effects.empty()) throw ConfigError("data.effects is empty");
                 }});
    VFX_FIELD(number, std::uint64_t, "data.seed", c.data.corpus.seed);
    VFX_FIELD(number, std::uint64_t, "data.split_seed", c.data.split_seed);
#undef VFX_FIELD
#undef VFX_PLAIN
    return f;
  }();
  return table;
}

}  // namespace

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

ParsedConfig parse_run_config(std::string_view text) {
  std::map<std::string, std::pair<std::string, int>> values;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'section.key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    const auto& table = fields();
    if (std::none_of(table.begin(), table.end(), [&](const Field& f) { return f.key == key; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
    if (!values.emplace(key, std::make_pair(value, line_no)).second) {
      throw ConfigError(where + ": key '" + key + "' repeated");
    }
  }

  ParsedConfig out;
  RunConfig& cfg = out.config;
  if (const auto it = values.find("loss.preset"); it != values.end()) {
    const std::string& name = it->second.first;
    if (name == "custom") {
      cfg.train.loss = LossConfig{};
    } else {
      try {
        cfg.train.loss = LossConfig::preset(name);
      } catch (const LookupError& e) {
        throw ConfigError("config line " + std::to_string(it->second.second) + ": " + e.what());
      }
    }
  }
  for (const auto& f : fields()) {
    const auto it = values.find(f.key);
    if (it == values.end()) {
      out.notices.push_back("config: " + f.key + " not set, using default " + f.get(cfg));
      continue;
    }
    try {
      f.set(cfg, it->second.first);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(it->second.second) + " (" + f.key + "): " + e.what());
    }
  }
  cfg.train.validate();
  return out;
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

ParsedConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace vfx
