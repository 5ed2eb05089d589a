#include "vfx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vfx {
namespace {

constexpr int kMaxObjectAttempts = 10;
constexpr double kPi = std::numbers::pi;

struct Wave {
  double fx, fy, phase, amp;
};

struct Scene {
  double cy, cx, radius;
  double harm_amp[3], harm_phase[3];
  float background[3];
  float base[3];
  std::vector<Wave> texture[3];
};

Scene random_scene(Rng& rng, int height, int width, double center_row_lo, double center_row_hi) {
  Scene s;
  const double size = std::min(height, width);
  s.radius = uniform(rng, 0.18, 0.26) * size;
  s.cy = uniform(rng, center_row_lo, center_row_hi) * height;
  s.cx = uniform(rng, 0.38, 0.62) * width;
  for (int k = 0; k < 3; ++k) {
    s.harm_amp[k] = uniform(rng, -0.12, 0.12);
    s.harm_phase[k] = uniform(rng, 0.0, 2 * kPi);
  }
  for (int c = 0; c < 3; ++c) {
    s.background[c] = static_cast<float>(uniform(rng, 0.05, 0.25));
    s.base[c] = static_cast<float>(uniform(rng, 0.5, 0.85));
    for (int m = 0; m < 4; ++m) {
      s.texture[c].push_back({uniform(rng, -4, 4) / width, uniform(rng, -4, 4) / height, uniform(rng, 0, 2 * kPi), 0.05});
    }
  }
  return s;
}

VideoClip render_first_frame(const Scene& s, int length, int height, int width) {
  VideoClip clip = VideoClip::blank(length, height, width, 3);
  float* f = clip.frame_data(0);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const double dy = i - s.cy, dx = j - s.cx;
      const double theta = std::atan2(dy, dx);
      double edge = s.radius;
      for (int k = 0; k < 3; ++k) edge += s.radius * s.harm_amp[k] * std::cos((k + 2) * theta + s.harm_phase[k]);
      const double alpha = std::clamp(0.5 + edge - std::hypot(dy, dx), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        double tex = s.base[c];
        for (const Wave& w : s.texture[c]) tex += w.amp * std::sin(2 * kPi * (w.fx * j + w.fy * i) + w.phase);
        const double v = alpha * tex + (1 - alpha) * s.background[c];
        f[(c * height + i) * width + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return clip;
}

// Foreground centroid of frame t (row, col).
std::pair<double, double> centroid(const VideoClip& clip, int t) {
  const float* f = clip.frame_data(t);
  const int plane = clip.height * clip.width;
  double sr = 0, sc = 0;
  int n = 0;
  for (int i = 0; i < clip.height; ++i) {
    for (int j = 0; j < clip.width; ++j) {
      bool fg = false;
      for (int c = 0; c < clip.channels; ++c) fg = fg || std::abs(f[c * plane + i * clip.width + j] - f[c * plane]) > 0.1f;
      if (fg) {
        sr += i;
        sc += j;
        ++n;
      }
    }
  }
  if (n == 0) return {clip.height / 2.0, clip.width / 2.0};
  return {sr / n, sc / n};
}

FlowField effect_flow(const EffectSpec& spec, int t, int length, int height, int width, double cy, double cx,
                      double radius, double phase) {
  FlowField flow{height, width, Buffer<float>(height * width), Buffer<float>(height * width)};
  const double progress = length > 2 ? static_cast<double>(t) / (length - 2) : 0.0;
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const double dy = i - cy, dx = j - cx;
      double u = 0, v = 0;
      switch (spec.effect) {
        case Effect::kMelt: {
          const double speed = spec.strength * (height / 64.0) * (0.5 + progress);
          v = -speed * (1.0 + 0.4 * std::sin(2 * kPi * j / (0.6 * width) + phase));
          u = -0.3 * speed * std::sin(2 * kPi * i / (0.5 * height) + phase + 0.7 * t);
          break;
        }
        case Effect::kBloom: {
          const double k = spec.strength / (1.0 + spec.strength);
          u = -k * dx;
          v = -k * dy;
          break;
        }
        case Effect::kShrink:
          u = spec.strength * dx;
          v = spec.strength * dy;
          break;
        case Effect::kSwirl: {
          const double angle = spec.strength * std::exp(-(dx * dx + dy * dy) / (2 * radius * radius));
          const double ca = std::cos(angle), sa = std::sin(angle);
          u = ca * dx + sa * dy - dx;
          v = -sa * dx + ca * dy - dy;
          break;
        }
      }
      flow.u[i * width + j] = static_cast<float>(u);
      flow.v[i * width + j] = static_cast<float>(v);
    }
  }
  return flow;
}

void smooth_frame(float* f, int channels, int height, int width, float weight) {
  std::vector<float> tmp(f, f + static_cast<size_t>(channels) * height * width);
  for (int c = 0; c < channels; ++c) {
    const float* src = tmp.data() + static_cast<size_t>(c) * height * width;
    float* dst = f + static_cast<size_t>(c) * height * width;
    for (int i = 0; i < height; ++i) {
      for (int j = 0; j < width; ++j) {
        float acc = 0;
        for (int a = -1; a <= 1; ++a)
          for (int b = -1; b <= 1; ++b) acc += src[reflect_index(i + a, height) * width + reflect_index(j + b, width)];
        dst[i * width + j] = (1 - weight) * src[i * width + j] + weight * acc / 9.0f;
      }
    }
  }
}

}  // namespace

VideoClip VideoClip::blank(int length, int height, int width, int channels) {
  if (length < 1 || height < 1 || width < 1 || channels < 1) {
    throw ContractError("VideoClip: all dimensions must be >= 1");
  }
  VideoClip c;
  c.length = length;
  c.height = height;
  c.width = width;
  c.channels = channels;
  c.native_length = length;
  c.data = Buffer<float>::Zero(static_cast<Eigen::Index>(length) * channels * height * width);
  return c;
}

std::pair<double, double> strength_range(Effect effect) {
  switch (effect) {
    case Effect::kMelt: return {0.1, 1.5};
    case Effect::kBloom: return {0.005, 0.04};
    case Effect::kShrink: return {0.005, 0.04};
    case Effect::kSwirl: return {0.02, 0.2};
  }
  return {0, 0};
}

EffectSpec EffectSpec::make(Effect effect, int fine, std::uint64_t seed) {
  static constexpr double kLevels[4][3] = {
      {0.4, 0.7, 1.0},       // melt
      {0.01, 0.02, 0.03},    // bloom
      {0.04, 0.08, 0.12},    // swirl
      {0.01, 0.02, 0.03}};   // shrink
  if (fine < 0 || fine > 2) throw LookupError("fine level " + std::to_string(fine) + " outside [0, 3)");
  EffectSpec s;
  s.effect = effect;
  s.fine = fine;
  s.strength = kLevels[static_cast<int>(effect)][fine];
  s.seed = seed;
  return s;
}

void EffectSpec::validate() const {
  const auto [lo, hi] = strength_range(effect);
  if (!(strength >= lo && strength <= hi)) {
    throw ContractError(std::string(effect_name(effect)) + " strength " + std::to_string(strength) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  if (fine < 0) throw ContractError("fine level must be >= 0");
}

void advect(const float* src, int channels, int height, int width, const FlowField& flow, float* dst) {
  const int plane = height * width;
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const int q = i * width + j;
      const float yc = std::clamp(static_cast<float>(i) + flow.v[q], 0.0f, static_cast<float>(height - 1));
      const float xc = std::clamp(static_cast<float>(j) + flow.u[q], 0.0f, static_cast<float>(width - 1));
      const int y0 = std::min(static_cast<int>(yc), std::max(height - 2, 0));
      const int x0 = std::min(static_cast<int>(xc), std::max(width - 2, 0));
      const int y1 = std::min(y0 + 1, height - 1), x1 = std::min(x0 + 1, width - 1);
      const float fy = yc - y0, fx = xc - x0;
      for (int c = 0; c < channels; ++c) {
        const float* s = src + c * plane;
        const float top = (1 - fx) * s[y0 * width + x0] + fx * s[y0 * width + x1];
        const float bot = (1 - fx) * s[y1 * width + x0] + fx * s[y1 * width + x1];
        dst[c * plane + q] = std::clamp((1 - fy) * top + fy * bot, 0.0f, 1.0f);
      }
    }
  }
}

GeneratedClip generate_clip(const EffectSpec& spec, int length, int height, int width) {
  spec.validate();
  if (length < 2) throw ContractError("generate_clip: length must be >= 2");
  Rng rng(spec.seed);
  const bool melt = spec.effect == Effect::kMelt;
  GeneratedClip out;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxObjectAttempts) {
      throw ContractError("generate_clip: no non-degenerate object after " + std::to_string(kMaxObjectAttempts) +
                          " attempts");
    }
    const Scene scene = random_scene(rng, height, width, melt ? 0.28 : 0.4, melt ? 0.4 : 0.6);
    out.clip = render_first_frame(scene, length, height, width);
    if (foreground_area(out.clip, 0) >= 4) break;
  }
  const double phase = uniform(rng, 0, 2 * kPi);
  const auto [cy, cx] = centroid(out.clip, 0);
  const double radius = std::sqrt(foreground_area(out.clip, 0) / kPi);
  for (int t = 0; t + 1 < length; ++t) {
    out.flows.push_back(effect_flow(spec, t, length, height, width, cy, cx, radius, phase));
    advect(out.clip.frame_data(t), 3, height, width, out.flows.back(), out.clip.frame_data(t + 1));
    if (melt) {
      const float weight = static_cast<float>(0.08 * t / std::max(1, length - 2));
      smooth_frame(out.clip.frame_data(t + 1), 3, height, width, weight);
    }
  }
  out.clip.category = {spec.effect, spec.fine};
  out.clip.seed = spec.seed;
  out.clip.native_length = length;
  return out;
}

GeneratedClip generate_translation_clip(int length, int height, int width, int shift, std::uint64_t seed) {
  if (length < 2) throw ContractError("generate_translation_clip: length must be >= 2");
  Rng rng(seed);
  const Scene scene = random_scene(rng, height, width, 0.3, 0.4);
  GeneratedClip out;
  out.clip = render_first_frame(scene, length, height, width);
  FlowField flow{height, width, Buffer<float>::Zero(height * width),
                 Buffer<float>::Constant(height * width, static_cast<float>(-shift))};
  for (int t = 0; t + 1 < length; ++t) {
    out.flows.push_back(flow);
    advect(out.clip.frame_data(t), 3, height, width, flow, out.clip.frame_data(t + 1));
  }
  out.clip.category = {Effect::kMelt, 0};
  out.clip.seed = seed;
  return out;
}

VideoClip sample_sequence(const VideoClip& clip, int length, int skip, int start, bool flip_h, bool flip_v) {
  if (skip < 1) throw ContractError("sample_sequence: skip " + std::to_string(skip) + " must be >= 1");
  if (length < 1) throw ContractError("sample_sequence: length must be >= 1");
  if (start < 0) throw ContractError("sample_sequence: start " + std::to_string(start) + " must be >= 0");
  const int last = start + (length - 1) * skip;
  if (last >= clip.length) {
    throw ContractError("sample_sequence: start + (T-1)*skip = " + std::to_string(last) + " exceeds last frame index " +
                        std::to_string(clip.length - 1));
  }
  VideoClip out = VideoClip::blank(length, clip.height, clip.width, clip.channels);
  out.category = clip.category;
  out.native_length = clip.native_length;
  out.seed = clip.seed;
  const int h = clip.height, w = clip.width;
  for (int t = 0; t < length; ++t) {
    const float* src = clip.frame_data(start + t * skip);
    float* dst = out.frame_data(t);
    for (int c = 0; c < clip.channels; ++c) {
      for (int i = 0; i < h; ++i) {
        const int si = flip_v ? h - 1 - i : i;
        for (int j = 0; j < w; ++j) {
          const int sj = flip_h ? w - 1 - j : j;
          dst[(c * h + i) * w + j] = src[(c * h + si) * w + sj];
        }
      }
    }
  }
  return out;
}

VideoClip random_sequence(const VideoClip& clip, int length, int max_skip, Rng& rng) {
  const int skip_cap = length > 1 ? std::min(max_skip, (clip.length - 1) / (length - 1)) : 1;
  if (skip_cap < 1) {
    throw ContractError("random_sequence: clip of " + std::to_string(clip.length) + " frames cannot supply " +
                        std::to_string(length));
  }
  const int skip = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(skip_cap)));
  const int starts = clip.length - (length - 1) * skip;
  const int start = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(starts)));
  const bool fh = uniform01(rng) < 0.5;
  const bool fv = uniform01(rng) < 0.5;
  return sample_sequence(clip, length, skip, start, fh, fv);
}

Split make_split(size_t count, std::uint64_t seed, double train_ratio, double val_ratio) {
  if (count < 10) throw ContractError("make_split: need at least 10 clips, got " + std::to_string(count));
  std::vector<size_t> idx(count);
  for (size_t i = 0; i < count; ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = count - 1; i > 0; --i) std::swap(idx[i], idx[uniform_index(rng, i + 1)]);
  const auto n_train = static_cast<size_t>(std::llround(train_ratio * static_cast<double>(count)));
  const auto n_val = static_cast<size_t>(std::llround(val_ratio * static_cast<double>(count)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

EffectSpec corpus_spec(const CorpusConfig& cfg, size_t index) {
  if (cfg.clips_per_effect < 1 || cfg.fine_count < 1 || cfg.fine_count > 3 || cfg.effects.empty()) {
    throw ContractError("generate_corpus: need >= 1 clip per effect and 1..3 fine levels");
  }
  const size_t per = static_cast<size_t>(cfg.clips_per_effect);
  if (index >= per * cfg.effects.size()) throw ContractError("corpus_spec: clip index out of range");
  return EffectSpec::make(cfg.effects[index / per], static_cast<int>(index % per) % cfg.fine_count,
                          derive_seed(cfg.seed, index));
}

std::vector<VideoClip> generate_corpus(const CorpusConfig& cfg) {
  std::vector<VideoClip> out;
  const size_t count = static_cast<size_t>(std::max(cfg.clips_per_effect, 0)) * cfg.effects.size();
  for (size_t i = 0; i < std::max<size_t>(count, 1); ++i) {
    out.push_back(generate_clip(corpus_spec(cfg, i), cfg.native_length, cfg.height, cfg.width).clip);
  }
  return out;
}

int foreground_area(const VideoClip& clip, int t, float threshold) {
  const float* f = clip.frame_data(t);
  const int plane = clip.height * clip.width;
  int n = 0;
  for (int q = 0; q < plane; ++q) {
    bool fg = false;
    for (int c = 0; c < clip.channels; ++c) fg = fg || std::abs(f[c * plane + q] - f[c * plane]) > threshold;
    n += fg;
  }
  return n;
}

double foreground_centroid_row(const VideoClip& clip, int t, float threshold) {
  const float* f = clip.frame_data(t);
  const int plane = clip.height * clip.width;
  double rows = 0;
  int n = 0;
  for (int q = 0; q < plane; ++q) {
    bool fg = false;
    for (int c = 0; c < clip.channels; ++c) fg = fg || std::abs(f[c * plane + q] - f[c * plane]) > threshold;
    if (fg) {
      rows += q / clip.width;
      ++n;
    }
  }
  return n ? rows / n : 0.0;
}

int effect_label(Effect e) { return static_cast<int>(e); }

template <typename S>
std::vector<LabeledClip> same_start_probe_set(const std::vector<Tensor<S>>& first_frames,
                                              const std::map<Effect, const PredictorModel<S>*>& models,
                                              const std::vector<Effect>& effects, int length, int fine) {
  if (length < 2) throw ContractError("same_start_probe_set: length must be >= 2");
  for (Effect e : effects) {
    auto it = models.find(e);
    if (it == models.end() || !it->second) {
      throw ConfigError("same_start_probe_set: no trained model for effect '" + std::string(effect_name(e)) + "'");
    }
  }
  NoGradGuard guard;
  std::vector<LabeledClip> out;
  for (const auto& frame : first_frames) {
    for (Effect e : effects) {
      const EffectCategory cat{e, fine};
      Rng rng(0);
      auto roll = models.at(e)->rollout(frame, std::span(&cat, 1), length - 1, nullptr, 0.0, rng);
      std::vector<Tensor<S>> frames{frame};
      frames.insert(frames.end(), roll.frames.begin(), roll.frames.end());
      LabeledClip lc{clip_from_frames(frames), effect_label(e)};
      lc.clip.category = cat;
      out.push_back(std::move(lc));
    }
  }
  return out;
}

template std::vector<LabeledClip> same_start_probe_set(const std::vector<Tensor<float>>&,
                                                       const std::map<Effect, const PredictorModel<float>*>&,
                                                       const std::vector<Effect>&, int, int);
template std::vector<LabeledClip> same_start_probe_set(const std::vector<Tensor<double>>&,
                                                       const std::map<Effect, const PredictorModel<double>*>&,
                                                       const std::vector<Effect>&, int, int);

}  // namespace vfx
