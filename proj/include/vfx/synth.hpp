#pragma once

#include "vfx/effect.hpp"
#include "vfx/predictor.hpp"
#include "vfx/random.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace vfx {

/// Frames stored frame-major, then channel, row, column; values in [0,1].
struct VideoClip {
  int length = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  Buffer<float> data;
  EffectCategory category;
  int native_length = 0;
  std::uint64_t seed = 0;

  Eigen::Index frame_size() const { return static_cast<Eigen::Index>(channels) * height * width; }
  float* frame_data(int t) { return data.data() + t * frame_size(); }
  const float* frame_data(int t) const { return data.data() + t * frame_size(); }

  static VideoClip blank(int length, int height, int width, int channels);
};

/// 1 x C x H x W copy of frame t.
template <typename S>
Tensor<S> frame_tensor(const VideoClip& clip, int t) {
  if (t < 0 || t >= clip.length) throw ContractError("frame index " + std::to_string(t) + " outside clip");
  const Eigen::Index n = clip.frame_size();
  Buffer<S> b = Eigen::Map<const Buffer<float>>(clip.frame_data(t), n).template cast<S>();
  return Tensor<S>(Shape{1, clip.channels, clip.height, clip.width}, std::move(b));
}

template <typename S>
std::vector<Tensor<S>> clip_frames(const VideoClip& clip) {
  std::vector<Tensor<S>> out;
  for (int t = 0; t < clip.length; ++t) out.push_back(frame_tensor<S>(clip, t));
  return out;
}

/// Stacks batch item `item` of each N x C x H x W frame into a clip.
template <typename S>
VideoClip clip_from_frames(const std::vector<Tensor<S>>& frames, int item = 0) {
  if (frames.empty()) throw ContractError("clip_from_frames: no frames");
  const Shape& s = frames.front().shape();
  VideoClip clip = VideoClip::blank(static_cast<int>(frames.size()), s[2], s[3], s[1]);
  const Eigen::Index n = clip.frame_size();
  for (int t = 0; t < clip.length; ++t) {
    if (frames[static_cast<size_t>(t)].shape() != s) throw DimensionError("clip_from_frames: frame shapes differ");
    clip.data.segment(t * n, n) = frames[static_cast<size_t>(t)].value().segment(item * n, n).template cast<float>();
  }
  clip.native_length = clip.length;
  return clip;
}

/// Sampling offsets: frame t+1 at pixel p equals frame t sampled at p + (u, v).
struct FlowField {
  int height = 0;
  int width = 0;
  Buffer<float> u;
  Buffer<float> v;
};

struct EffectSpec {
  Effect effect = Effect::kMelt;
  int fine = 0;
  /// Per-effect magnitude: melt speed (px/frame at 64 px), bloom/shrink
  /// scale rate per frame, swirl peak angle per frame (radians).
  double strength = 0.0;
  std::uint64_t seed = 0;

  /// Strength from the fine level (0, 1 or 2).
  static EffectSpec make(Effect effect, int fine, std::uint64_t seed);
  void validate() const;
};

/// Valid strength range for an effect.
std::pair<double, double> strength_range(Effect effect);

struct GeneratedClip {
  VideoClip clip;
  std::vector<FlowField> flows;  // flows[t] maps frame t to frame t+1
};

GeneratedClip generate_clip(const EffectSpec& spec, int length, int height, int width);

/// A textured object translated straight down by `shift` whole pixels per frame.
GeneratedClip generate_translation_clip(int length, int height, int width, int shift, std::uint64_t seed);

/// Samples frames start, start+skip, ...; flips apply to every frame.
VideoClip sample_sequence(const VideoClip& clip, int length, int skip, int start, bool flip_h, bool flip_v);

/// Draws a random valid (skip, start, flips) and samples.
VideoClip random_sequence(const VideoClip& clip, int length, int max_skip, Rng& rng);

/// Bilinear advection with edge clamping, matching the generator's rule.
void advect(const float* src, int channels, int height, int width, const FlowField& flow, float* dst);

struct Split {
  std::vector<size_t> train;
  std::vector<size_t> val;
  std::vector<size_t> test;
};

/// Clip-level 80/10/10 shuffle split.
Split make_split(size_t count, std::uint64_t seed, double train_ratio = 0.8, double val_ratio = 0.1);

struct CorpusConfig {
  int clips_per_effect = 200;
  int native_length = 24;
  int fine_count = 3;
  int height = 64;
  int width = 64;
  std::vector<Effect> effects{kAllEffects.begin(), kAllEffects.end()};
  std::uint64_t seed = 1;
};

/// Spec of clip `index` in the corpus layout below.
EffectSpec corpus_spec(const CorpusConfig& cfg, size_t index);

/// Clip i uses seed derive_seed(cfg.seed, i); effects are laid out in blocks.
std::vector<VideoClip> generate_corpus(const CorpusConfig& cfg);

/// Foreground pixel count: any channel differs from the corner colour by more than `threshold`.
int foreground_area(const VideoClip& clip, int t, float threshold = 0.1f);
/// Mean row of foreground pixels.
double foreground_centroid_row(const VideoClip& clip, int t, float threshold = 0.1f);

struct LabeledClip {
  VideoClip clip;
  int label = 0;
};

/// For every first frame, one generated clip per effect, labelled by the
/// effect's index in kAllEffects.
template <typename S>
std::vector<LabeledClip> same_start_probe_set(const std::vector<Tensor<S>>& first_frames,
                                              const std::map<Effect, const PredictorModel<S>*>& models,
                                              const std::vector<Effect>& effects, int length, int fine = 0);

int effect_label(Effect e);

}  // namespace vfx
