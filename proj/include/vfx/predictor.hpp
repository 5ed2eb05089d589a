#pragma once

#include "vfx/effect.hpp"
#include "vfx/params.hpp"
#include "vfx/pixel_transformer.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace vfx {

struct PredictorConfig {
  int height = 64;
  int width = 64;
  int channels = 3;
  std::vector<int> encoder_channels{32, 64, 128};
  std::vector<int> decoder_channels{64, 32, 32};
  int stage_kernel = 5;
  int lstm_kernel = 3;
  int embedding_dim = 8;
  int fine_count = 3;
  Effect effect = Effect::kMelt;
  int kappa = 2;
  bool skip_connections = true;
  /// Ablation: predict RGB directly instead of kernels.
  bool direct_rgb = false;
  std::uint64_t seed = 1;
};

template <typename S>
struct LstmState {
  Tensor<S> h;
  Tensor<S> c;
};

template <typename S>
struct RecurrentState {
  std::vector<LstmState<S>> cells;
};

/// Convolutional LSTM: all four gates from one convolution over [x, h].
template <typename S>
class ConvLstmCell {
 public:
  ConvLstmCell() = default;
  ConvLstmCell(ParameterList<S>& params, const std::string& name, int in_channels, int hidden, int kernel, Rng& rng);

  LstmState<S> operator()(const Tensor<S>& x, const LstmState<S>& state) const;
  int hidden() const { return hidden_; }

 private:
  Conv<S> gates_;
  int hidden_ = 0;
};

template <typename S>
struct StepOutput {
  Tensor<S> kernel_logits;  // N x (2k+1)^2 x H x W (transformer mode)
  Tensor<S> mask_logits;    // N x 1 x H x W (transformer mode)
  Tensor<S> rgb;            // N x C x H x W (direct_rgb ablation)
  RecurrentState<S> state;
};

template <typename S>
struct RolloutResult {
  std::vector<Tensor<S>> frames;   // y_1 .. y_T
  std::vector<Tensor<S>> inputs;   // frame each step was conditioned on
  std::vector<Tensor<S>> kernels;  // kernel weights per step (transformer mode)
  std::vector<Tensor<S>> masks;    // background mask per step (transformer mode)
  std::vector<bool> teacher_forced;
};

/// Hourglass conv-LSTM predicting per-pixel transformation kernels and a
/// background mask for each frame of a rollout.
template <typename S>
class PredictorModel {
 public:
  explicit PredictorModel(PredictorConfig cfg);

  const PredictorConfig& config() const { return cfg_; }
  ParameterList<S>& parameters() { return params_; }
  const ParameterList<S>& parameters() const { return params_; }

  int lstm_count() const { return static_cast<int>(cells_.size()); }
  RecurrentState<S> init_state(int batch) const;

  /// One recurrent step. `categories` has one entry per batch item, or one
  /// entry shared by the whole batch.
  StepOutput<S> step(const Tensor<S>& frame, std::span<const EffectCategory> categories,
                     const RecurrentState<S>& state) const;

  /// Next frame from the conditioning frame and a step's predictions.
  Tensor<S> advance(const Tensor<S>& frame, const StepOutput<S>& out) const;

  /// Generates y_1..y_T from y_0 = first_frame. Before step i the previous
  /// frame is replaced by teacher frame i-1 with probability tf_prob.
  RolloutResult<S> rollout(const Tensor<S>& first_frame, std::span<const EffectCategory> categories, int steps,
                           const std::vector<Tensor<S>>* teacher_frames, double tf_prob, Rng& rng) const;

 private:
  Tensor<S> embed(std::span<const EffectCategory> categories, int batch) const;

  PredictorConfig cfg_;
  ParameterList<S> params_;
  std::vector<Conv<S>> encoder_;
  std::vector<Conv<S>> decoder_;
  std::vector<ConvLstmCell<S>> cells_;  // encoder stages, bottleneck, decoder stages
  Tensor<S> embedding_;
  Conv<S> kernel_head_;
  Conv<S> mask_head_;
  Conv<S> rgb_head_;
  std::vector<Shape> state_shapes_;
};

}  // namespace vfx
