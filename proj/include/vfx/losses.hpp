#pragma once

#include "vfx/features.hpp"
#include "vfx/params.hpp"
#include "vfx/predictor.hpp"

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vfx {

inline constexpr double kProbabilityEpsilon = 1e-7;

// Per-frame terms. Batched inputs are averaged over the batch.
template <typename S> Tensor<S> mse_loss(const Tensor<S>& y, const Tensor<S>& target);
/// Sum over layers of the squared Frobenius distance between Gram matrices.
template <typename S> Tensor<S> gram_distance(const std::vector<Tensor<S>>& a, const std::vector<Tensor<S>>& b);
/// Sum over layers of the per-element mean squared difference.
template <typename S> Tensor<S> feature_distance(const std::vector<Tensor<S>>& a, const std::vector<Tensor<S>>& b);

template <typename S> Tensor<S> style_loss(const StyleFeatureNet<S>& net, const Tensor<S>& y, const Tensor<S>& s);
template <typename S> Tensor<S> content_loss(const StyleFeatureNet<S>& net, const Tensor<S>& y, const Tensor<S>& s);

enum class FlowLossMode { kDirect, kGram };

template <typename S>
Tensor<S> flow_loss(const FlowExtractor<S>& flow, const Tensor<S>& y_prev, const Tensor<S>& y, const Tensor<S>& s_prev,
                    const Tensor<S>& s, FlowLossMode mode);

struct DiscriminatorConfig {
  int in_channels = 3;
  std::vector<int> channels{32, 64, 128, 256};
  int kernel = 3;
  double leak = 0.2;
  std::uint64_t seed = 7;
};

/// Strided conv stack with leaky ReLU, global pooling and a sigmoid head.
template <typename S>
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig cfg);

  const DiscriminatorConfig& config() const { return cfg_; }
  ParameterList<S>& parameters() { return params_; }
  const ParameterList<S>& parameters() const { return params_; }

  /// N x 1 x 1 x 1 logits.
  Tensor<S> logits(const Tensor<S>& x) const;
  /// N x 1 x 1 x 1 probabilities that `x` is real.
  Tensor<S> operator()(const Tensor<S>& x) const { return sigmoid(logits(x)); }

 private:
  DiscriminatorConfig cfg_;
  ParameterList<S> params_;
  std::vector<Conv<S>> stages_;
  Conv<S> head_;
};

/// -[log p_real + log(1 - p_fake)] / 2, batch mean, probabilities clamped at epsilon.
template <typename S> Tensor<S> discriminator_bce(const Tensor<S>& p_real, const Tensor<S>& p_fake);
/// -log p_fake, batch mean.
template <typename S> Tensor<S> generator_bce(const Tensor<S>& p_fake);

template <typename S>
struct AdversarialLosses {
  Tensor<S> d_loss;
  Tensor<S> g_loss;
};

template <typename S>
AdversarialLosses<S> adversarial_losses(const Discriminator<S>& d, const Tensor<S>& real, const Tensor<S>& fake);

struct LossConfig {
  std::string name = "custom";
  double mse = 0;
  double content = 0;
  double style = 0;
  double flow = 0;
  double adversarial_frame = 0;
  double adversarial_flow = 0;
  FlowLossMode flow_mode = FlowLossMode::kGram;

  /// One of MSE, MSE+GAN, GAN, C+S, OF+S.
  static LossConfig preset(std::string_view name);
  void validate(bool require_active = true) const;

  bool needs_style_net() const { return content > 0 || style > 0; }
  bool needs_flow() const { return flow > 0 || adversarial_flow > 0; }
  bool needs_frame_discriminator() const { return adversarial_frame > 0; }
  bool needs_flow_discriminator() const { return adversarial_flow > 0; }
};

inline constexpr std::string_view kLossPresets[] = {"MSE", "MSE+GAN", "GAN", "C+S", "OF+S"};

template <typename S>
struct LossModules {
  const StyleFeatureNet<S>* style_net = nullptr;
  const FlowExtractor<S>* flow = nullptr;
  const Discriminator<S>* frame_discriminator = nullptr;
  const Discriminator<S>* flow_discriminator = nullptr;
};

template <typename S>
struct LossBreakdown {
  Tensor<S> total;
  /// Weighted contribution of each active term, in a fixed order.
  std::vector<std::pair<std::string, double>> terms;
};

/// Weighted loss averaged over generated frames y_1..y_{T-1} against source
/// frames s_0..s_{T-1}. The motion terms pair each generated frame with the
/// frame it was conditioned on.
template <typename S>
LossBreakdown<S> total_loss(const LossConfig& cfg, const RolloutResult<S>& rollout, const std::vector<Tensor<S>>& source,
                            const LossModules<S>& modules);

}  // namespace vfx
