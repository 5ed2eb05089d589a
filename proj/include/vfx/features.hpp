#pragma once

#include "vfx/ops.hpp"

#include <cstdint>
#include <vector>

namespace vfx {

struct StyleNetConfig {
  int in_channels = 3;
  std::vector<int> channels{16, 32, 64, 64, 64};
  int kernel = 3;
  std::uint64_t seed = 1234;
};

/// Frozen random conv net standing in for a pretrained image feature
/// extractor. Each stage is a bias-free conv, ReLU and 2x2 average pool; the
/// pooled output of every stage is one feature layer.
template <typename S>
class StyleFeatureNet {
 public:
  explicit StyleFeatureNet(StyleNetConfig cfg = {});

  const StyleNetConfig& config() const { return cfg_; }
  int layer_count() const { return static_cast<int>(weights_.size()); }

  /// Stage outputs; layer l has shape N x channels[l] x H/2^(l+1) x W/2^(l+1).
  std::vector<Tensor<S>> features(const Tensor<S>& frame) const;

 private:
  StyleNetConfig cfg_;
  std::vector<Tensor<S>> weights_;
};

struct FlowConfig {
  int scales = 3;
  int iterations = 20;
  double smoothness = 0.01;
  /// Bound on |u| and |v| in full-resolution pixels.
  double max_displacement = 8.0;
};

/// Per-scale flow fields, finest first. Entry s is N x 2 x H/2^s x W/2^s
/// holding (u rightward, v downward) displacements in that scale's pixels.
template <typename S>
struct FlowFeaturePyramid {
  std::vector<Tensor<S>> scales;
  const Tensor<S>& flow() const { return scales.front(); }
};

/// Luma for 3-channel frames; single-channel frames pass through.
template <typename S> Tensor<S> to_grayscale(const Tensor<S>& frame);

/// Differentiable coarse-to-fine brightness-constancy flow solver. The
/// returned flow maps frame_a pixels p to frame_b pixels p + flow(p).
template <typename S>
class FlowExtractor {
 public:
  explicit FlowExtractor(FlowConfig cfg = {});

  const FlowConfig& config() const { return cfg_; }
  FlowFeaturePyramid<S> operator()(const Tensor<S>& frame_a, const Tensor<S>& frame_b) const;

 private:
  FlowConfig cfg_;
  Tensor<S> dx_, dy_, neighbor_avg_;
};

}  // namespace vfx
