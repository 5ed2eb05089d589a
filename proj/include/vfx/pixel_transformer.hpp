#pragma once

#include "vfx/ops.hpp"

namespace vfx {

/// Per-pixel convex weights over a (2*kappa+1)^2 window, stored N x K^2 x H x W.
/// Tap t = (k + kappa) * (2*kappa + 1) + (l + kappa) weights the input pixel at
/// (i - k, j - l).
template <typename S>
class KernelField {
 public:
  /// Validates nonnegativity and per-pixel unit sum (tolerance 1e-5).
  KernelField(Tensor<S> weights, int kappa);

  const Tensor<S>& weights() const { return weights_; }
  int kappa() const { return kappa_; }
  int taps() const { return (2 * kappa_ + 1) * (2 * kappa_ + 1); }
  int tap_index(int k, int l) const { return (k + kappa_) * (2 * kappa_ + 1) + (l + kappa_); }

 private:
  KernelField(Tensor<S> weights, int kappa, bool /*trusted*/) : weights_(std::move(weights)), kappa_(kappa) {}
  template <typename U>
  friend KernelField<U> kernel_field_from_logits(const Tensor<U>& logits, int kappa);

  Tensor<S> weights_;
  int kappa_;
};

/// N x 1 x H x W blend weights in [0,1]; 1 copies the previous frame.
template <typename S>
class BackgroundMask {
 public:
  explicit BackgroundMask(Tensor<S> values);
  const Tensor<S>& values() const { return values_; }

 private:
  Tensor<S> values_;
};

/// Per-pixel softmax over the tap axis of N x (2*kappa+1)^2 x H x W logits.
template <typename S>
KernelField<S> kernel_field_from_logits(const Tensor<S>& logits, int kappa = 2);

/// out(i,j,c) = sum_{k,l in [-kappa,kappa]} theta_ij(k,l) * x(i-k, j-l, c), with
/// edge-inclusive symmetric padding. Differentiable in both image and kernels.
template <typename S>
Tensor<S> apply_kernels(const Tensor<S>& image, const KernelField<S>& kernels);

/// mask * prev + (1 - mask) * transformed, broadcasting the mask over channels.
template <typename S>
Tensor<S> composite(const Tensor<S>& prev_frame, const Tensor<S>& transformed, const BackgroundMask<S>& mask);

}  // namespace vfx
