#pragma once

#include "vfx/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace vfx {

/// Global L2 norm over the gradients of `params`; tensors without a
/// gradient contribute zero.
template <typename S>
S global_grad_norm(std::span<const Tensor<S>> params);

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when already within bounds).
template <typename S>
S clip_global_norm(std::span<Tensor<S>> params, S max_norm);

template <typename S>
struct AdamConfig {
  S lr = S(1e-5);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

template <typename S>
struct AdamMoments {
  Buffer<S> first;
  Buffer<S> second;
};

/// One bias-corrected Adam update of `param` in place; `step` is 1-based.
template <typename S>
void adam_step(Buffer<S>& param, const Buffer<S>& grad, AdamMoments<S>& state, const AdamConfig<S>& cfg,
               std::int64_t step);

/// Adam over a fixed parameter list.
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<S>> params, AdamConfig<S> cfg);

  void step();
  void zero_grad();

  std::int64_t steps_taken() const { return step_; }
  void set_steps_taken(std::int64_t t) { step_ = t; }
  const AdamConfig<S>& config() const { return cfg_; }
  void set_learning_rate(S lr) { cfg_.lr = lr; }
  std::vector<AdamMoments<S>>& moments() { return moments_; }
  const std::vector<AdamMoments<S>>& moments() const { return moments_; }
  std::vector<Tensor<S>>& params() { return params_; }

 private:
  std::vector<Tensor<S>> params_;
  std::vector<AdamMoments<S>> moments_;
  AdamConfig<S> cfg_;
  std::int64_t step_ = 0;
};

}  // namespace vfx
