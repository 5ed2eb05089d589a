#include "vfx/optim.hpp"

#include <cmath>

namespace vfx {

template <typename S>
S global_grad_norm(std::span<const Tensor<S>> params) {
  S total = 0;
  for (const auto& p : params) {
    if (p.has_grad()) total += p.grad().square().sum();
  }
  return std::sqrt(total);
}

template <typename S>
S clip_global_norm(std::span<Tensor<S>> params, S max_norm) {
  if (!(max_norm > S(0))) throw ContractError("clip_global_norm: max_norm must be positive");
  const S norm = global_grad_norm(std::span<const Tensor<S>>(params.data(), params.size()));
  if (norm <= max_norm) return S(1);
  const S scale = max_norm / norm;
  for (auto& p : params) {
    if (p.has_grad()) p.mutable_grad() *= scale;
  }
  return scale;
}

template <typename S>
void adam_step(Buffer<S>& param, const Buffer<S>& grad, AdamMoments<S>& state, const AdamConfig<S>& cfg,
               std::int64_t step) {
  if (step < 1) throw ContractError("adam_step: step must be >= 1");
  if (state.first.size() != param.size() || state.second.size() != param.size() ||
      grad.size() != param.size()) {
    throw DimensionError("adam_step: state/grad size does not match parameter");
  }
  state.first = cfg.beta1 * state.first + (S(1) - cfg.beta1) * grad;
  state.second = cfg.beta2 * state.second + (S(1) - cfg.beta2) * grad.square();
  const S c1 = S(1) - static_cast<S>(std::pow(static_cast<double>(cfg.beta1), static_cast<double>(step)));
  const S c2 = S(1) - static_cast<S>(std::pow(static_cast<double>(cfg.beta2), static_cast<double>(step)));
  param -= cfg.lr * (state.first / c1) / ((state.second / c2).sqrt() + cfg.eps);
}

template <typename S>
Adam<S>::Adam(std::vector<Tensor<S>> params, AdamConfig<S> cfg) : params_(std::move(params)), cfg_(cfg) {
  moments_.reserve(params_.size());
  for (const auto& p : params_) {
    moments_.push_back({Buffer<S>::Zero(p.numel()), Buffer<S>::Zero(p.numel())});
  }
}

template <typename S>
void Adam<S>::step() {
  ++step_;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const Buffer<S> grad = p.has_grad() ? p.grad() : Buffer<S>::Zero(p.numel());
    adam_step(p.mutable_value(), grad, moments_[i], cfg_, step_);
  }
}

template <typename S>
void Adam<S>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template float global_grad_norm(std::span<const Tensor<float>>);
template double global_grad_norm(std::span<const Tensor<double>>);
template float clip_global_norm(std::span<Tensor<float>>, float);
template double clip_global_norm(std::span<Tensor<double>>, double);
template void adam_step(Buffer<float>&, const Buffer<float>&, AdamMoments<float>&, const AdamConfig<float>&,
                        std::int64_t);
template void adam_step(Buffer<double>&, const Buffer<double>&, AdamMoments<double>&,
                        const AdamConfig<double>&, std::int64_t);
template class Adam<float>;
template class Adam<double>;

}  // namespace vfx
