#pragma once

#include "vfx/ops.hpp"
#include "vfx/random.hpp"

#include <string>
#include <utility>
#include <vector>

namespace vfx {

/// Ordered, named trainable tensors of one network.
template <typename S>
class ParameterList {
 public:
  Tensor<S> add(std::string name, Tensor<S> t) {
    entries_.emplace_back(std::move(name), t);
    return t;
  }

  /// Uniform(-b, b) with b = gain * sqrt(3 / fan_in); gain sqrt(2) is He-uniform.
  Tensor<S> add_uniform(std::string name, Shape shape, int fan_in, Rng& rng, double gain = 1.0) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(std::max(fan_in, 1)));
    Buffer<S> v(shape.numel());
    for (auto& x : v) x = static_cast<S>(uniform(rng, -bound, bound));
    return add(std::move(name), Tensor<S>(std::move(shape), std::move(v), true));
  }

  Tensor<S> add_constant(std::string name, Shape shape, S value) {
    return add(std::move(name), Tensor<S>::full(std::move(shape), value, true));
  }

  const std::vector<std::pair<std::string, Tensor<S>>>& named() const { return entries_; }

  std::vector<Tensor<S>> tensors() const {
    std::vector<Tensor<S>> out;
    out.reserve(entries_.size());
    for (const auto& [_, t] : entries_) out.push_back(t);
    return out;
  }

  Eigen::Index count() const {
    Eigen::Index n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  /// Sets every value to zero (used by ablations and tests).
  void fill_zero() {
    for (auto& [_, t] : entries_) t.mutable_value().setZero();
  }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> entries_;
};

/// Convolution weights plus bias, applied with symmetric "same" padding.
template <typename S>
struct Conv {
  Tensor<S> weight;
  Tensor<S> bias;
  int stride = 1;
  PadMode pad = PadMode::kSymmetric;

  static Conv make(ParameterList<S>& params, const std::string& name, int in, int out, int kernel, int stride,
                   Rng& rng, double gain = std::sqrt(2.0), PadMode pad = PadMode::kSymmetric) {
    Conv c;
    c.weight = params.add_uniform(name + ".weight", Shape{out, in, kernel, kernel}, in * kernel * kernel, rng, gain);
    c.bias = params.add_constant(name + ".bias", Shape{out}, S(0));
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

}  // namespace vfx
