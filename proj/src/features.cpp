#include "vfx/features.hpp"

#include "vfx/random.hpp"

namespace vfx {

template <typename S>
StyleFeatureNet<S>::StyleFeatureNet(StyleNetConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.channels.empty() || cfg_.kernel < 1 || cfg_.kernel % 2 == 0) {
    throw ContractError("StyleNetConfig: need at least one stage and an odd kernel");
  }
  Rng rng(cfg_.seed);
  int in = cfg_.in_channels;
  for (int out : cfg_.channels) {
    const int fan_in = in * cfg_.kernel * cfg_.kernel;
    const double bound = std::sqrt(6.0 / fan_in);
    Buffer<S> w(static_cast<Eigen::Index>(out) * fan_in);
    for (auto& v : w) v = static_cast<S>(uniform(rng, -bound, bound));
    weights_.emplace_back(Shape{out, in, cfg_.kernel, cfg_.kernel}, std::move(w), false);
    in = out;
  }
}

template <typename S>
std::vector<Tensor<S>> StyleFeatureNet<S>::features(const Tensor<S>& frame) const {
  if (frame.rank() != 4 || frame.dim(1) != cfg_.in_channels) {
    throw DimensionError("style features: expected N x " + std::to_string(cfg_.in_channels) + " x H x W, got " +
                         frame.shape().str());
  }
  std::vector<Tensor<S>> layers;
  Tensor<S> x = frame;
  for (const auto& w : weights_) {
    x = avg_pool2x2(relu(conv2d(x, w, Tensor<S>())));
    layers.push_back(x);
  }
  return layers;
}

template <typename S>
Tensor<S> to_grayscale(const Tensor<S>& frame) {
  if (frame.rank() != 4 || (frame.dim(1) != 1 && frame.dim(1) != 3)) {
    throw DimensionError("to_grayscale: expected 1 or 3 channels, got " + frame.shape().str());
  }
  if (frame.dim(1) == 1) return frame;
  static const Tensor<S> luma = Tensor<S>::from(Shape{1, 3, 1, 1}, {S(0.299), S(0.587), S(0.114)});
  return conv2d(frame, luma, Tensor<S>());
}

template <typename S>
FlowExtractor<S>::FlowExtractor(FlowConfig cfg) : cfg_(cfg) {
  if (cfg_.scales < 1 || cfg_.iterations < 1 || cfg_.smoothness <= 0 || cfg_.max_displacement <= 0) {
    throw ContractError("FlowConfig: scales, iterations, smoothness and max_displacement must be positive");
  }
  dx_ = Tensor<S>::from(Shape{1, 1, 1, 3}, {S(-0.5), S(0), S(0.5)});
  dy_ = Tensor<S>::from(Shape{1, 1, 3, 1}, {S(-0.5), S(0), S(0.5)});
  const S e = S(1) / S(6), d = S(1) / S(12);
  neighbor_avg_ = Tensor<S>::from(Shape{1, 1, 3, 3}, {d, e, d, e, S(0), e, d, e, d});
}

template <typename S>
FlowFeaturePyramid<S> FlowExtractor<S>::operator()(const Tensor<S>& frame_a, const Tensor<S>& frame_b) const {
  if (frame_a.shape() != frame_b.shape()) {
    throw DimensionError("flow: frame shapes differ " + frame_a.shape().str() + " vs " + frame_b.shape().str());
  }
  const int div = 1 << (cfg_.scales - 1);
  if (frame_a.dim(2) % div || frame_a.dim(3) % div) {
    throw DimensionError("flow: frame size " + frame_a.shape().str() + " not divisible by " + std::to_string(div));
  }
  std::vector<Tensor<S>> pyr_a{to_grayscale(frame_a)}, pyr_b{to_grayscale(frame_b)};
  for (int s = 1; s < cfg_.scales; ++s) {
    pyr_a.push_back(avg_pool2x2(pyr_a.back()));
    pyr_b.push_back(avg_pool2x2(pyr_b.back()));
  }

  const S alpha = static_cast<S>(cfg_.smoothness);
  FlowFeaturePyramid<S> result;
  result.scales.resize(static_cast<size_t>(cfg_.scales));
  Tensor<S> flow;
  for (int s = cfg_.scales - 1; s >= 0; --s) {
    const Tensor<S>& a = pyr_a[static_cast<size_t>(s)];
    const Tensor<S>& b = pyr_b[static_cast<size_t>(s)];
    const int n = a.dim(0), h = a.dim(2), w = a.dim(3);
    flow = flow.defined() ? affine(upsample_nearest2x(flow), S(2), S(0)) : Tensor<S>::zeros(Shape{n, 2, h, w});

    const Tensor<S> warped = warp_bilinear(b, flow);
    const Tensor<S> mid = affine(a + warped, S(0.5), S(0));
    const Tensor<S> ix = conv2d(mid, dx_, Tensor<S>());
    const Tensor<S> iy = conv2d(mid, dy_, Tensor<S>());
    const Tensor<S> it = warped - a;
    const Tensor<S> denom = affine(square(ix) + square(iy), S(1), alpha);

    const Tensor<S> u0 = slice(flow, 1, 0, 1);
    const Tensor<S> v0 = slice(flow, 1, 1, 1);
    Tensor<S> u = u0, v = v0;
    for (int k = 0; k < cfg_.iterations; ++k) {
      const Tensor<S> ub = conv2d(u, neighbor_avg_, Tensor<S>());
      const Tensor<S> vb = conv2d(v, neighbor_avg_, Tensor<S>());
      const Tensor<S> step = (ix * (ub - u0) + iy * (vb - v0) + it) / denom;
      u = ub - ix * step;
      v = vb - iy * step;
    }
    const S bound = static_cast<S>(cfg_.max_displacement / (1 << s));
    flow = clamp(concat<S>({u, v}, 1), -bound, bound);
    result.scales[static_cast<size_t>(s)] = flow;
  }
  return result;
}

template class StyleFeatureNet<float>;
template class StyleFeatureNet<double>;
template class FlowExtractor<float>;
template class FlowExtractor<double>;
template Tensor<float> to_grayscale(const Tensor<float>&);
template Tensor<double> to_grayscale(const Tensor<double>&);

}  // namespace vfx
