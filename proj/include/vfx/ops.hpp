#pragma once

#include "vfx/tensor.hpp"

#include <span>
#include <vector>

namespace vfx {

enum class PadMode { kSymmetric, kZero };

/// Edge-inclusive reflection: index -1 maps to 0, index n maps to n-1.
inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// Binary arithmetic. `b` must match `a` exactly, hold a single element, or
// match a leading prefix of `a`'s dims followed by trailing singletons.
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b);

/// scale * a + shift
template <typename S> Tensor<S> affine(const Tensor<S>& a, S scale, S shift);

template <typename S> Tensor<S> relu(const Tensor<S>& a);
template <typename S> Tensor<S> leaky_relu(const Tensor<S>& a, S alpha = S(0.2));
template <typename S> Tensor<S> sigmoid(const Tensor<S>& a);
template <typename S> Tensor<S> tanh(const Tensor<S>& a);
template <typename S> Tensor<S> square(const Tensor<S>& a);
/// log(max(a, eps)); zero gradient where clamped.
template <typename S> Tensor<S> log_clamped(const Tensor<S>& a, S eps);
/// Clamp to [lo, hi]; gradient passes where lo <= a <= hi.
template <typename S> Tensor<S> clamp(const Tensor<S>& a, S lo, S hi);

template <typename S> Tensor<S> sum(const Tensor<S>& a);
template <typename S> Tensor<S> mean(const Tensor<S>& a);
template <typename S> Tensor<S> reshape(const Tensor<S>& a, Shape shape);

/// NCHW cross-correlation with "same"-style padding of (k-1)/2 per axis.
/// `bias` may be an undefined tensor.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, PadMode pad = PadMode::kSymmetric);

template <typename S> Tensor<S> upsample_nearest2x(const Tensor<S>& x);
template <typename S> Tensor<S> avg_pool2x2(const Tensor<S>& x);
/// N x C x H x W -> N x C x 1 x 1
template <typename S> Tensor<S> global_avg_pool(const Tensor<S>& x);
/// N x C x 1 x 1 -> N x C x H x W
template <typename S> Tensor<S> tile_spatial(const Tensor<S>& x, int height, int width);

template <typename S> Tensor<S> concat(std::span<const Tensor<S>> parts, int axis);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  return concat(std::span<const Tensor<S>>(parts), axis);
}
template <typename S> Tensor<S> slice(const Tensor<S>& a, int axis, int begin, int length);

/// Max-subtracted softmax along `axis`.
template <typename S> Tensor<S> softmax(const Tensor<S>& logits, int axis);

/// Per-sample Gram matrix of N x C x H x W features: N x C x C, normalized by 1/(C*H*W).
template <typename S> Tensor<S> gram(const Tensor<S>& features);

/// Samples `image` at p + flow(p) bilinearly, clamping coordinates to the frame.
/// `flow` is N x 2 x H x W with channel 0 horizontal and channel 1 vertical (down) displacement.
template <typename S> Tensor<S> warp_bilinear(const Tensor<S>& image, const Tensor<S>& flow);

/// Mean over the batch of -log softmax(logits)[label]; logits N x K (trailing dims 1).
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, std::span<const int> labels);

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S> Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }
template <typename S> Tensor<S> operator*(S s, const Tensor<S>& a) { return affine(a, s, S(0)); }

}  // namespace vfx
