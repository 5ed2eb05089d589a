#include "vfx/pixel_transformer.hpp"

#include <cmath>
#include <vector>

namespace vfx {
namespace {

template <typename S>
using NodeT = detail::Node<S>;

template <typename S>
bool wants_grad(const std::shared_ptr<NodeT<S>>& p) {
  return p && p->requires_grad;
}

struct Window {
  int n, c, h, w, kappa, side;
  // Reflected source row/col for offset index (k + kappa) and output position.
  std::vector<int> rows, cols;
};

Window make_window(int n, int c, int h, int w, int kappa) {
  Window win{n, c, h, w, kappa, 2 * kappa + 1, {}, {}};
  win.rows.resize(static_cast<size_t>(win.side) * h);
  win.cols.resize(static_cast<size_t>(win.side) * w);
  for (int k = -kappa; k <= kappa; ++k) {
    for (int i = 0; i < h; ++i) win.rows[static_cast<size_t>(k + kappa) * h + i] = reflect_index(i - k, h);
    for (int j = 0; j < w; ++j) win.cols[static_cast<size_t>(k + kappa) * w + j] = reflect_index(j - k, w);
  }
  return win;
}

}  // namespace

template <typename S>
KernelField<S>::KernelField(Tensor<S> weights, int kappa) : weights_(std::move(weights)), kappa_(kappa) {
  if (kappa < 0) throw ContractError("KernelField: kappa must be >= 0");
  if (weights_.rank() != 4 || weights_.dim(1) != taps()) {
    throw DimensionError("KernelField: expected N x " + std::to_string(taps()) + " x H x W, got " +
                         weights_.shape().str());
  }
  const int n = weights_.dim(0), t = taps();
  const Eigen::Index hw = static_cast<Eigen::Index>(weights_.dim(2)) * weights_.dim(3);
  const S* v = weights_.data();
  for (int b = 0; b < n; ++b) {
    for (Eigen::Index p = 0; p < hw; ++p) {
      S total = 0;
      for (int k = 0; k < t; ++k) {
        const S wv = v[(static_cast<Eigen::Index>(b) * t + k) * hw + p];
        if (wv < S(0)) throw ContractError("KernelField: negative weight");
        total += wv;
      }
      if (std::abs(total - S(1)) > S(1e-5)) throw ContractError("KernelField: kernel does not sum to 1");
    }
  }
}

template <typename S>
BackgroundMask<S>::BackgroundMask(Tensor<S> values) : values_(std::move(values)) {
  if (values_.rank() != 4 || values_.dim(1) != 1) {
    throw DimensionError("BackgroundMask: expected N x 1 x H x W, got " + values_.shape().str());
  }
  if (values_.numel() > 0 && (values_.value().minCoeff() < S(0) || values_.value().maxCoeff() > S(1))) {
    throw ContractError("BackgroundMask: values outside [0,1]");
  }
}

template <typename S>
KernelField<S> kernel_field_from_logits(const Tensor<S>& logits, int kappa) {
  const int side = 2 * kappa + 1;
  if (logits.rank() != 4 || logits.dim(1) != side * side) {
    throw DimensionError("kernel_field_from_logits: axis 1 must be " + std::to_string(side * side) + ", got " +
                         logits.shape().str());
  }
  return KernelField<S>(softmax(logits, 1), kappa, true);
}

template <typename S>
Tensor<S> apply_kernels(const Tensor<S>& image, const KernelField<S>& kernels) {
  const Tensor<S>& theta = kernels.weights();
  if (image.rank() != 4) throw DimensionError("apply_kernels: image must be NCHW, got " + image.shape().str());
  if (theta.dim(0) != image.dim(0) || theta.dim(2) != image.dim(2) || theta.dim(3) != image.dim(3)) {
    throw DimensionError("apply_kernels: kernels " + theta.shape().str() + " do not match image " +
                         image.shape().str() + " on axes {0,2,3}");
  }
  auto win = std::make_shared<Window>(make_window(image.dim(0), image.dim(1), image.dim(2), image.dim(3),
                                                  kernels.kappa()));
  const int n = win->n, c = win->c, h = win->h, w = win->w, side = win->side;
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const int taps = side * side;
  Buffer<S> y = Buffer<S>::Zero(image.numel());
  const S* x = image.data();
  const S* th = theta.data();
  for (int b = 0; b < n; ++b) {
    for (int ki = 0; ki < side; ++ki) {
      for (int li = 0; li < side; ++li) {
        const S* tmap = th + (static_cast<Eigen::Index>(b) * taps + ki * side + li) * hw;
        for (int ch = 0; ch < c; ++ch) {
          const S* xc = x + (static_cast<Eigen::Index>(b) * c + ch) * hw;
          S* yc = y.data() + (static_cast<Eigen::Index>(b) * c + ch) * hw;
          for (int i = 0; i < h; ++i) {
            const S* xr = xc + static_cast<Eigen::Index>(win->rows[static_cast<size_t>(ki) * h + i]) * w;
            const int* cs = win->cols.data() + static_cast<size_t>(li) * w;
            const S* tr = tmap + static_cast<Eigen::Index>(i) * w;
            S* yr = yc + static_cast<Eigen::Index>(i) * w;
            for (int j = 0; j < w; ++j) yr[j] += tr[j] * xr[cs[j]];
          }
        }
      }
    }
  }
  return Tensor<S>::make_op(image.shape(), std::move(y), {image, theta}, [win, hw, taps](NodeT<S>& self) {
    auto& px = self.parents[0];
    auto& pt = self.parents[1];
    const bool gx = wants_grad<S>(px), gt = wants_grad<S>(pt);
    const int n = win->n, c = win->c, h = win->h, w = win->w, side = win->side;
    const S* x = px->value.data();
    const S* th = pt->value.data();
    S* dx = gx ? px->grad_ref().data() : nullptr;
    S* dt = gt ? pt->grad_ref().data() : nullptr;
    const S* g = self.grad.data();
    for (int b = 0; b < n; ++b) {
      for (int ki = 0; ki < side; ++ki) {
        for (int li = 0; li < side; ++li) {
          const Eigen::Index toff = (static_cast<Eigen::Index>(b) * taps + ki * side + li) * hw;
          for (int ch = 0; ch < c; ++ch) {
            const Eigen::Index coff = (static_cast<Eigen::Index>(b) * c + ch) * hw;
            for (int i = 0; i < h; ++i) {
              const Eigen::Index src_row = static_cast<Eigen::Index>(win->rows[static_cast<size_t>(ki) * h + i]) * w;
              const int* cs = win->cols.data() + static_cast<size_t>(li) * w;
              const Eigen::Index row = static_cast<Eigen::Index>(i) * w;
              for (int j = 0; j < w; ++j) {
                const S gv = g[coff + row + j];
                if (gt) dt[toff + row + j] += gv * x[coff + src_row + cs[j]];
                if (gx) dx[coff + src_row + cs[j]] += gv * th[toff + row + j];
              }
            }
          }
        }
      }
    }
  });
}

template <typename S>
Tensor<S> composite(const Tensor<S>& prev_frame, const Tensor<S>& transformed, const BackgroundMask<S>& mask) {
  const Tensor<S>& m = mask.values();
  if (!(prev_frame.shape() == transformed.shape())) {
    throw DimensionError("composite: prev " + prev_frame.shape().str() + " vs transformed " +
                         transformed.shape().str());
  }
  if (prev_frame.rank() != 4 || m.dim(0) != prev_frame.dim(0) || m.dim(2) != prev_frame.dim(2) ||
      m.dim(3) != prev_frame.dim(3)) {
    throw DimensionError("composite: mask " + m.shape().str() + " does not match frame " +
                         prev_frame.shape().str());
  }
  const int n = prev_frame.dim(0), c = prev_frame.dim(1);
  const Eigen::Index hw = static_cast<Eigen::Index>(prev_frame.dim(2)) * prev_frame.dim(3);
  Buffer<S> y(prev_frame.numel());
  for (int b = 0; b < n; ++b) {
    const auto mb = m.value().segment(static_cast<Eigen::Index>(b) * hw, hw);
    for (int ch = 0; ch < c; ++ch) {
      const Eigen::Index off = (static_cast<Eigen::Index>(b) * c + ch) * hw;
      y.segment(off, hw) = mb * prev_frame.value().segment(off, hw) + (S(1) - mb) * transformed.value().segment(off, hw);
    }
  }
  return Tensor<S>::make_op(prev_frame.shape(), std::move(y), {prev_frame, transformed, m},
                            [n, c, hw](NodeT<S>& self) {
    auto& pp = self.parents[0];
    auto& pt = self.parents[1];
    auto& pm = self.parents[2];
    for (int b = 0; b < n; ++b) {
      const auto mb = pm->value.segment(static_cast<Eigen::Index>(b) * hw, hw);
      for (int ch = 0; ch < c; ++ch) {
        const Eigen::Index off = (static_cast<Eigen::Index>(b) * c + ch) * hw;
        const auto g = self.grad.segment(off, hw);
        if (wants_grad<S>(pp)) pp->grad_ref().segment(off, hw) += mb * g;
        if (wants_grad<S>(pt)) pt->grad_ref().segment(off, hw) += (S(1) - mb) * g;
        if (wants_grad<S>(pm)) {
          pm->grad_ref().segment(static_cast<Eigen::Index>(b) * hw, hw) +=
              g * (pp->value.segment(off, hw) - pt->value.segment(off, hw));
        }
      }
    }
  });
}

template class KernelField<float>;
template class KernelField<double>;
template class BackgroundMask<float>;
template class BackgroundMask<double>;
template KernelField<float> kernel_field_from_logits(const Tensor<float>&, int);
template KernelField<double> kernel_field_from_logits(const Tensor<double>&, int);
template Tensor<float> apply_kernels(const Tensor<float>&, const KernelField<float>&);
template Tensor<double> apply_kernels(const Tensor<double>&, const KernelField<double>&);
template Tensor<float> composite(const Tensor<float>&, const Tensor<float>&, const BackgroundMask<float>&);
template Tensor<double> composite(const Tensor<double>&, const Tensor<double>&, const BackgroundMask<double>&);

}  // namespace vfx
