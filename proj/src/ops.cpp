#include "vfx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace vfx {
namespace {

template <typename S>
using NodeT = detail::Node<S>;
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
bool wants_grad(const std::shared_ptr<NodeT<S>>& p) {
  return p && p->requires_grad;
}

// Number of consecutive elements of `a` that share one element of `b`.
Eigen::Index broadcast_inner(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return 1;
  if (b.numel() == 1) return a.numel();
  if (a.rank() == b.rank()) {
    int prefix = 0;
    while (prefix < a.rank() && a[prefix] == b[prefix]) ++prefix;
    bool trailing_ones = true;
    for (int i = prefix; i < b.rank(); ++i) trailing_ones = trailing_ones && b[i] == 1;
    if (trailing_ones) {
      Eigen::Index inner = 1;
      for (int i = prefix; i < a.rank(); ++i) inner *= a[i];
      return inner;
    }
    std::string axes;
    for (int i = 0; i < a.rank(); ++i) {
      if (a[i] != b[i]) axes += (axes.empty() ? "" : ",") + std::to_string(i);
    }
    throw DimensionError(std::string(op) + ": shapes " + a.str() + " and " + b.str() +
                         " differ on axes {" + axes + "}");
  }
  throw DimensionError(std::string(op) + ": rank mismatch " + a.str() + " vs " + b.str());
}

template <typename S>
Buffer<S> expand(const Buffer<S>& b, Eigen::Index inner, Eigen::Index n) {
  if (inner == 1) return b;
  Buffer<S> out(n);
  for (Eigen::Index i = 0; i < b.size(); ++i) out.segment(i * inner, inner).setConstant(b[i]);
  return out;
}

template <typename S>
void reduce_into(Buffer<S>& dst, const Buffer<S>& g, Eigen::Index inner, S sign) {
  if (inner == 1) {
    dst += sign * g;
    return;
  }
  for (Eigen::Index i = 0; i < dst.size(); ++i) dst[i] += sign * g.segment(i * inner, inner).sum();
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

template <typename S>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, BinOp op, const char* name) {
  const Eigen::Index inner = broadcast_inner(a.shape(), b.shape(), name);
  const Buffer<S> be = expand(b.value(), inner, a.numel());
  Buffer<S> y;
  switch (op) {
    case BinOp::kAdd: y = a.value() + be; break;
    case BinOp::kSub: y = a.value() - be; break;
    case BinOp::kMul: y = a.value() * be; break;
    case BinOp::kDiv: y = a.value() / be; break;
  }
  return Tensor<S>::make_op(a.shape(), std::move(y), {a, b}, [op, inner](NodeT<S>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const Buffer<S>& g = self.grad;
    switch (op) {
      case BinOp::kAdd:
        if (wants_grad<S>(pa)) pa->grad_ref() += g;
        if (wants_grad<S>(pb)) reduce_into<S>(pb->grad_ref(), g, inner, S(1));
        break;
      case BinOp::kSub:
        if (wants_grad<S>(pa)) pa->grad_ref() += g;
        if (wants_grad<S>(pb)) reduce_into<S>(pb->grad_ref(), g, inner, S(-1));
        break;
      case BinOp::kMul: {
        if (wants_grad<S>(pa)) pa->grad_ref() += g * expand(pb->value, inner, g.size());
        if (wants_grad<S>(pb)) reduce_into<S>(pb->grad_ref(), Buffer<S>(g * pa->value), inner, S(1));
        break;
      }
      case BinOp::kDiv: {
        const Buffer<S> bx = expand(pb->value, inner, g.size());
        if (wants_grad<S>(pa)) pa->grad_ref() += g / bx;
        if (wants_grad<S>(pb)) {
          reduce_into<S>(pb->grad_ref(), Buffer<S>(-g * pa->value / bx.square()), inner, S(1));
        }
        break;
      }
    }
  });
}

// y = f(x); dx = g * df(x, y)
template <typename S, typename F, typename DF>
Tensor<S> unary(const Tensor<S>& a, F f, DF df) {
  Buffer<S> y = a.value().unaryExpr(f);
  return Tensor<S>::make_op(a.shape(), std::move(y), {a}, [df](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (!wants_grad<S>(p)) return;
    auto& dst = p->grad_ref();
    for (Eigen::Index i = 0; i < dst.size(); ++i) dst[i] += self.grad[i] * df(p->value[i], self.value[i]);
  });
}

void require_rank4(const Shape& s, const char* op) {
  if (s.rank() != 4) throw DimensionError(std::string(op) + ": expected NCHW, got " + s.str());
}

// Source index along one axis for each (kernel tap, output position), or -1 for zero padding.
std::vector<int> tap_table(int in, int out, int k, int stride, int pad, PadMode mode) {
  std::vector<int> table(static_cast<size_t>(k) * out);
  for (int t = 0; t < k; ++t) {
    for (int o = 0; o < out; ++o) {
      int i = o * stride + t - pad;
      if (i < 0 || i >= in) i = mode == PadMode::kSymmetric ? reflect_index(i, in) : -1;
      table[static_cast<size_t>(t) * out + o] = i;
    }
  }
  return table;
}

struct ConvGeometry {
  int n, c, h, w, co, kh, kw, ho, wo, stride;
  std::vector<int> rows, cols;
};

// Rows of `out` are (channel, tap) pairs; row r starts at out + r * ld.
template <typename S>
void im2col(const S* x, const ConvGeometry& g, S* out, Eigen::Index ld) {
  for (int c = 0; c < g.c; ++c) {
    const S* xc = x + static_cast<size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        S* row = out + ((c * g.kh + ki) * g.kw + kj) * ld;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = g.rows[static_cast<size_t>(ki) * g.ho + oy];
          S* dst = row + static_cast<size_t>(oy) * g.wo;
          if (iy < 0) {
            std::fill(dst, dst + g.wo, S(0));
            continue;
          }
          const S* src = xc + static_cast<size_t>(iy) * g.w;
          const int* ct = g.cols.data() + static_cast<size_t>(kj) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) dst[ox] = ct[ox] < 0 ? S(0) : src[ct[ox]];
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* cols, Eigen::Index ld, const ConvGeometry& g, S* dx) {
  for (int c = 0; c < g.c; ++c) {
    S* xc = dx + static_cast<size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const S* row = cols + ((c * g.kh + ki) * g.kw + kj) * ld;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = g.rows[static_cast<size_t>(ki) * g.ho + oy];
          if (iy < 0) continue;
          S* dst = xc + static_cast<size_t>(iy) * g.w;
          const S* src = row + static_cast<size_t>(oy) * g.wo;
          const int* ct = g.cols.data() + static_cast<size_t>(kj) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            if (ct[ox] >= 0) dst[ct[ox]] += src[ox];
          }
        }
      }
    }
  }
}

// Whole-batch patch matrix: item n fills columns [n * hw_out, (n + 1) * hw_out).
template <typename S>
void batch_im2col(const S* x, const ConvGeometry& g, RowMat<S>& cols) {
  const Eigen::Index hw_out = static_cast<Eigen::Index>(g.ho) * g.wo;
  cols.resize(static_cast<Eigen::Index>(g.c) * g.kh * g.kw, g.n * hw_out);
  const size_t in_stride = static_cast<size_t>(g.c) * g.h * g.w;
  for (int n = 0; n < g.n; ++n) im2col(x + n * in_stride, g, cols.data() + n * hw_out, cols.cols());
}

// Outer/axis/inner decomposition for axis-wise ops.
struct AxisSplit {
  Eigen::Index outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  if (axis < 0 || axis >= s.rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + s.str());
  }
  AxisSplit a;
  for (int i = 0; i < axis; ++i) a.outer *= s[i];
  a.len = s[axis];
  for (int i = axis + 1; i < s.rank(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinOp::kAdd, "add");
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinOp::kSub, "sub");
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinOp::kMul, "mul");
}
template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinOp::kDiv, "div");
}

template <typename S>
Tensor<S> affine(const Tensor<S>& a, S scale, S shift) {
  Buffer<S> y = a.value() * scale + shift;
  return Tensor<S>::make_op(a.shape(), std::move(y), {a}, [scale](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (wants_grad<S>(p)) p->grad_ref() += scale * self.grad;
  });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  return unary(
      a, [](S x) { return x > S(0) ? x : S(0); }, [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& a, S alpha) {
  return unary(
      a, [alpha](S x) { return x > S(0) ? x : alpha * x; },
      [alpha](S x, S) { return x > S(0) ? S(1) : alpha; });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return unary(
      a,
      [](S x) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        const S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
  return unary(a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> square(const Tensor<S>& a) {
  Buffer<S> y = a.value().square();
  return Tensor<S>::make_op(a.shape(), std::move(y), {a}, [](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (wants_grad<S>(p)) p->grad_ref() += S(2) * p->value * self.grad;
  });
}

template <typename S>
Tensor<S> log_clamped(const Tensor<S>& a, S eps) {
  return unary(
      a, [eps](S x) { return std::log(std::max(x, eps)); },
      [eps](S x, S) { return x > eps ? S(1) / x : S(0); });
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  return unary(
      a, [lo, hi](S x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](S x, S) { return (x >= lo && x <= hi) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  Buffer<S> y = Buffer<S>::Constant(1, a.value().sum());
  return Tensor<S>::make_op(Shape{1}, std::move(y), {a}, [](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (wants_grad<S>(p)) p->grad_ref() += self.grad[0];
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  const S inv = S(1) / static_cast<S>(a.numel());
  Buffer<S> y = Buffer<S>::Constant(1, a.value().sum() * inv);
  return Tensor<S>::make_op(Shape{1}, std::move(y), {a}, [inv](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (wants_grad<S>(p)) p->grad_ref() += self.grad[0] * inv;
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape.numel() != a.numel()) {
    throw DimensionError("reshape " + a.shape().str() + " -> " + shape.str());
  }
  return Tensor<S>::make_op(std::move(shape), a.value(), {a}, [](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (wants_grad<S>(p)) p->grad_ref() += self.grad;
  });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias, int stride,
                 PadMode pad) {
  require_rank4(input.shape(), "conv2d input");
  require_rank4(weight.shape(), "conv2d weight");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: input channels (axis 1) " + std::to_string(input.dim(1)) +
                         " != weight in-channels (axis 1) " + std::to_string(weight.dim(1)));
  }
  auto g = std::make_shared<ConvGeometry>();
  g->n = input.dim(0);
  g->c = input.dim(1);
  g->h = input.dim(2);
  g->w = input.dim(3);
  g->co = weight.dim(0);
  g->kh = weight.dim(2);
  g->kw = weight.dim(3);
  g->stride = stride;
  const int ph = (g->kh - 1) / 2;
  const int pw = (g->kw - 1) / 2;
  if (g->h + 2 * ph < g->kh || g->w + 2 * pw < g->kw) {
    throw DimensionError("conv2d: kernel " + weight.shape().str() + " larger than padded input " +
                         input.shape().str() + " on axes {2,3}");
  }
  g->ho = (g->h + 2 * ph - g->kh) / stride + 1;
  g->wo = (g->w + 2 * pw - g->kw) / stride + 1;
  if (bias.defined() && bias.numel() != g->co) {
    throw DimensionError("conv2d: bias length " + std::to_string(bias.numel()) +
                         " != out-channels " + std::to_string(g->co));
  }
  g->rows = tap_table(g->h, g->ho, g->kh, stride, ph, pad);
  g->cols = tap_table(g->w, g->wo, g->kw, stride, pw, pad);

  const Eigen::Index ckk = static_cast<Eigen::Index>(g->c) * g->kh * g->kw;
  const Eigen::Index hw_out = static_cast<Eigen::Index>(g->ho) * g->wo;
  const Eigen::Index wide = g->n * hw_out;
  Eigen::Map<const RowMat<S>> wmat(weight.data(), g->co, ckk);
  RowMat<S> cols;
  batch_im2col(input.data(), *g, cols);
  RowMat<S> prod = wmat * cols;
  if (bias.defined()) prod.colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(bias.data(), g->co);
  Buffer<S> y(g->n * g->co * hw_out);
  for (int n = 0; n < g->n; ++n) {
    Eigen::Map<RowMat<S>>(y.data() + n * g->co * hw_out, g->co, hw_out) = prod.middleCols(n * hw_out, hw_out);
  }
  Shape out_shape{g->n, g->co, g->ho, g->wo};
  return Tensor<S>::make_op(std::move(out_shape), std::move(y), {input, weight, bias},
                            [g, ckk, hw_out, wide](NodeT<S>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    RowMat<S> gout(g->co, wide);
    for (int n = 0; n < g->n; ++n) {
      gout.middleCols(n * hw_out, hw_out) =
          Eigen::Map<const RowMat<S>>(self.grad.data() + n * g->co * hw_out, g->co, hw_out);
    }
    if (wants_grad<S>(pw)) {
      RowMat<S> cols;
      batch_im2col(px->value.data(), *g, cols);
      Eigen::Map<RowMat<S>> dw(pw->grad_ref().data(), g->co, ckk);
      dw.noalias() += gout * cols.transpose();
    }
    if (wants_grad<S>(pb)) {
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(pb->grad_ref().data(), g->co);
      db += gout.rowwise().sum();
    }
    if (wants_grad<S>(px)) {
      Eigen::Map<const RowMat<S>> wmat(pw->value.data(), g->co, ckk);
      const RowMat<S> dcols = wmat.transpose() * gout;
      const size_t in_stride = static_cast<size_t>(g->c) * g->h * g->w;
      S* dx = px->grad_ref().data();
      for (int n = 0; n < g->n; ++n) col2im_add(dcols.data() + n * hw_out, wide, *g, dx + n * in_stride);
    }
  });
}

template <typename S>
Tensor<S> upsample_nearest2x(const Tensor<S>& x) {
  require_rank4(x.shape(), "upsample_nearest2x");
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Buffer<S> y(static_cast<Eigen::Index>(nc) * 4 * h * w);
  const S* src = x.data();
  for (int p = 0; p < nc; ++p) {
    for (int i = 0; i < 2 * h; ++i) {
      for (int j = 0; j < 2 * w; ++j) {
        y[(static_cast<Eigen::Index>(p) * 2 * h + i) * 2 * w + j] = src[(static_cast<size_t>(p) * h + i / 2) * w + j / 2];
      }
    }
  }
  return Tensor<S>::make_op(Shape{x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(y), {x},
                            [nc, h, w](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (!wants_grad<S>(p)) return;
    auto& dst = p->grad_ref();
    for (int q = 0; q < nc; ++q) {
      for (int i = 0; i < 2 * h; ++i) {
        for (int j = 0; j < 2 * w; ++j) {
          dst[(static_cast<Eigen::Index>(q) * h + i / 2) * w + j / 2] +=
              self.grad[(static_cast<Eigen::Index>(q) * 2 * h + i) * 2 * w + j];
        }
      }
    }
  });
}

template <typename S>
Tensor<S> avg_pool2x2(const Tensor<S>& x) {
  require_rank4(x.shape(), "avg_pool2x2");
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw DimensionError("avg_pool2x2: odd spatial size " + x.shape().str());
  const int ho = h / 2, wo = w / 2;
  Buffer<S> y(static_cast<Eigen::Index>(nc) * ho * wo);
  const S* src = x.data();
  for (int p = 0; p < nc; ++p) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        const S* r0 = src + (static_cast<size_t>(p) * h + 2 * i) * w + 2 * j;
        y[(static_cast<Eigen::Index>(p) * ho + i) * wo + j] = S(0.25) * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
      }
    }
  }
  return Tensor<S>::make_op(Shape{x.dim(0), x.dim(1), ho, wo}, std::move(y), {x},
                            [nc, h, w, ho, wo](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (!wants_grad<S>(p)) return;
    S* dst = p->grad_ref().data();
    for (int q = 0; q < nc; ++q) {
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
          const S gv = S(0.25) * self.grad[(static_cast<Eigen::Index>(q) * ho + i) * wo + j];
          S* r0 = dst + (static_cast<size_t>(q) * h + 2 * i) * w + 2 * j;
          r0[0] += gv;
          r0[1] += gv;
          r0[w] += gv;
          r0[w + 1] += gv;
        }
      }
    }
  });
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  require_rank4(x.shape(), "global_avg_pool");
  const Eigen::Index nc = static_cast<Eigen::Index>(x.dim(0)) * x.dim(1);
  const Eigen::Index hw = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  Buffer<S> y(nc);
  for (Eigen::Index p = 0; p < nc; ++p) y[p] = x.value().segment(p * hw, hw).mean();
  return Tensor<S>::make_op(Shape{x.dim(0), x.dim(1), 1, 1}, std::move(y), {x}, [nc, hw](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (!wants_grad<S>(p)) return;
    auto& dst = p->grad_ref();
    for (Eigen::Index q = 0; q < nc; ++q) dst.segment(q * hw, hw) += self.grad[q] / static_cast<S>(hw);
  });
}

template <typename S>
Tensor<S> tile_spatial(const Tensor<S>& x, int height, int width) {
  require_rank4(x.shape(), "tile_spatial");
  if (x.dim(2) != 1 || x.dim(3) != 1) throw DimensionError("tile_spatial: expected Nx Cx1x1, got " + x.shape().str());
  const Eigen::Index nc = static_cast<Eigen::Index>(x.dim(0)) * x.dim(1);
  const Eigen::Index hw = static_cast<Eigen::Index>(height) * width;
  Buffer<S> y(nc * hw);
  for (Eigen::Index p = 0; p < nc; ++p) y.segment(p * hw, hw).setConstant(x.value()[p]);
  return Tensor<S>::make_op(Shape{x.dim(0), x.dim(1), height, width}, std::move(y), {x},
                            [nc, hw](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (!wants_grad<S>(p)) return;
    auto& dst = p->grad_ref();
    for (Eigen::Index q = 0; q < nc; ++q) dst[q] += self.grad.segment(q * hw, hw).sum();
  });
}

template <typename S>
Tensor<S> concat(std::span<const Tensor<S>> parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& ref = parts[0].shape();
  std::vector<int> dims = ref.dims();
  int total = 0;
  for (const auto& t : parts) {
    if (t.rank() != ref.rank()) throw DimensionError("concat: rank mismatch " + t.shape().str());
    for (int i = 0; i < ref.rank(); ++i) {
      if (i != axis && t.dim(i) != ref[i]) {
        throw DimensionError("concat: axis " + std::to_string(i) + " differs: " + ref.str() + " vs " +
                             t.shape().str());
      }
    }
    total += t.dim(axis);
  }
  dims.at(static_cast<size_t>(axis)) = total;
  Shape out_shape(dims);
  const AxisSplit out_split = split_axis(out_shape, axis);
  std::vector<Eigen::Index> blocks;
  Buffer<S> y(out_shape.numel());
  Eigen::Index offset = 0;
  for (const auto& t : parts) {
    const Eigen::Index block = t.dim(axis) * out_split.inner;
    for (Eigen::Index o = 0; o < out_split.outer; ++o) {
      y.segment(o * out_split.len * out_split.inner + offset, block) = t.value().segment(o * block, block);
    }
    blocks.push_back(block);
    offset += block;
  }
  std::vector<Tensor<S>> inputs(parts.begin(), parts.end());
  return Tensor<S>::make_op(std::move(out_shape), std::move(y), std::move(inputs),
                            [blocks, out_split](NodeT<S>& self) {
    Eigen::Index offset = 0;
    for (size_t k = 0; k < blocks.size(); ++k) {
      auto& p = self.parents[k];
      const Eigen::Index block = blocks[k];
      if (wants_grad<S>(p)) {
        auto& dst = p->grad_ref();
        for (Eigen::Index o = 0; o < out_split.outer; ++o) {
          dst.segment(o * block, block) += self.grad.segment(o * out_split.len * out_split.inner + offset, block);
        }
      }
      offset += block;
    }
  });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, int axis, int begin, int length) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (begin < 0 || length < 1 || begin + length > s.len) {
    throw DimensionError("slice [" + std::to_string(begin) + ", +" + std::to_string(length) +
                         ") out of range on axis " + std::to_string(axis) + " of " + a.shape().str());
  }
  std::vector<int> dims = a.shape().dims();
  dims[static_cast<size_t>(axis)] = length;
  const Eigen::Index block = length * s.inner;
  const Eigen::Index src_block = s.len * s.inner;
  const Eigen::Index off = begin * s.inner;
  Buffer<S> y(s.outer * block);
  for (Eigen::Index o = 0; o < s.outer; ++o) y.segment(o * block, block) = a.value().segment(o * src_block + off, block);
  return Tensor<S>::make_op(Shape(dims), std::move(y), {a}, [s, block, src_block, off](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (!wants_grad<S>(p)) return;
    auto& dst = p->grad_ref();
    for (Eigen::Index o = 0; o < s.outer; ++o) dst.segment(o * src_block + off, block) += self.grad.segment(o * block, block);
  });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& logits, int axis) {
  const AxisSplit s = split_axis(logits.shape(), axis);
  if (s.len < 1) throw ContractError("softmax over empty axis");
  Buffer<S> y(logits.numel());
  const S* x = logits.data();
  for (Eigen::Index o = 0; o < s.outer; ++o) {
    for (Eigen::Index i = 0; i < s.inner; ++i) {
      const Eigen::Index base = o * s.len * s.inner + i;
      S m = x[base];
      for (Eigen::Index k = 1; k < s.len; ++k) m = std::max(m, x[base + k * s.inner]);
      S z = 0;
      for (Eigen::Index k = 0; k < s.len; ++k) {
        const S e = std::exp(x[base + k * s.inner] - m);
        y[base + k * s.inner] = e;
        z += e;
      }
      for (Eigen::Index k = 0; k < s.len; ++k) y[base + k * s.inner] /= z;
    }
  }
  return Tensor<S>::make_op(logits.shape(), std::move(y), {logits}, [s](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (!wants_grad<S>(p)) return;
    auto& dst = p->grad_ref();
    for (Eigen::Index o = 0; o < s.outer; ++o) {
      for (Eigen::Index i = 0; i < s.inner; ++i) {
        const Eigen::Index base = o * s.len * s.inner + i;
        S dot = 0;
        for (Eigen::Index k = 0; k < s.len; ++k) dot += self.grad[base + k * s.inner] * self.value[base + k * s.inner];
        for (Eigen::Index k = 0; k < s.len; ++k) {
          const Eigen::Index idx = base + k * s.inner;
          dst[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

template <typename S>
Tensor<S> gram(const Tensor<S>& features) {
  require_rank4(features.shape(), "gram");
  const int n = features.dim(0), c = features.dim(1);
  const Eigen::Index hw = static_cast<Eigen::Index>(features.dim(2)) * features.dim(3);
  const S norm = S(1) / (static_cast<S>(c) * static_cast<S>(hw));
  Buffer<S> y(static_cast<Eigen::Index>(n) * c * c);
  for (int i = 0; i < n; ++i) {
    Eigen::Map<const RowMat<S>> f(features.data() + static_cast<Eigen::Index>(i) * c * hw, c, hw);
    Eigen::Map<RowMat<S>> gm(y.data() + static_cast<Eigen::Index>(i) * c * c, c, c);
    gm.noalias() = norm * (f * f.transpose());
  }
  return Tensor<S>::make_op(Shape{n, c, c}, std::move(y), {features}, [n, c, hw, norm](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (!wants_grad<S>(p)) return;
    for (int i = 0; i < n; ++i) {
      Eigen::Map<const RowMat<S>> f(p->value.data() + static_cast<Eigen::Index>(i) * c * hw, c, hw);
      Eigen::Map<const RowMat<S>> dg(self.grad.data() + static_cast<Eigen::Index>(i) * c * c, c, c);
      Eigen::Map<RowMat<S>> df(p->grad_ref().data() + static_cast<Eigen::Index>(i) * c * hw, c, hw);
      df.noalias() += norm * ((dg + dg.transpose()) * f);
    }
  });
}

template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
  const int n = logits.dim(0);
  if (static_cast<int>(labels.size()) != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(n));
  }
  const Eigen::Index k = logits.numel() / n;
  auto probs = std::make_shared<Buffer<S>>(logits.numel());
  std::vector<int> lab(labels.begin(), labels.end());
  S total = 0;
  for (int i = 0; i < n; ++i) {
    if (lab[i] < 0 || lab[i] >= k) throw ContractError("softmax_cross_entropy: label out of range");
    auto row = logits.value().segment(i * k, k);
    const S m = row.maxCoeff();
    const Buffer<S> e = (row - m).exp();
    const S z = e.sum();
    probs->segment(i * k, k) = e / z;
    total += -(row[lab[i]] - m - std::log(z));
  }
  Buffer<S> y = Buffer<S>::Constant(1, total / static_cast<S>(n));
  return Tensor<S>::make_op(Shape{1}, std::move(y), {logits}, [probs, lab, n, k](NodeT<S>& self) {
    auto& p = self.parents[0];
    if (!wants_grad<S>(p)) return;
    auto& dst = p->grad_ref();
    const S scale = self.grad[0] / static_cast<S>(n);
    for (int i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) {
        dst[i * k + j] += scale * ((*probs)[i * k + j] - (j == lab[i] ? S(1) : S(0)));
      }
    }
  });
}

template <typename S>
Tensor<S> warp_bilinear(const Tensor<S>& image, const Tensor<S>& flow) {
  require_rank4(image.shape(), "warp_bilinear");
  const int n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (flow.shape() != Shape{n, 2, h, w}) {
    throw DimensionError("warp_bilinear: flow " + flow.shape().str() + " does not match image " + image.shape().str());
  }
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  // Per-pixel sample corner, fractions and whether each coordinate is inside the frame.
  struct Sample {
    int y0, x0, y1, x1;
    S fy, fx;
    bool in_y, in_x;
  };
  auto samples = std::make_shared<std::vector<Sample>>(static_cast<size_t>(n * plane));
  const S* fl = flow.data();
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const Eigen::Index q = i * w + j;
        const S yr = S(i) + fl[(2 * b + 1) * plane + q];
        const S xr = S(j) + fl[(2 * b) * plane + q];
        Sample s;
        s.in_y = yr >= S(0) && yr <= S(h - 1);
        s.in_x = xr >= S(0) && xr <= S(w - 1);
        const S yc = std::clamp(yr, S(0), S(h - 1));
        const S xc = std::clamp(xr, S(0), S(w - 1));
        s.y0 = std::min(static_cast<int>(std::floor(yc)), std::max(h - 2, 0));
        s.x0 = std::min(static_cast<int>(std::floor(xc)), std::max(w - 2, 0));
        s.y1 = std::min(s.y0 + 1, h - 1);
        s.x1 = std::min(s.x0 + 1, w - 1);
        s.fy = yc - S(s.y0);
        s.fx = xc - S(s.x0);
        (*samples)[static_cast<size_t>(b * plane + q)] = s;
      }
    }
  }
  Buffer<S> y(image.numel());
  const S* src = image.data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const S* im = src + (static_cast<Eigen::Index>(b) * c + ch) * plane;
      S* out = y.data() + (static_cast<Eigen::Index>(b) * c + ch) * plane;
      for (Eigen::Index q = 0; q < plane; ++q) {
        const Sample& s = (*samples)[static_cast<size_t>(b * plane + q)];
        const S top = (S(1) - s.fx) * im[s.y0 * w + s.x0] + s.fx * im[s.y0 * w + s.x1];
        const S bot = (S(1) - s.fx) * im[s.y1 * w + s.x0] + s.fx * im[s.y1 * w + s.x1];
        out[q] = (S(1) - s.fy) * top + s.fy * bot;
      }
    }
  }
  return Tensor<S>::make_op(image.shape(), std::move(y), {image, flow}, [samples, n, c, w, plane](NodeT<S>& self) {
    auto& pi = self.parents[0];
    auto& pf = self.parents[1];
    const S* im_all = pi->value.data();
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const Eigen::Index off = (static_cast<Eigen::Index>(b) * c + ch) * plane;
        const S* im = im_all + off;
        const S* g = self.grad.data() + off;
        for (Eigen::Index q = 0; q < plane; ++q) {
          const Sample& s = (*samples)[static_cast<size_t>(b * plane + q)];
          if (wants_grad<S>(pi)) {
            S* d = pi->grad_ref().data() + off;
            d[s.y0 * w + s.x0] += g[q] * (S(1) - s.fy) * (S(1) - s.fx);
            d[s.y0 * w + s.x1] += g[q] * (S(1) - s.fy) * s.fx;
            d[s.y1 * w + s.x0] += g[q] * s.fy * (S(1) - s.fx);
            d[s.y1 * w + s.x1] += g[q] * s.fy * s.fx;
          }
          if (wants_grad<S>(pf)) {
            const S i00 = im[s.y0 * w + s.x0], i01 = im[s.y0 * w + s.x1];
            const S i10 = im[s.y1 * w + s.x0], i11 = im[s.y1 * w + s.x1];
            S* df = pf->grad_ref().data() + static_cast<Eigen::Index>(2 * b) * plane;
            if (s.in_x) df[q] += g[q] * ((S(1) - s.fy) * (i01 - i00) + s.fy * (i11 - i10));
            if (s.in_y) df[plane + q] += g[q] * ((S(1) - s.fx) * (i10 - i00) + s.fx * (i11 - i01));
          }
        }
      }
    }
  });
}

#define VFX_INSTANTIATE_OPS(S)                                                                   \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> div(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> affine(const Tensor<S>&, S, S);                                             \
  template Tensor<S> relu(const Tensor<S>&);                                                     \
  template Tensor<S> leaky_relu(const Tensor<S>&, S);                                            \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                  \
  template Tensor<S> tanh(const Tensor<S>&);                                                     \
  template Tensor<S> square(const Tensor<S>&);                                                   \
  template Tensor<S> log_clamped(const Tensor<S>&, S);                                           \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                              \
  template Tensor<S> sum(const Tensor<S>&);                                                      \
  template Tensor<S> mean(const Tensor<S>&);                                                     \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                           \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, PadMode); \
  template Tensor<S> upsample_nearest2x(const Tensor<S>&);                                       \
  template Tensor<S> avg_pool2x2(const Tensor<S>&);                                              \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                          \
  template Tensor<S> tile_spatial(const Tensor<S>&, int, int);                                   \
  template Tensor<S> concat(std::span<const Tensor<S>>, int);                                    \
  template Tensor<S> slice(const Tensor<S>&, int, int, int);                                     \
  template Tensor<S> softmax(const Tensor<S>&, int);                                             \
  template Tensor<S> gram(const Tensor<S>&);                                                     \
  template Tensor<S> warp_bilinear(const Tensor<S>&, const Tensor<S>&);                          \
  template Tensor<S> softmax_cross_entropy(const Tensor<S>&, std::span<const int>);

VFX_INSTANTIATE_OPS(float)
VFX_INSTANTIATE_OPS(double)

}  // namespace vfx
