#include "agnn/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace agnn {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::conv2d: return "conv2d";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::row_softmax: return "row_softmax";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::channel_broadcast_mul: return "channel_broadcast_mul";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::scalar_scale: return "scalar_scale";
    case OpKind::reshape: return "reshape";
    case OpKind::weighted_bce: return "weighted_bce";
    case OpKind::average: return "average";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& what, std::span<const Shape> in) {
  std::string msg = std::string(op_name(kind)) + ": " + what + " (operands";
  for (const Shape& s : in) msg += " " + s.str();
  msg += ")";
  throw ShapeError(msg);
}

void expect_arity(OpKind kind, std::span<const Shape> in, std::size_t lo, std::size_t hi) {
  if (in.size() < lo || in.size() > hi) shape_fail(kind, "wrong operand count", in);
}

int conv_out(int extent, int kernel, int stride) { return (extent + 2 * (kernel / 2) - kernel) / stride + 1; }

template <typename S>
S sigmoid_of(S x) {
  if (x >= 0) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

/// Lower patch matrix of a zero-padded convolution: one row per output
/// position, columns ordered (ky, kx, c) to match the [kh,kw,Cin,Cout] kernel.
template <typename S>
RowMatrix<S> im2col(const Tensor<S>& x, int kh, int kw, int stride, int ho, int wo) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int py = kh / 2, px = kw / 2;
  RowMatrix<S> cols = RowMatrix<S>::Zero(static_cast<Eigen::Index>(ho) * wo, static_cast<Eigen::Index>(kh) * kw * c);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      S* row = cols.data() + (static_cast<Eigen::Index>(oy) * wo + ox) * cols.cols();
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - py + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - px + kx;
          if (ix < 0 || ix >= w) continue;
          const S* src = x.data() + (static_cast<std::size_t>(iy) * w + ix) * c;
          std::copy(src, src + c, row + (ky * kw + kx) * c);
        }
      }
    }
  }
  return cols;
}

template <typename S>
void col2im_add(const RowMatrix<S>& cols, int kh, int kw, int stride, int ho, int wo, Tensor<S>& dx) {
  const int h = dx.dim(0), w = dx.dim(1), c = dx.dim(2);
  const int py = kh / 2, px = kw / 2;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const S* row = cols.data() + (static_cast<Eigen::Index>(oy) * wo + ox) * cols.cols();
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - py + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - px + kx;
          if (ix < 0 || ix >= w) continue;
          S* dst = dx.data() + (static_cast<std::size_t>(iy) * w + ix) * c;
          const S* src = row + (ky * kw + kx) * c;
          for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

template <typename S>
bool is_pointwise(const Tensor<S>& weight, int stride) {
  return weight.dim(0) == 1 && weight.dim(1) == 1 && stride == 1;
}

}  // namespace

Shape infer_shape(OpKind kind, std::span<const Shape> in, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::leaf:
      shape_fail(kind, "leaves are not computed", in);
    case OpKind::conv2d: {
      expect_arity(kind, in, 2, 3);
      const Shape& x = in[0];
      const Shape& w = in[1];
      if (x.rank != 3) shape_fail(kind, "input must be [H,W,C]", in);
      if (w.rank != 4) shape_fail(kind, "kernel must be [kh,kw,Cin,Cout]", in);
      if (w[0] % 2 == 0 || w[1] % 2 == 0) shape_fail(kind, "kernel extents must be odd", in);
      if (w[2] != x[2]) shape_fail(kind, "kernel Cin does not match input channels", in);
      if (in.size() == 3 && !(in[2].rank == 1 && in[2][0] == w[3])) shape_fail(kind, "bias must be [Cout]", in);
      if (attrs.stride < 1) shape_fail(kind, "stride must be positive", in);
      return Shape{conv_out(x[0], w[0], attrs.stride), conv_out(x[1], w[1], attrs.stride), w[3]};
    }
    case OpKind::matmul:
      expect_arity(kind, in, 2, 2);
      if (in[0].rank != 2 || in[1].rank != 2 || in[0][1] != in[1][0]) shape_fail(kind, "inner dims differ", in);
      return Shape{in[0][0], in[1][1]};
    case OpKind::transpose:
      expect_arity(kind, in, 1, 1);
      if (in[0].rank != 2) shape_fail(kind, "operand must be a matrix", in);
      return Shape{in[0][1], in[0][0]};
    case OpKind::row_softmax:
      expect_arity(kind, in, 1, 1);
      if (in[0].rank != 2) shape_fail(kind, "operand must be a matrix", in);
      return in[0];
    case OpKind::sigmoid:
    case OpKind::tanh:
    case OpKind::relu:
      expect_arity(kind, in, 1, 1);
      return in[0];
    case OpKind::global_avg_pool:
      expect_arity(kind, in, 1, 1);
      if (in[0].rank != 3) shape_fail(kind, "input must be [H,W,C]", in);
      return Shape{in[0][2]};
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
      expect_arity(kind, in, 2, 2);
      if (in[0] != in[1]) shape_fail(kind, "operand shapes differ", in);
      return in[0];
    case OpKind::channel_broadcast_mul:
      expect_arity(kind, in, 2, 2);
      if (in[0].rank != 3 || in[1].rank != 1 || in[1][0] != in[0][2]) {
        shape_fail(kind, "expected [H,W,C] and [C]", in);
      }
      return in[0];
    case OpKind::concat_channels:
      expect_arity(kind, in, 2, 2);
      if (in[0].rank != 3 || in[1].rank != 3 || in[0][0] != in[1][0] || in[0][1] != in[1][1]) {
        shape_fail(kind, "expected [H,W,C1] and [H,W,C2]", in);
      }
      return Shape{in[0][0], in[0][1], in[0][2] + in[1][2]};
    case OpKind::scalar_scale:
      expect_arity(kind, in, 2, 2);
      if (in[1].rank != 1 || in[1][0] != 1) shape_fail(kind, "scale must be [1]", in);
      return in[0];
    case OpKind::reshape:
      expect_arity(kind, in, 1, 1);
      if (attrs.target.numel() != in[0].numel() || attrs.target.rank == 0) {
        shape_fail(kind, "target " + attrs.target.str() + " has a different element count", in);
      }
      return attrs.target;
    case OpKind::weighted_bce:
      expect_arity(kind, in, 2, 2);
      if (in[0] != in[1]) shape_fail(kind, "target and prediction shapes differ", in);
      return Shape{1};
    case OpKind::average:
      if (in.empty()) shape_fail(kind, "no operands", in);
      for (const Shape& s : in) {
        if (s != in[0]) shape_fail(kind, "operand shapes differ", in);
      }
      return in[0];
  }
  shape_fail(kind, "unknown op", in);
}

template <typename S>
S foreground_weight(const Tensor<S>& target) {
  const std::size_t n = target.size();
  std::size_t fg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const S v = target[i];
    if (v != S(0) && v != S(1)) {
      throw std::invalid_argument("weighted_bce: ground truth value " + std::to_string(static_cast<double>(v)) +
                                  " at index " + std::to_string(i) + " is not binary");
    }
    if (v == S(1)) ++fg;
  }
  const S lo = S(1) / static_cast<S>(n);
  const S eta = static_cast<S>(fg) / static_cast<S>(n);
  return std::clamp(eta, lo, S(1) - lo);
}

template <typename S>
Tensor<S> forward_kernel(OpKind kind, std::span<const Tensor<S>* const> in, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::leaf:
      throw TapeError("leaf has no forward kernel");
    case OpKind::conv2d: {
      const Tensor<S>& x = *in[0];
      const Tensor<S>& w = *in[1];
      const int kh = w.dim(0), kw = w.dim(1), cin = w.dim(2), cout = w.dim(3);
      const int ho = conv_out(x.dim(0), kh, attrs.stride), wo = conv_out(x.dim(1), kw, attrs.stride);
      Tensor<S> y(Shape{ho, wo, cout});
      auto wm = w.matrix(static_cast<Eigen::Index>(kh) * kw * cin, cout);
      if (is_pointwise(w, attrs.stride)) {
        y.as_matrix().noalias() = x.as_matrix() * wm;
      } else {
        y.as_matrix().noalias() = im2col(x, kh, kw, attrs.stride, ho, wo) * wm;
      }
      if (in.size() == 3) y.as_matrix().rowwise() += in[2]->matrix(1, cout).row(0);
      return y;
    }
    case OpKind::matmul: {
      Tensor<S> c(Shape{in[0]->dim(0), in[1]->dim(1)});
      c.as_matrix().noalias() = in[0]->as_matrix() * in[1]->as_matrix();
      return c;
    }
    case OpKind::transpose: {
      Tensor<S> t(Shape{in[0]->dim(1), in[0]->dim(0)});
      t.as_matrix() = in[0]->as_matrix().transpose();
      return t;
    }
    case OpKind::row_softmax: {
      const Tensor<S>& a = *in[0];
      Tensor<S> y(a.shape());
      const int rows = a.dim(0), cols = a.dim(1);
      for (int r = 0; r < rows; ++r) {
        const S* src = a.data() + static_cast<std::size_t>(r) * cols;
        S* dst = y.data() + static_cast<std::size_t>(r) * cols;
        const S peak = *std::max_element(src, src + cols);
        S total = 0;
        for (int c = 0; c < cols; ++c) {
          dst[c] = std::exp(src[c] - peak);
          total += dst[c];
        }
        for (int c = 0; c < cols; ++c) dst[c] /= total;
      }
      return y;
    }
    case OpKind::sigmoid: {
      Tensor<S> y(in[0]->shape());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid_of((*in[0])[i]);
      return y;
    }
    case OpKind::tanh: {
      Tensor<S> y(in[0]->shape());
      y.flat() = in[0]->flat().tanh();
      return y;
    }
    case OpKind::relu: {
      Tensor<S> y(in[0]->shape());
      y.flat() = in[0]->flat().max(S(0));
      return y;
    }
    case OpKind::global_avg_pool: {
      const Tensor<S>& x = *in[0];
      const int positions = x.dim(0) * x.dim(1), c = x.dim(2);
      Tensor<S> y(Shape{c});
      for (int p = 0; p < positions; ++p) {
        const S* row = x.data() + static_cast<std::size_t>(p) * c;
        for (int k = 0; k < c; ++k) y[k] += row[k];
      }
      y.flat() /= static_cast<S>(positions);
      return y;
    }
    case OpKind::add: {
      Tensor<S> y(in[0]->shape());
      y.flat() = in[0]->flat() + in[1]->flat();
      return y;
    }
    case OpKind::sub: {
      Tensor<S> y(in[0]->shape());
      y.flat() = in[0]->flat() - in[1]->flat();
      return y;
    }
    case OpKind::mul: {
      Tensor<S> y(in[0]->shape());
      y.flat() = in[0]->flat() * in[1]->flat();
      return y;
    }
    case OpKind::channel_broadcast_mul: {
      const Tensor<S>& x = *in[0];
      Tensor<S> y(x.shape());
      const Eigen::Index c = x.dim(2);
      y.as_matrix() = x.as_matrix().array().rowwise() * in[1]->matrix(1, c).array().row(0);
      return y;
    }
    case OpKind::concat_channels: {
      const Tensor<S>& a = *in[0];
      const Tensor<S>& b = *in[1];
      const int ca = a.dim(2), cb = b.dim(2);
      Tensor<S> y(Shape{a.dim(0), a.dim(1), ca + cb});
      y.as_matrix().leftCols(ca) = a.as_matrix();
      y.as_matrix().rightCols(cb) = b.as_matrix();
      return y;
    }
    case OpKind::scalar_scale: {
      Tensor<S> y(in[0]->shape());
      y.flat() = in[0]->flat() * (*in[1])[0];
      return y;
    }
    case OpKind::reshape:
      return in[0]->reshaped(attrs.target);
    case OpKind::weighted_bce: {
      const Tensor<S>& target = *in[0];
      const Tensor<S>& pred = *in[1];
      const S eta = foreground_weight(target);
      const S floor = S(1e-12);
      S loss = 0;
      for (std::size_t i = 0; i < target.size(); ++i) {
        const S s = target[i];
        const S p = pred[i];
        if (s == S(1)) {
          loss -= (S(1) - eta) * std::log(std::max(p, floor));
        } else {
          loss -= eta * std::log(std::max(S(1) - p, floor));
        }
      }
      return Tensor<S>(Shape{1}, std::vector<S>{loss});
    }
    case OpKind::average: {
      Tensor<S> y(in[0]->shape());
      for (const Tensor<S>* t : in) y.flat() += t->flat();
      y.flat() /= static_cast<S>(in.size());
      return y;
    }
  }
  throw TapeError("unknown op kind");
}

template <typename S>
std::vector<Tensor<S>> backward_kernel(OpKind kind, std::span<const Tensor<S>* const> in, const Tensor<S>& out,
                                       const Tensor<S>& gy, const OpAttrs& attrs) {
  std::vector<Tensor<S>> g(in.size());
  switch (kind) {
    case OpKind::leaf:
      break;
    case OpKind::conv2d: {
      const Tensor<S>& x = *in[0];
      const Tensor<S>& w = *in[1];
      const int kh = w.dim(0), kw = w.dim(1), cin = w.dim(2), cout = w.dim(3);
      const int ho = out.dim(0), wo = out.dim(1);
      const Eigen::Index patch = static_cast<Eigen::Index>(kh) * kw * cin;
      auto wm = w.matrix(patch, cout);
      auto gm = gy.as_matrix();
      g[0] = Tensor<S>(x.shape());
      g[1] = Tensor<S>(w.shape());
      if (is_pointwise(w, attrs.stride)) {
        g[1].matrix(patch, cout).noalias() = x.as_matrix().transpose() * gm;
        g[0].as_matrix().noalias() = gm * wm.transpose();
      } else {
        const RowMatrix<S> cols = im2col(x, kh, kw, attrs.stride, ho, wo);
        g[1].matrix(patch, cout).noalias() = cols.transpose() * gm;
        const RowMatrix<S> dcols = gm * wm.transpose();
        col2im_add(dcols, kh, kw, attrs.stride, ho, wo, g[0]);
      }
      if (in.size() == 3) {
        g[2] = Tensor<S>(Shape{cout});
        for (Eigen::Index r = 0; r < gm.rows(); ++r) {
          for (int k = 0; k < cout; ++k) g[2][k] += gm(r, k);
        }
      }
      break;
    }
    case OpKind::matmul: {
      g[0] = Tensor<S>(in[0]->shape());
      g[1] = Tensor<S>(in[1]->shape());
      g[0].as_matrix().noalias() = gy.as_matrix() * in[1]->as_matrix().transpose();
      g[1].as_matrix().noalias() = in[0]->as_matrix().transpose() * gy.as_matrix();
      break;
    }
    case OpKind::transpose: {
      g[0] = Tensor<S>(in[0]->shape());
      g[0].as_matrix() = gy.as_matrix().transpose();
      break;
    }
    case OpKind::row_softmax: {
      g[0] = Tensor<S>(in[0]->shape());
      const int rows = out.dim(0), cols = out.dim(1);
      for (int r = 0; r < rows; ++r) {
        const S* y = out.data() + static_cast<std::size_t>(r) * cols;
        const S* dy = gy.data() + static_cast<std::size_t>(r) * cols;
        S* dx = g[0].data() + static_cast<std::size_t>(r) * cols;
        S inner = 0;
        for (int c = 0; c < cols; ++c) inner += dy[c] * y[c];
        for (int c = 0; c < cols; ++c) dx[c] = y[c] * (dy[c] - inner);
      }
      break;
    }
    case OpKind::sigmoid:
      g[0] = Tensor<S>(out.shape());
      g[0].flat() = gy.flat() * out.flat() * (S(1) - out.flat());
      break;
    case OpKind::tanh:
      g[0] = Tensor<S>(out.shape());
      g[0].flat() = gy.flat() * (S(1) - out.flat().square());
      break;
    case OpKind::relu:
      g[0] = Tensor<S>(out.shape());
      g[0].flat() = (in[0]->flat() > S(0)).select(gy.flat(), S(0));
      break;
    case OpKind::global_avg_pool: {
      const Tensor<S>& x = *in[0];
      const int positions = x.dim(0) * x.dim(1);
      g[0] = Tensor<S>(x.shape());
      g[0].as_matrix().rowwise() = gy.matrix(1, x.dim(2)).row(0) / static_cast<S>(positions);
      break;
    }
    case OpKind::add:
      g[0] = gy;
      g[1] = gy;
      break;
    case OpKind::sub:
      g[0] = gy;
      g[1] = Tensor<S>(gy.shape());
      g[1].flat() = -gy.flat();
      break;
    case OpKind::mul:
      g[0] = Tensor<S>(gy.shape());
      g[1] = Tensor<S>(gy.shape());
      g[0].flat() = gy.flat() * in[1]->flat();
      g[1].flat() = gy.flat() * in[0]->flat();
      break;
    case OpKind::channel_broadcast_mul: {
      const Tensor<S>& x = *in[0];
      const int c = x.dim(2), positions = x.dim(0) * x.dim(1);
      g[0] = Tensor<S>(x.shape());
      g[0].as_matrix() = gy.as_matrix().array().rowwise() * in[1]->matrix(1, c).array().row(0);
      g[1] = Tensor<S>(Shape{c});
      for (int p = 0; p < positions; ++p) {
        const S* dy = gy.data() + static_cast<std::size_t>(p) * c;
        const S* xv = x.data() + static_cast<std::size_t>(p) * c;
        for (int k = 0; k < c; ++k) g[1][k] += dy[k] * xv[k];
      }
      break;
    }
    case OpKind::concat_channels: {
      const int ca = in[0]->dim(2), cb = in[1]->dim(2);
      g[0] = Tensor<S>(in[0]->shape());
      g[1] = Tensor<S>(in[1]->shape());
      g[0].as_matrix() = gy.as_matrix().leftCols(ca);
      g[1].as_matrix() = gy.as_matrix().rightCols(cb);
      break;
    }
    case OpKind::scalar_scale: {
      g[0] = Tensor<S>(gy.shape());
      g[0].flat() = gy.flat() * (*in[1])[0];
      S acc = 0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * (*in[0])[i];
      g[1] = Tensor<S>(Shape{1}, std::vector<S>{acc});
      break;
    }
    case OpKind::reshape:
      g[0] = gy.reshaped(in[0]->shape());
      break;
    case OpKind::weighted_bce: {
      // The ground truth is data; only the prediction receives a gradient.
      const Tensor<S>& target = *in[0];
      const Tensor<S>& pred = *in[1];
      const S eta = foreground_weight(target);
      const S floor = S(1e-12);
      g[1] = Tensor<S>(pred.shape());
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const S p = pred[i];
        if (target[i] == S(1)) {
          if (p > floor) g[1][i] = -(S(1) - eta) / p;
        } else {
          if (S(1) - p > floor) g[1][i] = eta / (S(1) - p);
        }
      }
      g[1].flat() *= gy[0];
      break;
    }
    case OpKind::average:
      for (std::size_t k = 0; k < in.size(); ++k) {
        g[k] = Tensor<S>(gy.shape());
        g[k].flat() = gy.flat() / static_cast<S>(in.size());
      }
      break;
  }
  return g;
}

#define AGNN_INSTANTIATE_OPS(S)                                                                          \
  template S foreground_weight<S>(const Tensor<S>&);                                                     \
  template Tensor<S> forward_kernel<S>(OpKind, std::span<const Tensor<S>* const>, const OpAttrs&);      \
  template std::vector<Tensor<S>> backward_kernel<S>(OpKind, std::span<const Tensor<S>* const>,          \
                                                     const Tensor<S>&, const Tensor<S>&, const OpAttrs&);

AGNN_INSTANTIATE_OPS(double)
AGNN_INSTANTIATE_OPS(float)

#undef AGNN_INSTANTIATE_OPS

}  // namespace agnn
