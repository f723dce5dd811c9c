#pragma once

#include "dosgan/tensor.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dosgan {

/// A learnable array and its accumulated gradient.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value = Matrix<Scalar>::Zero(rows, cols);
    grad = Matrix<Scalar>::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
};

template <typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>*>;

template <typename Scalar>
using ConstParameterList = std::vector<const Parameter<Scalar>*>;

/// Activations saved during a forward pass for the matching backward pass.
/// Layers pop in exactly the reverse order they pushed, so one tape can hold a
/// whole network evaluation and several tapes can coexist for one network.
template <typename Scalar>
class Tape {
 public:
  void push(Tensor<Scalar> t) { tensors_.push_back(std::move(t)); }
  void push(Matrix<Scalar> m) { matrices_.push_back(std::move(m)); }

  Tensor<Scalar> pop_tensor() {
    if (tensors_.empty()) throw Error("tape underflow (tensor)");
    Tensor<Scalar> t = std::move(tensors_.back());
    tensors_.pop_back();
    return t;
  }
  Matrix<Scalar> pop_matrix() {
    if (matrices_.empty()) throw Error("tape underflow (matrix)");
    Matrix<Scalar> m = std::move(matrices_.back());
    matrices_.pop_back();
    return m;
  }
  bool empty() const { return tensors_.empty() && matrices_.empty(); }

 private:
  std::vector<Tensor<Scalar>> tensors_;
  std::vector<Matrix<Scalar>> matrices_;
};

struct ConvGeometry {
  int channels = 0;
  int in_h = 0;
  int in_w = 0;
  int kernel = 1;
  int stride = 1;
  int pad_lo = 0;
  int pad_hi = 0;

  int out_h() const { return (in_h + pad_lo + pad_hi - kernel) / stride + 1; }
  int out_w() const { return (in_w + pad_lo + pad_hi - kernel) / stride + 1; }
  int patch() const { return channels * kernel * kernel; }
};

/// Unfolds one CHW image into a [out_h*out_w, C*k*k] patch matrix.
template <typename Scalar>
void im2col(const ConvGeometry& g, const Scalar* image, Matrix<Scalar>& col) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int k = g.kernel;
  col.resize(Eigen::Index(oh) * ow, g.patch());
  for (int c = 0; c < g.channels; ++c) {
    const Scalar* plane = image + std::int64_t(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = col.col((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad_lo + ky;
          Scalar* row = dst + oy * ow;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(row, row + ow, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * g.in_w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad_lo + kx;
            row[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters (accumulates) a patch matrix back into an image.
template <typename Scalar>
void col2im(const ConvGeometry& g, const Matrix<Scalar>& col, Scalar* image) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    Scalar* plane = image + std::int64_t(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = col.col((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad_lo + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          Scalar* dst = plane + iy * g.in_w;
          const Scalar* row = src + oy * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad_lo + kx;
            if (ix >= 0 && ix < g.in_w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar, typename Rng>
void init_normal(Matrix<Scalar>& m, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = Scalar(dist(rng));
}

/// Standard weight init for every layer here: N(0, 0.02) weights, zero biases.
inline constexpr double kInitStddev = 0.02;

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_c, int out_c, int kernel, int stride, int pad_lo, int pad_hi)
      : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), pad_lo_(pad_lo), pad_hi_(pad_hi) {
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.resize(Eigen::Index(in_c) * kernel * kernel, out_c);
    bias.resize(1, out_c);
  }

  template <typename Rng>
  void init(Rng& rng) {
    init_normal(weight.value, rng, kInitStddev);
    bias.value.setZero();
  }

  ConvGeometry geometry(int h, int w) const { return {in_c_, h, w, kernel_, stride_, pad_lo_, pad_hi_}; }

  Shape4 output_shape(const Shape4& in) const {
    const ConvGeometry g = geometry(in.h, in.w);
    return {in.n, out_c_, g.out_h(), g.out_w()};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Tape<Scalar>* tape) const {
    const Shape4& s = x.shape();
    if (s.c != in_c_) throw Error(weight.name + ": expected " + std::to_string(in_c_) + " channels, got " + to_string(s));
    const ConvGeometry g = geometry(s.h, s.w);
    Tensor<Scalar> y(output_shape(s));
    Matrix<Scalar> col;
    for (int n = 0; n < s.n; ++n) {
      im2col(g, x.image_ptr(n), col);
      auto out = y.image(n);
      out.noalias() = col * weight.value;
      out.rowwise() += bias.value.row(0);
    }
    if (tape) tape->push(x);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, Tape<Scalar>& tape, bool param_grads) {
    const Tensor<Scalar> x = tape.pop_tensor();
    const Shape4& s = x.shape();
    const ConvGeometry g = geometry(s.h, s.w);
    Tensor<Scalar> dx(s);
    Matrix<Scalar> col;
    Matrix<Scalar> dcol;
    for (int n = 0; n < s.n; ++n) {
      const auto dout = dy.image(n);
      if (param_grads) {
        im2col(g, x.image_ptr(n), col);
        weight.grad.noalias() += col.transpose() * dout;
        bias.grad.row(0) += dout.colwise().sum();
      }
      dcol.noalias() = dout * weight.value.transpose();
      col2im(g, dcol, dx.image_ptr(n));
    }
    return dx;
  }

  void collect(ParameterList<Scalar>& out) { out.push_back(&weight); out.push_back(&bias); }
  void collect(ConstParameterList<Scalar>& out) const { out.push_back(&weight); out.push_back(&bias); }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;

 private:
  int in_c_ = 0;
  int out_c_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_lo_ = 0;
  int pad_hi_ = 0;
};

/// Fractionally-strided convolution, realised as the exact adjoint of a
/// Conv2d mapping the (larger) output back to the input grid. With kernel 3,
/// stride 2, pad_lo 1, pad_hi 0 it doubles the spatial size.
template <typename Scalar>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in_c, int out_c, int kernel, int stride, int pad_lo, int pad_hi)
      : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), pad_lo_(pad_lo), pad_hi_(pad_hi) {
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.resize(Eigen::Index(out_c) * kernel * kernel, in_c);
    bias.resize(1, out_c);
  }

  template <typename Rng>
  void init(Rng& rng) {
    init_normal(weight.value, rng, kInitStddev);
    bias.value.setZero();
  }

  /// Output spatial size is stride * input size.
  Shape4 output_shape(const Shape4& in) const { return {in.n, out_c_, in.h * stride_, in.w * stride_}; }

  ConvGeometry geometry(int out_h, int out_w) const {
    return {out_c_, out_h, out_w, kernel_, stride_, pad_lo_, pad_hi_};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Tape<Scalar>* tape) const {
    const Shape4& s = x.shape();
    if (s.c != in_c_) throw Error(weight.name + ": expected " + std::to_string(in_c_) + " channels, got " + to_string(s));
    const Shape4 os = output_shape(s);
    const ConvGeometry g = geometry(os.h, os.w);
    if (g.out_h() != s.h || g.out_w() != s.w) throw Error(weight.name + ": inconsistent transposed geometry");
    Tensor<Scalar> y(os);
    Matrix<Scalar> col;
    for (int n = 0; n < s.n; ++n) {
      col.noalias() = x.image(n) * weight.value.transpose();
      col2im(g, col, y.image_ptr(n));
      y.image(n).rowwise() += bias.value.row(0);
    }
    if (tape) tape->push(x);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, Tape<Scalar>& tape, bool param_grads) {
    const Tensor<Scalar> x = tape.pop_tensor();
    const Shape4& s = x.shape();
    const ConvGeometry g = geometry(dy.shape().h, dy.shape().w);
    Tensor<Scalar> dx(s);
    Matrix<Scalar> dcol;
    for (int n = 0; n < s.n; ++n) {
      im2col(g, dy.image_ptr(n), dcol);
      dx.image(n).noalias() = dcol * weight.value;
      if (param_grads) {
        weight.grad.noalias() += dcol.transpose() * x.image(n);
        bias.grad.row(0) += dy.image(n).colwise().sum();
      }
    }
    return dx;
  }

  void collect(ParameterList<Scalar>& out) { out.push_back(&weight); out.push_back(&bias); }
  void collect(ConstParameterList<Scalar>& out) const { out.push_back(&weight); out.push_back(&bias); }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;

 private:
  int in_c_ = 0;
  int out_c_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_lo_ = 0;
  int pad_hi_ = 0;
};

/// Per-image, per-channel normalization over the spatial plane with a
/// learnable affine transform.
template <typename Scalar>
class InstanceNorm2d {
 public:
  InstanceNorm2d() = default;
  InstanceNorm2d(const std::string& name, int channels) {
    gamma.name = name + ".gamma";
    beta.name = name + ".beta";
    gamma.resize(1, channels);
    beta.resize(1, channels);
    gamma.value.setOnes();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Tape<Scalar>* tape) const {
    const Shape4& s = x.shape();
    if (s.c != gamma.value.cols()) throw Error(gamma.name + ": channel mismatch " + to_string(s));
    Tensor<Scalar> y(s);
    Tensor<Scalar> xhat(s);
    Tensor<Scalar> inv_std(Shape4{s.n, s.c, 1, 1});
    const Scalar inv_count = Scalar(1) / Scalar(s.plane());
    for (int n = 0; n < s.n; ++n) {
      const auto in = x.image(n);
      auto out = y.image(n);
      auto xh = xhat.image(n);
      for (int c = 0; c < s.c; ++c) {
        const Scalar mean = in.col(c).sum() * inv_count;
        const Scalar var = (in.col(c).array() - mean).square().sum() * inv_count;
        const Scalar is = Scalar(1) / std::sqrt(var + Scalar(kEps));
        xh.col(c) = (in.col(c).array() - mean) * is;
        out.col(c) = xh.col(c).array() * gamma.value(0, c) + beta.value(0, c);
        inv_std(n, c, 0, 0) = is;
      }
    }
    if (tape) {
      tape->push(std::move(xhat));
      tape->push(std::move(inv_std));
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, Tape<Scalar>& tape, bool param_grads) {
    const Tensor<Scalar> inv_std = tape.pop_tensor();
    const Tensor<Scalar> xhat = tape.pop_tensor();
    const Shape4& s = xhat.shape();
    Tensor<Scalar> dx(s);
    const Scalar inv_count = Scalar(1) / Scalar(s.plane());
    for (int n = 0; n < s.n; ++n) {
      const auto g = dy.image(n);
      const auto xh = xhat.image(n);
      auto out = dx.image(n);
      for (int c = 0; c < s.c; ++c) {
        if (param_grads) {
          gamma.grad(0, c) += g.col(c).dot(xh.col(c));
          beta.grad(0, c) += g.col(c).sum();
        }
        const auto dxhat = (g.col(c).array() * gamma.value(0, c)).eval();
        const Scalar mean_d = dxhat.sum() * inv_count;
        const Scalar mean_dx = (dxhat * xh.col(c).array()).sum() * inv_count;
        out.col(c) = (dxhat - mean_d - xh.col(c).array() * mean_dx) * inv_std(n, c, 0, 0);
      }
    }
    return dx;
  }

  void collect(ParameterList<Scalar>& out) { out.push_back(&gamma); out.push_back(&beta); }
  void collect(ConstParameterList<Scalar>& out) const { out.push_back(&gamma); out.push_back(&beta); }

  Parameter<Scalar> gamma;
  Parameter<Scalar> beta;

 private:
  static constexpr double kEps = 1e-5;
};

/// Fully connected map on [K, in] row batches.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out) {
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.resize(in, out);
    bias.resize(1, out);
  }

  template <typename Rng>
  void init(Rng& rng) {
    init_normal(weight.value, rng, kInitStddev);
    bias.value.setZero();
  }

  Eigen::Index in_features() const { return weight.value.rows(); }
  Eigen::Index out_features() const { return weight.value.cols(); }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, Tape<Scalar>* tape) const {
    if (x.cols() != weight.value.rows())
      throw Error(weight.name + ": expected width " + std::to_string(weight.value.rows()) + ", got " +
                  std::to_string(x.cols()));
    Matrix<Scalar> y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    if (tape) tape->push(x);
    return y;
  }

  Matrix<Scalar> backward(const Matrix<Scalar>& dy, Tape<Scalar>& tape, bool param_grads) {
    const Matrix<Scalar> x = tape.pop_matrix();
    if (param_grads) {
      weight.grad.noalias() += x.transpose() * dy;
      bias.grad.row(0) += dy.colwise().sum();
    }
    return dy * weight.value.transpose();
  }

  void collect(ParameterList<Scalar>& out) { out.push_back(&weight); out.push_back(&bias); }
  void collect(ConstParameterList<Scalar>& out) const { out.push_back(&weight); out.push_back(&bias); }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
};

// Pointwise nonlinearities. Each saves its output, which is enough to form
// the local derivative.

template <typename Scalar>
Tensor<Scalar> relu_forward(Tensor<Scalar> x, Tape<Scalar>* tape, Scalar negative_slope = Scalar(0)) {
  x.data() = (x.data().array() > Scalar(0)).select(x.data().array(), x.data().array() * negative_slope);
  if (tape) tape->push(x);
  return x;
}

template <typename Scalar>
Tensor<Scalar> relu_backward(Tensor<Scalar> dy, Tape<Scalar>& tape, Scalar negative_slope = Scalar(0)) {
  const Tensor<Scalar> y = tape.pop_tensor();
  dy.data() = (y.data().array() > Scalar(0)).select(dy.data().array(), dy.data().array() * negative_slope);
  return dy;
}

template <typename Scalar>
Tensor<Scalar> tanh_forward(Tensor<Scalar> x, Tape<Scalar>* tape) {
  x.data() = x.data().array().tanh();
  if (tape) tape->push(x);
  return x;
}

template <typename Scalar>
Tensor<Scalar> tanh_backward(Tensor<Scalar> dy, Tape<Scalar>& tape) {
  const Tensor<Scalar> y = tape.pop_tensor();
  dy.data() = dy.data().array() * (Scalar(1) - y.data().array().square());
  return dy;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_forward(Tensor<Scalar> x, Tape<Scalar>* tape) {
  x.data() = (Scalar(1) + (-x.data().array()).exp()).inverse();
  if (tape) tape->push(x);
  return x;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(Tensor<Scalar> dy, Tape<Scalar>& tape) {
  const Tensor<Scalar> y = tape.pop_tensor();
  dy.data() = dy.data().array() * y.data().array() * (Scalar(1) - y.data().array());
  return dy;
}

/// [K, C, h, w] -> [K, C] by averaging each plane.
template <typename Scalar>
Matrix<Scalar> spatial_mean(const Tensor<Scalar>& x) {
  const Shape4& s = x.shape();
  Matrix<Scalar> out(s.n, s.c);
  for (int n = 0; n < s.n; ++n) out.row(n) = x.image(n).colwise().mean();
  return out;
}

template <typename Scalar>
Tensor<Scalar> spatial_mean_backward(const Matrix<Scalar>& dy, int h, int w) {
  Tensor<Scalar> dx(Shape4{int(dy.rows()), int(dy.cols()), h, w});
  const Scalar scale = Scalar(1) / Scalar(h * w);
  for (int n = 0; n < dx.shape().n; ++n) dx.image(n).rowwise() = dy.row(n) * scale;
  return dx;
}

/// Two 3x3 convolutions with instance norm, ReLU between them, identity skip.
template <typename Scalar>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int channels)
      : conv1_(name + ".conv1", channels, channels, 3, 1, 1, 1),
        norm1_(name + ".norm1", channels),
        conv2_(name + ".conv2", channels, channels, 3, 1, 1, 1),
        norm2_(name + ".norm2", channels) {}

  template <typename Rng>
  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Tape<Scalar>* tape) const {
    Tensor<Scalar> h = conv1_.forward(x, tape);
    h = norm1_.forward(h, tape);
    h = relu_forward(std::move(h), tape);
    h = conv2_.forward(h, tape);
    h = norm2_.forward(h, tape);
    h.data() += x.data();
    return h;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, Tape<Scalar>& tape, bool param_grads) {
    Tensor<Scalar> g = norm2_.backward(dy, tape, param_grads);
    g = conv2_.backward(g, tape, param_grads);
    g = relu_backward(std::move(g), tape);
    g = norm1_.backward(g, tape, param_grads);
    g = conv1_.backward(g, tape, param_grads);
    g.data() += dy.data();
    return g;
  }

  template <typename List>
  void collect(List& out) {
    conv1_.collect(out);
    norm1_.collect(out);
    conv2_.collect(out);
    norm2_.collect(out);
  }
  template <typename List>
  void collect(List& out) const {
    conv1_.collect(out);
    norm1_.collect(out);
    conv2_.collect(out);
    norm2_.collect(out);
  }

 private:
  Conv2d<Scalar> conv1_;
  InstanceNorm2d<Scalar> norm1_;
  Conv2d<Scalar> conv2_;
  InstanceNorm2d<Scalar> norm2_;
};

}  // namespace dosgan
