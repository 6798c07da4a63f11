#include "nn/layers.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>

namespace hgd::nn {

namespace {

using RowMat =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXf;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

// Unpack one sample into a (in_ch*k*k) x (out_h*out_w) matrix.
void im2col(const float* x, int ch, int h, int w, int kernel, int stride,
            int pad, int out_h, int out_w, ColMat& col) {
  col.setZero();
  for (int c = 0; c < ch; ++c) {
    for (int kh = 0; kh < kernel; ++kh) {
      for (int kw = 0; kw < kernel; ++kw) {
        int row = (c * kernel + kh) * kernel + kw;
        for (int oh = 0; oh < out_h; ++oh) {
          int ih = oh * stride + kh - pad;
          if (ih < 0 || ih >= h) continue;
          for (int ow = 0; ow < out_w; ++ow) {
            int iw = ow * stride + kw - pad;
            if (iw < 0 || iw >= w) continue;
            col(row, oh * out_w + ow) = x[(c * h + ih) * w + iw];
          }
        }
      }
    }
  }
}

void col2im(const ColMat& col, int ch, int h, int w, int kernel, int stride,
            int pad, int out_h, int out_w, float* dx) {
  for (int c = 0; c < ch; ++c) {
    for (int kh = 0; kh < kernel; ++kh) {
      for (int kw = 0; kw < kernel; ++kw) {
        int row = (c * kernel + kh) * kernel + kw;
        for (int oh = 0; oh < out_h; ++oh) {
          int ih = oh * stride + kh - pad;
          if (ih < 0 || ih >= h) continue;
          for (int ow = 0; ow < out_w; ++ow) {
            int iw = ow * stride + kw - pad;
            if (iw < 0 || iw >= w) continue;
            dx[(c * h + ih) * w + iw] += col(row, oh * out_w + ow);
          }
        }
      }
    }
  }
}

}  // namespace

void zero_grads(std::vector<ParamRef>& params) {
  for (auto& p : params) std::fill(p.grad->begin(), p.grad->end(), 0.f);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_(std::size_t(out_ch) * in_ch * kernel * kernel),
      bias_(out_ch, 0.f),
      weight_grad_(weight_.size(), 0.f),
      bias_grad_(out_ch, 0.f) {
  // He initialization.
  float std = std::sqrt(2.f / float(in_ch * kernel * kernel));
  for (auto& v : weight_) v = rng.normal(0.f, std);
}

Shape Conv2d::output_shape(Shape in) const {
  return Shape{in.n, out_ch_, (in.h + 2 * pad_ - kernel_) / stride_ + 1,
               (in.w + 2 * pad_ - kernel_) / stride_ + 1};
}

Tensor Conv2d::forward(const Tensor& x, bool) {
  if (x.shape().c != in_ch_)
    throw ShapeError("conv input channels " + std::to_string(x.shape().c) +
                     ", expected " + std::to_string(in_ch_));
  input_ = x;
  Shape os = output_shape(x.shape());
  Tensor y(os);
  int hw = os.h * os.w;
  ColMat col(in_ch_ * kernel_ * kernel_, hw);
  ConstRowMap wmat(weight_.data(), out_ch_, in_ch_ * kernel_ * kernel_);
  std::int64_t in_per = std::int64_t(x.shape().c) * x.shape().h * x.shape().w;
  std::int64_t out_per = std::int64_t(os.c) * hw;
  for (int n = 0; n < x.shape().n; ++n) {
    im2col(x.data() + n * in_per, in_ch_, x.shape().h, x.shape().w, kernel_,
           stride_, pad_, os.h, os.w, col);
    RowMap ymat(y.data() + n * out_per, out_ch_, hw);
    ymat.noalias() = wmat * col;
    for (int c = 0; c < out_ch_; ++c) ymat.row(c).array() += bias_[c];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  Shape os = grad_out.shape();
  int hw = os.h * os.w;
  Tensor dx(x.shape());
  ColMat col(in_ch_ * kernel_ * kernel_, hw);
  ColMat dcol(in_ch_ * kernel_ * kernel_, hw);
  ConstRowMap wmat(weight_.data(), out_ch_, in_ch_ * kernel_ * kernel_);
  RowMap dwmat(weight_grad_.data(), out_ch_, in_ch_ * kernel_ * kernel_);
  std::int64_t in_per = std::int64_t(x.shape().c) * x.shape().h * x.shape().w;
  std::int64_t out_per = std::int64_t(os.c) * hw;
  for (int n = 0; n < x.shape().n; ++n) {
    im2col(x.data() + n * in_per, in_ch_, x.shape().h, x.shape().w, kernel_,
           stride_, pad_, os.h, os.w, col);
    ConstRowMap dy(grad_out.data() + n * out_per, out_ch_, hw);
    dwmat.noalias() += dy * col.transpose();
    for (int c = 0; c < out_ch_; ++c) bias_grad_[c] += dy.row(c).sum();
    dcol.noalias() = wmat.transpose() * dy;
    col2im(dcol, in_ch_, x.shape().h, x.shape().w, kernel_, stride_, pad_,
           os.h, os.w, dx.data() + n * in_per);
  }
  return dx;
}

void Conv2d::collect_params(const std::string& prefix,
                            std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight_, &weight_grad_});
  out.push_back({prefix + ".bias", &bias_, &bias_grad_});
}

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(channels, 1.f),
      beta_(channels, 0.f),
      gamma_grad_(channels, 0.f),
      beta_grad_(channels, 0.f),
      running_mean_(channels, 0.f),
      running_var_(channels, 1.f),
      invstd_(channels, 0.f) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  in_shape_ = x.shape();
  train_mode_ = train;
  int n = x.shape().n, h = x.shape().h, w = x.shape().w;
  std::int64_t per_ch = std::int64_t(n) * h * w;
  Tensor y(x.shape());
  xhat_ = Tensor(x.shape());
  for (int c = 0; c < channels_; ++c) {
    float mean, var;
    if (train) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < h * w; ++j) {
          float v = x.data()[(std::int64_t(i) * channels_ + c) * h * w + j];
          s += v;
          s2 += double(v) * v;
        }
      mean = float(s / double(per_ch));
      var = float(s2 / double(per_ch)) - mean * mean;
      if (var < 0.f) var = 0.f;
      running_mean_[c] = (1 - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (1 - momentum_) * running_var_[c] + momentum_ * var;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    float invstd = 1.f / std::sqrt(var + eps_);
    invstd_[c] = invstd;
    for (int i = 0; i < n; ++i) {
      std::int64_t base = (std::int64_t(i) * channels_ + c) * h * w;
      for (int j = 0; j < h * w; ++j) {
        float xh = (x.data()[base + j] - mean) * invstd;
        xhat_.data()[base + j] = xh;
        y.data()[base + j] = gamma_[c] * xh + beta_[c];
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  int n = in_shape_.n, h = in_shape_.h, w = in_shape_.w;
  std::int64_t m = std::int64_t(n) * h * w;
  Tensor dx(in_shape_);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      std::int64_t base = (std::int64_t(i) * channels_ + c) * h * w;
      for (int j = 0; j < h * w; ++j) {
        float dy = grad_out.data()[base + j];
        sum_dy += dy;
        sum_dy_xhat += double(dy) * xhat_.data()[base + j];
      }
    }
    gamma_grad_[c] += float(sum_dy_xhat);
    beta_grad_[c] += float(sum_dy);
    float g = gamma_[c] * invstd_[c];
    if (train_mode_) {
      float inv_m = 1.f / float(m);
      for (int i = 0; i < n; ++i) {
        std::int64_t base = (std::int64_t(i) * channels_ + c) * h * w;
        for (int j = 0; j < h * w; ++j) {
          float dy = grad_out.data()[base + j];
          float xh = xhat_.data()[base + j];
          dx.data()[base + j] =
              g * (dy - inv_m * (float(sum_dy) + xh * float(sum_dy_xhat)));
        }
      }
    } else {
      for (int i = 0; i < n; ++i) {
        std::int64_t base = (std::int64_t(i) * channels_ + c) * h * w;
        for (int j = 0; j < h * w; ++j)
          dx.data()[base + j] = g * grad_out.data()[base + j];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect_params(const std::string& prefix,
                                 std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", &gamma_, &gamma_grad_});
  out.push_back({prefix + ".beta", &beta_, &beta_grad_});
}

void BatchNorm2d::collect_buffers(const std::string& prefix,
                                  std::vector<BufferRef>& out) {
  out.push_back({prefix + ".running_mean", &running_mean_});
  out.push_back({prefix + ".running_var", &running_var_});
}

// ------------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  mask_.assign(std::size_t(x.size()), 0);
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.f) {
      y[i] = x[i];
      mask_[std::size_t(i)] = 1;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  for (std::int64_t i = 0; i < dx.size(); ++i)
    dx[i] = mask_[std::size_t(i)] ? grad_out[i] : 0.f;
  return dx;
}

// ----------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features, Rng& rng)
    : in_features_(in_features),
      out_features_(out_features),
      weight_(std::size_t(out_features) * in_features),
      bias_(out_features, 0.f),
      weight_grad_(weight_.size(), 0.f),
      bias_grad_(out_features, 0.f) {
  float std = std::sqrt(2.f / float(in_features));
  for (auto& v : weight_) v = rng.normal(0.f, std);
}

Shape Linear::output_shape(Shape in) const {
  return Shape{in.n, out_features_, 1, 1};
}

Tensor Linear::forward(const Tensor& x, bool) {
  std::int64_t d = std::int64_t(x.shape().c) * x.shape().h * x.shape().w;
  if (d != in_features_)
    throw ShapeError("linear input features " + std::to_string(d) +
                     ", expected " + std::to_string(in_features_));
  input_ = x;
  int n = x.shape().n;
  Tensor y(n, out_features_, 1, 1);
  ConstRowMap xm(x.data(), n, in_features_);
  ConstRowMap wm(weight_.data(), out_features_, in_features_);
  RowMap ym(y.data(), n, out_features_);
  ym.noalias() = xm * wm.transpose();
  for (int c = 0; c < out_features_; ++c) ym.col(c).array() += bias_[c];
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  int n = input_.shape().n;
  ConstRowMap dym(grad_out.data(), n, out_features_);
  ConstRowMap xm(input_.data(), n, in_features_);
  ConstRowMap wm(weight_.data(), out_features_, in_features_);
  RowMap dwm(weight_grad_.data(), out_features_, in_features_);
  dwm.noalias() += dym.transpose() * xm;
  for (int c = 0; c < out_features_; ++c) bias_grad_[c] += dym.col(c).sum();
  Tensor dx(input_.shape());
  RowMap dxm(dx.data(), n, in_features_);
  dxm.noalias() = dym * wm;
  return dx;
}

void Linear::collect_params(const std::string& prefix,
                            std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight_, &weight_grad_});
  out.push_back({prefix + ".bias", &bias_, &bias_grad_});
}

// ---------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  int n = x.shape().n, c = x.shape().c, hw = x.shape().h * x.shape().w;
  Tensor y(n, c, 1, 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double s = 0.0;
      const float* p = x.data() + (std::int64_t(i) * c + j) * hw;
      for (int k = 0; k < hw; ++k) s += p[k];
      y.at(i, j, 0, 0) = float(s / hw);
    }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  int n = in_shape_.n, c = in_shape_.c, hw = in_shape_.h * in_shape_.w;
  Tensor dx(in_shape_);
  float inv = 1.f / float(hw);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      float g = grad_out.at(i, j, 0, 0) * inv;
      float* p = dx.data() + (std::int64_t(i) * c + j) * hw;
      for (int k = 0; k < hw; ++k) p[k] = g;
    }
  return dx;
}

// --------------------------------------------------------- BilinearResize

namespace {

struct Lerp {
  int i0, i1;
  float w0, w1;
};

std::vector<Lerp> make_lerps(int in_size, int out_size) {
  std::vector<Lerp> l(static_cast<std::size_t>(out_size));
  float scale = float(in_size) / float(out_size);
  for (int o = 0; o < out_size; ++o) {
    float src = (float(o) + 0.5f) * scale - 0.5f;
    if (src < 0.f) src = 0.f;
    if (src > float(in_size - 1)) src = float(in_size - 1);
    int i0 = int(src);
    int i1 = std::min(i0 + 1, in_size - 1);
    float w1 = src - float(i0);
    l[std::size_t(o)] = {i0, i1, 1.f - w1, w1};
  }
  return l;
}

}  // namespace

Tensor BilinearResize::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  int n = x.shape().n, c = x.shape().c;
  auto lh = make_lerps(x.shape().h, out_h_);
  auto lw = make_lerps(x.shape().w, out_w_);
  Tensor y(n, c, out_h_, out_w_);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int oh = 0; oh < out_h_; ++oh)
        for (int ow = 0; ow < out_w_; ++ow) {
          const Lerp& a = lh[std::size_t(oh)];
          const Lerp& b = lw[std::size_t(ow)];
          y.at(i, j, oh, ow) = a.w0 * (b.w0 * x.at(i, j, a.i0, b.i0) +
                                       b.w1 * x.at(i, j, a.i0, b.i1)) +
                               a.w1 * (b.w0 * x.at(i, j, a.i1, b.i0) +
                                       b.w1 * x.at(i, j, a.i1, b.i1));
        }
  return y;
}

Tensor BilinearResize::backward(const Tensor& grad_out) {
  auto lh = make_lerps(in_shape_.h, out_h_);
  auto lw = make_lerps(in_shape_.w, out_w_);
  Tensor dx(in_shape_);
  for (int i = 0; i < in_shape_.n; ++i)
    for (int j = 0; j < in_shape_.c; ++j)
      for (int oh = 0; oh < out_h_; ++oh)
        for (int ow = 0; ow < out_w_; ++ow) {
          const Lerp& a = lh[std::size_t(oh)];
          const Lerp& b = lw[std::size_t(ow)];
          float g = grad_out.at(i, j, oh, ow);
          dx.at(i, j, a.i0, b.i0) += a.w0 * b.w0 * g;
          dx.at(i, j, a.i0, b.i1) += a.w0 * b.w1 * g;
          dx.at(i, j, a.i1, b.i0) += a.w1 * b.w0 * g;
          dx.at(i, j, a.i1, b.i1) += a.w1 * b.w1 * g;
        }
  return dx;
}

// ------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor y = x;
  for (auto& l : layers_) y = l->forward(y, train);
  return y;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    g = (*it)->backward(g);
  return g;
}

void Sequential::collect_params(const std::string& prefix,
                                std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect_params(prefix + "." + std::to_string(i), out);
}

void Sequential::collect_buffers(const std::string& prefix,
                                 std::vector<BufferRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect_buffers(prefix + "." + std::to_string(i), out);
}

Shape Sequential::output_shape(Shape in) const {
  for (auto& l : layers_) in = l->output_shape(in);
  return in;
}

std::unique_ptr<Sequential> make_conv_bn_relu(int in_ch, int out_ch, int kernel,
                                              int stride, int pad, Rng& rng) {
  auto s = std::make_unique<Sequential>();
  s->add(std::make_unique<Conv2d>(in_ch, out_ch, kernel, stride, pad, rng));
  s->add(std::make_unique<BatchNorm2d>(out_ch));
  s->add(std::make_unique<ReLU>());
  return s;
}

// ---------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(int in_ch, int out_ch, int stride, Rng& rng) {
  main_ = std::make_unique<Sequential>();
  main_->add(std::make_unique<Conv2d>(in_ch, out_ch, 3, stride, 1, rng));
  main_->add(std::make_unique<BatchNorm2d>(out_ch));
  main_->add(std::make_unique<ReLU>());
  main_->add(std::make_unique<Conv2d>(out_ch, out_ch, 3, 1, 1, rng));
  main_->add(std::make_unique<BatchNorm2d>(out_ch));
  if (in_ch != out_ch || stride != 1) {
    proj_ = std::make_unique<Sequential>();
    proj_->add(std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0, rng));
    proj_->add(std::make_unique<BatchNorm2d>(out_ch));
  }
}

Shape ResidualBlock::output_shape(Shape in) const {
  return main_->output_shape(in);
}

Tensor ResidualBlock::forward(const Tensor& x, bool train) {
  input_ = x;
  Tensor y = main_->forward(x, train);
  Tensor sc = proj_ ? proj_->forward(x, train) : x;
  y += sc;
  return relu_out_.forward(y, train);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  Tensor g = relu_out_.backward(grad_out);
  Tensor dx = main_->backward(g);
  if (proj_) {
    dx += proj_->backward(g);
  } else {
    dx += g;
  }
  return dx;
}

void ResidualBlock::collect_params(const std::string& prefix,
                                   std::vector<ParamRef>& out) {
  main_->collect_params(prefix + ".main", out);
  if (proj_) proj_->collect_params(prefix + ".proj", out);
}

void ResidualBlock::collect_buffers(const std::string& prefix,
                                    std::vector<BufferRef>& out) {
  main_->collect_buffers(prefix + ".main", out);
  if (proj_) proj_->collect_buffers(prefix + ".proj", out);
}

}  // namespace hgd::nn
