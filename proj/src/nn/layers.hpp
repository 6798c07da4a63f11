#pragma once

#include <memory>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace hgd::nn {

// A learnable array together with its gradient accumulator.
struct ParamRef {
  std::string name;
  std::vector<float>* value = nullptr;
  std::vector<float>* grad = nullptr;
};

// Non-learnable state that still belongs in checkpoints (BN running stats).
struct BufferRef {
  std::string name;
  std::vector<float>* value = nullptr;
};

// Layers cache whatever they need in forward() and consume it in the next
// backward(). One forward per backward; no autograd tape.
class Layer {
public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(const std::string& prefix,
                              std::vector<ParamRef>& out) {}
  virtual void collect_buffers(const std::string& prefix,
                               std::vector<BufferRef>& out) {}
  virtual Shape output_shape(Shape in) const = 0;
};

class Conv2d : public Layer {
public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override;
  Shape output_shape(Shape in) const override;

  std::vector<float>& weight() { return weight_; }
  std::vector<float>& bias() { return bias_; }

private:
  int in_ch_, out_ch_, kernel_, stride_, pad_;
  std::vector<float> weight_, bias_;        // weight: [out][in][kh][kw]
  std::vector<float> weight_grad_, bias_grad_;
  Tensor input_;
};

class BatchNorm2d : public Layer {
public:
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix,
                       std::vector<BufferRef>& out) override;
  Shape output_shape(Shape in) const override { return in; }

private:
  int channels_;
  float momentum_, eps_;
  std::vector<float> gamma_, beta_, gamma_grad_, beta_grad_;
  std::vector<float> running_mean_, running_var_;
  // forward cache
  bool train_mode_ = false;
  Tensor xhat_;
  std::vector<float> invstd_;
  Shape in_shape_;
};

class ReLU : public Layer {
public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(Shape in) const override { return in; }

private:
  std::vector<char> mask_;
  Shape in_shape_;
};

// Fully connected over the flattened (c*h*w) sample; emits (N, out, 1, 1).
class Linear : public Layer {
public:
  Linear(int in_features, int out_features, Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override;
  Shape output_shape(Shape in) const override;

  std::vector<float>& weight() { return weight_; }
  std::vector<float>& bias() { return bias_; }

private:
  int in_features_, out_features_;
  std::vector<float> weight_, bias_, weight_grad_, bias_grad_;
  Tensor input_;
};

class GlobalAvgPool : public Layer {
public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(Shape in) const override {
    return Shape{in.n, in.c, 1, 1};
  }

private:
  Shape in_shape_;
};

// Bilinear resize with half-pixel sampling; backward is the exact adjoint.
class BilinearResize : public Layer {
public:
  BilinearResize(int out_h, int out_w) : out_h_(out_h), out_w_(out_w) {}

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(Shape in) const override {
    return Shape{in.n, in.c, out_h_, out_w_};
  }

private:
  int out_h_, out_w_;
  Shape in_shape_;
};

class Sequential : public Layer {
public:
  Sequential() = default;
  void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix,
                       std::vector<BufferRef>& out) override;
  Shape output_shape(Shape in) const override;

private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// The standard conv-bn-relu building unit.
std::unique_ptr<Sequential> make_conv_bn_relu(int in_ch, int out_ch, int kernel,
                                              int stride, int pad, Rng& rng);

// Basic residual block: two conv-bn units with identity (or 1x1-projected)
// shortcut, ReLU after the sum.
class ResidualBlock : public Layer {
public:
  ResidualBlock(int in_ch, int out_ch, int stride, Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix,
                       std::vector<BufferRef>& out) override;
  Shape output_shape(Shape in) const override;

private:
  std::unique_ptr<Sequential> main_;   // conv-bn-relu-conv-bn
  std::unique_ptr<Sequential> proj_;   // empty when identity shortcut works
  ReLU relu_out_;
  Tensor input_;
};

void zero_grads(std::vector<ParamRef>& params);

}  // namespace hgd::nn
