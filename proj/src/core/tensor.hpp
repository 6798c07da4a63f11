#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace hgd {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;
  std::int64_t numel() const {
    return std::int64_t(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense float32 tensor in NCHW layout. The workhorse type of the whole
// library; images, activations, gradients and noise maps are all Tensors.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape s) : shape_(s), data_(s.numel(), 0.f) {}
  Tensor(int n, int c, int h, int w) : Tensor(Shape{n, c, h, w}) {}

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return std::int64_t(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& at(int n, int c, int h, int w) {
    return data_[((std::int64_t(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  float at(int n, int c, int h, int w) const {
    return data_[((std::int64_t(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  float& operator[](std::int64_t i) { return data_[i]; }
  float operator[](std::int64_t i) const { return data_[i]; }

  // Single-sample view copied out as an N=1 tensor.
  Tensor sample(int i) const;
  void set_sample(int i, const Tensor& s);

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(float s);

  bool all_finite() const;

private:
  Shape shape_;
  std::vector<float> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

// Elementwise helpers used across attacks and losses.
Tensor clamp(const Tensor& t, float lo, float hi);
float max_abs_diff(const Tensor& a, const Tensor& b);
float mean_abs_diff(const Tensor& a, const Tensor& b);
float l1_norm(const Tensor& t);

}  // namespace hgd
