#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace hgd {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

Tensor Tensor::sample(int i) const {
  Tensor out(1, shape_.c, shape_.h, shape_.w);
  std::int64_t per = std::int64_t(shape_.c) * shape_.h * shape_.w;
  std::memcpy(out.data(), data_.data() + i * per, per * sizeof(float));
  return out;
}

void Tensor::set_sample(int i, const Tensor& s) {
  std::int64_t per = std::int64_t(shape_.c) * shape_.h * shape_.w;
  std::memcpy(data_.data() + i * per, s.data(), per * sizeof(float));
}

Tensor& Tensor::operator+=(const Tensor& o) {
  require_same_shape(*this, o, "Tensor::operator+=");
  for (std::int64_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  require_same_shape(*this, o, "Tensor::operator-=");
  for (std::int64_t i = 0; i < size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(float s) {
  for (auto& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(where) + ": " + a.shape().str() + " vs " +
                     b.shape().str());
}

Tensor clamp(const Tensor& t, float lo, float hi) {
  Tensor out = t;
  for (auto& v : out.vec()) v = std::clamp(v, lo, hi);
  return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  float m = 0.f;
  for (std::int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

float mean_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_abs_diff");
  if (a.size() == 0) return 0.f;
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return float(s / double(a.size()));
}

float l1_norm(const Tensor& t) {
  double s = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) s += std::fabs(t[i]);
  return float(s);
}

}  // namespace hgd
