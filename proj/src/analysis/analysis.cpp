#include "analysis/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace hgd {

float perturbation_level(const Tensor& ref, const Tensor& pert) {
  require_same_shape(ref, pert, "perturbation level");
  Shape s = ref.shape();
  std::int64_t per = s.numel() / s.n;
  double total = 0.0;
  for (int i = 0; i < s.n; ++i) {
    double num = 0.0, den = 0.0;
    const float* r = ref.data() + i * per;
    const float* p = pert.data() + i * per;
    for (std::int64_t j = 0; j < per; ++j) {
      num += std::fabs(double(p[j]) - r[j]);
      den += std::fabs(double(r[j]));
    }
    if (den == 0.0)
      throw NumericError("zero reference activation in perturbation level");
    total += num / den;
  }
  return float(total / s.n);
}

nlohmann::json PerturbationProfile::to_json() const {
  return {{"layer_names", layer_names},
          {"levels", levels},
          {"condition_label", condition_label},
          {"sample_count", sample_count}};
}

PerturbationProfile PerturbationProfile::from_json(const nlohmann::json& j) {
  PerturbationProfile p;
  p.layer_names = j.at("layer_names").get<std::vector<std::string>>();
  p.levels = j.at("levels").get<std::vector<float>>();
  p.condition_label = j.at("condition_label").get<std::string>();
  p.sample_count = j.at("sample_count").get<int>();
  return p;
}

PerturbationProfile perturbation_profile(Classifier& classifier,
                                         const Tensor& reference,
                                         const Tensor& perturbed,
                                         const std::string& condition_label) {
  if (reference.shape() != perturbed.shape())
    throw ShapeError("profile batches are misaligned: " +
                     reference.shape().str() + " vs " +
                     perturbed.shape().str());
  PerturbationProfile p;
  p.condition_label = condition_label;
  p.sample_count = reference.shape().n;
  p.layer_names.push_back("input");
  p.levels.push_back(perturbation_level(reference, perturbed));
  for (auto& name : classifier.layer_names()) {
    Tensor ref = classifier.tap(reference, name);
    Tensor per = classifier.tap(perturbed, name);
    p.layer_names.push_back(name);
    p.levels.push_back(perturbation_level(ref, per));
  }
  return p;
}

float fit_slope_through_origin(const Tensor& dx, const Tensor& dy) {
  require_same_shape(dx, dy, "slope fit");
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < dx.size(); ++i) {
    num += double(dx[i]) * dy[i];
    den += double(dx[i]) * dx[i];
  }
  if (den == 0.0)
    throw NumericError("degenerate slope fit: adversarial perturbation is zero");
  return float(num / den);
}

nlohmann::json NoiseScatter::to_json() const {
  return {{"slope", slope},
          {"bins", bins},
          {"range", range},
          {"histogram", histogram}};
}

NoiseScatter NoiseScatter::from_json(const nlohmann::json& j) {
  NoiseScatter s;
  s.slope = j.at("slope").get<float>();
  s.bins = j.at("bins").get<int>();
  s.range = j.at("range").get<float>();
  s.histogram = j.at("histogram").get<std::vector<std::int64_t>>();
  return s;
}

NoiseScatter noise_scatter(const Tensor& clean, const Tensor& adversarial,
                           const Tensor& denoised, int bins, float range) {
  require_same_shape(clean, adversarial, "noise scatter");
  require_same_shape(clean, denoised, "noise scatter");
  if (bins < 1) throw ConfigError("noise scatter needs at least one bin");

  Tensor dx = adversarial;
  dx -= clean;
  Tensor dy = adversarial;
  dy -= denoised;

  NoiseScatter s;
  s.slope = fit_slope_through_origin(dx, dy);
  s.bins = bins;
  if (range <= 0.f) {
    float m = 0.f;
    for (std::int64_t i = 0; i < dx.size(); ++i)
      m = std::max({m, std::fabs(dx[i]), std::fabs(dy[i])});
    range = m > 0.f ? m : 1.f;
  }
  s.range = range;
  s.histogram.assign(std::size_t(bins) * bins, 0);
  for (std::int64_t i = 0; i < dx.size(); ++i) {
    auto bin = [&](float v) {
      float t = (v + range) / (2.f * range);
      int b = int(t * float(bins));
      return std::clamp(b, 0, bins - 1);
    };
    s.histogram[std::size_t(bin(dy[i])) * bins + bin(dx[i])] += 1;
  }
  return s;
}

Tensor gaussian_perturb(const Tensor& batch, float target_e0, Rng& rng) {
  if (target_e0 < 0.f) throw ConfigError("perturbation target must be >= 0");
  if (target_e0 == 0.f) return batch;

  Tensor noise(batch.shape());
  for (auto& v : noise.vec()) v = rng.normal();

  // Initial scale from the unclipped expectation E|N(0,s)| = s*sqrt(2/pi),
  // then multiplicative correction against the measured post-clip level.
  double mean_abs = 0.0;
  for (std::int64_t i = 0; i < batch.size(); ++i)
    mean_abs += std::fabs(batch[i]);
  mean_abs /= double(batch.size());
  float scale = float(target_e0 * mean_abs / std::sqrt(2.0 / 3.14159265358979));

  Tensor out;
  for (int iter = 0; iter < 25; ++iter) {
    out = batch;
    for (std::int64_t i = 0; i < out.size(); ++i)
      out[i] = std::clamp(out[i] + scale * noise[i], 0.f, 1.f);
    float achieved = perturbation_level(batch, out);
    if (std::fabs(achieved - target_e0) <= 0.05f * target_e0) return out;
    if (achieved <= 0.f) throw NumericError("gaussian perturbation collapsed");
    scale *= target_e0 / achieved;
  }
  throw NumericError("could not match the requested perturbation level");
}

}  // namespace hgd
