#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "models/classifier.hpp"

namespace hgd {

// Mean over samples of ||pert - ref||_1 / ||ref||_1, the relative
// perturbation level of one activation (or pixel) tensor pair.
float perturbation_level(const Tensor& ref, const Tensor& pert);

// Relative perturbation per classifier tap, pixel level included as "input".
struct PerturbationProfile {
  std::vector<std::string> layer_names;
  std::vector<float> levels;
  std::string condition_label;
  int sample_count = 0;

  nlohmann::json to_json() const;
  static PerturbationProfile from_json(const nlohmann::json& j);
};

PerturbationProfile perturbation_profile(Classifier& classifier,
                                         const Tensor& reference,
                                         const Tensor& perturbed,
                                         const std::string& condition_label);

// Joint distribution of adversarial perturbation dx* = x* - x against the
// denoiser's removed perturbation dxhat = x* - xhat, with a least-squares
// slope fit through the origin.
struct NoiseScatter {
  float slope = 0.f;
  int bins = 0;
  float range = 0.f;  // histogram covers [-range, range] on both axes
  std::vector<std::int64_t> histogram;  // bins x bins, row = dxhat bin

  nlohmann::json to_json() const;
  static NoiseScatter from_json(const nlohmann::json& j);
};

// k = sum(dx .* dy) / sum(dx .* dx); all-zero dx is a degenerate fit.
float fit_slope_through_origin(const Tensor& dx, const Tensor& dy);

NoiseScatter noise_scatter(const Tensor& clean, const Tensor& adversarial,
                           const Tensor& denoised, int bins = 61,
                           float range = 0.f);

// Adds zero-mean gaussian noise scaled so that the post-clip pixel-level
// perturbation matches target_e0 within 5%, then clips to [0,1].
Tensor gaussian_perturb(const Tensor& batch, float target_e0, Rng& rng);

}  // namespace hgd
