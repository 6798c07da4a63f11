#pragma once

#include <string>

#include <json.hpp>

#include "models/classifier.hpp"

namespace hgd {

// Where the reconstruction error is measured: at the pixels (pgd), at a
// frozen classifier's feature or logit tap (fgd/lgd), or as the classifier's
// own classification loss (cgd).
struct GuidedLossSpec {
  std::string kind;                // pgd | fgd | lgd | cgd
  std::string guiding_classifier;  // checkpoint id; empty for pgd
  std::string tap;                 // resolved tap name for fgd/lgd

  void validate() const;
  nlohmann::json to_json() const;
  static GuidedLossSpec from_json(const nlohmann::json& j);
  // Fills the conventional tap for the kind: features for fgd, logits for lgd.
  static GuidedLossSpec make(const std::string& kind,
                             const std::string& guiding_classifier = "");
};

struct LossResult {
  float value = 0.f;
  Tensor grad;  // d(value)/d(denoised)
};

// Mean absolute pixel difference (per-element, then over the batch).
LossResult pgd_loss(const Tensor& clean, const Tensor& denoised);

// Per-element L1 between the guide's tap activations on denoised and clean
// inputs. The guide's weights are read-only; only the input gradient of the
// denoised batch is returned.
LossResult hgd_loss(const GuidedLossSpec& spec, Classifier& guide,
                    const Tensor& clean, const Tensor& denoised);

// Cross-entropy of the guide's prediction on the denoised batch versus the
// true labels.
LossResult cgd_loss(Classifier& guide, const Tensor& denoised,
                    const std::vector<std::int32_t>& true_labels);

// Dispatch on spec.kind. guide may be null for pgd; labels may be null
// except for cgd.
LossResult guided_loss(const GuidedLossSpec& spec, Classifier* guide,
                       const Tensor& clean, const Tensor& denoised,
                       const std::vector<std::int32_t>* true_labels);

}  // namespace hgd
