#include "losses/guided.hpp"

#include <cmath>

#include "core/error.hpp"

namespace hgd {

void GuidedLossSpec::validate() const {
  if (kind != "pgd" && kind != "fgd" && kind != "lgd" && kind != "cgd")
    throw ConfigError("unknown loss kind '" + kind +
                      "' (known: pgd, fgd, lgd, cgd)");
  if (kind == "pgd") {
    if (!guiding_classifier.empty())
      throw ConfigError("pgd loss takes no guiding classifier");
  } else if (guiding_classifier.empty()) {
    throw ConfigError(kind + " loss needs a guiding classifier");
  }
  if ((kind == "fgd" || kind == "lgd") && tap.empty())
    throw ConfigError(kind + " loss needs a tap name");
}

nlohmann::json GuidedLossSpec::to_json() const {
  return {{"kind", kind},
          {"guiding_classifier", guiding_classifier},
          {"tap", tap}};
}

GuidedLossSpec GuidedLossSpec::from_json(const nlohmann::json& j) {
  GuidedLossSpec s;
  s.kind = j.at("kind").get<std::string>();
  s.guiding_classifier = j.value("guiding_classifier", "");
  s.tap = j.value("tap", "");
  return s;
}

GuidedLossSpec GuidedLossSpec::make(const std::string& kind,
                                    const std::string& guiding_classifier) {
  GuidedLossSpec s;
  s.kind = kind;
  s.guiding_classifier = guiding_classifier;
  if (kind == "fgd") s.tap = "features";
  if (kind == "lgd") s.tap = "logits";
  s.validate();
  return s;
}

namespace {

// Mean per-element L1 with its gradient w.r.t. `b`.
LossResult l1_mean(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1 loss");
  LossResult r;
  r.grad = Tensor(b.shape());
  double total = 0.0;
  float scale = 1.f / float(b.size());
  for (std::int64_t i = 0; i < b.size(); ++i) {
    float d = b[i] - a[i];
    total += std::fabs(d);
    r.grad[i] = (d > 0.f ? scale : (d < 0.f ? -scale : 0.f));
  }
  r.value = float(total / double(b.size()));
  return r;
}

}  // namespace

LossResult pgd_loss(const Tensor& clean, const Tensor& denoised) {
  return l1_mean(clean, denoised);
}

LossResult hgd_loss(const GuidedLossSpec& spec, Classifier& guide,
                    const Tensor& clean, const Tensor& denoised) {
  if (spec.kind != "fgd" && spec.kind != "lgd")
    throw ConfigError("hgd loss requires kind fgd or lgd, got " + spec.kind);
  require_same_shape(clean, denoised, "hgd loss");
  Tensor ref = guide.tap(clean, spec.tap);
  // A fresh forward on the denoised batch so every layer's stored
  // activations belong to it before the partial backward.
  Tensor act = guide.tap(denoised, spec.tap);
  LossResult at_tap = l1_mean(ref, act);
  LossResult r;
  r.value = at_tap.value;
  r.grad = guide.backward_from_tap(spec.tap, at_tap.grad);
  return r;
}

LossResult cgd_loss(Classifier& guide, const Tensor& denoised,
                    const std::vector<std::int32_t>& true_labels) {
  if (true_labels.size() != std::size_t(denoised.shape().n))
    throw ConfigError("cgd loss needs one true label per sample");
  Tensor logits = guide.forward(denoised, false);
  Tensor grad_logits;
  LossResult r;
  r.value = cross_entropy(logits, true_labels, &grad_logits);
  r.grad = guide.backward(grad_logits);
  return r;
}

LossResult guided_loss(const GuidedLossSpec& spec, Classifier* guide,
                       const Tensor& clean, const Tensor& denoised,
                       const std::vector<std::int32_t>* true_labels) {
  spec.validate();
  if (spec.kind == "pgd") return pgd_loss(clean, denoised);
  if (!guide) throw ConfigError(spec.kind + " loss needs a guiding classifier");
  if (spec.kind == "cgd") {
    if (!true_labels)
      throw ConfigError("cgd loss needs ground-truth labels");
    return cgd_loss(*guide, denoised, *true_labels);
  }
  return hgd_loss(spec, *guide, clean, denoised);
}

}  // namespace hgd
