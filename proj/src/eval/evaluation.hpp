#pragma once

#include <string>
#include <vector>

#include "attacks/attacks.hpp"
#include "models/denoiser.hpp"

namespace hgd {

// A target classifier with an optional denoiser in front. The oracle flag
// replaces the denoiser with the stored clean image (test-only upper bound).
struct DefensePipeline {
  std::string label = "na";
  Denoiser* denoiser = nullptr;
  Classifier* classifier = nullptr;
  bool oracle = false;
};

// Denoise (if any), clip to [0,1], classify. Returns per-sample logits.
Tensor pipeline_logits(const DefensePipeline& p, const Tensor& batch,
                       int eval_batch = 128);
std::vector<std::int32_t> pipeline_predict(const DefensePipeline& p,
                                           const Tensor& batch,
                                           int eval_batch = 128);

struct ReportRow {
  std::string defense;
  std::string split;
  std::string method;  // attack method or "clean"
  int steps = 0;
  int eps_num = 0;  // 0 for clean rows
  float accuracy = 0.f;
  float denoising_loss = 0.f;  // per-pixel L1 vs clean, after the defense
  int count = 0;
};

struct EvaluationReport {
  std::vector<ReportRow> rows;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& j);
  std::string render_table() const;
  void append(const EvaluationReport& other);
};

// One row per (attack method, steps, eps) group in each split, plus a clean
// row per split.
EvaluationReport evaluate(const DefensePipeline& p,
                          const AdversarialCorpus& corpus,
                          const std::vector<std::string>& splits = {});

// Cross-guidance comparison: target undefended, target behind a denoiser
// guided by another classifier, and (optionally) behind its own.
EvaluationReport transfer_model_eval(Classifier& target,
                                     Denoiser& cross_guided,
                                     Denoiser* self_guided,
                                     const AdversarialCorpus& corpus,
                                     const std::vector<std::string>& splits = {});

// Disjoint class partition for the unseen-class protocol.
struct ClassSplit {
  std::vector<int> train_classes;
  std::vector<int> holdout_classes;
};
ClassSplit split_classes(int num_classes, float train_fraction);

// Mean of per-pipeline logits, then argmax.
std::vector<std::int32_t> ensemble_defense(
    const std::vector<DefensePipeline>& pipelines, const Tensor& batch);

}  // namespace hgd
