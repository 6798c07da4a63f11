#pragma once

#include <memory>
#include <string>
#include <vector>

#include "attacks/attacks.hpp"
#include "losses/guided.hpp"
#include "models/denoiser.hpp"

namespace hgd {

// Plateau rule: true when the best loss seen has not improved by
// min_rel_improvement for `patience` consecutive epochs.
bool plateau_detector(const std::vector<float>& history, int patience = 3,
                      float min_rel_improvement = 0.01f);

struct TrainDenoiserRun {
  DenoiserConfig denoiser;
  GuidedLossSpec loss;
  int max_epochs = 20;
  int batch_size = 32;
  float lr = 1e-3f;
  float lr_after_plateau = 1e-4f;
  int plateau_patience = 3;
  float plateau_min_rel_improvement = 0.01f;
  bool mix_clean = true;  // append each unique clean reference as an eps=0 entry
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainDenoiserRun from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  float train_loss = 0.f;
  float val_loss = 0.f;
  float val_accuracy = 0.f;
  float lr = 0.f;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;  // epoch with the lowest validation loss

  nlohmann::json to_json() const;
  static TrainingLog from_json(const nlohmann::json& j);
  // One JSON record per line.
  void save_jsonl(const std::string& path) const;
};

struct TrainDenoiserResult {
  std::unique_ptr<Denoiser> model;  // best-validation weights
  TrainingLog log;
};

// Trains on the corpus's train split, selects the epoch minimizing the loss
// on the val split, and logs the defended accuracy of eval_classifier every
// epoch. guide may be null for the pixel loss.
TrainDenoiserResult train_denoiser(const TrainDenoiserRun& run,
                                   const AdversarialCorpus& corpus,
                                   Classifier* guide,
                                   Classifier& eval_classifier);

// FGSM adversarial training: each batch is half clean, half attacked
// against the current weights with the given epsilon.
std::unique_ptr<Classifier> train_classifier_adversarial(
    const Dataset& dataset, const std::string& arch_id,
    const TrainClassifierParams& p, float epsilon);

}  // namespace hgd
