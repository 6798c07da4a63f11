#pragma once

#include <map>
#include <string>
#include <vector>

#include "models/classifier.hpp"

namespace hgd {

enum class AttackMethod { Fgsm, TargetedFgsm, Ifgsm };

std::string to_string(AttackMethod m);
AttackMethod attack_method_from_string(const std::string& s);

enum class TargetPolicy { None, LeastLikely, Random };

// One attack fully determines an adversarial corpus entry.
struct AttackSpec {
  AttackMethod method = AttackMethod::Fgsm;
  int steps = 1;        // 1 for the single-step variants
  float epsilon = 0.f;  // pixel-domain, i.e. integer-eps / 255
  std::vector<std::string> source_models;
  TargetPolicy target_policy = TargetPolicy::None;

  void validate() const;
};

using ClassifierList = std::vector<Classifier*>;

// Mean of per-model cross-entropy input gradients, each model judged
// against its own label vector.
Tensor ensemble_ce_gradient(const ClassifierList& models, const Tensor& batch,
                            const std::vector<std::vector<std::int32_t>>& labels);

// Predicted classes of every source model on the clean batch; attacks use
// these instead of true labels to avoid label leaking.
std::vector<std::vector<std::int32_t>> predicted_labels(
    const ClassifierList& models, const Tensor& batch);

Tensor fgsm(const ClassifierList& models, const Tensor& batch, float epsilon);

Tensor targeted_fgsm(const ClassifierList& models, const Tensor& batch,
                     float epsilon, TargetPolicy policy, Rng* rng = nullptr,
                     const std::vector<std::int32_t>* explicit_targets = nullptr);

// n iterations of the FGSM update with step epsilon/n, each iterate clipped
// to the L-inf epsilon ball around the clean batch and to [0,1].
Tensor ifgsm(const ClassifierList& models, const Tensor& batch, float epsilon,
             int n_steps);

Tensor run_attack(const AttackSpec& spec, const ClassifierList& models,
                  const Tensor& batch, Rng* rng = nullptr);

// Resolves least-likely (argmin of mean predicted probability, ties to the
// smallest class index) or seeded-random target classes.
std::vector<std::int32_t> resolve_targets(const ClassifierList& models,
                                          const Tensor& batch,
                                          TargetPolicy policy, Rng* rng);

// ------------------------------------------------------------------ corpus

struct CorpusProtocol {
  struct Row {
    AttackMethod method = AttackMethod::Fgsm;
    int steps = 1;
    std::vector<std::string> sources;
  };
  struct SplitSpec {
    std::string name;  // train | val | white-test | black-test
    std::vector<Row> rows;
    // Fixed integer-eps set when nonempty; otherwise eps is drawn uniformly
    // from [eps_lo, eps_hi] per entry.
    std::vector<int> eps_set;
    int eps_lo = 1, eps_hi = 16;
  };
  std::vector<SplitSpec> splits;
  std::string holdout_model;  // may appear only in black-test rows
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static CorpusProtocol from_json(const nlohmann::json& j);
};

struct CorpusSplit {
  std::string name;
  Tensor adv;
  Tensor clean;
  std::vector<std::int32_t> labels;
  std::vector<std::int32_t> clean_ids;
  std::vector<std::int32_t> eps_num;  // 0-255 integer scale
  std::vector<std::int32_t> steps;
  std::vector<std::string> methods;
  std::vector<std::vector<std::string>> sources;

  int size() const { return adv.shape().n; }
};

struct AdversarialCorpus {
  std::vector<CorpusSplit> splits;
  nlohmann::json meta = nlohmann::json::object();

  const CorpusSplit& split(const std::string& name) const;
  bool has_split(const std::string& name) const;
};

using ClassifierRegistry = std::map<std::string, Classifier*>;

// Applies every attack row of every split to that split's clean images.
AdversarialCorpus forge_corpus(
    const CorpusProtocol& protocol,
    const std::map<std::string, const ImageBatch*>& clean_per_split,
    const ClassifierRegistry& registry);

// One container file per split plus a JSON manifest listing every entry.
void save_corpus(const AdversarialCorpus& corpus, const std::string& dir);
AdversarialCorpus load_corpus(const std::string& dir);

}  // namespace hgd
