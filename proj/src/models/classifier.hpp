#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "data/datasets.hpp"
#include "nn/layers.hpp"

namespace hgd {

// Softmax cross-entropy over logits shaped (N, classes, 1, 1). Returns the
// mean loss and writes the gradient w.r.t. logits (already divided by N).
float cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& labels,
                    Tensor* grad_logits = nullptr);

Tensor softmax(const Tensor& logits);
std::vector<std::int32_t> argmax_classes(const Tensor& logits);

// Which scalar loss input_gradient differentiates.
struct LossSpec {
  enum Kind { CrossEntropyTrue, CrossEntropyPredicted, CrossEntropyTarget };
  Kind kind = CrossEntropyPredicted;
  std::vector<std::int32_t> labels;  // true or target labels as applicable
};

// A small classifier with named layer taps. Immutable once trained;
// inference runs in eval mode (frozen batch-norm statistics) and is
// deterministic.
class Classifier {
public:
  static std::vector<std::string> registered_architectures();
  static std::unique_ptr<Classifier> create(const std::string& arch_id,
                                            int num_classes, Shape input_shape,
                                            std::uint64_t seed);

  const std::string& architecture() const { return arch_id_; }
  int num_classes() const { return num_classes_; }
  Shape input_shape() const { return input_shape_; }  // n field is 0
  const std::vector<std::string>& layer_names() const { return tap_names_; }

  // Forward in the given mode, caching every tap activation. Returns logits.
  Tensor forward(const Tensor& batch, bool train = false);

  struct Prediction {
    Tensor logits;
    std::vector<std::int32_t> classes;
  };
  Prediction predict(const Tensor& batch);

  // Activations at a named tap. tap("logits") equals predict().logits.
  Tensor tap(const Tensor& batch, const std::string& layer_name);

  // Gradient of the specified scalar loss w.r.t. the input pixels.
  Tensor input_gradient(const Tensor& batch, const LossSpec& spec);

  // After a forward() on this batch: push a gradient at the named tap back
  // to the input. Stages above the tap are skipped.
  Tensor backward_from_tap(const std::string& layer_name,
                           const Tensor& grad_at_tap);
  // Full backward from logits, accumulating weight gradients.
  Tensor backward(const Tensor& grad_logits);

  std::vector<nn::ParamRef> params();
  std::vector<nn::BufferRef> buffers();

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void save(const std::string& path) const;
  static std::unique_ptr<Classifier> load(const std::string& path);

private:
  struct Stage {
    std::string tap;  // empty = untapped
    std::unique_ptr<nn::Layer> layer;
  };

  friend struct ClassifierBuilder;

  Classifier() = default;
  void check_input(const Tensor& batch) const;
  int tap_index(const std::string& name) const;

  std::string arch_id_;
  int num_classes_ = 0;
  Shape input_shape_;
  std::vector<Stage> stages_;
  std::vector<std::string> tap_names_;
  std::vector<Tensor> tap_cache_;  // parallel to stages_
  nlohmann::json meta_ = nlohmann::json::object();
};

struct TrainClassifierParams {
  int epochs = 10;
  int batch_size = 64;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
};

// Trains from scratch and records the clean test accuracy in meta().
std::unique_ptr<Classifier> train_classifier(const Dataset& dataset,
                                             const std::string& arch_id,
                                             const TrainClassifierParams& p);

float accuracy(Classifier& c, const ImageBatch& batch, int eval_batch = 256);

}  // namespace hgd
