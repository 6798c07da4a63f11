#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace hgd {

// A batch of images in [0,1] with optional labels and provenance metadata.
struct ImageBatch {
  Tensor pixels;                     // (batch, channels, height, width)
  std::vector<std::int32_t> labels;  // empty when unlabeled
  nlohmann::json provenance = nlohmann::json::object();

  int size() const { return pixels.shape().n; }
  void validate(int num_classes) const;
};

struct Dataset {
  std::string id;
  int num_classes = 0;
  ImageBatch train;
  ImageBatch test;
};

// Procedural dataset registry. Every dataset is fully determined by its
// spec, so the spec hash identifies the data.
struct DatasetSpec {
  std::string name;     // "synth10" | "blobs2"
  int train_size = 0;
  int test_size = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

Dataset make_dataset(const DatasetSpec& spec);

// Restrict a batch to samples whose label is in `classes`.
ImageBatch filter_classes(const ImageBatch& b,
                          const std::vector<int>& classes);

// First `count` samples.
ImageBatch take(const ImageBatch& b, int count);

}  // namespace hgd
