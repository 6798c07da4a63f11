#include "data/datasets.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace hgd {

void ImageBatch::validate(int num_classes) const {
  for (std::int64_t i = 0; i < pixels.size(); ++i)
    if (pixels[i] < 0.f || pixels[i] > 1.f)
      throw ConfigError("image pixels outside [0,1]");
  if (!labels.empty()) {
    if (int(labels.size()) != size())
      throw ShapeError("label count != batch size");
    for (auto l : labels)
      if (l < 0 || l >= num_classes)
        throw ConfigError("label out of range: " + std::to_string(l));
  }
}

nlohmann::json DatasetSpec::to_json() const {
  return {{"name", name},
          {"train_size", train_size},
          {"test_size", test_size},
          {"seed", seed}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.name = j.at("name").get<std::string>();
  s.train_size = j.at("train_size").get<int>();
  s.test_size = j.at("test_size").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

namespace {

constexpr float kPi = 3.14159265358979323846f;

// 10-class 3x32x32 set of tinted oriented gratings. Classes are the cross
// product of 5 orientations and 2 spatial frequencies; per-sample phase,
// amplitude and pixel noise keep the task non-trivial.
ImageBatch synth10_split(int count, int num_classes, Rng& rng) {
  const int side = 32;
  ImageBatch b;
  b.pixels = Tensor(count, 3, side, side);
  b.labels.resize(std::size_t(count));
  static const float tints[5][3] = {{1.0f, 0.6f, 0.5f},
                                    {0.5f, 1.0f, 0.6f},
                                    {0.6f, 0.5f, 1.0f},
                                    {1.0f, 1.0f, 0.5f},
                                    {0.5f, 1.0f, 1.0f}};
  for (int i = 0; i < count; ++i) {
    int cls = rng.randint(0, num_classes - 1);
    b.labels[std::size_t(i)] = cls;
    int ori = cls % 5;
    float freq = (cls < 5) ? 2.f : 4.f;
    float theta = kPi * float(ori) / 5.f + rng.normal(0.f, 0.05f);
    float phase = rng.uniform(0.f, 2.f * kPi);
    float amp = rng.uniform(0.25f, 0.45f);
    float ct = std::cos(theta), st = std::sin(theta);
    const float* tint = tints[ori];
    // frequency classes share the tint of their orientation partner, so
    // color alone never identifies the class
    for (int h = 0; h < side; ++h)
      for (int w = 0; w < side; ++w) {
        float u = (float(w) + 0.5f) / side;
        float v = (float(h) + 0.5f) / side;
        float s = std::sin(2.f * kPi * freq * (u * ct + v * st) + phase);
        for (int c = 0; c < 3; ++c) {
          float val = 0.5f + amp * tint[c] * s + rng.normal(0.f, 0.06f);
          b.pixels.at(i, c, h, w) = std::clamp(val, 0.f, 1.f);
        }
      }
  }
  return b;
}

// 2-class linearly separable blobs on (1,8,8) images; each class is a fixed
// random prototype plus small noise. Used by unit tests with the linear
// architecture.
ImageBatch blobs2_split(int count, Rng& rng, Rng proto_rng) {
  const int side = 8;
  Tensor protos(2, 1, side, side);
  for (auto& v : protos.vec()) v = proto_rng.uniform(0.2f, 0.8f);
  ImageBatch b;
  b.pixels = Tensor(count, 1, side, side);
  b.labels.resize(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    int cls = rng.randint(0, 1);
    b.labels[std::size_t(i)] = cls;
    for (int h = 0; h < side; ++h)
      for (int w = 0; w < side; ++w) {
        float val = protos.at(cls, 0, h, w) + rng.normal(0.f, 0.04f);
        b.pixels.at(i, 0, h, w) = std::clamp(val, 0.f, 1.f);
      }
  }
  return b;
}

}  // namespace

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.train_size < 0 || spec.test_size < 0)
    throw ConfigError("dataset sizes must be nonnegative");
  Dataset d;
  d.id = spec.name + "-" + std::to_string(spec.train_size) + "-" +
         std::to_string(spec.test_size) + "-s" + std::to_string(spec.seed);
  Rng rng(spec.seed);
  Rng train_rng = rng.fork(1);
  Rng test_rng = rng.fork(2);
  if (spec.name == "synth10") {
    d.num_classes = 10;
    d.train = synth10_split(spec.train_size, 10, train_rng);
    d.test = synth10_split(spec.test_size, 10, test_rng);
  } else if (spec.name == "blobs2") {
    d.num_classes = 2;
    // Prototypes depend on the seed only, so train and test share them.
    Rng proto_rng = rng.fork(3);
    d.train = blobs2_split(spec.train_size, train_rng, proto_rng);
    d.test = blobs2_split(spec.test_size, test_rng, proto_rng);
  } else {
    throw ConfigError("unknown dataset '" + spec.name +
                      "' (known: synth10, blobs2)");
  }
  d.train.provenance = {{"dataset", d.id}, {"split", "train"}};
  d.test.provenance = {{"dataset", d.id}, {"split", "test"}};
  return d;
}

ImageBatch filter_classes(const ImageBatch& b, const std::vector<int>& classes) {
  std::vector<int> keep;
  for (int i = 0; i < b.size(); ++i)
    if (std::find(classes.begin(), classes.end(), b.labels[std::size_t(i)]) !=
        classes.end())
      keep.push_back(i);
  ImageBatch out;
  Shape s = b.pixels.shape();
  out.pixels = Tensor(int(keep.size()), s.c, s.h, s.w);
  out.labels.resize(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.pixels.set_sample(int(i), b.pixels.sample(keep[i]));
    out.labels[i] = b.labels[std::size_t(keep[i])];
  }
  out.provenance = b.provenance;
  return out;
}

ImageBatch take(const ImageBatch& b, int count) {
  count = std::min(count, b.size());
  ImageBatch out;
  Shape s = b.pixels.shape();
  out.pixels = Tensor(count, s.c, s.h, s.w);
  if (!b.labels.empty()) out.labels.resize(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    out.pixels.set_sample(i, b.pixels.sample(i));
    if (!b.labels.empty()) out.labels[std::size_t(i)] = b.labels[std::size_t(i)];
  }
  out.provenance = b.provenance;
  return out;
}

}  // namespace hgd
