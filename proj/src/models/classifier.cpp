#include "models/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "core/container.hpp"
#include "core/error.hpp"
#include "nn/adam.hpp"

namespace hgd {

Tensor softmax(const Tensor& logits) {
  int n = logits.shape().n, c = logits.shape().c;
  Tensor p(logits.shape());
  for (int i = 0; i < n; ++i) {
    float mx = -1e30f;
    for (int j = 0; j < c; ++j) mx = std::max(mx, logits.at(i, j, 0, 0));
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      float e = std::exp(logits.at(i, j, 0, 0) - mx);
      p.at(i, j, 0, 0) = e;
      z += e;
    }
    for (int j = 0; j < c; ++j) p.at(i, j, 0, 0) = float(p.at(i, j, 0, 0) / z);
  }
  return p;
}

std::vector<std::int32_t> argmax_classes(const Tensor& logits) {
  int n = logits.shape().n, c = logits.shape().c;
  std::vector<std::int32_t> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      // ties break toward the smallest class index
      if (logits.at(i, j, 0, 0) > logits.at(i, best, 0, 0)) best = j;
    out[std::size_t(i)] = best;
  }
  return out;
}

float cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& labels,
                    Tensor* grad_logits) {
  int n = logits.shape().n, c = logits.shape().c;
  if (int(labels.size()) != n)
    throw ShapeError("cross_entropy: labels size != batch size");
  Tensor p = softmax(logits);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    float py = p.at(i, labels[std::size_t(i)], 0, 0);
    loss -= std::log(std::max(py, 1e-12f));
  }
  float mean_loss = float(loss / n);
  if (grad_logits) {
    *grad_logits = p;
    float inv_n = 1.f / float(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < c; ++j) grad_logits->at(i, j, 0, 0) *= inv_n;
      grad_logits->at(i, labels[std::size_t(i)], 0, 0) -= inv_n;
    }
  }
  return mean_loss;
}

// ------------------------------------------------------------ architectures

namespace {

using nn::make_conv_bn_relu;

struct ArchDef {
  Shape default_input;  // n unused
  void (*build)(Classifier&, int, Shape, Rng&);
};

}  // namespace

// Builders append (tap-name, layer) stages. Every tap is part of the
// profile layer list; "features" and "logits" close the list by contract.
struct ClassifierBuilder {
  static void add(Classifier& c, std::string tap,
                  std::unique_ptr<nn::Layer> l) {
    if (!tap.empty()) c.tap_names_.push_back(tap);
    c.stages_.push_back({std::move(tap), std::move(l)});
  }

  static void build_convnet(Classifier& c, int classes, Shape in, Rng& rng) {
    add(c, "block1", make_conv_bn_relu(in.c, 16, 3, 1, 1, rng));
    add(c, "block2", make_conv_bn_relu(16, 16, 3, 1, 1, rng));
    add(c, "block3", make_conv_bn_relu(16, 32, 3, 2, 1, rng));
    add(c, "block4", make_conv_bn_relu(32, 32, 3, 1, 1, rng));
    add(c, "block5", make_conv_bn_relu(32, 64, 3, 2, 1, rng));
    add(c, "features", make_conv_bn_relu(64, 64, 3, 1, 1, rng));
    add(c, "", std::make_unique<nn::GlobalAvgPool>());
    add(c, "logits", std::make_unique<nn::Linear>(64, classes, rng));
  }

  static void build_resnet(Classifier& c, int classes, Shape in, Rng& rng) {
    add(c, "block1", make_conv_bn_relu(in.c, 16, 3, 1, 1, rng));
    add(c, "block2", std::make_unique<nn::ResidualBlock>(16, 16, 1, rng));
    add(c, "block3", std::make_unique<nn::ResidualBlock>(16, 32, 2, rng));
    add(c, "features", std::make_unique<nn::ResidualBlock>(32, 64, 2, rng));
    add(c, "", std::make_unique<nn::GlobalAvgPool>());
    add(c, "logits", std::make_unique<nn::Linear>(64, classes, rng));
  }

  static void build_widenet(Classifier& c, int classes, Shape in, Rng& rng) {
    add(c, "block1", make_conv_bn_relu(in.c, 24, 5, 1, 2, rng));
    add(c, "block2", make_conv_bn_relu(24, 48, 3, 2, 1, rng));
    add(c, "block3", make_conv_bn_relu(48, 48, 3, 1, 1, rng));
    add(c, "features", make_conv_bn_relu(48, 96, 3, 2, 1, rng));
    add(c, "", std::make_unique<nn::GlobalAvgPool>());
    add(c, "logits", std::make_unique<nn::Linear>(96, classes, rng));
  }

  // Flattened linear model; "features" taps the raw input, which also makes
  // this the identity-tap cross-check model for the guided losses.
  static void build_linear(Classifier& c, int classes, Shape in, Rng& rng) {
    add(c, "features", std::make_unique<nn::Sequential>());
    add(c, "logits",
        std::make_unique<nn::Linear>(in.c * in.h * in.w, classes, rng));
  }
};

namespace {

const std::vector<std::pair<std::string, void (*)(Classifier&, int, Shape,
                                                  Rng&)>>&
arch_registry() {
  static const std::vector<
      std::pair<std::string, void (*)(Classifier&, int, Shape, Rng&)>>
      reg = {
          {"convnet", &ClassifierBuilder::build_convnet},
          {"resnet", &ClassifierBuilder::build_resnet},
          {"widenet", &ClassifierBuilder::build_widenet},
          {"linear", &ClassifierBuilder::build_linear},
      };
  return reg;
}

}  // namespace

std::vector<std::string> Classifier::registered_architectures() {
  std::vector<std::string> out;
  for (auto& [name, fn] : arch_registry()) out.push_back(name);
  return out;
}

std::unique_ptr<Classifier> Classifier::create(const std::string& arch_id,
                                               int num_classes,
                                               Shape input_shape,
                                               std::uint64_t seed) {
  for (auto& [name, build] : arch_registry()) {
    if (name == arch_id) {
      auto c = std::unique_ptr<Classifier>(new Classifier());
      c->arch_id_ = arch_id;
      c->num_classes_ = num_classes;
      input_shape.n = 0;
      c->input_shape_ = input_shape;
      Rng rng(seed);
      build(*c, num_classes, input_shape, rng);
      c->tap_cache_.resize(c->stages_.size());
      return c;
    }
  }
  std::string known;
  for (auto& [name, fn] : arch_registry()) known += " " + name;
  throw ConfigError("unknown architecture '" + arch_id + "' (known:" + known +
                    ")");
}

void Classifier::check_input(const Tensor& batch) const {
  const Shape& s = batch.shape();
  if (s.c != input_shape_.c || s.h != input_shape_.h || s.w != input_shape_.w)
    throw ShapeError("classifier expects (*, " +
                     std::to_string(input_shape_.c) + ", " +
                     std::to_string(input_shape_.h) + ", " +
                     std::to_string(input_shape_.w) + "), got " + s.str());
}

Tensor Classifier::forward(const Tensor& batch, bool train) {
  check_input(batch);
  Tensor y = batch;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    y = stages_[i].layer->forward(y, train);
    if (!stages_[i].tap.empty()) tap_cache_[i] = y;
  }
  return y;
}

Classifier::Prediction Classifier::predict(const Tensor& batch) {
  Prediction p;
  p.logits = forward(batch, false);
  p.classes = argmax_classes(p.logits);
  return p;
}

int Classifier::tap_index(const std::string& name) const {
  for (std::size_t i = 0; i < stages_.size(); ++i)
    if (stages_[i].tap == name) return int(i);
  std::string known;
  for (auto& n : tap_names_) known += " " + n;
  throw ConfigError("unknown layer '" + name + "' (known:" + known + ")");
}

Tensor Classifier::tap(const Tensor& batch, const std::string& layer_name) {
  int idx = tap_index(layer_name);
  forward(batch, false);
  return tap_cache_[std::size_t(idx)];
}

Tensor Classifier::backward_from_tap(const std::string& layer_name,
                                     const Tensor& grad_at_tap) {
  int idx = tap_index(layer_name);
  Tensor g = grad_at_tap;
  for (int i = idx; i >= 0; --i) g = stages_[std::size_t(i)].layer->backward(g);
  return g;
}

Tensor Classifier::backward(const Tensor& grad_logits) {
  return backward_from_tap("logits", grad_logits);
}

Tensor Classifier::input_gradient(const Tensor& batch, const LossSpec& spec) {
  Tensor logits = forward(batch, false);
  std::vector<std::int32_t> labels;
  switch (spec.kind) {
    case LossSpec::CrossEntropyPredicted:
      labels = argmax_classes(logits);
      break;
    case LossSpec::CrossEntropyTrue:
    case LossSpec::CrossEntropyTarget:
      labels = spec.labels;
      break;
  }
  Tensor grad_logits;
  float loss = cross_entropy(logits, labels, &grad_logits);
  if (!std::isfinite(loss)) throw NumericError("loss is not finite");
  return backward(grad_logits);
}

std::vector<nn::ParamRef> Classifier::params() {
  std::vector<nn::ParamRef> out;
  for (std::size_t i = 0; i < stages_.size(); ++i)
    stages_[i].layer->collect_params("stage" + std::to_string(i), out);
  return out;
}

std::vector<nn::BufferRef> Classifier::buffers() {
  std::vector<nn::BufferRef> out;
  for (std::size_t i = 0; i < stages_.size(); ++i)
    stages_[i].layer->collect_buffers("stage" + std::to_string(i), out);
  return out;
}

void Classifier::save(const std::string& path) const {
  Container c;
  auto* self = const_cast<Classifier*>(this);
  c.meta = {{"format", "classifier"},
            {"architecture", arch_id_},
            {"num_classes", num_classes_},
            {"input_shape", {input_shape_.c, input_shape_.h, input_shape_.w}},
            {"layer_names", tap_names_},
            {"meta", meta_}};
  for (auto& p : self->params()) {
    Tensor t(1, 1, 1, int(p.value->size()));
    std::copy(p.value->begin(), p.value->end(), t.data());
    c.add(p.name, std::move(t));
  }
  for (auto& b : self->buffers()) {
    Tensor t(1, 1, 1, int(b.value->size()));
    std::copy(b.value->begin(), b.value->end(), t.data());
    c.add("buf." + b.name, std::move(t));
  }
  save_container(c, path);
}

std::unique_ptr<Classifier> Classifier::load(const std::string& path) {
  Container c = load_container(path);
  if (c.meta.value("format", "") != "classifier")
    throw IoError("not a classifier checkpoint: " + path);
  auto in = c.meta.at("input_shape");
  Shape shape{0, in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
  auto m = create(c.meta.at("architecture").get<std::string>(),
                  c.meta.at("num_classes").get<int>(), shape, 0);
  m->meta_ = c.meta.value("meta", nlohmann::json::object());
  for (auto& p : m->params()) {
    const Tensor& t = c.tensor(p.name);
    if (std::size_t(t.size()) != p.value->size())
      throw IoError("checkpoint parameter size mismatch: " + p.name);
    std::copy(t.data(), t.data() + t.size(), p.value->begin());
  }
  for (auto& b : m->buffers()) {
    const Tensor& t = c.tensor("buf." + b.name);
    if (std::size_t(t.size()) != b.value->size())
      throw IoError("checkpoint buffer size mismatch: " + b.name);
    std::copy(t.data(), t.data() + t.size(), b.value->begin());
  }
  return m;
}

// --------------------------------------------------------------- training

float accuracy(Classifier& c, const ImageBatch& batch, int eval_batch) {
  int n = batch.size();
  if (n == 0) throw ConfigError("accuracy over empty batch");
  int correct = 0;
  for (int start = 0; start < n; start += eval_batch) {
    int bs = std::min(eval_batch, n - start);
    Tensor sub(bs, batch.pixels.shape().c, batch.pixels.shape().h,
               batch.pixels.shape().w);
    for (int i = 0; i < bs; ++i)
      sub.set_sample(i, batch.pixels.sample(start + i));
    auto pred = c.predict(sub);
    for (int i = 0; i < bs; ++i)
      if (pred.classes[std::size_t(i)] == batch.labels[std::size_t(start + i)])
        ++correct;
  }
  return float(correct) / float(n);
}

std::unique_ptr<Classifier> train_classifier(const Dataset& dataset,
                                             const std::string& arch_id,
                                             const TrainClassifierParams& p) {
  if (dataset.train.size() == 0)
    throw ConfigError("empty training dataset '" + dataset.id + "'");
  dataset.train.validate(dataset.num_classes);
  Shape in = dataset.train.pixels.shape();
  auto model = Classifier::create(arch_id, dataset.num_classes, in, p.seed);
  auto params = model->params();
  nn::Adam opt(params, p.lr);
  Rng rng(p.seed ^ 0x5eedull);

  int n = dataset.train.size();
  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    auto order = rng.permutation(n);
    for (int start = 0; start < n; start += p.batch_size) {
      int bs = std::min(p.batch_size, n - start);
      Tensor xb(bs, in.c, in.h, in.w);
      std::vector<std::int32_t> yb(static_cast<std::size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        xb.set_sample(i, dataset.train.pixels.sample(order[std::size_t(start + i)]));
        yb[std::size_t(i)] =
            dataset.train.labels[std::size_t(order[std::size_t(start + i)])];
      }
      Tensor logits = model->forward(xb, true);
      Tensor grad_logits;
      float loss = cross_entropy(logits, yb, &grad_logits);
      if (!std::isfinite(loss))
        throw NumericError("classifier training diverged at epoch " +
                           std::to_string(epoch));
      opt.zero_grad();
      model->backward(grad_logits);
      opt.step();
    }
  }

  model->meta() = {{"dataset", dataset.id},
                   {"epochs", p.epochs},
                   {"batch_size", p.batch_size},
                   {"lr", p.lr},
                   {"seed", p.seed}};
  if (dataset.test.size() > 0)
    model->meta()["clean_test_accuracy"] = accuracy(*model, dataset.test);
  model->meta()["clean_train_accuracy"] = accuracy(*model, dataset.train);
  return model;
}

}  // namespace hgd
