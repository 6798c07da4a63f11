#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "models/classifier.hpp"

using namespace hgd;
using hgd::testing::compare_grads;

namespace {

Tensor random_batch(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(s);
  for (auto& v : t.vec()) v = rng.uniform(0.f, 1.f);
  return t;
}

}  // namespace

TEST_CASE("layer-names end with features and logits") {
  for (auto& arch : Classifier::registered_architectures()) {
    auto c = Classifier::create(arch, 10, Shape{0, 3, 32, 32}, 1);
    auto& names = c->layer_names();
    REQUIRE(names.size() >= 2);
    CHECK(names[names.size() - 2] == "features");
    CHECK(names.back() == "logits");
  }
}

TEST_CASE("unknown architecture is a configuration error") {
  CHECK_THROWS_AS(Classifier::create("inception", 10, Shape{0, 3, 32, 32}, 1),
                  ConfigError);
}

TEST_CASE("predict: determinism, shapes, probabilities") {
  auto c = Classifier::create("convnet", 10, Shape{0, 3, 32, 32}, 2);
  Tensor batch = random_batch(Shape{5, 3, 32, 32}, 3);

  auto p1 = c->predict(batch);
  auto p2 = c->predict(batch);
  CHECK(max_abs_diff(p1.logits, p2.logits) == 0.f);  // bit-for-bit
  CHECK(p1.classes.size() == 5);
  CHECK(p1.logits.shape() == Shape{5, 10, 1, 1});
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(p1.classes[i] == argmax_classes(p1.logits)[i]);

  Tensor probs = softmax(p1.logits);
  for (int i = 0; i < 5; ++i) {
    double s = 0.0;
    for (int j = 0; j < 10; ++j) {
      CHECK(probs.at(i, j, 0, 0) >= 0.f);
      s += probs.at(i, j, 0, 0);
    }
    CHECK(std::fabs(s - 1.0) < 1e-5);
  }

  CHECK_THROWS_AS(c->predict(Tensor(1, 3, 16, 16)), ShapeError);
}

TEST_CASE("hand-set linear weights give analytic logits") {
  auto c = Classifier::create("linear", 2, Shape{0, 1, 2, 2}, 4);
  auto params = c->params();
  REQUIRE(params.size() == 2);
  // weight rows: class 0 = [1,2,3,4], class 1 = [0,0,0,0]; bias 0.
  *params[0].value = {1.f, 2.f, 3.f, 4.f, 0.f, 0.f, 0.f, 0.f};
  *params[1].value = {0.f, 0.f};
  Tensor x(1, 1, 2, 2);
  x.vec() = {0.1f, 0.2f, 0.3f, 0.4f};
  auto p = c->predict(x);
  CHECK(p.logits.at(0, 0, 0, 0) ==
        doctest::Approx(0.1f + 0.4f + 0.9f + 1.6f));
  CHECK(p.logits.at(0, 1, 0, 0) == doctest::Approx(0.f));
}

TEST_CASE("tap consistency and errors") {
  auto c = Classifier::create("resnet", 10, Shape{0, 3, 32, 32}, 5);
  Tensor batch = random_batch(Shape{3, 3, 32, 32}, 6);

  Tensor tl = c->tap(batch, "logits");
  auto p = c->predict(batch);
  CHECK(max_abs_diff(tl, p.logits) == 0.f);

  Tensor b1 = c->tap(batch, "block1");
  CHECK(b1.shape().n == 3);

  Tensor f1 = c->tap(batch, "features");
  Tensor f2 = c->tap(batch, "features");
  CHECK(max_abs_diff(f1, f2) == 0.f);

  CHECK_THROWS_AS(c->tap(batch, "block99"), ConfigError);
}

TEST_CASE("zero-weight classifier has zero input gradient") {
  auto c = Classifier::create("linear", 4, Shape{0, 1, 3, 3}, 7);
  for (auto& p : c->params())
    std::fill(p.value->begin(), p.value->end(), 0.f);
  Tensor batch = random_batch(Shape{2, 1, 3, 3}, 8);
  Tensor g = c->input_gradient(batch, {LossSpec::CrossEntropyPredicted, {}});
  CHECK(g.shape() == batch.shape());
  for (std::int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(0.f));
}

TEST_CASE("single-pixel logistic input gradient matches finite differences") {
  auto c = Classifier::create("linear", 2, Shape{0, 1, 1, 1}, 9);
  auto params = c->params();
  *params[0].value = {1.7f, -0.6f};
  *params[1].value = {0.1f, -0.1f};
  Tensor x(1, 1, 1, 1);
  x[0] = 0.4f;
  LossSpec spec{LossSpec::CrossEntropyTrue, {0}};
  Tensor g = c->input_gradient(x, spec);

  auto loss = [&] {
    Tensor logits = c->forward(x, false);
    return double(cross_entropy(logits, spec.labels));
  };
  float num = hgd::testing::fd_grad(&x[0], loss, 1e-3f);
  CHECK(std::fabs(num - g[0]) / std::max(std::fabs(num), 1e-8f) < 1e-4);
}

TEST_CASE("input gradient matches a double-precision oracle on a probe batch") {
  // Independent oracle: the linear model's loss reimplemented in double,
  // differentiated by central differences. Precision supports the tight
  // tolerance here.
  auto c = Classifier::create("linear", 4, Shape{0, 3, 4, 4}, 10);
  auto params = c->params();
  const std::vector<float>& W = *params[0].value;
  const std::vector<float>& b = *params[1].value;
  Tensor batch = random_batch(Shape{3, 3, 4, 4}, 11);
  std::vector<std::int32_t> labels{1, 3, 0};
  Tensor g = c->input_gradient(batch, {LossSpec::CrossEntropyTrue, labels});
  CHECK(g.shape() == batch.shape());

  const int d = 48, classes = 4, n = 3;
  auto loss = [&] {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      std::vector<double> logits(classes, 0.0);
      for (int k = 0; k < classes; ++k) {
        logits[std::size_t(k)] = double(b[std::size_t(k)]);
        for (int j = 0; j < d; ++j)
          logits[std::size_t(k)] +=
              double(W[std::size_t(k * d + j)]) * batch[i * d + j];
      }
      double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      total -= logits[std::size_t(labels[std::size_t(i)])] - mx - std::log(z);
    }
    return total / n;
  };
  auto r = compare_grads(batch.data(), g.data(), std::size_t(batch.size()),
                         loss, 1e-3f, 1e-6f, 1e-3f, 256);
  INFO("max rel err ", r.max_rel_err, " frac ok ", r.frac_ok);
  CHECK(r.checked > 50);
  CHECK(r.frac_ok >= 0.99);
}

TEST_CASE("input gradient directional derivatives on a conv net") {
  // Full conv stack: float rounding swamps per-coordinate differences, so
  // check directional derivatives along random directions instead.
  auto c = Classifier::create("convnet", 4, Shape{0, 3, 8, 8}, 10);
  Tensor batch = random_batch(Shape{2, 3, 8, 8}, 11);
  LossSpec spec{LossSpec::CrossEntropyTrue, {1, 3}};
  Tensor g = c->input_gradient(batch, spec);
  CHECK(g.shape() == batch.shape());
  CHECK(g.all_finite());

  Rng rng(12);
  Tensor saved = batch;
  int ok = 0;
  const int trials = 12;
  const float h = 2e-3f;
  for (int t = 0; t < trials; ++t) {
    Tensor dir(batch.shape());
    double norm = 0.0;
    for (auto& v : dir.vec()) {
      v = rng.normal();
      norm += double(v) * v;
    }
    float inv = 1.f / float(std::sqrt(norm));
    double analytic = 0.0;
    for (std::int64_t i = 0; i < dir.size(); ++i) {
      dir[i] *= inv;
      analytic += double(g[i]) * dir[i];
    }
    auto eval = [&](float s) {
      for (std::int64_t i = 0; i < batch.size(); ++i)
        batch[i] = saved[i] + s * dir[i];
      Tensor logits = c->forward(batch, false);
      return double(cross_entropy(logits, spec.labels));
    };
    double numeric = (eval(h) - eval(-h)) / (2.0 * h);
    batch = saved;
    double diff = std::fabs(analytic - numeric);
    double denom = std::max(std::fabs(analytic), std::fabs(numeric));
    // Small projections sit below the float noise floor; judge those on
    // absolute error.
    if (diff < 5e-4 || diff / denom < 0.1) ++ok;
  }
  CHECK(ok >= trials - 2);
}

TEST_CASE("training a linear model on separable blobs") {
  Dataset d = make_dataset({"blobs2", 64, 32, 12});
  TrainClassifierParams p;
  p.epochs = 30;
  p.batch_size = 16;
  p.lr = 1e-2f;
  p.seed = 12;
  auto c = train_classifier(d, "linear", p);
  CHECK(c->meta().at("clean_train_accuracy").get<float>() >= 0.95f);
  CHECK(c->meta().at("clean_test_accuracy").get<float>() > 0.5f);
}

TEST_CASE("training on an empty dataset is a configuration error") {
  Dataset d = make_dataset({"blobs2", 0, 0, 0});
  CHECK_THROWS_AS(train_classifier(d, "linear", {}), ConfigError);
}

TEST_CASE("small cnn beats chance on synth10") {
  Dataset d = make_dataset({"synth10", 256, 128, 13});
  TrainClassifierParams p;
  p.epochs = 3;
  p.seed = 13;
  auto c = train_classifier(d, "convnet", p);
  float acc = c->meta().at("clean_test_accuracy").get<float>();
  INFO("clean test accuracy ", acc);
  CHECK(acc > 1.f / 10.f);
}

TEST_CASE("checkpoint round-trip preserves behavior and metadata") {
  Dataset d = make_dataset({"blobs2", 32, 16, 14});
  TrainClassifierParams p;
  p.epochs = 5;
  p.seed = 14;
  auto c = train_classifier(d, "linear", p);

  auto path = std::filesystem::temp_directory_path() / "hgd_test_clf.ckpt";
  c->save(path.string());
  auto r = Classifier::load(path.string());
  CHECK(r->architecture() == "linear");
  CHECK(r->layer_names() == c->layer_names());
  CHECK(r->meta().at("dataset") == c->meta().at("dataset"));

  Tensor batch = random_batch(Shape{4, 1, 8, 8}, 15);
  CHECK(max_abs_diff(r->predict(batch).logits, c->predict(batch).logits) == 0.f);
  std::filesystem::remove(path);
}
