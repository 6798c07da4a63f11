#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "attacks/attacks.hpp"

using namespace hgd;

namespace {

Tensor random_batch(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(s);
  for (auto& v : t.vec()) v = rng.uniform(0.05f, 0.95f);
  return t;
}

// A linear model with hand-set weights has a closed-form input gradient,
// so the fast-gradient sign pattern can be predicted exactly.
std::unique_ptr<Classifier> make_probe_linear() {
  auto c = Classifier::create("linear", 2, Shape{0, 1, 2, 2}, 21);
  auto params = c->params();
  *params[0].value = {1.f, -2.f, 0.5f, -0.25f, 0.f, 0.f, 0.f, 0.f};
  *params[1].value = {0.f, 0.f};
  return c;
}

}  // namespace

TEST_CASE("attack spec validation") {
  AttackSpec s;
  s.source_models = {"a"};
  s.epsilon = 4.f / 255.f;
  CHECK_NOTHROW(s.validate());

  AttackSpec bad_eps = s;
  bad_eps.epsilon = 0.f;
  CHECK_THROWS_AS(bad_eps.validate(), ConfigError);

  AttackSpec no_src = s;
  no_src.source_models.clear();
  CHECK_THROWS_AS(no_src.validate(), ConfigError);

  AttackSpec multi_step_fgsm = s;
  multi_step_fgsm.steps = 4;
  CHECK_THROWS_AS(multi_step_fgsm.validate(), ConfigError);

  AttackSpec targeted = s;
  targeted.method = AttackMethod::TargetedFgsm;
  CHECK_THROWS_AS(targeted.validate(), ConfigError);  // no target policy
  targeted.target_policy = TargetPolicy::LeastLikely;
  CHECK_NOTHROW(targeted.validate());

  CHECK_THROWS_AS(attack_method_from_string("pgd-attack"), ConfigError);
  CHECK(attack_method_from_string(to_string(AttackMethod::Ifgsm)) ==
        AttackMethod::Ifgsm);
}

TEST_CASE("fgsm perturbs each pixel by exactly eps along the gradient sign") {
  auto c = make_probe_linear();
  ClassifierList models{c.get()};
  Tensor x(1, 1, 2, 2);
  x.vec() = {0.5f, 0.5f, 0.5f, 0.5f};
  const float eps = 8.f / 255.f;
  Tensor adv = fgsm(models, x, eps);

  // Class 0 logit dominates (w.x = 0.5*(1-2+0.5-0.25) < 0 gives logit
  // -0.625 vs 0, so prediction is class 1, whose weight row is zero).
  // d/dx of CE with predicted label 1 is p0 * w0, so the sign pattern
  // follows w0 = [+,-,+,-] and the attack adds eps * that sign.
  auto pred = c->predict(x);
  REQUIRE(pred.classes[0] == 1);
  CHECK(adv[0] == doctest::Approx(0.5f + eps));
  CHECK(adv[1] == doctest::Approx(0.5f - eps));
  CHECK(adv[2] == doctest::Approx(0.5f + eps));
  CHECK(adv[3] == doctest::Approx(0.5f - eps));
}

TEST_CASE("attacks stay inside the eps ball and the pixel range") {
  auto c = Classifier::create("convnet", 4, Shape{0, 3, 8, 8}, 22);
  ClassifierList models{c.get()};
  Tensor x = random_batch(Shape{4, 3, 8, 8}, 23);
  const float eps = 16.f / 255.f;

  for (auto method : {AttackMethod::Fgsm, AttackMethod::Ifgsm}) {
    Tensor adv = method == AttackMethod::Fgsm ? fgsm(models, x, eps)
                                              : ifgsm(models, x, eps, 4);
    CHECK(max_abs_diff(adv, x) <= eps + 1e-6f);
    for (std::int64_t i = 0; i < adv.size(); ++i) {
      CHECK(adv[i] >= 0.f);
      CHECK(adv[i] <= 1.f);
    }
  }

  Rng rng(24);
  Tensor tadv = targeted_fgsm(models, x, eps, TargetPolicy::Random, &rng);
  CHECK(max_abs_diff(tadv, x) <= eps + 1e-6f);
}

TEST_CASE("single-step ifgsm equals fgsm") {
  auto c = Classifier::create("convnet", 4, Shape{0, 3, 8, 8}, 25);
  ClassifierList models{c.get()};
  Tensor x = random_batch(Shape{3, 3, 8, 8}, 26);
  const float eps = 4.f / 255.f;
  Tensor a = fgsm(models, x, eps);
  Tensor b = ifgsm(models, x, eps, 1);
  CHECK(max_abs_diff(a, b) == 0.f);
}

TEST_CASE("attacks are deterministic") {
  auto c = Classifier::create("convnet", 4, Shape{0, 3, 8, 8}, 27);
  ClassifierList models{c.get()};
  Tensor x = random_batch(Shape{3, 3, 8, 8}, 28);
  Tensor a = ifgsm(models, x, 8.f / 255.f, 3);
  Tensor b = ifgsm(models, x, 8.f / 255.f, 3);
  CHECK(max_abs_diff(a, b) == 0.f);
}

TEST_CASE("least-likely targets break ties to the smallest class index") {
  // Zero weights give uniform probabilities, so every class ties.
  auto c = Classifier::create("linear", 5, Shape{0, 1, 2, 2}, 29);
  for (auto& p : c->params())
    std::fill(p.value->begin(), p.value->end(), 0.f);
  ClassifierList models{c.get()};
  Tensor x = random_batch(Shape{3, 1, 2, 2}, 30);
  auto targets = resolve_targets(models, x, TargetPolicy::LeastLikely, nullptr);
  for (auto t : targets) CHECK(t == 0);
}

TEST_CASE("targeted attack moves probability toward the target class") {
  auto c = Classifier::create("convnet", 4, Shape{0, 3, 8, 8}, 31);
  ClassifierList models{c.get()};
  Tensor x = random_batch(Shape{6, 3, 8, 8}, 32);
  auto targets = resolve_targets(models, x, TargetPolicy::LeastLikely, nullptr);
  Tensor adv = targeted_fgsm(models, x, 16.f / 255.f, TargetPolicy::None,
                             nullptr, &targets);

  Tensor p_before = softmax(c->predict(x).logits);
  Tensor p_after = softmax(c->predict(adv).logits);
  int moved = 0;
  for (int i = 0; i < 6; ++i) {
    int t = targets[std::size_t(i)];
    if (p_after.at(i, t, 0, 0) > p_before.at(i, t, 0, 0)) ++moved;
  }
  CHECK(moved >= 5);
}

TEST_CASE("ensemble gradient of identical models equals the single gradient") {
  auto c = Classifier::create("convnet", 4, Shape{0, 3, 8, 8}, 33);
  Tensor x = random_batch(Shape{2, 3, 8, 8}, 34);
  ClassifierList one{c.get()};
  ClassifierList two{c.get(), c.get()};
  auto labels1 = predicted_labels(one, x);
  auto labels2 = predicted_labels(two, x);
  Tensor g1 = ensemble_ce_gradient(one, x, labels1);
  Tensor g2 = ensemble_ce_gradient(two, x, labels2);
  CHECK(max_abs_diff(g1, g2) < 1e-7f);

  CHECK_THROWS_AS(ensemble_ce_gradient({}, x, {}), ConfigError);
  CHECK_THROWS_AS(fgsm({}, x, 0.1f), ConfigError);
}

TEST_CASE("corpus forging counts, protocol checks and round-trip") {
  Dataset d = make_dataset({"synth10", 24, 12, 35});
  auto a = Classifier::create("convnet", 10, Shape{0, 3, 32, 32}, 36);
  auto b = Classifier::create("resnet", 10, Shape{0, 3, 32, 32}, 37);
  ClassifierRegistry reg{{"cnn-a", a.get()}, {"res-b", b.get()}};

  CorpusProtocol proto;
  proto.seed = 38;
  proto.holdout_model = "res-b";
  proto.splits = {
      {"train",
       {{AttackMethod::Fgsm, 1, {"cnn-a"}},
        {AttackMethod::Ifgsm, 3, {"cnn-a"}}},
       {},
       1,
       16},
      {"white-test", {{AttackMethod::Fgsm, 1, {"cnn-a"}}}, {4, 16}, 1, 16},
      {"black-test", {{AttackMethod::Fgsm, 1, {"res-b"}}}, {4, 16}, 1, 16},
  };

  ImageBatch train_clean = take(d.train, 24);
  ImageBatch test_clean = take(d.test, 12);
  std::map<std::string, const ImageBatch*> clean{
      {"train", &train_clean},
      {"white-test", &test_clean},
      {"black-test", &test_clean}};

  AdversarialCorpus corpus = forge_corpus(proto, clean, reg);
  REQUIRE(corpus.splits.size() == 3);
  // Two attack rows over 24 clean images.
  CHECK(corpus.split("train").size() == 48);
  CHECK(corpus.split("white-test").size() == 12);
  CHECK(corpus.has_split("black-test"));
  CHECK_FALSE(corpus.has_split("val"));
  CHECK_THROWS_AS(corpus.split("val"), ConfigError);

  auto& tr = corpus.split("train");
  for (int i = 0; i < tr.size(); ++i) {
    CHECK(tr.eps_num[std::size_t(i)] >= 1);
    CHECK(tr.eps_num[std::size_t(i)] <= 16);
    float eps = float(tr.eps_num[std::size_t(i)]) / 255.f;
    float dist = max_abs_diff(tr.adv.sample(i), tr.clean.sample(i));
    CHECK(dist <= eps + 1e-6f);
  }
  auto& wt = corpus.split("white-test");
  for (auto e : wt.eps_num) CHECK((e == 4 || e == 16));

  // Forging again with the same protocol reproduces the corpus exactly.
  AdversarialCorpus again = forge_corpus(proto, clean, reg);
  CHECK(max_abs_diff(again.split("train").adv, tr.adv) == 0.f);
  CHECK(again.split("train").eps_num == tr.eps_num);

  // Holdout model in a training row is a protocol violation.
  CorpusProtocol bad = proto;
  bad.splits[0].rows[0].sources = {"res-b"};
  CHECK_THROWS_AS(forge_corpus(bad, clean, reg), ConfigError);

  CorpusProtocol unknown = proto;
  unknown.splits[0].rows[0].sources = {"nonesuch"};
  CHECK_THROWS_AS(forge_corpus(unknown, clean, reg), ConfigError);

  // Protocol JSON round-trip.
  CorpusProtocol p2 = CorpusProtocol::from_json(proto.to_json());
  CHECK(p2.to_json() == proto.to_json());

  // Disk round-trip is bit-exact.
  auto dir = std::filesystem::temp_directory_path() / "hgd_test_corpus";
  std::filesystem::remove_all(dir);
  save_corpus(corpus, dir.string());
  AdversarialCorpus loaded = load_corpus(dir.string());
  REQUIRE(loaded.splits.size() == 3);
  CHECK(max_abs_diff(loaded.split("train").adv, tr.adv) == 0.f);
  CHECK(max_abs_diff(loaded.split("train").clean, tr.clean) == 0.f);
  CHECK(loaded.split("train").labels == tr.labels);
  CHECK(loaded.split("train").methods == tr.methods);
  CHECK(loaded.split("train").sources == tr.sources);
  CHECK(loaded.meta == corpus.meta);
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(load_corpus((dir / "missing").string()), IoError);
}

TEST_CASE("stronger attacks hurt a trained model more") {
  Dataset d = make_dataset({"synth10", 192, 96, 40});
  TrainClassifierParams p;
  p.epochs = 4;
  p.seed = 40;
  auto c = train_classifier(d, "convnet", p);
  ClassifierList models{c.get()};

  ImageBatch clean = take(d.test, 96);
  float acc_clean = accuracy(*c, clean);

  ImageBatch adv_small = clean, adv_large = clean;
  adv_small.pixels = fgsm(models, clean.pixels, 2.f / 255.f);
  adv_large.pixels = fgsm(models, clean.pixels, 16.f / 255.f);
  float acc_small = accuracy(*c, adv_small);
  float acc_large = accuracy(*c, adv_large);
  INFO("clean ", acc_clean, " eps2 ", acc_small, " eps16 ", acc_large);
  CHECK(acc_large <= acc_small);
  CHECK(acc_large < acc_clean);
}
