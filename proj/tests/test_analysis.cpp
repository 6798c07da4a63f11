#include <doctest.h>

#include <cmath>

#include "analysis/analysis.hpp"
#include "attacks/attacks.hpp"

using namespace hgd;

namespace {

Tensor random_batch(Shape s, std::uint64_t seed, float lo = 0.f, float hi = 1.f) {
  Rng rng(seed);
  Tensor t(s);
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("perturbation level basics") {
  Tensor x = random_batch(Shape{3, 2, 4, 4}, 101, 0.2f, 0.8f);
  CHECK(perturbation_level(x, x) == 0.f);

  // Scaling both tensors by any c > 0 cancels in the ratio.
  Tensor p = random_batch(Shape{3, 2, 4, 4}, 102, 0.2f, 0.8f);
  float base = perturbation_level(x, p);
  for (float c : {0.5f, 3.f, 100.f}) {
    Tensor xs = x, ps = p;
    xs *= c;
    ps *= c;
    CHECK(std::fabs(perturbation_level(xs, ps) - base) < 1e-6f);
  }

  CHECK_THROWS_AS(perturbation_level(x, Tensor(3, 2, 2, 2)), ShapeError);
  Tensor zero(2, 1, 2, 2);
  CHECK_THROWS_AS(perturbation_level(zero, random_batch(Shape{2, 1, 2, 2}, 103)),
                  NumericError);
}

TEST_CASE("profile over a classifier") {
  auto c = Classifier::create("convnet", 4, Shape{0, 3, 8, 8}, 104);
  Tensor x = random_batch(Shape{4, 3, 8, 8}, 105);

  auto zero = perturbation_profile(*c, x, x, "identity");
  CHECK(zero.layer_names.front() == "input");
  CHECK(zero.layer_names.back() == "logits");
  CHECK(zero.sample_count == 4);
  for (float l : zero.levels) CHECK(l == 0.f);

  Tensor p = x;
  Rng rng(106);
  for (auto& v : p.vec()) v = std::clamp(v + rng.normal(0.f, 0.02f), 0.f, 1.f);
  auto prof = perturbation_profile(*c, x, p, "noise");
  REQUIRE(prof.levels.size() == prof.layer_names.size());
  for (float l : prof.levels) CHECK(l >= 0.f);

  // Averaging over samples is order-independent.
  std::vector<int> perm{3, 1, 0, 2};
  Tensor xp(4, 3, 8, 8), pp(4, 3, 8, 8);
  for (int i = 0; i < 4; ++i) {
    xp.set_sample(i, x.sample(perm[std::size_t(i)]));
    pp.set_sample(i, p.sample(perm[std::size_t(i)]));
  }
  auto shuffled = perturbation_profile(*c, xp, pp, "noise");
  for (std::size_t i = 0; i < prof.levels.size(); ++i)
    CHECK(std::fabs(shuffled.levels[i] - prof.levels[i]) < 1e-6f);

  CHECK_THROWS_AS(perturbation_profile(*c, x, Tensor(2, 3, 8, 8), "bad"),
                  ShapeError);

  CHECK(PerturbationProfile::from_json(prof.to_json()).to_json() ==
        prof.to_json());
}

TEST_CASE("slope fit recovers planted slopes") {
  Tensor adv = random_batch(Shape{2, 3, 8, 8}, 107);
  Tensor dx = random_batch(Shape{2, 3, 8, 8}, 108, -0.06f, 0.06f);
  Tensor clean = adv;
  clean -= dx;

  for (float k : {-1.f, 0.f, 0.5f, 1.f, 2.f}) {
    // Construct xhat so that the removed perturbation is exactly k * dx.
    Tensor xhat = adv;
    Tensor scaled = dx;
    scaled *= k;
    xhat -= scaled;
    auto s = noise_scatter(clean, adv, xhat);
    CHECK(std::fabs(s.slope - k) < 1e-6f);
  }

  // Perfect denoiser and no-op denoiser as endpoints.
  CHECK(std::fabs(noise_scatter(clean, adv, clean).slope - 1.f) < 1e-6f);
  CHECK(std::fabs(noise_scatter(clean, adv, adv).slope) < 1e-6f);

  // Zero perturbation cannot be fit.
  CHECK_THROWS_AS(noise_scatter(adv, adv, clean), NumericError);
}

TEST_CASE("slope fit is scale invariant") {
  Tensor dx = random_batch(Shape{1, 1, 8, 8}, 109, -1.f, 1.f);
  Tensor dy = random_batch(Shape{1, 1, 8, 8}, 110, -1.f, 1.f);
  float k = fit_slope_through_origin(dx, dy);
  Tensor dxs = dx, dys = dy;
  dxs *= 7.f;
  dys *= 7.f;
  CHECK(std::fabs(fit_slope_through_origin(dxs, dys) - k) < 1e-5f);
}

TEST_CASE("scatter histogram accounts for every pixel") {
  Tensor clean = random_batch(Shape{2, 3, 8, 8}, 111);
  Rng rng(112);
  Tensor adv = gaussian_perturb(clean, 0.05f, rng);
  Tensor xhat = clean;
  auto s = noise_scatter(clean, adv, xhat, 31);
  CHECK(int(s.histogram.size()) == 31 * 31);
  std::int64_t total = 0;
  for (auto c : s.histogram) total += c;
  CHECK(total == clean.size());
  CHECK(NoiseScatter::from_json(s.to_json()).to_json() == s.to_json());
}

TEST_CASE("gaussian perturbation hits the requested level") {
  Tensor x = random_batch(Shape{4, 3, 16, 16}, 113, 0.1f, 0.9f);
  Rng rng(114);
  for (float target : {0.02f, 0.05f, 0.15f}) {
    Tensor p = gaussian_perturb(x, target, rng);
    float achieved = perturbation_level(x, p);
    CHECK(std::fabs(achieved - target) <= 0.05f * target);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      CHECK(p[i] >= 0.f);
      CHECK(p[i] <= 1.f);
    }
  }
  CHECK(max_abs_diff(gaussian_perturb(x, 0.f, rng), x) == 0.f);
  CHECK_THROWS_AS(gaussian_perturb(x, -0.1f, rng), ConfigError);
}

TEST_CASE("adversarial perturbations amplify more than matched noise") {
  Dataset d = make_dataset({"synth10", 160, 64, 115});
  TrainClassifierParams p;
  p.epochs = 4;
  p.seed = 115;
  auto c = train_classifier(d, "convnet", p);

  ImageBatch clean = take(d.test, 48);
  ClassifierList models{c.get()};
  Tensor adv = fgsm(models, clean.pixels, 16.f / 255.f);
  auto adv_prof = perturbation_profile(*c, clean.pixels, adv, "adversarial");

  float e0 = adv_prof.levels[0];
  Rng rng(116);
  Tensor noisy = gaussian_perturb(clean.pixels, e0, rng);
  auto noise_prof = perturbation_profile(*c, clean.pixels, noisy, "random-noise");

  std::size_t top = adv_prof.levels.size() - 1;
  INFO("adv top ", adv_prof.levels[top], " noise top ", noise_prof.levels[top]);
  CHECK(adv_prof.levels[top] > noise_prof.levels[top]);
}
