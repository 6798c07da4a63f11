#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace hgd {

// Seeded RNG wrapper. All randomness in the library flows through instances
// of this class so that a run's seed fully determines its outputs.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Derive an independent stream, e.g. one per pipeline stage.
  Rng fork(std::uint64_t salt) {
    return Rng(gen_() ^ (salt * 0x9e3779b97f4a7c15ull));
  }

  float uniform(float lo = 0.f, float hi = 1.f) {
    return std::uniform_real_distribution<float>(lo, hi)(gen_);
  }
  float normal(float mean = 0.f, float stddev = 1.f) {
    return std::normal_distribution<float>(mean, stddev)(gen_);
  }
  // Inclusive bounds.
  int randint(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(gen_);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), gen_);
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

  std::mt19937_64& engine() { return gen_; }

private:
  std::mt19937_64 gen_;
};

}  // namespace hgd
