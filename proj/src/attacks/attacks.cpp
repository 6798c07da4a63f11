#include "attacks/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/container.hpp"
#include "core/error.hpp"

namespace hgd {

std::string to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::Fgsm: return "fgsm";
    case AttackMethod::TargetedFgsm: return "targeted-fgsm";
    case AttackMethod::Ifgsm: return "ifgsm";
  }
  return "?";
}

AttackMethod attack_method_from_string(const std::string& s) {
  if (s == "fgsm") return AttackMethod::Fgsm;
  if (s == "targeted-fgsm") return AttackMethod::TargetedFgsm;
  if (s == "ifgsm") return AttackMethod::Ifgsm;
  throw ConfigError("unknown attack method '" + s + "'");
}

void AttackSpec::validate() const {
  if (method != AttackMethod::Ifgsm && steps != 1)
    throw ConfigError("single-step attack with steps=" + std::to_string(steps));
  if (steps < 1) throw ConfigError("attack steps must be >= 1");
  if (epsilon <= 0.f || epsilon > 1.f)
    throw ConfigError("epsilon must lie in (0,1], got " +
                      std::to_string(epsilon));
  if (source_models.empty()) throw ConfigError("attack needs source models");
  if (method == AttackMethod::TargetedFgsm && target_policy == TargetPolicy::None)
    throw ConfigError("targeted-fgsm needs a target-class policy");
}

std::vector<std::vector<std::int32_t>> predicted_labels(
    const ClassifierList& models, const Tensor& batch) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(models.size());
  for (auto* m : models) out.push_back(m->predict(batch).classes);
  return out;
}

Tensor ensemble_ce_gradient(const ClassifierList& models, const Tensor& batch,
                            const std::vector<std::vector<std::int32_t>>& labels) {
  if (models.empty()) throw ConfigError("empty classifier list");
  Tensor total(batch.shape());
  for (std::size_t i = 0; i < models.size(); ++i) {
    Tensor g = models[i]->input_gradient(
        batch, {LossSpec::CrossEntropyTrue, labels[i]});
    total += g;
  }
  total *= 1.f / float(models.size());
  return total;
}

namespace {

Tensor sign(const Tensor& t) {
  Tensor s(t.shape());
  for (std::int64_t i = 0; i < t.size(); ++i)
    s[i] = t[i] > 0.f ? 1.f : (t[i] < 0.f ? -1.f : 0.f);
  return s;
}

void clip_to_ball(Tensor& x, const Tensor& center, float epsilon) {
  for (std::int64_t i = 0; i < x.size(); ++i)
    x[i] = std::clamp(x[i], center[i] - epsilon, center[i] + epsilon);
}

}  // namespace

Tensor fgsm(const ClassifierList& models, const Tensor& batch, float epsilon) {
  if (models.empty()) throw ConfigError("fgsm: empty classifier list");
  if (epsilon <= 0.f) throw ConfigError("fgsm: epsilon must be > 0");
  auto labels = predicted_labels(models, batch);
  Tensor g = ensemble_ce_gradient(models, batch, labels);
  Tensor step = sign(g);
  Tensor adv = batch;
  for (std::int64_t i = 0; i < adv.size(); ++i) adv[i] += epsilon * step[i];
  return clamp(adv, 0.f, 1.f);
}

std::vector<std::int32_t> resolve_targets(const ClassifierList& models,
                                          const Tensor& batch,
                                          TargetPolicy policy, Rng* rng) {
  int n = batch.shape().n;
  int classes = models.front()->num_classes();
  std::vector<std::int32_t> targets(std::size_t(n), 0);
  if (policy == TargetPolicy::Random) {
    if (!rng) throw ConfigError("random target policy needs a seeded rng");
    for (auto& t : targets) t = rng->randint(0, classes - 1);
    return targets;
  }
  // Least-likely under the mean predicted probability of the sources.
  Tensor mean_probs(n, classes, 1, 1);
  for (auto* m : models) {
    Tensor p = softmax(m->predict(batch).logits);
    mean_probs += p;
  }
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < classes; ++j)
      if (mean_probs.at(i, j, 0, 0) < mean_probs.at(i, best, 0, 0)) best = j;
    targets[std::size_t(i)] = best;
  }
  return targets;
}

Tensor targeted_fgsm(const ClassifierList& models, const Tensor& batch,
                     float epsilon, TargetPolicy policy, Rng* rng,
                     const std::vector<std::int32_t>* explicit_targets) {
  if (models.empty()) throw ConfigError("targeted-fgsm: empty classifier list");
  if (epsilon < 0.f) throw ConfigError("targeted-fgsm: negative epsilon");
  std::vector<std::int32_t> targets =
      explicit_targets ? *explicit_targets
                       : resolve_targets(models, batch, policy, rng);
  std::vector<std::vector<std::int32_t>> labels(models.size(), targets);
  Tensor g = ensemble_ce_gradient(models, batch, labels);
  Tensor step = sign(g);
  Tensor adv = batch;
  // Descend on the target-class loss.
  for (std::int64_t i = 0; i < adv.size(); ++i) adv[i] -= epsilon * step[i];
  return clamp(adv, 0.f, 1.f);
}

Tensor ifgsm(const ClassifierList& models, const Tensor& batch, float epsilon,
             int n_steps) {
  if (models.empty()) throw ConfigError("ifgsm: empty classifier list");
  if (n_steps < 1) throw ConfigError("ifgsm: steps must be >= 1");
  // Labels are fixed at the clean input's predictions; iterating against a
  // moving predicted label stalls once the prediction flips.
  auto labels = predicted_labels(models, batch);
  float alpha = epsilon / float(n_steps);
  Tensor adv = batch;
  for (int k = 0; k < n_steps; ++k) {
    Tensor g = ensemble_ce_gradient(models, adv, labels);
    Tensor step = sign(g);
    for (std::int64_t i = 0; i < adv.size(); ++i) adv[i] += alpha * step[i];
    clip_to_ball(adv, batch, epsilon);
    adv = clamp(adv, 0.f, 1.f);
  }
  return adv;
}

Tensor run_attack(const AttackSpec& spec, const ClassifierList& models,
                  const Tensor& batch, Rng* rng) {
  spec.validate();
  switch (spec.method) {
    case AttackMethod::Fgsm:
      return fgsm(models, batch, spec.epsilon);
    case AttackMethod::TargetedFgsm:
      return targeted_fgsm(models, batch, spec.epsilon, spec.target_policy, rng);
    case AttackMethod::Ifgsm:
      return ifgsm(models, batch, spec.epsilon, spec.steps);
  }
  throw ConfigError("unreachable attack method");
}

// ------------------------------------------------------------------ corpus

nlohmann::json CorpusProtocol::to_json() const {
  nlohmann::json js;
  js["seed"] = seed;
  js["holdout_model"] = holdout_model;
  js["splits"] = nlohmann::json::array();
  for (auto& s : splits) {
    nlohmann::json sp{{"name", s.name},
                      {"eps_set", s.eps_set},
                      {"eps_lo", s.eps_lo},
                      {"eps_hi", s.eps_hi}};
    sp["rows"] = nlohmann::json::array();
    for (auto& r : s.rows)
      sp["rows"].push_back({{"method", to_string(r.method)},
                            {"steps", r.steps},
                            {"sources", r.sources}});
    js["splits"].push_back(sp);
  }
  return js;
}

CorpusProtocol CorpusProtocol::from_json(const nlohmann::json& j) {
  CorpusProtocol p;
  p.seed = j.value("seed", std::uint64_t(0));
  p.holdout_model = j.value("holdout_model", "");
  for (auto& sp : j.at("splits")) {
    SplitSpec s;
    s.name = sp.at("name").get<std::string>();
    s.eps_set = sp.value("eps_set", std::vector<int>{});
    s.eps_lo = sp.value("eps_lo", 1);
    s.eps_hi = sp.value("eps_hi", 16);
    for (auto& r : sp.at("rows")) {
      Row row;
      row.method = attack_method_from_string(r.at("method").get<std::string>());
      row.steps = r.value("steps", 1);
      row.sources = r.at("sources").get<std::vector<std::string>>();
      s.rows.push_back(row);
    }
    p.splits.push_back(std::move(s));
  }
  return p;
}

const CorpusSplit& AdversarialCorpus::split(const std::string& name) const {
  for (auto& s : splits)
    if (s.name == name) return s;
  throw ConfigError("corpus has no split '" + name + "'");
}

bool AdversarialCorpus::has_split(const std::string& name) const {
  for (auto& s : splits)
    if (s.name == name) return true;
  return false;
}

AdversarialCorpus forge_corpus(
    const CorpusProtocol& protocol,
    const std::map<std::string, const ImageBatch*>& clean_per_split,
    const ClassifierRegistry& registry) {
  // Protocol sanity: the holdout model must stay out of train/val rows.
  for (auto& sp : protocol.splits) {
    bool is_black = sp.name == "black-test";
    for (auto& row : sp.rows) {
      for (auto& src : row.sources) {
        if (!registry.count(src))
          throw ConfigError("unknown source model '" + src + "'");
        if (!is_black && !protocol.holdout_model.empty() &&
            src == protocol.holdout_model)
          throw ConfigError("protocol violation: holdout model '" + src +
                            "' used in split '" + sp.name + "'");
      }
    }
  }

  Rng rng(protocol.seed);
  AdversarialCorpus corpus;
  corpus.meta = {{"protocol", protocol.to_json()}};

  const int attack_batch = 64;
  for (auto& sp : protocol.splits) {
    auto it = clean_per_split.find(sp.name);
    if (it == clean_per_split.end())
      throw ConfigError("no clean images for split '" + sp.name + "'");
    const ImageBatch& clean = *it->second;
    if (clean.size() == 0)
      throw ConfigError("empty clean set for split '" + sp.name + "'");
    Shape cs = clean.pixels.shape();

    CorpusSplit out;
    out.name = sp.name;
    int total = int(sp.rows.size()) * clean.size();
    out.adv = Tensor(total, cs.c, cs.h, cs.w);
    out.clean = Tensor(total, cs.c, cs.h, cs.w);
    out.labels.reserve(std::size_t(total));
    Rng split_rng = rng.fork(std::hash<std::string>{}(sp.name));

    int entry = 0;
    for (auto& row : sp.rows) {
      ClassifierList models;
      for (auto& src : row.sources) models.push_back(registry.at(src));
      for (int start = 0; start < clean.size(); start += attack_batch) {
        int bs = std::min(attack_batch, clean.size() - start);
        // Per-entry eps draw, shared within the generation batch only when
        // the policy is a fixed set of one.
        std::vector<int> eps_draws(static_cast<std::size_t>(bs));
        for (auto& e : eps_draws)
          e = sp.eps_set.empty()
                  ? split_rng.randint(sp.eps_lo, sp.eps_hi)
                  : sp.eps_set[std::size_t(
                        split_rng.randint(0, int(sp.eps_set.size()) - 1))];
        // Attack per eps group so each entry gets its own magnitude.
        std::map<int, std::vector<int>> by_eps;
        for (int i = 0; i < bs; ++i) by_eps[eps_draws[std::size_t(i)]].push_back(i);
        Tensor xb(bs, cs.c, cs.h, cs.w);
        for (int i = 0; i < bs; ++i)
          xb.set_sample(i, clean.pixels.sample(start + i));
        for (auto& [eps_int, idxs] : by_eps) {
          Tensor sub(int(idxs.size()), cs.c, cs.h, cs.w);
          for (std::size_t i = 0; i < idxs.size(); ++i)
            sub.set_sample(int(i), xb.sample(idxs[i]));
          AttackSpec spec;
          spec.method = row.method;
          spec.steps = row.steps;
          spec.epsilon = float(eps_int) / 255.f;
          spec.source_models = row.sources;
          Tensor adv = run_attack(spec, models, sub, &split_rng);
          for (std::size_t i = 0; i < idxs.size(); ++i) {
            int gi = entry + idxs[i];
            out.adv.set_sample(gi, adv.sample(int(i)));
          }
        }
        for (int i = 0; i < bs; ++i) {
          int gi = entry + i;
          out.clean.set_sample(gi, xb.sample(i));
          out.labels.push_back(clean.labels.empty()
                                   ? -1
                                   : clean.labels[std::size_t(start + i)]);
          out.clean_ids.push_back(start + i);
          out.eps_num.push_back(eps_draws[std::size_t(i)]);
          out.steps.push_back(row.steps);
          out.methods.push_back(to_string(row.method));
          out.sources.push_back(row.sources);
        }
        entry += bs;
      }
    }
    corpus.splits.push_back(std::move(out));
  }
  return corpus;
}

void save_corpus(const AdversarialCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["meta"] = corpus.meta;
  manifest["splits"] = nlohmann::json::array();
  for (auto& sp : corpus.splits) {
    Container c;
    c.meta = {{"format", "corpus-split"}, {"split", sp.name}};
    c.add("adv", sp.adv);
    c.add("clean", sp.clean);
    c.add("labels", sp.labels);
    c.add("clean_ids", sp.clean_ids);
    c.add("eps_num", sp.eps_num);
    c.add("steps", sp.steps);
    save_container(c, dir + "/" + sp.name + ".bin");

    nlohmann::json entries = nlohmann::json::array();
    for (int i = 0; i < sp.size(); ++i)
      entries.push_back({{"clean_id", sp.clean_ids[std::size_t(i)]},
                         {"method", sp.methods[std::size_t(i)]},
                         {"steps", sp.steps[std::size_t(i)]},
                         {"eps_num", sp.eps_num[std::size_t(i)]},
                         {"sources", sp.sources[std::size_t(i)]},
                         {"label", sp.labels[std::size_t(i)]}});
    manifest["splits"].push_back({{"name", sp.name},
                                  {"file", sp.name + ".bin"},
                                  {"entries", entries}});
  }
  std::ofstream os(dir + "/manifest.json");
  if (!os) throw IoError("cannot write corpus manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

AdversarialCorpus load_corpus(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw IoError("missing corpus manifest: " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt corpus manifest: " + std::string(e.what()));
  }
  AdversarialCorpus corpus;
  corpus.meta = manifest.value("meta", nlohmann::json::object());
  for (auto& spj : manifest.at("splits")) {
    Container c =
        load_container(dir + "/" + spj.at("file").get<std::string>());
    CorpusSplit sp;
    sp.name = spj.at("name").get<std::string>();
    sp.adv = c.tensor("adv");
    sp.clean = c.tensor("clean");
    sp.labels = c.int_array("labels");
    sp.clean_ids = c.int_array("clean_ids");
    sp.eps_num = c.int_array("eps_num");
    sp.steps = c.int_array("steps");
    for (auto& e : spj.at("entries")) {
      sp.methods.push_back(e.at("method").get<std::string>());
      sp.sources.push_back(e.at("sources").get<std::vector<std::string>>());
    }
    corpus.splits.push_back(std::move(sp));
  }
  return corpus;
}

}  // namespace hgd
