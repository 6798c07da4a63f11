#include "eval/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "core/error.hpp"

namespace hgd {

namespace {

Tensor defended_images(const DefensePipeline& p, const Tensor& batch) {
  if (!p.denoiser) return batch;
  return clamp(p.denoiser->forward(batch, false), 0.f, 1.f);
}

}  // namespace

Tensor pipeline_logits(const DefensePipeline& p, const Tensor& batch,
                       int eval_batch) {
  if (!p.classifier) throw ConfigError("pipeline has no target classifier");
  if (p.oracle)
    throw ConfigError(
        "oracle pipeline needs corpus clean references; use evaluate()");
  Shape s = batch.shape();
  Tensor logits(s.n, p.classifier->num_classes(), 1, 1);
  for (int start = 0; start < s.n; start += eval_batch) {
    int bs = std::min(eval_batch, s.n - start);
    Tensor sub(bs, s.c, s.h, s.w);
    for (int i = 0; i < bs; ++i) sub.set_sample(i, batch.sample(start + i));
    Tensor out = p.classifier->forward(defended_images(p, sub), false);
    for (int i = 0; i < bs; ++i) logits.set_sample(start + i, out.sample(i));
  }
  return logits;
}

std::vector<std::int32_t> pipeline_predict(const DefensePipeline& p,
                                           const Tensor& batch,
                                           int eval_batch) {
  return argmax_classes(pipeline_logits(p, batch, eval_batch));
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json js;
  js["metadata"] = metadata;
  js["rows"] = nlohmann::json::array();
  for (auto& r : rows)
    js["rows"].push_back({{"defense", r.defense},
                          {"split", r.split},
                          {"method", r.method},
                          {"steps", r.steps},
                          {"eps_num", r.eps_num},
                          {"accuracy", r.accuracy},
                          {"denoising_loss", r.denoising_loss},
                          {"count", r.count}});
  return js;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
  EvaluationReport rep;
  rep.metadata = j.value("metadata", nlohmann::json::object());
  for (auto& r : j.at("rows"))
    rep.rows.push_back({r.at("defense").get<std::string>(),
                        r.at("split").get<std::string>(),
                        r.at("method").get<std::string>(),
                        r.at("steps").get<int>(), r.at("eps_num").get<int>(),
                        r.at("accuracy").get<float>(),
                        r.at("denoising_loss").get<float>(),
                        r.at("count").get<int>()});
  return rep;
}

std::string EvaluationReport::render_table() const {
  std::ostringstream os;
  os << "defense      split        attack        eps  steps  accuracy  "
        "dn-loss   n\n";
  char buf[160];
  for (auto& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "%-12s %-12s %-12s %4d  %5d  %8.4f  %7.5f  %4d\n",
                  r.defense.c_str(), r.split.c_str(), r.method.c_str(),
                  r.eps_num, r.steps, double(r.accuracy),
                  double(r.denoising_loss), r.count);
    os << buf;
  }
  return os.str();
}

void EvaluationReport::append(const EvaluationReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

EvaluationReport evaluate(const DefensePipeline& p,
                          const AdversarialCorpus& corpus,
                          const std::vector<std::string>& splits) {
  if (!p.classifier) throw ConfigError("pipeline has no target classifier");
  Shape want = p.classifier->input_shape();
  EvaluationReport rep;
  rep.metadata = {{"defense", p.label}, {"corpus", corpus.meta}};

  std::vector<std::string> names = splits;
  if (names.empty())
    for (auto& s : corpus.splits) names.push_back(s.name);

  for (auto& name : names) {
    const CorpusSplit& split = corpus.split(name);
    Shape cs = split.adv.shape();
    if (cs.c != want.c || cs.h != want.h || cs.w != want.w)
      throw ConfigError("corpus split '" + name +
                        "' does not match the classifier input shape");
    if (p.denoiser) {
      Shape ds = p.denoiser->config().input_shape;
      if (ds.c != cs.c || ds.h != cs.h || ds.w != cs.w)
        throw ConfigError("denoiser input shape does not match corpus");
    }

    // Group entries by (method, steps, eps).
    std::map<std::tuple<std::string, int, int>, std::vector<int>> groups;
    for (int i = 0; i < split.size(); ++i)
      groups[{split.methods[std::size_t(i)], split.steps[std::size_t(i)],
              split.eps_num[std::size_t(i)]}]
          .push_back(i);

    auto eval_rows = [&](const Tensor& inputs, const Tensor& clean,
                         const std::vector<std::int32_t>& labels,
                         const std::string& method, int steps, int eps) {
      Tensor processed = p.oracle ? clean : defended_images(p, inputs);
      auto pred = p.classifier->predict(processed).classes;
      int correct = 0;
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++correct;
      ReportRow row;
      row.defense = p.label;
      row.split = name;
      row.method = method;
      row.steps = steps;
      row.eps_num = eps;
      row.count = int(pred.size());
      row.accuracy = float(correct) / float(pred.size());
      row.denoising_loss = mean_abs_diff(processed, clean);
      rep.rows.push_back(row);
    };

    for (auto& [key, idxs] : groups) {
      int m = int(idxs.size());
      Shape s = split.adv.shape();
      Tensor adv(m, s.c, s.h, s.w), clean(m, s.c, s.h, s.w);
      std::vector<std::int32_t> labels(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        adv.set_sample(i, split.adv.sample(idxs[std::size_t(i)]));
        clean.set_sample(i, split.clean.sample(idxs[std::size_t(i)]));
        labels[std::size_t(i)] = split.labels[std::size_t(idxs[std::size_t(i)])];
      }
      eval_rows(adv, clean, labels, std::get<0>(key), std::get<1>(key),
                std::get<2>(key));
    }

    // Clean row: the distinct clean references of this split.
    std::vector<int> firsts;
    std::vector<std::int32_t> seen;
    for (int i = 0; i < split.size(); ++i) {
      auto id = split.clean_ids[std::size_t(i)];
      if (std::find(seen.begin(), seen.end(), id) == seen.end()) {
        seen.push_back(id);
        firsts.push_back(i);
      }
    }
    int m = int(firsts.size());
    Shape s = split.adv.shape();
    Tensor clean(m, s.c, s.h, s.w);
    std::vector<std::int32_t> labels(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      clean.set_sample(i, split.clean.sample(firsts[std::size_t(i)]));
      labels[std::size_t(i)] = split.labels[std::size_t(firsts[std::size_t(i)])];
    }
    eval_rows(clean, clean, labels, "clean", 0, 0);
  }
  return rep;
}

EvaluationReport transfer_model_eval(Classifier& target, Denoiser& cross_guided,
                                     Denoiser* self_guided,
                                     const AdversarialCorpus& corpus,
                                     const std::vector<std::string>& splits) {
  EvaluationReport rep;
  rep.append(evaluate({"na", nullptr, &target, false}, corpus, splits));
  rep.append(
      evaluate({"cross-guided", &cross_guided, &target, false}, corpus, splits));
  if (self_guided)
    rep.append(
        evaluate({"self-guided", self_guided, &target, false}, corpus, splits));
  rep.metadata = {{"protocol", "model-transfer"}};
  return rep;
}

ClassSplit split_classes(int num_classes, float train_fraction) {
  if (num_classes < 2) throw ConfigError("need at least two classes to split");
  if (train_fraction <= 0.f || train_fraction > 1.f)
    throw ConfigError("train fraction must lie in (0, 1]");
  int n_train = int(std::round(double(train_fraction) * num_classes));
  n_train = std::clamp(n_train, 1, num_classes);
  if (train_fraction < 1.f && n_train == num_classes)
    n_train = num_classes - 1;
  ClassSplit s;
  for (int c = 0; c < num_classes; ++c)
    (c < n_train ? s.train_classes : s.holdout_classes).push_back(c);
  return s;
}

std::vector<std::int32_t> ensemble_defense(
    const std::vector<DefensePipeline>& pipelines, const Tensor& batch) {
  if (pipelines.empty()) throw ConfigError("empty defense ensemble");
  int classes = pipelines.front().classifier
                    ? pipelines.front().classifier->num_classes()
                    : 0;
  for (auto& p : pipelines) {
    if (!p.classifier) throw ConfigError("ensemble member has no classifier");
    if (p.classifier->num_classes() != classes)
      throw ConfigError("ensemble members disagree on the class count");
  }
  Tensor mean(batch.shape().n, classes, 1, 1);
  for (auto& p : pipelines) mean += pipeline_logits(p, batch);
  mean *= 1.f / float(pipelines.size());
  return argmax_classes(mean);
}

}  // namespace hgd
