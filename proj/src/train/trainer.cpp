#include "train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "core/error.hpp"
#include "nn/adam.hpp"

namespace hgd {

bool plateau_detector(const std::vector<float>& history, int patience,
                      float min_rel_improvement) {
  if (history.empty()) throw ConfigError("plateau detector needs history");
  int streak = 0;
  float best = history[0];
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < best * (1.f - min_rel_improvement))
      streak = 0;
    else
      ++streak;
    best = std::min(best, history[i]);
  }
  return streak >= patience;
}

nlohmann::json TrainDenoiserRun::to_json() const {
  return {{"denoiser", denoiser.to_json()},
          {"loss", loss.to_json()},
          {"max_epochs", max_epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"lr_after_plateau", lr_after_plateau},
          {"plateau_patience", plateau_patience},
          {"plateau_min_rel_improvement", plateau_min_rel_improvement},
          {"mix_clean", mix_clean},
          {"seed", seed}};
}

TrainDenoiserRun TrainDenoiserRun::from_json(const nlohmann::json& j) {
  TrainDenoiserRun r;
  r.denoiser = DenoiserConfig::from_json(j.at("denoiser"));
  r.loss = GuidedLossSpec::from_json(j.at("loss"));
  r.max_epochs = j.value("max_epochs", 20);
  r.batch_size = j.value("batch_size", 32);
  r.lr = j.value("lr", 1e-3f);
  r.lr_after_plateau = j.value("lr_after_plateau", 1e-4f);
  r.plateau_patience = j.value("plateau_patience", 3);
  r.plateau_min_rel_improvement = j.value("plateau_min_rel_improvement", 0.01f);
  r.mix_clean = j.value("mix_clean", true);
  r.seed = j.value("seed", std::uint64_t(0));
  return r;
}

nlohmann::json TrainingLog::to_json() const {
  nlohmann::json js;
  js["best_epoch"] = best_epoch;
  js["epochs"] = nlohmann::json::array();
  for (auto& e : epochs)
    js["epochs"].push_back({{"epoch", e.epoch},
                            {"train_loss", e.train_loss},
                            {"val_loss", e.val_loss},
                            {"val_accuracy", e.val_accuracy},
                            {"lr", e.lr}});
  return js;
}

TrainingLog TrainingLog::from_json(const nlohmann::json& j) {
  TrainingLog log;
  log.best_epoch = j.at("best_epoch").get<int>();
  for (auto& e : j.at("epochs"))
    log.epochs.push_back({e.at("epoch").get<int>(),
                          e.at("train_loss").get<float>(),
                          e.at("val_loss").get<float>(),
                          e.at("val_accuracy").get<float>(),
                          e.at("lr").get<float>()});
  return log;
}

void TrainingLog::save_jsonl(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write training log: " + path);
  for (auto& e : epochs)
    os << nlohmann::json({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"val_accuracy", e.val_accuracy},
                          {"lr", e.lr}})
              .dump()
       << "\n";
  os << nlohmann::json({{"best_epoch", best_epoch}}).dump() << "\n";
}

namespace {

struct Snapshot {
  std::vector<std::vector<float>> params, buffers;
};

Snapshot take_snapshot(Denoiser& d) {
  Snapshot s;
  for (auto& p : d.params()) s.params.push_back(*p.value);
  for (auto& b : d.buffers()) s.buffers.push_back(*b.value);
  return s;
}

void restore_snapshot(Denoiser& d, const Snapshot& s) {
  auto params = d.params();
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = s.params[i];
  auto buffers = d.buffers();
  for (std::size_t i = 0; i < buffers.size(); ++i)
    *buffers[i].value = s.buffers[i];
}

// In-memory training set: aligned adversarial inputs, clean references and
// true labels.
struct TrainSet {
  Tensor adv, clean;
  std::vector<std::int32_t> labels;
  int size() const { return adv.shape().n; }
};

TrainSet assemble_train_set(const CorpusSplit& split, bool mix_clean) {
  TrainSet t;
  int n_adv = split.size();
  std::vector<int> clean_entries;
  if (mix_clean) {
    // One eps=0 entry per distinct clean image.
    std::vector<std::int32_t> seen;
    for (int i = 0; i < n_adv; ++i) {
      auto id = split.clean_ids[std::size_t(i)];
      if (std::find(seen.begin(), seen.end(), id) == seen.end()) {
        seen.push_back(id);
        clean_entries.push_back(i);
      }
    }
  }
  Shape s = split.adv.shape();
  int total = n_adv + int(clean_entries.size());
  t.adv = Tensor(total, s.c, s.h, s.w);
  t.clean = Tensor(total, s.c, s.h, s.w);
  t.labels.resize(static_cast<std::size_t>(total));
  for (int i = 0; i < n_adv; ++i) {
    t.adv.set_sample(i, split.adv.sample(i));
    t.clean.set_sample(i, split.clean.sample(i));
    t.labels[std::size_t(i)] = split.labels[std::size_t(i)];
  }
  for (std::size_t j = 0; j < clean_entries.size(); ++j) {
    int dst = n_adv + int(j);
    Tensor c = split.clean.sample(clean_entries[j]);
    t.adv.set_sample(dst, c);
    t.clean.set_sample(dst, c);
    t.labels[std::size_t(dst)] = split.labels[std::size_t(clean_entries[j])];
  }
  return t;
}

}  // namespace

TrainDenoiserResult train_denoiser(const TrainDenoiserRun& run,
                                   const AdversarialCorpus& corpus,
                                   Classifier* guide,
                                   Classifier& eval_classifier) {
  run.loss.validate();
  run.denoiser.validate();
  if (run.loss.kind != "pgd" && !guide)
    throw ConfigError(run.loss.kind + " training needs a guiding classifier");
  if (!corpus.has_split("train") || !corpus.has_split("val"))
    throw ConfigError("denoiser training needs train and val corpus splits");
  const CorpusSplit& train_split = corpus.split("train");
  const CorpusSplit& val_split = corpus.split("val");
  Shape cs = train_split.adv.shape();
  Shape in = run.denoiser.input_shape;
  if (cs.c != in.c || cs.h != in.h || cs.w != in.w)
    throw ConfigError("corpus image shape " + cs.str() +
                      " does not match denoiser config " + in.str());
  if (guide) {
    Shape gs = guide->input_shape();
    if (gs.c != in.c || gs.h != in.h || gs.w != in.w)
      throw ConfigError("guiding classifier input shape mismatch");
  }

  TrainDenoiserResult result;
  result.model = Denoiser::build(run.denoiser, run.seed);
  Denoiser& model = *result.model;
  auto params = model.params();
  nn::Adam opt(params, run.lr);
  Rng rng(run.seed ^ 0xd30175ull);

  TrainSet train = assemble_train_set(train_split, run.mix_clean);
  int n = train.size();
  if (n == 0) throw ConfigError("empty corpus train split");

  auto split_loss = [&](const CorpusSplit& split) {
    double total = 0.0;
    for (int start = 0; start < split.size(); start += run.batch_size) {
      int bs = std::min(run.batch_size, split.size() - start);
      Tensor xb(bs, cs.c, cs.h, cs.w), cb(bs, cs.c, cs.h, cs.w);
      std::vector<std::int32_t> yb(static_cast<std::size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        xb.set_sample(i, split.adv.sample(start + i));
        cb.set_sample(i, split.clean.sample(start + i));
        yb[std::size_t(i)] = split.labels[std::size_t(start + i)];
      }
      Tensor xhat = model.forward(xb, false);
      total += double(guided_loss(run.loss, guide, cb, xhat, &yb).value) * bs;
    }
    return float(total / split.size());
  };

  auto defended_accuracy = [&](const CorpusSplit& split) {
    int correct = 0;
    for (int start = 0; start < split.size(); start += run.batch_size) {
      int bs = std::min(run.batch_size, split.size() - start);
      Tensor xb(bs, cs.c, cs.h, cs.w);
      for (int i = 0; i < bs; ++i) xb.set_sample(i, split.adv.sample(start + i));
      Tensor xhat = clamp(model.forward(xb, false), 0.f, 1.f);
      auto pred = eval_classifier.predict(xhat);
      for (int i = 0; i < bs; ++i)
        if (pred.classes[std::size_t(i)] ==
            split.labels[std::size_t(start + i)])
          ++correct;
    }
    return float(correct) / float(split.size());
  };

  std::vector<float> train_history;
  bool lr_dropped = false;
  float best_val = std::numeric_limits<float>::infinity();
  Snapshot best;

  for (int epoch = 0; epoch < run.max_epochs; ++epoch) {
    auto order = rng.fork(std::uint64_t(epoch)).permutation(n);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += run.batch_size) {
      int bs = std::min(run.batch_size, n - start);
      Tensor xb(bs, cs.c, cs.h, cs.w), cb(bs, cs.c, cs.h, cs.w);
      std::vector<std::int32_t> yb(static_cast<std::size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        int src = order[std::size_t(start + i)];
        xb.set_sample(i, train.adv.sample(src));
        cb.set_sample(i, train.clean.sample(src));
        yb[std::size_t(i)] = train.labels[std::size_t(src)];
      }
      Tensor xhat = model.forward(xb, true);
      LossResult lres = guided_loss(run.loss, guide, cb, xhat, &yb);
      if (!std::isfinite(lres.value))
        throw NumericError("denoiser training diverged at epoch " +
                           std::to_string(epoch) + " batch " +
                           std::to_string(start / run.batch_size));
      epoch_loss += double(lres.value) * bs;
      opt.zero_grad();
      model.backward(lres.grad);
      opt.step();
    }
    float train_loss = float(epoch_loss / n);
    train_history.push_back(train_loss);

    float val_loss = split_loss(val_split);
    float val_acc = defended_accuracy(val_split);
    float current_lr = lr_dropped ? run.lr_after_plateau : run.lr;
    result.log.epochs.push_back({epoch, train_loss, val_loss, val_acc, current_lr});

    if (val_loss < best_val) {
      best_val = val_loss;
      best = take_snapshot(model);
      result.log.best_epoch = epoch;
    }
    if (!lr_dropped && plateau_detector(train_history, run.plateau_patience,
                                        run.plateau_min_rel_improvement)) {
      lr_dropped = true;
      opt.set_lr(run.lr_after_plateau);
    }
  }

  restore_snapshot(model, best);
  model.meta() = {{"loss", run.loss.to_json()},
                  {"run", run.to_json()},
                  {"best_epoch", result.log.best_epoch},
                  {"best_val_loss", best_val}};
  return result;
}

std::unique_ptr<Classifier> train_classifier_adversarial(
    const Dataset& dataset, const std::string& arch_id,
    const TrainClassifierParams& p, float epsilon) {
  if (dataset.train.size() == 0)
    throw ConfigError("empty training dataset '" + dataset.id + "'");
  if (epsilon <= 0.f) throw ConfigError("adversarial training needs eps > 0");
  Shape in = dataset.train.pixels.shape();
  auto model = Classifier::create(arch_id, dataset.num_classes, in, p.seed);
  auto params = model->params();
  nn::Adam opt(params, p.lr);
  Rng rng(p.seed ^ 0xadu);
  ClassifierList self{model.get()};

  int n = dataset.train.size();
  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    auto order = rng.permutation(n);
    for (int start = 0; start < n; start += p.batch_size) {
      int bs = std::min(p.batch_size, n - start);
      Tensor xb(bs, in.c, in.h, in.w);
      std::vector<std::int32_t> yb(static_cast<std::size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        int src = order[std::size_t(start + i)];
        xb.set_sample(i, dataset.train.pixels.sample(src));
        yb[std::size_t(i)] = dataset.train.labels[std::size_t(src)];
      }
      // Replace the second half of the batch with attacks on current weights.
      int half = bs / 2;
      if (half > 0) {
        Tensor tail(bs - half, in.c, in.h, in.w);
        for (int i = half; i < bs; ++i)
          tail.set_sample(i - half, xb.sample(i));
        Tensor adv = fgsm(self, tail, epsilon);
        for (int i = half; i < bs; ++i) xb.set_sample(i, adv.sample(i - half));
      }
      Tensor logits = model->forward(xb, true);
      Tensor grad_logits;
      float loss = cross_entropy(logits, yb, &grad_logits);
      if (!std::isfinite(loss))
        throw NumericError("adversarial training diverged at epoch " +
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
                   {"seed", p.seed},
                   {"adversarial_training", true},
                   {"adversarial_eps", epsilon}};
  if (dataset.test.size() > 0)
    model->meta()["clean_test_accuracy"] = accuracy(*model, dataset.test);
  model->meta()["clean_train_accuracy"] = accuracy(*model, dataset.train);
  return model;
}

}  // namespace hgd
