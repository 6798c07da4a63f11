#include "pipeline/stages.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>

#include "analysis/analysis.hpp"
#include "core/hash.hpp"
#include "eval/evaluation.hpp"
#include "plot/svg.hpp"
#include "train/trainer.hpp"

namespace fs = std::filesystem;

namespace hgd {

void apply_override(nlohmann::json& config, const std::string& key,
                    const std::string& value) {
  nlohmann::json* node = &config;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = key.find('.', start);
    std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("empty override key segment in " + key);
    if (dot == std::string::npos) {
      auto parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::vector<std::string> known_stages() {
  return {"train-classifier", "forge-corpus",  "train-denoiser",
          "evaluate",         "transfer",      "class-split",
          "analyze-amplification", "analyze-noise", "ensemble-eval"};
}

namespace {

// Input artifacts are hashed into the output address; referencing a missing
// one is a configuration error, not an io error, because the path came from
// the config.
std::string require_file(const std::string& path, const char* what) {
  if (!fs::exists(path))
    throw ConfigError(std::string("missing referenced ") + what + ": " + path);
  return path;
}

std::string corpus_manifest_path(const std::string& dir) {
  return require_file(dir + "/manifest.json", "corpus") ;
}

struct StageContext {
  nlohmann::json config;
  std::map<std::string, std::string> input_hashes;  // path -> sha256
  std::string out_dir;

  void add_input(const std::string& path) {
    input_hashes[path] = sha256_file_hex(path);
  }
  void add_corpus_input(const std::string& dir) {
    add_input(corpus_manifest_path(dir));
  }

  void write_json(const std::string& name, const nlohmann::json& j) {
    write_text_file(out_dir + "/" + name, j.dump(2) + "\n");
  }
};

std::unique_ptr<Classifier> load_classifier(StageContext& ctx,
                                            const std::string& path) {
  require_file(path, "classifier checkpoint");
  ctx.add_input(path);
  return Classifier::load(path);
}

std::unique_ptr<Denoiser> load_denoiser(StageContext& ctx,
                                        const std::string& path) {
  require_file(path, "denoiser checkpoint");
  ctx.add_input(path);
  return Denoiser::load(path);
}

AdversarialCorpus load_corpus_input(StageContext& ctx, const std::string& dir) {
  ctx.add_corpus_input(dir);
  return load_corpus(dir);
}

// ---------------------------------------------------------------- handlers

void stage_train_classifier(StageContext& ctx) {
  const auto& c = ctx.config;
  Dataset data = make_dataset(DatasetSpec::from_json(c.at("dataset")));
  TrainClassifierParams p;
  p.epochs = c.value("epochs", 10);
  p.batch_size = c.value("batch_size", 64);
  p.lr = c.value("lr", 1e-3f);
  p.seed = c.value("seed", std::uint64_t(0));
  std::string arch = c.at("architecture").get<std::string>();

  std::unique_ptr<Classifier> model;
  if (c.contains("adversarial_eps_num")) {
    float eps = float(c.at("adversarial_eps_num").get<int>()) / 255.f;
    model = train_classifier_adversarial(data, arch, p, eps);
  } else {
    model = train_classifier(data, arch, p);
  }
  model->save(ctx.out_dir + "/classifier.ckpt");
  ctx.write_json("metrics.json", model->meta());
}

ImageBatch clean_slice(const Dataset& data, const nlohmann::json& sel) {
  std::string source = sel.value("source", "train");
  int offset = sel.value("offset", 0);
  int count = sel.at("count").get<int>();
  const ImageBatch& pool = source == "train" ? data.train : data.test;
  if (offset + count > pool.size())
    throw ConfigError("clean slice [" + std::to_string(offset) + ", " +
                      std::to_string(offset + count) + ") exceeds the " +
                      source + " pool of " + std::to_string(pool.size()));
  ImageBatch out;
  Shape s = pool.pixels.shape();
  out.pixels = Tensor(count, s.c, s.h, s.w);
  out.labels.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.pixels.set_sample(i, pool.pixels.sample(offset + i));
    out.labels[std::size_t(i)] = pool.labels[std::size_t(offset + i)];
  }
  out.provenance = pool.provenance;
  out.provenance["offset"] = offset;
  out.provenance["count"] = count;
  return out;
}

void stage_forge_corpus(StageContext& ctx) {
  const auto& c = ctx.config;
  Dataset data = make_dataset(DatasetSpec::from_json(c.at("dataset")));
  CorpusProtocol proto = CorpusProtocol::from_json(c.at("protocol"));

  std::map<std::string, std::unique_ptr<Classifier>> owned;
  ClassifierRegistry registry;
  for (auto& [id, path] : c.at("classifiers").items()) {
    owned[id] = load_classifier(ctx, path.get<std::string>());
    registry[id] = owned[id].get();
  }

  std::map<std::string, ImageBatch> clean_owned;
  std::map<std::string, const ImageBatch*> clean;
  for (auto& [split, sel] : c.at("clean").items()) {
    clean_owned[split] = clean_slice(data, sel);
    clean[split] = &clean_owned[split];
  }

  AdversarialCorpus corpus = forge_corpus(proto, clean, registry);
  save_corpus(corpus, ctx.out_dir + "/corpus");
}

void stage_train_denoiser(StageContext& ctx) {
  const auto& c = ctx.config;
  TrainDenoiserRun run = TrainDenoiserRun::from_json(c.at("run"));
  AdversarialCorpus corpus =
      load_corpus_input(ctx, c.at("corpus").get<std::string>());

  std::unique_ptr<Classifier> guide;
  if (c.contains("guide") && !c.at("guide").get<std::string>().empty())
    guide = load_classifier(ctx, c.at("guide").get<std::string>());
  auto eval_clf =
      load_classifier(ctx, c.at("eval_classifier").get<std::string>());

  auto r = train_denoiser(run, corpus, guide.get(), *eval_clf);
  r.model->save(ctx.out_dir + "/denoiser.ckpt");
  r.log.save_jsonl(ctx.out_dir + "/log.jsonl");
  ctx.write_json("metrics.json", r.model->meta());
}

DefensePipeline pipeline_from_json(
    StageContext& ctx, const nlohmann::json& j,
    std::vector<std::unique_ptr<Classifier>>& classifiers,
    std::vector<std::unique_ptr<Denoiser>>& denoisers) {
  DefensePipeline p;
  p.label = j.at("label").get<std::string>();
  p.oracle = j.value("oracle", false);
  classifiers.push_back(
      load_classifier(ctx, j.at("classifier").get<std::string>()));
  p.classifier = classifiers.back().get();
  if (j.contains("denoiser") && !j.at("denoiser").get<std::string>().empty()) {
    denoisers.push_back(load_denoiser(ctx, j.at("denoiser").get<std::string>()));
    p.denoiser = denoisers.back().get();
  }
  return p;
}

void write_report(StageContext& ctx, const EvaluationReport& rep) {
  ctx.write_json("report.json", rep.to_json());
  write_text_file(ctx.out_dir + "/report.txt", rep.render_table());
}

void stage_evaluate(StageContext& ctx) {
  const auto& c = ctx.config;
  AdversarialCorpus corpus =
      load_corpus_input(ctx, c.at("corpus").get<std::string>());
  std::vector<std::string> splits =
      c.value("splits", std::vector<std::string>{});

  std::vector<std::unique_ptr<Classifier>> classifiers;
  std::vector<std::unique_ptr<Denoiser>> denoisers;
  EvaluationReport rep;
  for (auto& pj : c.at("pipelines")) {
    auto p = pipeline_from_json(ctx, pj, classifiers, denoisers);
    rep.append(evaluate(p, corpus, splits));
  }
  rep.metadata = {{"corpus", c.at("corpus")}, {"stage", "evaluate"}};
  write_report(ctx, rep);
}

void stage_transfer(StageContext& ctx) {
  const auto& c = ctx.config;
  AdversarialCorpus corpus =
      load_corpus_input(ctx, c.at("corpus").get<std::string>());
  auto target = load_classifier(ctx, c.at("target").get<std::string>());
  auto cross = load_denoiser(ctx, c.at("cross").get<std::string>());
  std::unique_ptr<Denoiser> self;
  if (c.contains("self") && !c.at("self").get<std::string>().empty())
    self = load_denoiser(ctx, c.at("self").get<std::string>());

  auto rep = transfer_model_eval(
      *target, *cross, self.get(), corpus,
      c.value("splits", std::vector<std::string>{}));
  write_report(ctx, rep);
}

void stage_class_split(StageContext& ctx) {
  const auto& c = ctx.config;
  Dataset data = make_dataset(DatasetSpec::from_json(c.at("dataset")));
  float fraction = c.at("train_fraction").get<float>();
  ClassSplit split = split_classes(data.num_classes, fraction);
  auto source = load_classifier(ctx, c.at("source_classifier").get<std::string>());
  std::uint64_t seed = c.value("seed", std::uint64_t(0));

  ImageBatch train_all = filter_classes(data.train, split.train_classes);
  ImageBatch holdout_all =
      split.holdout_classes.empty()
          ? data.test
          : filter_classes(data.test, split.holdout_classes);
  int n_train = c.value("train_clean", 64);
  int n_val = c.value("val_clean", 16);
  int n_test = c.value("test_clean", 32);
  if (train_all.size() < n_train + n_val)
    throw ConfigError("not enough train-class images for the requested sizes");
  if (holdout_all.size() < n_test)
    throw ConfigError("not enough held-out-class images for the test set");

  ImageBatch train_clean = take(train_all, n_train);
  ImageBatch val_clean;
  {
    Shape s = train_all.pixels.shape();
    val_clean.pixels = Tensor(n_val, s.c, s.h, s.w);
    val_clean.labels.resize(static_cast<std::size_t>(n_val));
    for (int i = 0; i < n_val; ++i) {
      val_clean.pixels.set_sample(i, train_all.pixels.sample(n_train + i));
      val_clean.labels[std::size_t(i)] =
          train_all.labels[std::size_t(n_train + i)];
    }
  }
  ImageBatch test_clean = take(holdout_all, n_test);

  CorpusProtocol proto;
  proto.seed = seed;
  proto.splits = {
      {"train", {{AttackMethod::Fgsm, 1, {"source"}}}, {}, 1, 16},
      {"val", {{AttackMethod::Fgsm, 1, {"source"}}}, {}, 1, 16},
      {"white-test",
       {{AttackMethod::Fgsm, 1, {"source"}}},
       c.value("test_eps", std::vector<int>{16}),
       1,
       16},
  };
  ClassifierRegistry registry{{"source", source.get()}};
  std::map<std::string, const ImageBatch*> clean{{"train", &train_clean},
                                                 {"val", &val_clean},
                                                 {"white-test", &test_clean}};
  AdversarialCorpus corpus = forge_corpus(proto, clean, registry);

  TrainDenoiserRun run = TrainDenoiserRun::from_json(c.at("run"));
  run.seed = seed;
  auto r = train_denoiser(run, corpus, source.get(), *source);
  r.model->save(ctx.out_dir + "/denoiser.ckpt");
  r.log.save_jsonl(ctx.out_dir + "/log.jsonl");

  EvaluationReport rep;
  rep.append(evaluate({"na", nullptr, source.get(), false}, corpus,
                      {"white-test"}));
  rep.append(evaluate({run.loss.kind, r.model.get(), source.get(), false},
                      corpus, {"white-test"}));
  rep.metadata = {{"stage", "class-split"},
                  {"train_classes", split.train_classes},
                  {"holdout_classes", split.holdout_classes}};
  write_report(ctx, rep);
}

void stage_analyze_amplification(StageContext& ctx) {
  const auto& c = ctx.config;
  auto clf = load_classifier(ctx, c.at("classifier").get<std::string>());
  AdversarialCorpus corpus =
      load_corpus_input(ctx, c.at("corpus").get<std::string>());
  const CorpusSplit& split = corpus.split(c.at("split").get<std::string>());
  int n = std::min(c.value("sample_count", 100), split.size());
  if (n == 0) throw ConfigError("empty corpus split for amplification analysis");
  Rng rng(c.value("seed", std::uint64_t(0)));

  Shape s = split.adv.shape();
  Tensor adv(n, s.c, s.h, s.w), clean(n, s.c, s.h, s.w);
  for (int i = 0; i < n; ++i) {
    adv.set_sample(i, split.adv.sample(i));
    clean.set_sample(i, split.clean.sample(i));
  }
  float e0 = perturbation_level(clean, adv);

  nlohmann::json profiles = nlohmann::json::array();
  for (auto& cond : c.at("conditions")) {
    std::string type = cond.at("type").get<std::string>();
    std::string label = cond.value("label", type);
    Tensor perturbed;
    if (type == "adversarial") {
      perturbed = adv;
    } else if (type == "random-noise") {
      perturbed = gaussian_perturb(clean, cond.value("target_e0", e0), rng);
    } else if (type == "denoised") {
      auto dn = load_denoiser(ctx, cond.at("denoiser").get<std::string>());
      perturbed = clamp(dn->forward(adv, false), 0.f, 1.f);
    } else {
      throw ConfigError("unknown profile condition '" + type + "'");
    }
    profiles.push_back(
        perturbation_profile(*clf, clean, perturbed, label).to_json());
  }
  ctx.write_json("profiles.json",
                 {{"profiles", profiles}, {"pixel_level", e0}});
}

void stage_analyze_noise(StageContext& ctx) {
  const auto& c = ctx.config;
  AdversarialCorpus corpus =
      load_corpus_input(ctx, c.at("corpus").get<std::string>());
  const CorpusSplit& split = corpus.split(c.at("split").get<std::string>());
  int n = std::min(c.value("sample_count", 100), split.size());
  if (n == 0) throw ConfigError("empty corpus split for noise analysis");
  int bins = c.value("bins", 61);

  Shape s = split.adv.shape();
  Tensor adv(n, s.c, s.h, s.w), clean(n, s.c, s.h, s.w);
  for (int i = 0; i < n; ++i) {
    adv.set_sample(i, split.adv.sample(i));
    clean.set_sample(i, split.clean.sample(i));
  }

  nlohmann::json scatters = nlohmann::json::array();
  for (auto& dj : c.at("denoisers")) {
    auto dn = load_denoiser(ctx, dj.at("path").get<std::string>());
    Tensor xhat = dn->forward(adv, false);
    NoiseScatter sc = noise_scatter(clean, adv, xhat, bins);
    scatters.push_back({{"label", dj.at("label").get<std::string>()},
                        {"scatter", sc.to_json()}});
  }
  ctx.write_json("scatters.json", {{"scatters", scatters}});
}

void stage_ensemble_eval(StageContext& ctx) {
  const auto& c = ctx.config;
  AdversarialCorpus corpus =
      load_corpus_input(ctx, c.at("corpus").get<std::string>());
  const CorpusSplit& split = corpus.split(c.at("split").get<std::string>());

  std::vector<std::unique_ptr<Classifier>> classifiers;
  std::vector<std::unique_ptr<Denoiser>> denoisers;
  std::vector<DefensePipeline> pipelines;
  for (auto& pj : c.at("pipelines"))
    pipelines.push_back(pipeline_from_json(ctx, pj, classifiers, denoisers));

  auto acc_of = [&](const std::vector<std::int32_t>& pred) {
    int correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == split.labels[i]) ++correct;
    return float(correct) / float(pred.size());
  };

  nlohmann::json members = nlohmann::json::array();
  float min_member = 1.f;
  for (auto& p : pipelines) {
    float a = acc_of(pipeline_predict(p, split.adv));
    members.push_back({{"label", p.label}, {"accuracy", a}});
    min_member = std::min(min_member, a);
  }
  float ensemble_acc = acc_of(ensemble_defense(pipelines, split.adv));

  nlohmann::json out{{"split", split.name},
                     {"members", members},
                     {"ensemble_accuracy", ensemble_acc},
                     {"count", split.size()}};
  // Expected but not guaranteed; annotate rather than fail.
  if (ensemble_acc < min_member)
    out["annotation"] = "ensemble below the weakest member";
  ctx.write_json("report.json", out);
}

}  // namespace

StageResult run_stage(nlohmann::json config, const std::string& artifact_root) {
  if (!config.contains("stage"))
    throw ConfigError("config is missing the stage field");
  std::string stage = config.at("stage").get<std::string>();
  auto stages = known_stages();
  if (std::find(stages.begin(), stages.end(), stage) == stages.end())
    throw ConfigError("unknown stage '" + stage + "'");

  StageContext ctx;
  ctx.config = config;

  // The output address depends on the resolved config plus the hashes of
  // every input artifact, so hash-scan the config before running anything.
  std::function<void(const nlohmann::json&)> scan = [&](const nlohmann::json& j) {
    if (j.is_string()) {
      std::string v = j.get<std::string>();
      if (fs::is_regular_file(v)) ctx.input_hashes[v] = sha256_file_hex(v);
      if (fs::is_directory(v) && fs::is_regular_file(v + "/manifest.json"))
        ctx.input_hashes[v + "/manifest.json"] =
            sha256_file_hex(v + "/manifest.json");
    } else if (j.is_object() || j.is_array()) {
      for (auto& e : j) scan(e);
    }
  };
  scan(config);

  nlohmann::json address{{"config", config}, {"inputs", ctx.input_hashes}};
  std::string hash = sha256_hex(address.dump());
  ctx.out_dir = artifact_root + "/" + stage + "/" + hash.substr(0, 16);
  fs::create_directories(ctx.out_dir);

  if (stage == "train-classifier") stage_train_classifier(ctx);
  else if (stage == "forge-corpus") stage_forge_corpus(ctx);
  else if (stage == "train-denoiser") stage_train_denoiser(ctx);
  else if (stage == "evaluate") stage_evaluate(ctx);
  else if (stage == "transfer") stage_transfer(ctx);
  else if (stage == "class-split") stage_class_split(ctx);
  else if (stage == "analyze-amplification") stage_analyze_amplification(ctx);
  else if (stage == "analyze-noise") stage_analyze_noise(ctx);
  else if (stage == "ensemble-eval") stage_ensemble_eval(ctx);

  nlohmann::json manifest{{"stage", stage},
                          {"config", config},
                          {"inputs", ctx.input_hashes},
                          {"output_dir", ctx.out_dir}};
  nlohmann::json outputs = nlohmann::json::array();
  for (auto& e : fs::directory_iterator(ctx.out_dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json")
      outputs.push_back(e.path().filename().string());
  std::sort(outputs.begin(), outputs.end());
  manifest["outputs"] = outputs;
  write_text_file(ctx.out_dir + "/manifest.json", manifest.dump(2) + "\n");

  return {ctx.out_dir, manifest};
}

StageResult run_stage_file(
    const std::string& config_path,
    const std::vector<std::pair<std::string, std::string>>& overrides,
    const std::string& artifact_root) {
  std::ifstream is(config_path);
  if (!is) throw IoError("cannot open config: " + config_path);
  nlohmann::json config;
  try {
    is >> config;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config does not parse: " + std::string(e.what()));
  }
  for (auto& [k, v] : overrides) apply_override(config, k, v);
  return run_stage(config, artifact_root);
}

std::vector<std::string> reproduce_figures(const std::string& artifact_root) {
  struct Pending {
    std::string path;
    std::string content;
  };
  std::vector<Pending> pending;
  std::vector<std::string> missing;

  auto collect = [&](const std::string& stage, const std::string& file,
                     auto&& render) {
    std::string dir = artifact_root + "/" + stage;
    bool found = false;
    if (fs::is_directory(dir)) {
      std::vector<std::string> runs;
      for (auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && fs::exists(e.path() / file))
          runs.push_back(e.path().filename().string());
      std::sort(runs.begin(), runs.end());
      for (auto& run : runs) {
        std::ifstream is(dir + "/" + run + "/" + file);
        nlohmann::json j;
        is >> j;
        pending.push_back(render(run, j));
        found = true;
      }
    }
    if (!found) missing.push_back(stage + "/*/" + file);
  };

  collect("analyze-amplification", "profiles.json",
          [&](const std::string& run, const nlohmann::json& j) {
            std::vector<PerturbationProfile> profiles;
            for (auto& pj : j.at("profiles"))
              profiles.push_back(PerturbationProfile::from_json(pj));
            return Pending{
                artifact_root + "/figures/amplification-" + run + ".svg",
                render_profile_plot(profiles, "layerwise perturbation")};
          });
  collect("analyze-noise", "scatters.json",
          [&](const std::string& run, const nlohmann::json& j) {
            std::vector<std::pair<std::string, NoiseScatter>> panels;
            for (auto& sj : j.at("scatters"))
              panels.emplace_back(sj.at("label").get<std::string>(),
                                  NoiseScatter::from_json(sj.at("scatter")));
            return Pending{artifact_root + "/figures/noise-" + run + ".svg",
                           render_scatter_plot(panels,
                                               "predicted vs adversarial noise")};
          });

  if (pending.empty()) {
    std::string what;
    for (auto& m : missing) what += (what.empty() ? "" : ", ") + m;
    throw IoError("no analysis artifacts found under " + artifact_root +
                  " (looked for " + what + ")");
  }
  std::vector<std::string> written;
  for (auto& p : pending) {
    write_text_file(p.path, p.content);
    written.push_back(p.path);
  }
  return written;
}

}  // namespace hgd
