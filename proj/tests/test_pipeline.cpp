#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "core/error.hpp"
#include "pipeline/stages.hpp"

using namespace hgd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// One artifact root shared by the whole suite; stages chain through it.
struct Lab {
  std::string root;
  std::string classifier_ckpt;
  std::string corpus_dir;
  std::string denoiser_ckpt;

  Lab() {
    root = (fs::temp_directory_path() / "hgd-pipeline-test").string();
    fs::remove_all(root);

    json clf{{"stage", "train-classifier"},
             {"dataset",
              {{"name", "synth10"}, {"train_size", 64}, {"test_size", 32},
               {"seed", 7}}},
             {"architecture", "convnet"},
             {"epochs", 2},
             {"seed", 7}};
    classifier_ckpt = run_stage(clf, root).output_dir + "/classifier.ckpt";

    json proto{{"seed", 8},
               {"holdout_model", ""},
               {"splits", json::array()}};
    for (const char* split : {"train", "val", "white-test"}) {
      proto["splits"].push_back(
          {{"name", split},
           {"eps_set", {4, 16}},
           {"rows",
            json::array({{{"method", "fgsm"},
                          {"steps", 1},
                          {"sources", {"clf"}}}})}});
    }
    json forge{{"stage", "forge-corpus"},
               {"dataset",
                {{"name", "synth10"}, {"train_size", 64}, {"test_size", 32},
                 {"seed", 7}}},
               {"protocol", proto},
               {"classifiers", {{"clf", classifier_ckpt}}},
               {"clean",
                {{"train", {{"source", "train"}, {"count", 16}}},
                 {"val", {{"source", "train"}, {"offset", 16}, {"count", 8}}},
                 {"white-test", {{"source", "test"}, {"count", 8}}}}}};
    corpus_dir = run_stage(forge, root).output_dir + "/corpus";

    json run{{"denoiser",
              {{"family", "dunet"},
               {"block_widths", {4, 6}},
               {"blocks_per_scale", {1, 1}},
               {"input_shape", {3, 32, 32}}}},
             {"loss", {{"kind", "pgd"}}},
             {"max_epochs", 2},
             {"batch_size", 16},
             {"seed", 9}};
    json train{{"stage", "train-denoiser"},
               {"run", run},
               {"corpus", corpus_dir},
               {"eval_classifier", classifier_ckpt}};
    denoiser_ckpt = run_stage(train, root).output_dir + "/denoiser.ckpt";
  }
};

Lab& lab() {
  static Lab l;
  return l;
}

json evaluate_config(const Lab& l) {
  return {{"stage", "evaluate"},
          {"corpus", l.corpus_dir},
          {"splits", {"white-test"}},
          {"pipelines",
           json::array({{{"label", "na"}, {"classifier", l.classifier_ckpt}},
                        {{"label", "pgd"},
                         {"classifier", l.classifier_ckpt},
                         {"denoiser", l.denoiser_ckpt}}})}};
}

}  // namespace

TEST_CASE("config overrides") {
  json c{{"stage", "evaluate"}, {"run", {{"lr", 0.001}}}};
  apply_override(c, "run.lr", "0.01");
  CHECK(c["run"]["lr"] == json(0.01));
  apply_override(c, "run.loss.kind", "pgd");
  CHECK(c["run"]["loss"]["kind"] == "pgd");
  apply_override(c, "splits", "[\"train\",\"val\"]");
  CHECK(c["splits"] == json({"train", "val"}));
  apply_override(c, "note", "not json at all");
  CHECK(c["note"] == "not json at all");
  CHECK_THROWS_AS(apply_override(c, "run..lr", "1"), ConfigError);
}

TEST_CASE("stage dispatch errors") {
  CHECK(known_stages().size() == 9);
  CHECK_THROWS_WITH_AS(run_stage(json{{"seed", 1}}, "/tmp/hgd-x"),
                       "configuration: config is missing the stage field",
                       ConfigError);
  CHECK_THROWS_WITH_AS(run_stage(json{{"stage", "frobnicate"}}, "/tmp/hgd-x"),
                       "configuration: unknown stage 'frobnicate'",
                       ConfigError);
}

TEST_CASE("config files and overrides on disk") {
  CHECK_THROWS_AS(run_stage_file("/nonexistent/config.json", {}, "/tmp/hgd-x"),
                  IoError);

  std::string bad = (fs::temp_directory_path() / "hgd-bad.json").string();
  std::ofstream(bad) << "{not json";
  CHECK_THROWS_AS(run_stage_file(bad, {}, "/tmp/hgd-x"), ConfigError);

  // An override can break a config too: point the corpus somewhere missing.
  Lab& l = lab();
  std::string cfg = (fs::temp_directory_path() / "hgd-eval.json").string();
  std::ofstream(cfg) << evaluate_config(l).dump();
  CHECK_THROWS_AS(
      run_stage_file(cfg, {{"corpus", "/no/such/corpus"}}, l.root),
      ConfigError);
  auto res = run_stage_file(cfg, {}, l.root);
  CHECK(fs::exists(res.output_dir + "/report.json"));
}

TEST_CASE("missing referenced artifacts are configuration errors") {
  Lab& l = lab();
  json c = evaluate_config(l);
  c["corpus"] = l.root + "/no-such-corpus";
  try {
    run_stage(c, l.root);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("missing referenced") !=
          std::string::npos);
  }

  json c2 = evaluate_config(l);
  c2["pipelines"][0]["classifier"] = l.root + "/no-such.ckpt";
  CHECK_THROWS_AS(run_stage(c2, l.root), ConfigError);
}

TEST_CASE("stage outputs are content-addressed and byte-identical on rerun") {
  Lab& l = lab();
  auto a = run_stage(evaluate_config(l), l.root);
  std::string report = slurp(a.output_dir + "/report.json");
  std::string manifest = slurp(a.output_dir + "/manifest.json");

  auto b = run_stage(evaluate_config(l), l.root);
  CHECK(b.output_dir == a.output_dir);
  CHECK(slurp(b.output_dir + "/report.json") == report);
  CHECK(slurp(b.output_dir + "/manifest.json") == manifest);

  CHECK(a.manifest.at("stage") == "evaluate");
  CHECK(a.manifest.at("outputs") == json({"report.json", "report.txt"}));
  // Every loaded artifact is pinned by hash in the manifest.
  const auto& inputs = a.manifest.at("inputs");
  CHECK(inputs.contains(l.classifier_ckpt));
  CHECK(inputs.contains(l.denoiser_ckpt));
  CHECK(inputs.contains(l.corpus_dir + "/manifest.json"));

  // A config change moves the output elsewhere.
  json c = evaluate_config(l);
  c["splits"] = {"val"};
  CHECK(run_stage(c, l.root).output_dir != a.output_dir);
}

TEST_CASE("analysis stages and figure reproduction") {
  Lab& l = lab();
  json amp{{"stage", "analyze-amplification"},
           {"classifier", l.classifier_ckpt},
           {"corpus", l.corpus_dir},
           {"split", "white-test"},
           {"sample_count", 8},
           {"seed", 3},
           {"conditions",
            json::array({{{"type", "adversarial"}},
                         {{"type", "random-noise"}},
                         {{"type", "denoised"},
                          {"denoiser", l.denoiser_ckpt}}})}};
  auto ar = run_stage(amp, l.root);
  json profiles = json::parse(slurp(ar.output_dir + "/profiles.json"));
  CHECK(profiles.at("profiles").size() == 3);
  CHECK(profiles.at("pixel_level").get<float>() > 0.f);

  json noise{{"stage", "analyze-noise"},
             {"corpus", l.corpus_dir},
             {"split", "white-test"},
             {"sample_count", 8},
             {"denoisers",
              json::array({{{"label", "pgd"}, {"path", l.denoiser_ckpt}}})}};
  auto nr = run_stage(noise, l.root);
  CHECK(json::parse(slurp(nr.output_dir + "/scatters.json"))
            .at("scatters")
            .size() == 1);

  auto figs = reproduce_figures(l.root);
  CHECK(figs.size() == 2);
  for (auto& f : figs) {
    CHECK(fs::exists(f));
    CHECK(slurp(f).find("<svg") != std::string::npos);
  }
  // Rendering is pure: a second pass rewrites identical bytes.
  std::string first = slurp(figs[0]);
  auto figs2 = reproduce_figures(l.root);
  CHECK(figs2 == figs);
  CHECK(slurp(figs[0]) == first);

  std::string empty = (fs::temp_directory_path() / "hgd-empty-root").string();
  fs::create_directories(empty);
  CHECK_THROWS_AS(reproduce_figures(empty), IoError);
}

TEST_CASE("ensemble stage reports member and combined accuracy") {
  Lab& l = lab();
  json c{{"stage", "ensemble-eval"},
         {"corpus", l.corpus_dir},
         {"split", "white-test"},
         {"pipelines",
          json::array({{{"label", "na"}, {"classifier", l.classifier_ckpt}},
                       {{"label", "pgd"},
                        {"classifier", l.classifier_ckpt},
                        {"denoiser", l.denoiser_ckpt}}})}};
  auto r = run_stage(c, l.root);
  json rep = json::parse(slurp(r.output_dir + "/report.json"));
  CHECK(rep.at("members").size() == 2);
  CHECK(rep.at("ensemble_accuracy").get<float>() >= 0.f);
  CHECK(rep.at("ensemble_accuracy").get<float>() <= 1.f);
}
