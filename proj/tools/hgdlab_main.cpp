#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <hgd/hgd.h>

namespace {

std::string default_artifact_root() {
  if (const char* env = std::getenv("HGDLAB_ARTIFACT_ROOT"); env && *env)
    return env;
  return "artifacts";
}

int run(const std::string& root, const std::string& stage,
        const std::string& config,
        const std::vector<std::string>& overrides) {
  hgd_lab* lab = hgd_lab_open(root.c_str());
  if (!lab) {
    std::fprintf(stderr, "configuration: empty artifact root\n");
    return HGD_ERR_CONFIG;
  }

  hgd_status st;
  char buf[65536];
  if (stage == "reproduce-figures") {
    st = hgd_lab_reproduce_figures(lab, buf, sizeof(buf));
    if (st == HGD_OK) std::printf("%s\n", buf);
  } else {
    // The command-line stage wins over whatever the config file says.
    std::vector<const char*> kv{"stage", stage.c_str()};
    for (auto& s : overrides) kv.push_back(s.c_str());
    st = hgd_lab_run_stage(lab, config.c_str(), kv.data(), kv.size() / 2, buf,
                           sizeof(buf));
    if (st == HGD_OK) std::printf("%s\n", buf);
  }
  if (st != HGD_OK) std::fprintf(stderr, "%s\n", hgd_lab_last_error(lab));
  hgd_lab_close(lab);
  return st;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"denoising-defense laboratory"};
  app.set_version_flag("--version", hgd_version());

  std::string artifact_root = default_artifact_root();
  app.add_option("--artifact-root", artifact_root,
                 "where stage outputs accumulate (or HGDLAB_ARTIFACT_ROOT)");

  std::string stage, config;
  std::string stages_help = "stage: reproduce-figures";
  for (size_t i = 0; i < hgd_stage_count(); ++i)
    stages_help += std::string(" | ") + hgd_stage_name(i);
  app.add_option("stage", stage, stages_help)->required();
  app.add_option("config", config, "stage config (json)");
  app.allow_extras();

  CLI11_PARSE(app, argc, argv);

  // Everything CLI11 did not recognize must form "--key value" pairs that
  // override fields of the config.
  std::vector<std::string> overrides = app.remaining();

  std::vector<std::string> kv;
  for (size_t i = 0; i < overrides.size(); ++i) {
    std::string& tok = overrides[i];
    if (tok.rfind("--", 0) == 0) {
      if (i + 1 >= overrides.size()) {
        std::fprintf(stderr, "configuration: override %s has no value\n",
                     tok.c_str());
        return HGD_ERR_CONFIG;
      }
      kv.push_back(tok.substr(2));
      kv.push_back(overrides[++i]);
    } else {
      std::fprintf(stderr, "configuration: unexpected argument %s\n",
                   tok.c_str());
      return HGD_ERR_CONFIG;
    }
  }

  if (stage != "reproduce-figures" && config.empty()) {
    std::fprintf(stderr, "configuration: stage %s needs a config file\n",
                 stage.c_str());
    return HGD_ERR_CONFIG;
  }
  return run(artifact_root, stage, config, kv);
}
