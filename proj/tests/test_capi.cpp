#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <hgd/hgd.h>

namespace fs = std::filesystem;

namespace {

std::string tmp_file(const char* name, const std::string& content) {
  std::string path = (fs::temp_directory_path() / name).string();
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST_CASE("version and stage listing") {
  CHECK(std::string(hgd_version()) == "1.0.0");
  REQUIRE(hgd_stage_count() > 0);
  for (size_t i = 0; i < hgd_stage_count(); ++i)
    CHECK(hgd_stage_name(i) != nullptr);
  CHECK(hgd_stage_name(hgd_stage_count()) == nullptr);
}

TEST_CASE("lab lifecycle") {
  CHECK(hgd_lab_open(nullptr) == nullptr);
  CHECK(hgd_lab_open("") == nullptr);
  CHECK(std::string(hgd_lab_last_error(nullptr)) == "");

  hgd_lab* lab = hgd_lab_open("/tmp/hgd-capi-lab");
  REQUIRE(lab);
  CHECK(std::string(hgd_lab_last_error(lab)) == "");
  hgd_lab_close(lab);
  hgd_lab_close(nullptr);
}

TEST_CASE("status codes mirror the error taxonomy") {
  std::string root = (fs::temp_directory_path() / "hgd-capi-root").string();
  fs::remove_all(root);
  hgd_lab* lab = hgd_lab_open(root.c_str());
  REQUIRE(lab);

  char out[512] = {0};
  CHECK(hgd_lab_run_stage(lab, "/no/such/config.json", nullptr, 0, out,
                          sizeof(out)) == HGD_ERR_IO);
  CHECK(std::string(hgd_lab_last_error(lab)).find("io:") == 0);

  std::string bad = tmp_file("hgd-capi-bad.json", "{broken");
  CHECK(hgd_lab_run_stage(lab, bad.c_str(), nullptr, 0, out, sizeof(out)) ==
        HGD_ERR_CONFIG);

  std::string unknown = tmp_file("hgd-capi-unknown.json",
                                 "{\"stage\": \"frobnicate\"}");
  CHECK(hgd_lab_run_stage(lab, unknown.c_str(), nullptr, 0, out,
                          sizeof(out)) == HGD_ERR_CONFIG);
  CHECK(std::string(hgd_lab_last_error(lab)).find("frobnicate") !=
        std::string::npos);

  // Nothing has produced analysis artifacts yet.
  char figs[512] = {0};
  CHECK(hgd_lab_reproduce_figures(lab, figs, sizeof(figs)) == HGD_ERR_IO);
  hgd_lab_close(lab);
}

TEST_CASE("a stage runs end to end through the c surface") {
  std::string root = (fs::temp_directory_path() / "hgd-capi-run").string();
  fs::remove_all(root);
  hgd_lab* lab = hgd_lab_open(root.c_str());
  REQUIRE(lab);

  std::string cfg = tmp_file("hgd-capi-clf.json", R"({
    "stage": "train-classifier",
    "dataset": {"name": "blobs2", "train_size": 32, "test_size": 16, "seed": 5},
    "architecture": "linear",
    "epochs": 2,
    "seed": 5
  })");

  char out[512] = {0};
  REQUIRE(hgd_lab_run_stage(lab, cfg.c_str(), nullptr, 0, out, sizeof(out)) ==
          HGD_OK);
  CHECK(std::string(hgd_lab_last_error(lab)) == "");
  CHECK(fs::exists(std::string(out) + "/classifier.ckpt"));
  CHECK(std::string(out).find(root) == 0);

  // Same config with an override lands at a different address.
  const char* kv[] = {"seed", "6"};
  char out2[512] = {0};
  REQUIRE(hgd_lab_run_stage(lab, cfg.c_str(), kv, 1, out2, sizeof(out2)) ==
          HGD_OK);
  CHECK(std::string(out2) != std::string(out));

  // Truncation keeps the buffer terminated.
  char tiny[8] = {0};
  REQUIRE(hgd_lab_run_stage(lab, cfg.c_str(), nullptr, 0, tiny,
                            sizeof(tiny)) == HGD_OK);
  CHECK(std::string(tiny).size() == 7);
  CHECK(std::string(out).rfind(tiny, 0) == 0);

  hgd_lab_close(lab);
}
