#include <hgd/hgd.h>

#include <algorithm>
#include <cstring>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include "core/error.hpp"
#include "pipeline/stages.hpp"

struct hgd_lab {
  std::string artifact_root;
  std::string last_error;
};

namespace {

void copy_out(const std::string& s, char* buf, size_t len) {
  if (!buf || len == 0) return;
  size_t n = std::min(s.size(), len - 1);
  std::memcpy(buf, s.data(), n);
  buf[n] = '\0';
}

// Runs fn, routing any failure into the lab's error slot and status code.
template <typename Fn>
hgd_status guarded(hgd_lab* lab, Fn&& fn) {
  lab->last_error.clear();
  try {
    fn();
    return HGD_OK;
  } catch (const hgd::Error& e) {
    lab->last_error = e.what();
    return static_cast<hgd_status>(static_cast<int>(e.kind()));
  } catch (const std::exception& e) {
    lab->last_error = std::string("numeric: ") + e.what();
    return HGD_ERR_NUMERIC;
  }
}

}  // namespace

extern "C" {

const char* hgd_version(void) { return "1.0.0"; }

size_t hgd_stage_count(void) { return hgd::known_stages().size(); }

const char* hgd_stage_name(size_t index) {
  static const std::vector<std::string> stages = hgd::known_stages();
  return index < stages.size() ? stages[index].c_str() : nullptr;
}

hgd_lab* hgd_lab_open(const char* artifact_root) {
  if (!artifact_root || !*artifact_root) return nullptr;
  return new (std::nothrow) hgd_lab{artifact_root, ""};
}

void hgd_lab_close(hgd_lab* lab) { delete lab; }

const char* hgd_lab_last_error(const hgd_lab* lab) {
  return lab ? lab->last_error.c_str() : "";
}

hgd_status hgd_lab_run_stage(hgd_lab* lab, const char* config_path,
                             const char* const* overrides,
                             size_t override_count, char* out_dir,
                             size_t out_dir_len) {
  if (!lab) return HGD_ERR_CONFIG;
  if (!config_path || (override_count && !overrides)) {
    lab->last_error = "configuration: null argument";
    return HGD_ERR_CONFIG;
  }
  return guarded(lab, [&] {
    std::vector<std::pair<std::string, std::string>> kv;
    for (size_t i = 0; i < override_count; ++i) {
      const char* k = overrides[2 * i];
      const char* v = overrides[2 * i + 1];
      if (!k || !v) throw hgd::ConfigError("null override");
      kv.emplace_back(k, v);
    }
    auto res = hgd::run_stage_file(config_path, kv, lab->artifact_root);
    copy_out(res.output_dir, out_dir, out_dir_len);
  });
}

hgd_status hgd_lab_reproduce_figures(hgd_lab* lab, char* paths,
                                     size_t paths_len) {
  if (!lab) return HGD_ERR_CONFIG;
  return guarded(lab, [&] {
    std::string joined;
    for (auto& p : hgd::reproduce_figures(lab->artifact_root)) {
      if (!joined.empty()) joined += '\n';
      joined += p;
    }
    copy_out(joined, paths, paths_len);
  });
}

}  // extern "C"
