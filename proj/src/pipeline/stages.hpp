#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace hgd {

// "--key value" override; dotted keys descend into nested objects and the
// value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& key,
                    const std::string& value);

std::vector<std::string> known_stages();

struct StageResult {
  std::string output_dir;  // content-addressed under artifact-root
  nlohmann::json manifest;
};

// Executes one pipeline stage. The output directory name is derived from
// the resolved config plus the content hashes of every input artifact, so
// identical runs land in (and overwrite) the same path with identical bytes.
StageResult run_stage(nlohmann::json config, const std::string& artifact_root);

StageResult run_stage_file(
    const std::string& config_path,
    const std::vector<std::pair<std::string, std::string>>& overrides,
    const std::string& artifact_root);

// Re-renders every stored profile and scatter under artifact-root into
// figures/*.svg. Returns the written paths.
std::vector<std::string> reproduce_figures(const std::string& artifact_root);

}  // namespace hgd
