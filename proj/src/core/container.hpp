#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/tensor.hpp"

namespace hgd {

// Self-describing on-disk container: a JSON metadata header followed by
// named arrays (float32 tensors and int32 vectors). Checkpoints, corpora
// and analysis records all use this format. Round-trips are bit-exact.
struct Container {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, std::vector<std::int32_t>>> ints;

  void add(const std::string& name, Tensor t) {
    tensors.emplace_back(name, std::move(t));
  }
  void add(const std::string& name, std::vector<std::int32_t> v) {
    ints.emplace_back(name, std::move(v));
  }

  const Tensor& tensor(const std::string& name) const;
  const std::vector<std::int32_t>& int_array(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

void save_container(const Container& c, const std::string& path);
Container load_container(const std::string& path);

}  // namespace hgd
