#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "nn/layers.hpp"

namespace hgd {

// Multi-scale denoiser shape: one block per scale on the way down, one per
// scale junction on the way up. The dunet family adds lateral connections
// and predicts a noise map that a structural shortcut subtracts from the
// input; the dae family reconstructs the image directly.
struct DenoiserConfig {
  std::string family = "dunet";  // dunet | dae
  std::vector<int> block_widths;
  std::vector<int> blocks_per_scale;
  Shape input_shape;  // n field is 0

  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

DenoiserConfig desk_denoiser_config(const std::string& family, Shape input_shape);

class Denoiser {
public:
  static std::unique_ptr<Denoiser> build(const DenoiserConfig& config,
                                         std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }

  struct Result {
    Tensor denoised;  // x-hat, unclipped
    Tensor noise;     // the removed perturbation estimate, x-star minus x-hat
  };
  // Inference pass; eval-mode batch norm, deterministic.
  Result denoise(const Tensor& batch);

  // Training-mode forward returning x-hat; pair with backward().
  Tensor forward(const Tensor& batch, bool train);
  // Pushes d(loss)/d(x-hat) through the network, accumulating weight
  // gradients; returns d(loss)/d(input).
  Tensor backward(const Tensor& grad_denoised);

  std::vector<nn::ParamRef> params();
  std::vector<nn::BufferRef> buffers();

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void save(const std::string& path) const;
  static std::unique_ptr<Denoiser> load(const std::string& path);

private:
  Denoiser() = default;
  void check_input(const Tensor& batch) const;

  DenoiserConfig config_;
  std::vector<std::unique_ptr<nn::Sequential>> enc_;  // one per scale
  std::vector<std::unique_ptr<nn::BilinearResize>> up_;  // per junction
  std::vector<std::unique_ptr<nn::Sequential>> dec_;     // per junction
  std::unique_ptr<nn::Conv2d> head_;  // 1x1, emits -noise (dunet) or x-hat (dae)

  nlohmann::json meta_ = nlohmann::json::object();
};

}  // namespace hgd
