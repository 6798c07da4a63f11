#include "models/denoiser.hpp"

#include <algorithm>

#include "core/container.hpp"
#include "core/error.hpp"

namespace hgd {

using nn::BilinearResize;
using nn::Conv2d;
using nn::Sequential;

void DenoiserConfig::validate() const {
  if (family != "dunet" && family != "dae")
    throw ConfigError("unknown denoiser family '" + family +
                      "' (known: dunet, dae)");
  if (block_widths.size() != blocks_per_scale.size())
    throw ConfigError("block-widths and blocks-per-scale lengths differ");
  if (block_widths.size() < 2)
    throw ConfigError("denoiser needs at least 2 scales");
  for (int w : block_widths)
    if (w <= 0) throw ConfigError("block width must be positive");
  for (int b : blocks_per_scale)
    if (b < 1) throw ConfigError("blocks per scale must be >= 1");
  if (input_shape.c <= 0 || input_shape.h <= 0 || input_shape.w <= 0)
    throw ConfigError("denoiser input shape must be positive");
  int factor = 1 << (int(block_widths.size()) - 1);
  if (input_shape.h % factor != 0 || input_shape.w % factor != 0)
    throw ConfigError("input sides must be divisible by " +
                      std::to_string(factor) + " for " +
                      std::to_string(block_widths.size()) + " scales");
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"family", family},
          {"block_widths", block_widths},
          {"blocks_per_scale", blocks_per_scale},
          {"input_shape", {input_shape.c, input_shape.h, input_shape.w}}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.family = j.at("family").get<std::string>();
  c.block_widths = j.at("block_widths").get<std::vector<int>>();
  c.blocks_per_scale = j.at("blocks_per_scale").get<std::vector<int>>();
  auto in = j.at("input_shape");
  c.input_shape = Shape{0, in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
  return c;
}

DenoiserConfig desk_denoiser_config(const std::string& family,
                                    Shape input_shape) {
  DenoiserConfig c;
  c.family = family;
  c.block_widths = {32, 64, 128};
  c.blocks_per_scale = {2, 3, 3};
  c.input_shape = input_shape;
  c.input_shape.n = 0;
  return c;
}

std::unique_ptr<Denoiser> Denoiser::build(const DenoiserConfig& config,
                                          std::uint64_t seed) {
  config.validate();
  auto d = std::unique_ptr<Denoiser>(new Denoiser());
  d->config_ = config;
  Rng rng(seed);
  const auto& w = config.block_widths;
  const int k = int(w.size());
  const bool lateral = config.family == "dunet";

  for (int s = 0; s < k; ++s) {
    auto block = std::make_unique<Sequential>();
    for (int b = 0; b < config.blocks_per_scale[std::size_t(s)]; ++b) {
      int in_ch = b > 0 ? w[std::size_t(s)]
                        : (s == 0 ? config.input_shape.c : w[std::size_t(s - 1)]);
      int stride = (b == 0 && s > 0) ? 2 : 1;
      block->add(nn::make_conv_bn_relu(in_ch, w[std::size_t(s)], 3, stride, 1, rng));
    }
    d->enc_.push_back(std::move(block));
  }

  // Decoder junctions, deepest first: upsample, (concat lateral,) conv stack.
  for (int j = k - 2; j >= 0; --j) {
    int target_h = config.input_shape.h >> j;
    int target_w = config.input_shape.w >> j;
    d->up_.push_back(std::make_unique<BilinearResize>(target_h, target_w));
    int in_ch = w[std::size_t(j + 1)] + (lateral ? w[std::size_t(j)] : 0);
    auto block = std::make_unique<Sequential>();
    for (int b = 0; b < config.blocks_per_scale[std::size_t(j)]; ++b) {
      block->add(nn::make_conv_bn_relu(b == 0 ? in_ch : w[std::size_t(j)],
                                       w[std::size_t(j)], 3, 1, 1, rng));
      in_ch = w[std::size_t(j)];
    }
    d->dec_.push_back(std::move(block));
  }

  d->head_ = std::make_unique<Conv2d>(w[0], config.input_shape.c, 1, 1, 0, rng);
  return d;
}

void Denoiser::check_input(const Tensor& batch) const {
  Shape s = batch.shape();
  if (s.c != config_.input_shape.c || s.h != config_.input_shape.h ||
      s.w != config_.input_shape.w)
    throw ShapeError("denoiser input " + s.str() + " does not match config " +
                     config_.input_shape.str());
}

namespace {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Shape sa = a.shape(), sb = b.shape();
  Tensor out(sa.n, sa.c + sb.c, sa.h, sa.w);
  std::int64_t plane = std::int64_t(sa.h) * sa.w;
  for (int n = 0; n < sa.n; ++n) {
    std::copy(a.data() + n * sa.c * plane, a.data() + (n + 1) * sa.c * plane,
              out.data() + std::int64_t(n) * (sa.c + sb.c) * plane);
    std::copy(b.data() + n * sb.c * plane, b.data() + (n + 1) * sb.c * plane,
              out.data() + std::int64_t(n) * (sa.c + sb.c) * plane +
                  sa.c * plane);
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& cat, int c_first) {
  Shape s = cat.shape();
  Tensor a(s.n, c_first, s.h, s.w);
  Tensor b(s.n, s.c - c_first, s.h, s.w);
  std::int64_t plane = std::int64_t(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const float* src = cat.data() + std::int64_t(n) * s.c * plane;
    std::copy(src, src + c_first * plane, a.data() + std::int64_t(n) * c_first * plane);
    std::copy(src + c_first * plane, src + s.c * plane,
              b.data() + std::int64_t(n) * (s.c - c_first) * plane);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace

Tensor Denoiser::forward(const Tensor& batch, bool train) {
  check_input(batch);
  const int k = int(enc_.size());
  const bool lateral = config_.family == "dunet";

  std::vector<Tensor> feats;
  feats.reserve(std::size_t(k));
  Tensor cur = batch;
  for (int s = 0; s < k; ++s) {
    cur = enc_[std::size_t(s)]->forward(cur, train);
    feats.push_back(cur);
  }

  Tensor g = feats.back();
  for (int i = 0; i < k - 1; ++i) {  // junction i handles scale k-2-i
    int scale = k - 2 - i;
    Tensor u = up_[std::size_t(i)]->forward(g, train);
    Tensor in = lateral ? concat_channels(u, feats[std::size_t(scale)])
                        : std::move(u);
    g = dec_[std::size_t(i)]->forward(in, train);
  }

  Tensor head = head_->forward(g, train);
  if (lateral) {
    // Head emits the negative noise map; the shortcut adds it to the input.
    Tensor out = batch;
    out += head;
    return out;
  }
  return head;
}

Tensor Denoiser::backward(const Tensor& grad_denoised) {
  const int k = int(enc_.size());
  const bool lateral = config_.family == "dunet";
  const auto& w = config_.block_widths;

  Tensor gg = head_->backward(grad_denoised);
  std::vector<Tensor> lateral_grads(static_cast<std::size_t>(k));
  for (int i = k - 2; i >= 0; --i) {  // reverse of the forward junction order
    int scale = k - 2 - i;
    Tensor gin = dec_[std::size_t(i)]->backward(gg);
    if (lateral) {
      auto [gu, gl] = split_channels(gin, w[std::size_t(scale + 1)]);
      lateral_grads[std::size_t(scale)] = std::move(gl);
      gg = up_[std::size_t(i)]->backward(gu);
    } else {
      gg = up_[std::size_t(i)]->backward(gin);
    }
  }

  for (int s = k - 1; s >= 0; --s) {
    gg = enc_[std::size_t(s)]->backward(gg);
    if (s > 0 && lateral) gg += lateral_grads[std::size_t(s - 1)];
  }
  if (lateral) gg += grad_denoised;  // structural shortcut
  return gg;
}

Denoiser::Result Denoiser::denoise(const Tensor& batch) {
  Tensor xhat = forward(batch, false);
  Tensor noise = batch;
  noise -= xhat;
  return {std::move(xhat), std::move(noise)};
}

std::vector<nn::ParamRef> Denoiser::params() {
  std::vector<nn::ParamRef> out;
  for (std::size_t s = 0; s < enc_.size(); ++s)
    enc_[s]->collect_params("enc" + std::to_string(s), out);
  for (std::size_t j = 0; j < dec_.size(); ++j)
    dec_[j]->collect_params("dec" + std::to_string(j), out);
  head_->collect_params("head", out);
  return out;
}

std::vector<nn::BufferRef> Denoiser::buffers() {
  std::vector<nn::BufferRef> out;
  for (std::size_t s = 0; s < enc_.size(); ++s)
    enc_[s]->collect_buffers("enc" + std::to_string(s), out);
  for (std::size_t j = 0; j < dec_.size(); ++j)
    dec_[j]->collect_buffers("dec" + std::to_string(j), out);
  return out;
}

void Denoiser::save(const std::string& path) const {
  Container c;
  auto* self = const_cast<Denoiser*>(this);
  c.meta = {{"format", "denoiser"},
            {"config", config_.to_json()},
            {"meta", meta_}};
  for (auto& p : self->params()) {
    Tensor t(1, 1, 1, int(p.value->size()));
    std::copy(p.value->begin(), p.value->end(), t.data());
    c.add(p.name, std::move(t));
  }
  for (auto& b : self->buffers()) {
    Tensor t(1, 1, 1, int(b.value->size()));
    std::copy(b.value->begin(), b.value->end(), t.data());
    c.add("buf." + b.name, std::move(t));
  }
  save_container(c, path);
}

std::unique_ptr<Denoiser> Denoiser::load(const std::string& path) {
  Container c = load_container(path);
  if (c.meta.value("format", "") != "denoiser")
    throw IoError("not a denoiser checkpoint: " + path);
  auto d = build(DenoiserConfig::from_json(c.meta.at("config")), 0);
  d->meta_ = c.meta.value("meta", nlohmann::json::object());
  for (auto& p : d->params()) {
    const Tensor& t = c.tensor(p.name);
    if (std::size_t(t.size()) != p.value->size())
      throw IoError("checkpoint parameter size mismatch: " + p.name);
    std::copy(t.data(), t.data() + t.size(), p.value->begin());
  }
  for (auto& b : d->buffers()) {
    const Tensor& t = c.tensor("buf." + b.name);
    if (std::size_t(t.size()) != b.value->size())
      throw IoError("checkpoint buffer size mismatch: " + b.name);
    std::copy(t.data(), t.data() + t.size(), b.value->begin());
  }
  return d;
}

}  // namespace hgd
