#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <json.hpp>

#include "omnishape/diffusion/denoiser.hpp"
#include "omnishape/nn/autograd.hpp"
#include "omnishape/nn/mlp.hpp"

namespace omnishape::diffusion {

// A denoiser with learnable parameters and a differentiable forward pass.
class TrainableDenoiser : public Denoiser {
 public:
  virtual nn::Var epsilon_graph(const nn::Var& u_t, std::span<const double> t, const nn::Tensor& cond) const = 0;
  virtual std::vector<nn::Var> parameters() const = 0;
  virtual nlohmann::json config_json() const = 0;

  nn::Tensor epsilon(const nn::Tensor& u_t, std::span<const double> t, const nn::Tensor& cond) const override;

  // "DNS1": magic, u32 header length, JSON header {flavor, config}, u32 tensor count, then
  // per tensor u32 rank, u32 extents and float64 values in parameters() order.
  void save(const std::filesystem::path& path) const;
};

std::unique_ptr<TrainableDenoiser> load_denoiser(const std::filesystem::path& path);

// Sinusoidal features [B, 2 * freqs] of step times: sin and cos of t * 10000^(-k/freqs).
nn::Tensor time_features(std::span<const double> t, std::size_t freqs);

struct MlpDenoiserConfig {
  std::size_t state_dim = 2;
  std::size_t cond_dim = 0;
  std::vector<std::size_t> hidden{128, 128};
  std::size_t time_freqs = 8;
  std::uint64_t seed = 0;
};

// Flat states: eps = MLP([u_t, cond, time features]).
class MlpDenoiser final : public TrainableDenoiser {
 public:
  explicit MlpDenoiser(const MlpDenoiserConfig& cfg);
  std::string flavor() const override { return "trained-mlp"; }
  nn::Shape state_shape() const override { return {cfg_.state_dim}; }
  nn::Shape cond_shape() const override;
  nn::Var epsilon_graph(const nn::Var& u_t, std::span<const double> t, const nn::Tensor& cond) const override;
  std::vector<nn::Var> parameters() const override { return net_.parameters(); }
  nlohmann::json config_json() const override;
  const MlpDenoiserConfig& config() const { return cfg_; }

 private:
  MlpDenoiserConfig cfg_;
  nn::Mlp net_;
};

struct ConvDenoiserConfig {
  std::size_t state_channels = 6;
  std::size_t cond_channels = 4;
  std::size_t size = 32;  // square inputs
  // Feature width per resolution level; level l runs at size / 2^l.
  std::vector<std::size_t> widths{32, 64};
  std::size_t time_freqs = 16;
  std::size_t time_width = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// Encoder-decoder over [B, C, size, size] states with the conditioning concatenated along
// channels. 3x3 convolutions; every hidden block adds a per-channel projection of the time
// embedding before the activation. One level gives a plain three-convolution stack.
class ConvDenoiser final : public TrainableDenoiser {
 public:
  explicit ConvDenoiser(const ConvDenoiserConfig& cfg);
  std::string flavor() const override { return "trained-conv"; }
  nn::Shape state_shape() const override { return {cfg_.state_channels, cfg_.size, cfg_.size}; }
  nn::Shape cond_shape() const override;
  nn::Var epsilon_graph(const nn::Var& u_t, std::span<const double> t, const nn::Tensor& cond) const override;
  std::vector<nn::Var> parameters() const override;
  nlohmann::json config_json() const override;
  const ConvDenoiserConfig& config() const { return cfg_; }

 private:
  struct Block {
    nn::Var weight, bias, time_weight, time_bias;
  };
  Block make_block(std::size_t in, std::size_t out, Rng& rng) const;
  nn::Var apply(const Block& b, const nn::Var& x, const nn::Var& temb) const;

  ConvDenoiserConfig cfg_;
  nn::Var time_weight_, time_bias_;
  Block in_, mid_;
  std::vector<Block> down_, up_;
  nn::Var out_weight_, out_bias_;
};

}  // namespace omnishape::diffusion
