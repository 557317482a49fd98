#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "omnishape/core/rng.hpp"
#include "omnishape/nn/autograd.hpp"
#include "omnishape/nn/ops.hpp"

namespace omnishape::nn {

// Fully connected network; leaky rectifier between layers, none after the last.
// Weights of layer l are stored [in, out] so a batch is X * W + b.
class Mlp {
 public:
  Mlp() = default;
  // He-style initialisation for the hidden layers, scaled-down output layer.
  Mlp(std::vector<std::size_t> widths, Rng& rng);
  // Explicit parameters; weights[l] must be [widths[l], widths[l+1]].
  Mlp(std::vector<std::size_t> widths, std::vector<Tensor> weights, std::vector<Tensor> biases);

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t input_width() const { return widths_.front(); }
  std::size_t output_width() const { return widths_.back(); }
  std::size_t layer_count() const { return weights_.size(); }

  std::vector<double> forward(std::span<const double> x) const;
  // [B, in] -> [B, out] without recording a graph.
  Tensor forward_batch(const Tensor& x) const;
  // Differentiable forward over a batch.
  Var forward(const Var& x) const;

  std::vector<Var> parameters() const;
  const Var& weight(std::size_t l) const { return weights_[l]; }
  const Var& bias(std::size_t l) const { return biases_[l]; }

  // "NNC1" checkpoint: u32 layer count, u32 widths (layer count + 1), then per layer the
  // float32 weights ([in, out] row-major) followed by the float32 biases.
  void save(const std::filesystem::path& path) const;
  static Mlp load(const std::filesystem::path& path);

 private:
  void check() const;
  std::vector<std::size_t> widths_;
  std::vector<Var> weights_;
  std::vector<Var> biases_;
};

}  // namespace omnishape::nn
