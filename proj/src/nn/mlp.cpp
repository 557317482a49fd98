#include "omnishape/nn/mlp.hpp"

#include <cmath>

#include <Eigen/Core>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"

namespace omnishape::nn {
namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

Mlp::Mlp(std::vector<std::size_t> widths, Rng& rng) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw UsageError("an MLP needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t in = widths_[l], out = widths_[l + 1];
    const bool last = l + 2 == widths_.size();
    const double stddev = (last ? 0.5 : 1.0) * std::sqrt(2.0 / static_cast<double>(in));
    Tensor w({in, out});
    for (auto& v : w.data()) v = rng.normal(0.0, stddev);
    weights_.push_back(parameter(std::move(w)));
    biases_.push_back(parameter(Tensor({out}, 0.0)));
  }
  check();
}

Mlp::Mlp(std::vector<std::size_t> widths, std::vector<Tensor> weights, std::vector<Tensor> biases) : widths_(std::move(widths)) {
  if (widths_.size() < 2 || weights.size() + 1 != widths_.size() || biases.size() != weights.size())
    throw ShapeError("MLP widths and parameter lists disagree");
  for (auto& w : weights) weights_.push_back(parameter(std::move(w)));
  for (auto& b : biases) biases_.push_back(parameter(std::move(b)));
  check();
}

void Mlp::check() const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const Shape want{widths_[l], widths_[l + 1]};
    if (weights_[l].shape() != want) throw ShapeError("layer " + std::to_string(l) + " weight is " + shape_string(weights_[l].shape()));
    if (biases_[l].value().size() != widths_[l + 1]) throw ShapeError("layer " + std::to_string(l) + " bias length mismatch");
  }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  if (x.size() != input_width())
    throw ShapeError("mlp input has length " + std::to_string(x.size()) + ", expected " + std::to_string(input_width()));
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const std::size_t in = widths_[l], out = widths_[l + 1];
    const Tensor& w = weights_[l].value();
    std::vector<double> next(biases_[l].value().data().begin(), biases_[l].value().data().end());
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t j = 0; j < out; ++j) next[j] += cur[i] * w[i * out + j];
    if (l + 1 < weights_.size())
      for (auto& v : next) v = v > 0.0 ? v : kLeakySlope * v;
    cur = std::move(next);
  }
  return cur;
}

Tensor Mlp::forward_batch(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != input_width()) throw ShapeError("mlp batch input " + shape_string(x.shape()));
  const long b = static_cast<long>(x.dim(0));
  RowMat cur = Eigen::Map<const RowMat>(x.ptr(), b, static_cast<long>(input_width()));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const long in = static_cast<long>(widths_[l]), out = static_cast<long>(widths_[l + 1]);
    RowMat next = cur * Eigen::Map<const RowMat>(weights_[l].value().ptr(), in, out);
    next.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(biases_[l].value().ptr(), out);
    if (l + 1 < weights_.size()) next = next.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    cur = std::move(next);
  }
  Tensor out({x.dim(0), output_width()});
  Eigen::Map<RowMat>(out.ptr(), b, static_cast<long>(output_width())) = cur;
  return out;
}

Var Mlp::forward(const Var& x) const {
  if (x.value().rank() != 2 || x.value().dim(1) != input_width()) throw ShapeError("mlp batch input " + shape_string(x.shape()));
  Var cur = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    cur = add_row_bias(matmul(cur, weights_[l]), biases_[l]);
    if (l + 1 < weights_.size()) cur = leaky_relu(cur);
  }
  return cur;
}

std::vector<Var> Mlp::parameters() const {
  std::vector<Var> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

void Mlp::save(const std::filesystem::path& path) const {
  io::ByteWriter w;
  w.magic("NNC1");
  w.u32(static_cast<std::uint32_t>(layer_count()));
  for (auto width : widths_) w.u32(static_cast<std::uint32_t>(width));
  for (std::size_t l = 0; l < layer_count(); ++l) {
    w.f32_array(weights_[l].value().data());
    w.f32_array(biases_[l].value().data());
  }
  w.save(path);
}

Mlp Mlp::load(const std::filesystem::path& path) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("NNC1");
  const std::uint32_t layers = r.u32();
  if (layers == 0 || layers > 64) throw ValidationError("implausible layer count in " + path.string());
  std::vector<std::size_t> widths(layers + 1);
  for (auto& width : widths) {
    width = r.u32();
    if (width == 0) throw ValidationError("zero layer width in " + path.string());
  }
  std::vector<Tensor> ws, bs;
  for (std::size_t l = 0; l < layers; ++l) {
    ws.emplace_back(Shape{widths[l], widths[l + 1]}, r.f32_array(widths[l] * widths[l + 1]));
    bs.emplace_back(Shape{widths[l + 1]}, r.f32_array(widths[l + 1]));
  }
  if (!r.at_end()) throw ValidationError("trailing bytes in " + path.string());
  return Mlp(std::move(widths), std::move(ws), std::move(bs));
}

}  // namespace omnishape::nn
