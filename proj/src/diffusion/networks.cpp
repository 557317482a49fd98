#include "omnishape/diffusion/networks.hpp"

#include <cmath>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"
#include "omnishape/core/rng.hpp"
#include "omnishape/nn/ops.hpp"

namespace omnishape::diffusion {

using nn::Tensor;
using nn::Var;

nn::Tensor TrainableDenoiser::epsilon(const Tensor& u_t, std::span<const double> t, const Tensor& cond) const {
  return epsilon_graph(nn::constant(u_t), t, cond).value();
}

nn::Tensor time_features(std::span<const double> t, std::size_t freqs) {
  Tensor out({t.size(), 2 * freqs});
  for (std::size_t b = 0; b < t.size(); ++b)
    for (std::size_t k = 0; k < freqs; ++k) {
      const double w = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(freqs));
      out[b * 2 * freqs + k] = std::sin(t[b] * w);
      out[b * 2 * freqs + freqs + k] = std::cos(t[b] * w);
    }
  return out;
}

namespace {

Tensor random_tensor(nn::Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

void check_inputs(const Denoiser& den, const Tensor& u, std::span<const double> t, const Tensor& cond) {
  const std::size_t b = batch_size_of(u, den.state_shape(), "state");
  if (t.size() != b) throw ShapeError("one time per batch element expected");
  if (!den.cond_shape().empty()) batch_size_of(cond, den.cond_shape(), "conditioning");
  if (!den.cond_shape().empty() && cond.dim(0) != b) throw ShapeError("conditioning batch differs from state batch");
}

}  // namespace

// --- MLP denoiser

MlpDenoiser::MlpDenoiser(const MlpDenoiserConfig& cfg) : cfg_(cfg) {
  if (cfg.state_dim == 0 || cfg.time_freqs == 0) throw UsageError("MLP denoiser needs a state and time features");
  std::vector<std::size_t> widths{cfg.state_dim + cfg.cond_dim + 2 * cfg.time_freqs};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(cfg.state_dim);
  Rng rng(cfg.seed);
  net_ = nn::Mlp(widths, rng);
}

nn::Shape MlpDenoiser::cond_shape() const { return cfg_.cond_dim ? nn::Shape{cfg_.cond_dim} : nn::Shape{}; }

Var MlpDenoiser::epsilon_graph(const Var& u_t, std::span<const double> t, const Tensor& cond_in) const {
  const std::size_t b = batch_size_of(u_t.value(), state_shape(), "state");
  const Tensor cond = cfg_.cond_dim ? expand_conditioning(*this, cond_in, b) : Tensor{};
  check_inputs(*this, u_t.value(), t, cond);
  const Tensor tf = time_features(t, cfg_.time_freqs);
  const std::size_t in = net_.input_width(), s = cfg_.state_dim, c = cfg_.cond_dim, f = 2 * cfg_.time_freqs;
  Tensor x({b, in});
  for (std::size_t i = 0; i < b; ++i) {
    double* row = x.ptr() + i * in;
    std::copy_n(u_t.value().ptr() + i * s, s, row);
    if (c) std::copy_n(cond.ptr() + i * c, c, row + s);
    std::copy_n(tf.ptr() + i * f, f, row + s + c);
  }
  return net_.forward(nn::constant(std::move(x)));
}

nlohmann::json MlpDenoiser::config_json() const {
  return {{"state_dim", cfg_.state_dim},
          {"cond_dim", cfg_.cond_dim},
          {"hidden", cfg_.hidden},
          {"time_freqs", cfg_.time_freqs},
          {"seed", cfg_.seed}};
}

// --- convolutional denoiser

void ConvDenoiserConfig::validate() const {
  if (state_channels == 0 || size == 0 || widths.empty() || time_freqs == 0 || time_width == 0)
    throw UsageError("conv denoiser config has a zero extent");
  const std::size_t f = std::size_t{1} << (widths.size() - 1);
  if (size % f) throw UsageError("input size must be divisible by 2^(levels - 1)");
}

ConvDenoiser::Block ConvDenoiser::make_block(std::size_t in, std::size_t out, Rng& rng) const {
  Block b;
  b.weight = nn::parameter(random_tensor({out, in, 3, 3}, std::sqrt(2.0 / static_cast<double>(9 * in)), rng));
  b.bias = nn::parameter(Tensor({out}, 0.0));
  b.time_weight = nn::parameter(random_tensor({cfg_.time_width, out}, std::sqrt(1.0 / static_cast<double>(cfg_.time_width)), rng));
  b.time_bias = nn::parameter(Tensor({out}, 0.0));
  return b;
}

ConvDenoiser::ConvDenoiser(const ConvDenoiserConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg.seed);
  const auto& w = cfg_.widths;
  const std::size_t tf = 2 * cfg_.time_freqs;
  time_weight_ = nn::parameter(random_tensor({tf, cfg_.time_width}, std::sqrt(2.0 / static_cast<double>(tf)), rng));
  time_bias_ = nn::parameter(Tensor({cfg_.time_width}, 0.0));
  in_ = make_block(cfg_.state_channels + cfg_.cond_channels, w[0], rng);
  for (std::size_t l = 1; l < w.size(); ++l) down_.push_back(make_block(w[l - 1], w[l], rng));
  for (std::size_t l = 1; l < w.size(); ++l) up_.push_back(make_block(w[l] + w[l - 1], w[l - 1], rng));
  mid_ = make_block(w[0], w[0], rng);
  out_weight_ = nn::parameter(random_tensor({cfg_.state_channels, w[0], 3, 3}, 0.1 * std::sqrt(2.0 / static_cast<double>(9 * w[0])), rng));
  out_bias_ = nn::parameter(Tensor({cfg_.state_channels}, 0.0));
}

nn::Shape ConvDenoiser::cond_shape() const {
  return cfg_.cond_channels ? nn::Shape{cfg_.cond_channels, cfg_.size, cfg_.size} : nn::Shape{};
}

Var ConvDenoiser::apply(const Block& b, const Var& x, const Var& temb) const {
  const Var shift = nn::add_row_bias(nn::matmul(temb, b.time_weight), b.time_bias);
  return nn::leaky_relu(nn::add_channel_bias(nn::conv2d(x, b.weight, b.bias), shift));
}

Var ConvDenoiser::epsilon_graph(const Var& u_t, std::span<const double> t, const Tensor& cond_in) const {
  const std::size_t b = batch_size_of(u_t.value(), state_shape(), "state");
  const Tensor cond = cfg_.cond_channels ? expand_conditioning(*this, cond_in, b) : Tensor{};
  check_inputs(*this, u_t.value(), t, cond);

  const Var temb =
      nn::leaky_relu(nn::add_row_bias(nn::matmul(nn::constant(time_features(t, cfg_.time_freqs)), time_weight_), time_bias_));
  Var h = apply(in_, cfg_.cond_channels ? nn::concat_channels(u_t, nn::constant(cond)) : u_t, temb);
  std::vector<Var> skips{h};
  for (const auto& blk : down_) {
    h = apply(blk, nn::avg_pool2(h), temb);
    skips.push_back(h);
  }
  for (std::size_t l = up_.size(); l >= 1; --l) h = apply(up_[l - 1], nn::concat_channels(nn::upsample2(h), skips[l - 1]), temb);
  h = apply(mid_, h, temb);
  return nn::conv2d(h, out_weight_, out_bias_);
}

std::vector<Var> ConvDenoiser::parameters() const {
  std::vector<Var> p{time_weight_, time_bias_};
  auto push = [&p](const Block& b) { p.insert(p.end(), {b.weight, b.bias, b.time_weight, b.time_bias}); };
  push(in_);
  for (const auto& b : down_) push(b);
  for (const auto& b : up_) push(b);
  push(mid_);
  p.push_back(out_weight_);
  p.push_back(out_bias_);
  return p;
}

nlohmann::json ConvDenoiser::config_json() const {
  return {{"state_channels", cfg_.state_channels},
          {"cond_channels", cfg_.cond_channels},
          {"size", cfg_.size},
          {"widths", cfg_.widths},
          {"time_freqs", cfg_.time_freqs},
          {"time_width", cfg_.time_width},
          {"seed", cfg_.seed}};
}

// --- checkpoints

void TrainableDenoiser::save(const std::filesystem::path& path) const {
  const nlohmann::json header{{"flavor", flavor()}, {"config", config_json()}};
  const std::string text = header.dump();
  io::ByteWriter w;
  w.magic("DNS1");
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  const auto params = parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.value().rank()));
    for (auto e : p.shape()) w.u32(static_cast<std::uint32_t>(e));
    w.f64_array(p.value().data());
  }
  w.save(path);
}

std::unique_ptr<TrainableDenoiser> load_denoiser(const std::filesystem::path& path) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("DNS1");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": bad denoiser header: " + e.what());
  }
  std::unique_ptr<TrainableDenoiser> den;
  try {
    const auto flavor = header.at("flavor").get<std::string>();
    const auto& c = header.at("config");
    if (flavor == "trained-mlp") {
      MlpDenoiserConfig cfg;
      cfg.state_dim = c.at("state_dim");
      cfg.cond_dim = c.at("cond_dim");
      cfg.hidden = c.at("hidden").get<std::vector<std::size_t>>();
      cfg.time_freqs = c.at("time_freqs");
      cfg.seed = c.at("seed");
      den = std::make_unique<MlpDenoiser>(cfg);
    } else if (flavor == "trained-conv") {
      ConvDenoiserConfig cfg;
      cfg.state_channels = c.at("state_channels");
      cfg.cond_channels = c.at("cond_channels");
      cfg.size = c.at("size");
      cfg.widths = c.at("widths").get<std::vector<std::size_t>>();
      cfg.time_freqs = c.at("time_freqs");
      cfg.time_width = c.at("time_width");
      cfg.seed = c.at("seed");
      den = std::make_unique<ConvDenoiser>(cfg);
    } else {
      throw ValidationError(path.string() + ": unknown denoiser flavor '" + flavor + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": bad denoiser config: " + e.what());
  } catch (const UsageError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  auto params = den->parameters();
  if (r.u32() != params.size()) throw ValidationError(path.string() + ": parameter count mismatch");
  for (auto& p : params) {
    const std::uint32_t rank = r.u32();
    nn::Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    if (shape != p.shape()) throw ValidationError(path.string() + ": parameter shape mismatch");
    p.mutable_value() = Tensor(shape, r.f64_array(nn::shape_size(shape)));
    if (!p.value().all_finite()) throw ValidationError(path.string() + ": non-finite parameter");
  }
  if (!r.at_end()) throw ValidationError(path.string() + ": trailing bytes");
  return den;
}

}  // namespace omnishape::diffusion
