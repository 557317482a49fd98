#include "omnishape/nn/training_state.hpp"

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"

namespace omnishape::nn {
namespace {

void write_tensors(io::ByteWriter& w, const std::vector<Tensor>& ts) {
  w.u32(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    w.f64_array(t.data());
  }
}

std::vector<Tensor> read_tensors(io::ByteReader& r) {
  std::vector<Tensor> out(r.u32());
  for (auto& t : out) {
    Shape s(r.u32());
    for (auto& e : s) e = r.u32();
    t = Tensor(s, r.f64_array(shape_size(s)));
  }
  return out;
}

}  // namespace

void TrainingState::save(const std::filesystem::path& path) const {
  io::ByteWriter w;
  w.magic("TRS1");
  write_tensors(w, params);
  write_tensors(w, adam.first_moment);
  write_tensors(w, adam.second_moment);
  w.u32(static_cast<std::uint32_t>(adam.step));
  w.u32(static_cast<std::uint32_t>(rng_state.size()));
  w.bytes(rng_state);
  w.save(path);
}

TrainingState TrainingState::load(const std::filesystem::path& path) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("TRS1");
  TrainingState s;
  s.params = read_tensors(r);
  s.adam.first_moment = read_tensors(r);
  s.adam.second_moment = read_tensors(r);
  s.adam.step = r.u32();
  s.rng_state = r.bytes(r.u32());
  if (!r.at_end()) throw ValidationError("trailing bytes in " + path.string());
  return s;
}

TrainingState capture_state(const std::vector<Var>& params, const AdamState& adam, const std::string& rng_state) {
  TrainingState s;
  for (const auto& p : params) s.params.push_back(p.value());
  s.adam = adam;
  s.rng_state = rng_state;
  return s;
}

void restore_params(const TrainingState& state, std::vector<Var>& params) {
  if (state.params.size() != params.size()) throw ValidationError("training state holds a different parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.params[i].shape() != params[i].shape()) throw ValidationError("training state parameter shape mismatch");
    params[i].mutable_value() = state.params[i];
  }
}

}  // namespace omnishape::nn
