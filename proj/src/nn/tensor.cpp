#include "omnishape/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "omnishape/core/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace omnishape::nn {

namespace {
// Training allocates and frees the same large buffers every step. glibc would otherwise
// hand each one back to the kernel, and the page faults dominate small-network runtime.
[[maybe_unused]] const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  return true;
}();
}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape_));
  if (shape_size(shape_) != data_.size())
    throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) + " values");
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) throw ShapeError("reshape to " + shape_string(shape) + " changes element count");
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace omnishape::nn
