#include "omnishape/nn/ops.hpp"

#include <cmath>

#include <Eigen/Core>

#include "omnishape/core/error.hpp"
#include "omnishape/kernels/conv.hpp"

namespace omnishape::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
}

// Adds `g` into the input's gradient if it wants one.
template <typename F>
void accumulate(Node& input, F&& fill) {
  if (!input.requires_grad) return;
  fill(input.grad_buffer());
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs)
      accumulate(*in, [&](Tensor& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(*self.inputs[1], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    });
    accumulate(*self.inputs[1], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    });
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_op(std::move(out), {a}, [s](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
  });
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : slope * v;
  return make_op(std::move(out), {x}, [slope](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (xv[i] > 0.0 ? 1.0 : slope);
    });
  });
}

Var abs(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::fabs(v);
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0));
    });
  });
}

Var square(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= v;
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * xv[i] * self.grad[i];
    });
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op(Tensor::scalar(s), {x}, [](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (auto& v : g.data()) v += self.grad[0];
    });
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mse(const Var& a, const Var& b) {
  require_same(a, b, "mse");
  const std::size_t n = a.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  return make_op(Tensor::scalar(s / static_cast<double>(n)), {a, b}, [n](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    const double c = 2.0 * self.grad[0] / static_cast<double>(n);
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < n; ++i) g[i] += c * (av[i] - bv[i]);
    });
    accumulate(*self.inputs[1], [&](Tensor& g) {
      for (std::size_t i = 0; i < n; ++i) g[i] -= c * (av[i] - bv[i]);
    });
  });
}

Var l1_mean(const Var& a, const Var& b) {
  require_same(a, b, "l1_mean");
  const std::size_t n = a.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::fabs(a.value()[i] - b.value()[i]);
  return make_op(Tensor::scalar(s / static_cast<double>(n)), {a, b}, [n](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    const double c = self.grad[0] / static_cast<double>(n);
    auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < n; ++i) g[i] += c * sgn(av[i] - bv[i]);
    });
    accumulate(*self.inputs[1], [&](Tensor& g) {
      for (std::size_t i = 0; i < n; ++i) g[i] -= c * sgn(av[i] - bv[i]);
    });
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const long m = static_cast<long>(a.value().dim(0)), k = static_cast<long>(a.value().dim(1));
  const long n = static_cast<long>(b.value().dim(1));
  if (static_cast<long>(b.value().dim(0)) != k)
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out({static_cast<std::size_t>(m), static_cast<std::size_t>(n)});
  MapMat(out.ptr(), m, n).noalias() = ConstMapMat(a.value().ptr(), m, k) * ConstMapMat(b.value().ptr(), k, n);
  return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
    ConstMapMat gy(self.grad.ptr(), m, n);
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    accumulate(*self.inputs[0], [&](Tensor& g) { MapMat(g.ptr(), m, k).noalias() += gy * ConstMapMat(bv.ptr(), k, n).transpose(); });
    accumulate(*self.inputs[1], [&](Tensor& g) { MapMat(g.ptr(), k, n).noalias() += ConstMapMat(av.ptr(), m, k).transpose() * gy; });
  });
}

Var add_row_bias(const Var& x, const Var& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t m = x.value().dim(0), n = x.value().dim(1);
  if (bias.value().size() != n) throw ShapeError("add_row_bias: bias length mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
  return make_op(std::move(out), {x, bias}, [m, n](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(*self.inputs[1], [&](Tensor& g) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    });
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0)
    throw ShapeError("conv2d: input " + shape_string(xs) + " weight " + shape_string(ws));
  if (bias && bias.value().size() != ws[0]) throw ShapeError("conv2d: bias length mismatch");
  const kernels::ConvDims d{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2]};
  Tensor out({d.batch, d.out_channels, d.height, d.width});
  kernels::conv2d_forward(x.value().ptr(), weight.value().ptr(), bias ? bias.value().ptr() : nullptr, out.ptr(), d);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_op(std::move(out), std::move(inputs), [d](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    double* dx = xn.requires_grad ? xn.grad_buffer().ptr() : nullptr;
    double* dw = wn.requires_grad ? wn.grad_buffer().ptr() : nullptr;
    double* db = nullptr;
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) db = self.inputs[2]->grad_buffer().ptr();
    kernels::conv2d_backward(xn.value.ptr(), wn.value.ptr(), self.grad.ptr(), dx, dw, db, d);
  });
}

Var avg_pool2(const Var& x) {
  require_rank(x, 4, "avg_pool2");
  const auto s = x.shape();
  if (s[2] % 2 || s[3] % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_string(s));
  const std::size_t nc = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  Tensor out({s[0], s[1], oh, ow});
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const double* src = x.value().ptr() + p * h * w;
        out[(p * oh + i) * ow + j] = 0.25 * (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] + src[(2 * i + 1) * w + 2 * j] +
                                             src[(2 * i + 1) * w + 2 * j + 1]);
      }
  return make_op(std::move(out), {x}, [nc, h, w, oh, ow](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j) {
            const double v = 0.25 * self.grad[(p * oh + i) * ow + j];
            double* dst = g.ptr() + p * h * w;
            dst[2 * i * w + 2 * j] += v;
            dst[2 * i * w + 2 * j + 1] += v;
            dst[(2 * i + 1) * w + 2 * j] += v;
            dst[(2 * i + 1) * w + 2 * j + 1] += v;
          }
    });
  });
}

Var upsample2(const Var& x) {
  require_rank(x, 4, "upsample2");
  const auto s = x.shape();
  const std::size_t nc = s[0] * s[1], h = s[2], w = s[3], oh = 2 * h, ow = 2 * w;
  Tensor out({s[0], s[1], oh, ow});
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) out[(p * oh + i) * ow + j] = x.value()[(p * h + i / 2) * w + j / 2];
  return make_op(std::move(out), {x}, [nc, h, w, oh, ow](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j) g[(p * h + i / 2) * w + j / 2] += self.grad[(p * oh + i) * ow + j];
    });
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const auto sa = a.shape(), sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ShapeError("concat_channels: " + shape_string(sa) + " vs " + shape_string(sb));
  const std::size_t hw = sa[2] * sa[3], ca = sa[1], cb = sb[1], n = sa[0];
  Tensor out({n, ca + cb, sa[2], sa[3]});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().ptr() + i * ca * hw, ca * hw, out.ptr() + i * (ca + cb) * hw);
    std::copy_n(b.value().ptr() + i * cb * hw, cb * hw, out.ptr() + i * (ca + cb) * hw + ca * hw);
  }
  return make_op(std::move(out), {a, b}, [n, ca, cb, hw](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < ca * hw; ++k) g[i * ca * hw + k] += self.grad[i * (ca + cb) * hw + k];
    });
    accumulate(*self.inputs[1], [&](Tensor& g) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < cb * hw; ++k) g[i * cb * hw + k] += self.grad[i * (ca + cb) * hw + ca * hw + k];
    });
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank(x, 4, "add_channel_bias");
  const auto s = x.shape();
  if (bias.value().rank() != 2 || bias.value().dim(0) != s[0] || bias.value().dim(1) != s[1])
    throw ShapeError("add_channel_bias: bias " + shape_string(bias.shape()) + " for input " + shape_string(s));
  const std::size_t nc = s[0] * s[1], hw = s[2] * s[3];
  Tensor out = x.value();
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t k = 0; k < hw; ++k) out[p * hw + k] += bias.value()[p];
  return make_op(std::move(out), {x, bias}, [nc, hw](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(*self.inputs[1], [&](Tensor& g) {
      for (std::size_t p = 0; p < nc; ++p) {
        double acc = 0.0;
        for (std::size_t k = 0; k < hw; ++k) acc += self.grad[p * hw + k];
        g[p] += acc;
      }
    });
  });
}

namespace {

// Index map shared by shuffle/unshuffle: for each element of the unshuffled layout, the
// flat index in the spatial layout.
std::vector<std::size_t> unshuffle_index(const Shape& spatial, std::size_t f) {
  const std::size_t n = spatial[0], c = spatial[1], h = spatial[2], w = spatial[3];
  const std::size_t oh = h / f, ow = w / f, oc = c * f * f;
  std::vector<std::size_t> idx(n * c * h * w);
  std::size_t k = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < oc; ++ch) {
      const std::size_t src_c = ch / (f * f), i = (ch / f) % f, j = ch % f;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) idx[k++] = ((b * c + src_c) * h + y * f + i) * w + x * f + j;
    }
  return idx;
}

Shape unshuffled_shape(const Shape& s, std::size_t f) {
  if (s.size() != 4) throw ShapeError("pixel_unshuffle: expected [N,C,H,W], got " + shape_string(s));
  if (f == 0 || s[2] % f || s[3] % f) throw ShapeError("pixel_unshuffle: spatial size " + shape_string(s) + " not divisible by " + std::to_string(f));
  return {s[0], s[1] * f * f, s[2] / f, s[3] / f};
}

Shape shuffled_shape(const Shape& s, std::size_t f) {
  if (s.size() != 4) throw ShapeError("pixel_shuffle: expected [N,C,H,W], got " + shape_string(s));
  if (f == 0 || s[1] % (f * f)) throw ShapeError("pixel_shuffle: channels " + shape_string(s) + " not divisible by " + std::to_string(f * f));
  return {s[0], s[1] / (f * f), s[2] * f, s[3] * f};
}

}  // namespace

Tensor pixel_unshuffle(const Tensor& x, std::size_t factor) {
  Tensor out(unshuffled_shape(x.shape(), factor));
  const auto idx = unshuffle_index(x.shape(), factor);
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = x[idx[k]];
  return out;
}

Tensor pixel_shuffle(const Tensor& x, std::size_t factor) {
  Tensor out(shuffled_shape(x.shape(), factor));
  const auto idx = unshuffle_index(out.shape(), factor);
  for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = x[k];
  return out;
}

Var pixel_unshuffle(const Var& x, std::size_t factor) {
  auto idx = unshuffle_index(x.shape(), factor);
  Tensor out = pixel_unshuffle(x.value(), factor);
  return make_op(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += self.grad[k];
    });
  });
}

Var pixel_shuffle(const Var& x, std::size_t factor) {
  Tensor out = pixel_shuffle(x.value(), factor);
  auto idx = unshuffle_index(out.shape(), factor);
  return make_op(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
    accumulate(*self.inputs[0], [&](Tensor& g) {
      for (std::size_t k = 0; k < idx.size(); ++k) g[k] += self.grad[idx[k]];
    });
  });
}

}  // namespace omnishape::nn
