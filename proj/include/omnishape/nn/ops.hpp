#pragma once

#include "omnishape/nn/autograd.hpp"

namespace omnishape::nn {

inline constexpr double kLeakySlope = 0.01;

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var leaky_relu(const Var& x, double slope = kLeakySlope);
Var abs(const Var& x);  // subgradient 0 at 0
Var square(const Var& x);

// Reductions to a single element.
Var sum(const Var& x);
Var mean(const Var& x);
Var mse(const Var& a, const Var& b);
Var l1_mean(const Var& a, const Var& b);

// [m,k] x [k,n] -> [m,n]
Var matmul(const Var& a, const Var& b);
// [m,n] + [n] broadcast over rows.
Var add_row_bias(const Var& x, const Var& bias);

// Image ops on [N,C,H,W].
Var conv2d(const Var& x, const Var& weight, const Var& bias);
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
// [N,C,H,W] + [N,C] broadcast over space.
Var add_channel_bias(const Var& x, const Var& bias);
// Space-to-depth: [N,C,H,W] -> [N,C*f*f,H/f,W/f], channel c*f*f + i*f + j.
Var pixel_unshuffle(const Var& x, std::size_t factor);
Var pixel_shuffle(const Var& x, std::size_t factor);

// Plain-tensor versions of the layout ops, used outside any graph.
Tensor pixel_unshuffle(const Tensor& x, std::size_t factor);
Tensor pixel_shuffle(const Tensor& x, std::size_t factor);

}  // namespace omnishape::nn
