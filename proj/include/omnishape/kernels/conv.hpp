#pragma once

#include <cstddef>

namespace omnishape::kernels {

// NCHW input, OIkk weights, stride 1, zero "same" padding (k odd).
struct ConvDims {
  std::size_t batch, in_channels, height, width, out_channels, kernel;
  std::size_t in_sample() const { return in_channels * height * width; }
  std::size_t out_sample() const { return out_channels * height * width; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
};

// Straight seven-loop convolution; the reference the fast path is tested against.
void conv2d_forward_serial(const double* x, const double* w, const double* b, double* y, const ConvDims& d);
void conv2d_backward_serial(const double* x, const double* w, const double* dy, double* dx, double* dw, double* db,
                            const ConvDims& d);

// im2col + GEMM, samples distributed over OpenMP threads. Weight/bias gradients are
// reduced in sample order so results do not depend on the thread count.
void conv2d_forward(const double* x, const double* w, const double* b, double* y, const ConvDims& d);
void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw, double* db,
                     const ConvDims& d);

}  // namespace omnishape::kernels
