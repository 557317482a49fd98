#include "omnishape/kernels/conv.hpp"

#include <vector>

#include <Eigen/Core>

namespace omnishape::kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void im2col(const double* x, double* cols, const ConvDims& d) {
  const long pad = static_cast<long>(d.kernel / 2);
  const long h = static_cast<long>(d.height), w = static_cast<long>(d.width);
  const std::size_t hw = d.height * d.width;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    const double* xc = x + c * hw;
    for (std::size_t ki = 0; ki < d.kernel; ++ki) {
      for (std::size_t kj = 0; kj < d.kernel; ++kj, ++row) {
        double* out = cols + row * hw;
        const long dy = static_cast<long>(ki) - pad, dx = static_cast<long>(kj) - pad;
        for (long yy = 0; yy < h; ++yy) {
          const long sy = yy + dy;
          double* orow = out + yy * w;
          if (sy < 0 || sy >= h) {
            for (long xx = 0; xx < w; ++xx) orow[xx] = 0.0;
            continue;
          }
          const double* srow = xc + sy * w;
          for (long xx = 0; xx < w; ++xx) {
            const long sx = xx + dx;
            orow[xx] = (sx >= 0 && sx < w) ? srow[sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, double* dx, const ConvDims& d) {
  const long pad = static_cast<long>(d.kernel / 2);
  const long h = static_cast<long>(d.height), w = static_cast<long>(d.width);
  const std::size_t hw = d.height * d.width;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    double* xc = dx + c * hw;
    for (std::size_t ki = 0; ki < d.kernel; ++ki) {
      for (std::size_t kj = 0; kj < d.kernel; ++kj, ++row) {
        const double* in = cols + row * hw;
        const long dy = static_cast<long>(ki) - pad, ddx = static_cast<long>(kj) - pad;
        for (long yy = 0; yy < h; ++yy) {
          const long sy = yy + dy;
          if (sy < 0 || sy >= h) continue;
          double* srow = xc + sy * w;
          const double* irow = in + yy * w;
          for (long xx = 0; xx < w; ++xx) {
            const long sx = xx + ddx;
            if (sx >= 0 && sx < w) srow[sx] += irow[xx];
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward_serial(const double* x, const double* w, const double* b, double* y, const ConvDims& d) {
  const long pad = static_cast<long>(d.kernel / 2);
  const long h = static_cast<long>(d.height), wd = static_cast<long>(d.width), k = static_cast<long>(d.kernel);
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      for (long yy = 0; yy < h; ++yy) {
        for (long xx = 0; xx < wd; ++xx) {
          double acc = b ? b[o] : 0.0;
          for (std::size_t c = 0; c < d.in_channels; ++c) {
            for (long ki = 0; ki < k; ++ki) {
              for (long kj = 0; kj < k; ++kj) {
                const long sy = yy + ki - pad, sx = xx + kj - pad;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                acc += w[((o * d.in_channels + c) * k + ki) * k + kj] * x[n * d.in_sample() + (c * h + sy) * wd + sx];
              }
            }
          }
          y[n * d.out_sample() + (o * h + yy) * wd + xx] = acc;
        }
      }
    }
  }
}

void conv2d_backward_serial(const double* x, const double* w, const double* dy, double* dx, double* dw, double* db,
                            const ConvDims& d) {
  const long pad = static_cast<long>(d.kernel / 2);
  const long h = static_cast<long>(d.height), wd = static_cast<long>(d.width), k = static_cast<long>(d.kernel);
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      for (long yy = 0; yy < h; ++yy) {
        for (long xx = 0; xx < wd; ++xx) {
          const double g = dy[n * d.out_sample() + (o * h + yy) * wd + xx];
          if (db) db[o] += g;
          for (std::size_t c = 0; c < d.in_channels; ++c) {
            for (long ki = 0; ki < k; ++ki) {
              for (long kj = 0; kj < k; ++kj) {
                const long sy = yy + ki - pad, sx = xx + kj - pad;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                const std::size_t wi = ((o * d.in_channels + c) * k + ki) * k + kj;
                const std::size_t xi = n * d.in_sample() + (c * h + sy) * wd + sx;
                if (dw) dw[wi] += g * x[xi];
                if (dx) dx[xi] += g * w[wi];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_forward(const double* x, const double* w, const double* b, double* y, const ConvDims& d) {
  const long hw = static_cast<long>(d.height * d.width);
  const long patch = static_cast<long>(d.patch());
  const long outc = static_cast<long>(d.out_channels);
  ConstMapMat wm(w, outc, patch);
#pragma omp parallel
  {
    std::vector<double> cols(static_cast<std::size_t>(patch * hw));
#pragma omp for schedule(static)
    for (long n = 0; n < static_cast<long>(d.batch); ++n) {
      im2col(x + n * d.in_sample(), cols.data(), d);
      MapMat ym(y + n * d.out_sample(), outc, hw);
      ym.noalias() = wm * ConstMapMat(cols.data(), patch, hw);
      if (b) {
        for (long o = 0; o < outc; ++o) ym.row(o).array() += b[o];
      }
    }
  }
}

void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw, double* db,
                     const ConvDims& d) {
  const long hw = static_cast<long>(d.height * d.width);
  const long patch = static_cast<long>(d.patch());
  const long outc = static_cast<long>(d.out_channels);
  const long batch = static_cast<long>(d.batch);
  ConstMapMat wm(w, outc, patch);
  // Per-sample weight gradients, summed afterwards in a fixed order.
  std::vector<double> dw_parts(dw ? static_cast<std::size_t>(batch * outc * patch) : 0);
#pragma omp parallel
  {
    std::vector<double> cols(static_cast<std::size_t>(patch * hw));
#pragma omp for schedule(static)
    for (long n = 0; n < batch; ++n) {
      ConstMapMat dym(dy + n * d.out_sample(), outc, hw);
      if (dw) {
        im2col(x + n * d.in_sample(), cols.data(), d);
        MapMat part(dw_parts.data() + n * outc * patch, outc, patch);
        part.noalias() = dym * ConstMapMat(cols.data(), patch, hw).transpose();
      }
      if (dx) {
        MapMat cm(cols.data(), patch, hw);
        cm.noalias() = wm.transpose() * dym;
        col2im(cols.data(), dx + n * d.in_sample(), d);
      }
    }
  }
  if (dw) {
    for (long n = 0; n < batch; ++n) {
      const double* part = dw_parts.data() + n * outc * patch;
      for (long i = 0; i < outc * patch; ++i) dw[i] += part[i];
    }
  }
  if (db) {
    for (long n = 0; n < batch; ++n) {
      for (long o = 0; o < outc; ++o) {
        const double* row = dy + n * d.out_sample() + o * hw;
        double s = 0.0;
        for (long i = 0; i < hw; ++i) s += row[i];
        db[o] += s;
      }
    }
  }
}

}  // namespace omnishape::kernels
