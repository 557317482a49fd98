#include <doctest.h>

#include <vector>

#include "omnishape/core/rng.hpp"
#include "omnishape/kernels/conv.hpp"

using namespace omnishape;

TEST_CASE("conv2d: im2col/GEMM path equals the serial reference") {
  Rng rng(2);
  const kernels::ConvDims d{3, 4, 6, 5, 7, 3};
  std::vector<double> x(d.batch * d.in_sample()), w(d.out_channels * d.patch()), b(d.out_channels), dy(d.batch * d.out_sample());
  for (auto* v : {&x, &w, &b, &dy})
    for (auto& e : *v) e = rng.normal();
  std::vector<double> y_ref(dy.size()), y_fast(dy.size());
  kernels::conv2d_forward_serial(x.data(), w.data(), b.data(), y_ref.data(), d);
  kernels::conv2d_forward(x.data(), w.data(), b.data(), y_fast.data(), d);
  for (std::size_t i = 0; i < y_ref.size(); ++i) CHECK(y_fast[i] == doctest::Approx(y_ref[i]).epsilon(1e-12));

  std::vector<double> dx_ref(x.size()), dw_ref(w.size()), db_ref(b.size());
  std::vector<double> dx_fast(x.size()), dw_fast(w.size()), db_fast(b.size());
  kernels::conv2d_backward_serial(x.data(), w.data(), dy.data(), dx_ref.data(), dw_ref.data(), db_ref.data(), d);
  kernels::conv2d_backward(x.data(), w.data(), dy.data(), dx_fast.data(), dw_fast.data(), db_fast.data(), d);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(dx_fast[i] == doctest::Approx(dx_ref[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(dw_fast[i] == doctest::Approx(dw_ref[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(db_fast[i] == doctest::Approx(db_ref[i]).epsilon(1e-12));
}
