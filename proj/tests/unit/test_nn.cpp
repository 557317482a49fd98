#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "omnishape/core/error.hpp"
#include "omnishape/core/rng.hpp"
#include "omnishape/nn/adam.hpp"
#include "omnishape/nn/mlp.hpp"
#include "omnishape/nn/ops.hpp"
#include "omnishape/nn/training_state.hpp"

using namespace omnishape;
using namespace omnishape::nn;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

// Hand-rolled matrix-vector chain; shares nothing with Mlp's implementation.
std::vector<double> reference_mlp(const Mlp& net, const std::vector<double>& x) {
  std::vector<double> cur = x;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& w = net.weight(l).value();
    const auto& b = net.bias(l).value();
    const std::size_t in = w.dim(0), out = w.dim(1);
    std::vector<double> nxt(out);
    for (std::size_t j = 0; j < out; ++j) {
      long double acc = b[j];
      for (std::size_t i = 0; i < in; ++i) acc += static_cast<long double>(w[i * out + j]) * cur[i];
      double v = static_cast<double>(acc);
      if (l + 1 < net.layer_count() && v < 0) v *= 0.01;
      nxt[j] = v;
    }
    cur = nxt;
  }
  return cur;
}

}  // namespace

TEST_CASE("mlp_forward: zero weights give the bias") {
  Mlp net({3, 2}, {Tensor({3, 2}, 0.0)}, {Tensor({2}, std::vector<double>{0.25, -1.5})});
  const auto y = net.forward(std::vector<double>{1.0, -2.0, 3.0});
  CHECK(y[0] == 0.25);
  CHECK(y[1] == -1.5);
}

TEST_CASE("mlp_forward: single affine layer has no activation") {
  Mlp net({1, 1}, {Tensor({1, 1}, 2.0)}, {Tensor({1}, 1.0)});
  CHECK(net.forward(std::vector<double>{3.0})[0] == 7.0);
  CHECK(net.forward(std::vector<double>{-3.0})[0] == -5.0);
}

TEST_CASE("mlp_forward: matches matrix-multiply oracle") {
  Rng rng(11);
  Mlp net({5, 7, 3}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(5);
    for (auto& v : x) v = rng.normal();
    const auto y = net.forward(x);
    const auto ref = reference_mlp(net, x);
    for (std::size_t j = 0; j < y.size(); ++j) CHECK(std::fabs(y[j] - ref[j]) <= 1e-12 * std::max(1.0, std::fabs(ref[j])));
    // batch and differentiable paths agree with the single-vector path
    const Tensor xb({1, 5}, x);
    const auto yb = net.forward_batch(xb);
    const auto yv = net.forward(constant(xb));
    for (std::size_t j = 0; j < y.size(); ++j) {
      CHECK(yb[j] == doctest::Approx(y[j]).epsilon(1e-13));
      CHECK(yv.value()[j] == doctest::Approx(y[j]).epsilon(1e-13));
    }
  }
}

TEST_CASE("mlp_forward: dimension mismatch") {
  Rng rng(1);
  Mlp net({4, 2}, rng);
  CHECK_THROWS_AS(net.forward(std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("grad: x^2 at 3") {
  Var x = parameter(Tensor::scalar(3.0));
  backward(square(x));
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("grad: leaky rectifier slope below zero") {
  Var x = parameter(Tensor::scalar(-1.0));
  backward(leaky_relu(x, 0.01));
  CHECK(x.grad()[0] == doctest::Approx(0.01));
}

TEST_CASE("grad: non-scalar loss is a usage error") {
  Var x = parameter(Tensor({2}, 1.0));
  CHECK_THROWS_AS(backward(square(x)), UsageError);
}

TEST_CASE("grad: random MLP with L1 loss vs central differences") {
  Rng rng(5);
  Mlp net({6, 16, 16, 1}, rng);
  Var x = constant(random_tensor({12, 6}, rng));
  Var target = constant(random_tensor({12, 1}, rng, 3.0));
  auto r = gradcheck::check(net.parameters(), [&] { return l1_mean(net.forward(x), target); });
  CHECK(r.checked > 100);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("grad: every differentiable op passes a finite-difference check") {
  Rng rng(9);
  Var a = parameter(random_tensor({2, 3, 4, 4}, rng));
  Var b = parameter(random_tensor({2, 3, 4, 4}, rng));
  Var w = parameter(random_tensor({5, 3, 3, 3}, rng, 0.3));
  Var bias = parameter(random_tensor({5}, rng));
  Var cb = parameter(random_tensor({2, 5}, rng));
  Var m1 = parameter(random_tensor({4, 3}, rng));
  Var m2 = parameter(random_tensor({3, 2}, rng));
  Var rb = parameter(random_tensor({2}, rng));
  Var tgt = constant(random_tensor({2, 5, 4, 4}, rng));

  SUBCASE("elementwise") {
    auto r = gradcheck::check({a, b}, [&] {
      return sum(add(mul(a, b), scale(sub(abs(a), leaky_relu(b)), 0.7)));
    });
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("mse and l1") {
    auto r = gradcheck::check({a, b}, [&] { return add(mse(a, b), l1_mean(square(a), b)); });
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("matmul and row bias") {
    auto r = gradcheck::check({m1, m2, rb}, [&] { return sum(square(add_row_bias(matmul(m1, m2), rb))); });
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("conv2d with channel bias") {
    auto r = gradcheck::check({a, w, bias, cb}, [&] { return mse(add_channel_bias(conv2d(a, w, bias), cb), tgt); });
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("pool, upsample, concat, shuffles") {
    auto r = gradcheck::check({a, b}, [&] {
      Var p = upsample2(avg_pool2(a));
      Var c = concat_channels(p, b);
      Var u = pixel_shuffle(pixel_unshuffle(c, 2), 2);
      return sum(square(mul(u, concat_channels(b, a))));
    });
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("pixel shuffle layout") {
  Tensor x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  const Tensor u = pixel_unshuffle(x, 2);
  CHECK(u.shape() == Shape{1, 4, 2, 2});
  // channel i*2+j holds element (2y+i, 2x+j)
  CHECK(u[0] == 0.0);       // c0 (0,0)
  CHECK(u[1] == 2.0);       // c0 (0,1) -> src (0,2)
  CHECK(u[4] == 1.0);       // c1 (0,0) -> src (0,1)
  CHECK(u[8] == 4.0);       // c2 (0,0) -> src (1,0)
  CHECK(u[12 + 3] == 15.0); // c3 (1,1) -> src (3,3)
  const Tensor back = pixel_shuffle(u, 2);
  CHECK(back.vec() == x.vec());
  CHECK_THROWS_AS(pixel_unshuffle(Tensor({1, 1, 3, 4}), 2), ShapeError);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg{0.01, 500, 2000, 8, 0};
  CHECK(learning_rate(cfg, 500) == 0.01);
  CHECK(learning_rate(cfg, 2000) == 0.0);
  CHECK(learning_rate(cfg, 250) == doctest::Approx(0.005));
  double prev = learning_rate(cfg, 0);
  for (long s = 1; s <= 2000; ++s) {
    const double lr = learning_rate(cfg, s);
    CHECK(lr >= 0.0);
    CHECK(std::fabs(lr - prev) <= 0.01 / 400.0 + 1e-15);
    prev = lr;
  }
  CHECK_THROWS_AS((TrainConfig{0.01, 3000, 2000, 8, 0}.validate()), UsageError);
  CHECK_THROWS_AS((TrainConfig{0.0, 10, 2000, 8, 0}.validate()), UsageError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  TrainConfig cfg{0.1, 2, 10, 1, 0};
  Tensor p({3}, std::vector<double>{1.0, -2.0, 3.0});
  const Tensor before = p;
  Tensor g({3}, 0.0);
  AdamState st;
  for (long s = 1; s <= 5; ++s) adam_step({&p}, {&g}, st, s, cfg);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::fabs(p[i] - before[i]) < 1e-12);
}

TEST_CASE("adam: first step moves each coordinate by lr against the gradient sign") {
  TrainConfig cfg{0.1, 1, 10, 1, 0};
  Tensor p({2}, std::vector<double>{0.0, 0.0});
  Tensor g({2}, std::vector<double>{2.0, -0.5});
  AdamState st;
  adam_step({&p}, {&g}, st, 1, cfg);
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("training is deterministic and resumable") {
  auto run = [](int steps, const std::filesystem::path* save_at, const std::filesystem::path* resume_from) {
    Rng init(3);
    Mlp net({2, 8, 1}, init);
    Adam opt(net.parameters(), TrainConfig{1e-2, 2, 20, 4, 0});
    Rng data(42);
    auto params = net.parameters();
    if (resume_from) {
      auto st = TrainingState::load(*resume_from);
      restore_params(st, params);
      opt.state() = st.adam;
      data.set_state(st.rng_state);
    }
    std::vector<double> losses;
    for (int s = 0; s < steps; ++s) {
      Tensor x({4, 2}), y({4, 1});
      for (std::size_t i = 0; i < 4; ++i) {
        x[2 * i] = data.normal();
        x[2 * i + 1] = data.normal();
        y[i] = x[2 * i] * x[2 * i + 1];
      }
      Var loss = mse(net.forward(constant(x)), constant(y));
      losses.push_back(loss.value()[0]);
      backward(loss);
      opt.step();
      if (save_at && s == 4) capture_state(params, opt.state(), data.state()).save(*save_at);
    }
    return losses;
  };
  const auto path = std::filesystem::temp_directory_path() / "omnishape_trs_test.bin";
  const auto a = run(10, &path, nullptr);
  const auto b = run(10, nullptr, nullptr);
  CHECK(a == b);
  const auto resumed = run(5, nullptr, &path);
  for (int i = 0; i < 5; ++i) CHECK(resumed[i] == a[5 + i]);
  std::filesystem::remove(path);
}

TEST_CASE("NNC1 checkpoint round trip rounds to float32") {
  Rng rng(8);
  Mlp net({3, 4, 2}, rng);
  const auto path = std::filesystem::temp_directory_path() / "omnishape_nnc1_test.bin";
  net.save(path);
  const Mlp back = Mlp::load(path);
  CHECK(back.widths() == net.widths());
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    for (std::size_t i = 0; i < net.weight(l).value().size(); ++i)
      CHECK(back.weight(l).value()[i] == static_cast<double>(static_cast<float>(net.weight(l).value()[i])));
  std::filesystem::remove(path);
}
