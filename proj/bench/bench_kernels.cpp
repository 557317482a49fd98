// Serial reference vs OpenMP form of each parallel kernel.
#include <benchmark/benchmark.h>

#include "omnishape/geometry/render.hpp"
#include "omnishape/geometry/shape.hpp"
#include "omnishape/kernels/conv.hpp"
#include "omnishape/metrics/metrics.hpp"
#include "omnishape/registration/registration.hpp"
#include "omnishape/triplane/field.hpp"

using namespace omnishape;

namespace {

geometry::Shape bench_cup() { return geometry::normalize_to_unit_cube(geometry::make_cup({})); }

void render(benchmark::State& st, bool parallel) {
  const auto shape = bench_cup();
  const auto cam = geometry::orbit_camera(Vec3::Zero(), 2.4, 0.3, 0.4, 96.0, static_cast<int>(st.range(0)));
  for (auto _ : st) {
    auto m = parallel ? geometry::render_norf(shape, cam) : geometry::render_norf_serial(shape, cam);
    benchmark::DoNotOptimize(m.coords.data());
  }
}
void BM_RenderSerial(benchmark::State& st) { render(st, false); }
void BM_RenderOmp(benchmark::State& st) { render(st, true); }
BENCHMARK(BM_RenderSerial)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RenderOmp)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void conv(benchmark::State& st, bool parallel) {
  const kernels::ConvDims d{16, 32, 32, 32, 32, 3};
  Rng rng(1);
  std::vector<double> x(d.batch * d.in_sample()), w(d.out_channels * d.patch()), b(d.out_channels), y(d.batch * d.out_sample());
  for (auto& v : x) v = rng.normal();
  for (auto& v : w) v = 0.1 * rng.normal();
  for (auto _ : st) {
    if (parallel)
      kernels::conv2d_forward(x.data(), w.data(), b.data(), y.data(), d);
    else
      kernels::conv2d_forward_serial(x.data(), w.data(), b.data(), y.data(), d);
    benchmark::DoNotOptimize(y.data());
  }
}
void BM_ConvSerial(benchmark::State& st) { conv(st, false); }
void BM_ConvOmp(benchmark::State& st) { conv(st, true); }
BENCHMARK(BM_ConvSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvOmp)->Unit(benchmark::kMillisecond);

void decode(benchmark::State& st, bool parallel) {
  Rng rng(2);
  nn::Mlp dec({12, 64, 64, 1}, rng);
  triplane::Triplane z(3, 4);
  for (auto& p : z.planes)
    for (auto& v : p) v = 0.1 * rng.normal();
  std::vector<Vec3> pts(static_cast<std::size_t>(st.range(0)));
  for (auto& p : pts) p = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
  for (auto _ : st) {
    auto v = parallel ? triplane::decode_sdf_batch(dec, z, pts) : triplane::decode_sdf_batch_serial(dec, z, pts);
    benchmark::DoNotOptimize(v.data());
  }
}
void BM_DecodeSerial(benchmark::State& st) { decode(st, false); }
void BM_DecodeOmp(benchmark::State& st) { decode(st, true); }
BENCHMARK(BM_DecodeSerial)->Arg(16384)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DecodeOmp)->Arg(16384)->Unit(benchmark::kMillisecond);

void ransac(benchmark::State& st, bool parallel) {
  Rng rng(3);
  registration::Correspondences c;
  Sim3 t;
  t.rotation = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  t.translation = Vec3(0.3, -0.1, 2.0);
  t.scale = 0.8;
  for (int i = 0; i < 800; ++i) {
    const Vec3 p(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    c.norf.push_back(p);
    c.scene.push_back(i % 3 == 0 ? Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3)) : t.apply(p));
  }
  registration::RansacConfig cfg{0.01, 512, 5, 10};
  for (auto _ : st) {
    auto r = parallel ? registration::ransac_register(c, cfg) : registration::ransac_register_serial(c, cfg);
    benchmark::DoNotOptimize(r.inlier_count);
  }
}
void BM_RansacSerial(benchmark::State& st) { ransac(st, false); }
void BM_RansacOmp(benchmark::State& st) { ransac(st, true); }
BENCHMARK(BM_RansacSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RansacOmp)->Unit(benchmark::kMillisecond);

void nearest(benchmark::State& st, bool parallel) {
  Rng rng(4);
  const auto shape = bench_cup();
  const auto a = geometry::sample_surface(shape, static_cast<std::size_t>(st.range(0)), rng);
  const auto b = geometry::sample_surface(shape, static_cast<std::size_t>(st.range(0)), rng);
  for (auto _ : st) {
    auto d = parallel ? metrics::nearest_distances(a, b) : metrics::nearest_distances_serial(a, b);
    benchmark::DoNotOptimize(d.data());
  }
}
void BM_NearestSerial(benchmark::State& st) { nearest(st, false); }
void BM_NearestGridOmp(benchmark::State& st) { nearest(st, true); }
BENCHMARK(BM_NearestSerial)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NearestGridOmp)->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
