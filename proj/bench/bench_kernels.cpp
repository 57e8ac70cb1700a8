// Parallel kernels against their serial references.
//   ./bench_kernels --benchmark_filter=Attention
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "ednerf/field.hpp"
#include "ednerf/kernels.hpp"

using namespace ednerf;

namespace {

FeatureMap random_map(int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> n;
  FeatureMap m(c, h, w);
  for (float& v : m.data) v = n(rng);
  return m;
}

std::vector<float> random_vector(std::size_t size, std::uint64_t seed, float scale = 0.05f) {
  Rng rng(seed);
  std::normal_distribution<float> n(0.0f, scale);
  std::vector<float> v(size);
  for (float& x : v) x = n(rng);
  return v;
}

struct ConvCase {
  FeatureMap in, out;
  std::vector<float> w, b;
  explicit ConvCase(const benchmark::State& s)
      : in(random_map(int(s.range(0)), int(s.range(1)), int(s.range(1)), 1)),
        out(int(s.range(0)), int(s.range(1)), int(s.range(1))),
        w(random_vector(std::size_t(s.range(0)) * s.range(0) * 9, 2)),
        b(random_vector(std::size_t(s.range(0)), 3)) {}
};

template <bool Parallel>
void BM_Conv3x3(benchmark::State& state) {
  ConvCase c(state);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::conv2d_forward(c.in, c.w, c.b, 3, c.out);
    } else {
      kernels::serial::conv2d_forward(c.in, c.w, c.b, 3, c.out);
    }
    benchmark::DoNotOptimize(c.out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * c.out.data.size() * state.range(0) * 9);
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const int ch = int(state.range(0)), side = int(state.range(1));
  const FeatureMap q = random_map(ch, side, side, 4), k = random_map(ch, side, side, 5), v = random_map(ch, side, side, 6);
  std::vector<float> probs;
  FeatureMap out;
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::attention_forward(q, k, v, 1.0f / std::sqrt(float(ch)), probs, out);
    } else {
      kernels::serial::attention_forward(q, k, v, 1.0f / std::sqrt(float(ch)), probs, out);
    }
    benchmark::DoNotOptimize(out.data.data());
  }
}

template <bool Parallel>
void BM_RenderView(benchmark::State& state) {
  FieldConfig c;
  c.grid_resolution = 64;
  const LatentRadianceField field(c, 1);
  RenderOptions o;
  o.size = {int(state.range(0)), int(state.range(0))};
  o.sampler = {int(state.range(1)), false};
  const CameraPose pose = look_at(Vec3(0, 0, -3), Vec3::Zero(), Vec3(0, -1, 0), 1.2 * o.size.width, o.size, 1.0, 5.0);
  for (auto _ : state) {
    RenderedView v = Parallel ? render_view(field, pose, o) : serial::render_view(field, pose, o);
    benchmark::DoNotOptimize(v.latent.values().data());
  }
  state.SetItemsProcessed(state.iterations() * o.size.pixels());
}

}  // namespace

BENCHMARK(BM_Conv3x3<true>)->Name("Conv3x3/parallel")->Args({64, 32})->Args({128, 64});
BENCHMARK(BM_Conv3x3<false>)->Name("Conv3x3/serial")->Args({64, 32})->Args({128, 64});
BENCHMARK(BM_Attention<true>)->Name("Attention/parallel")->Args({64, 32})->Args({128, 64});
BENCHMARK(BM_Attention<false>)->Name("Attention/serial")->Args({64, 32})->Args({128, 64});
BENCHMARK(BM_RenderView<true>)->Name("RenderView/parallel")->Args({32, 64})->Args({64, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RenderView<false>)->Name("RenderView/serial")->Args({32, 64})->Args({64, 128})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
