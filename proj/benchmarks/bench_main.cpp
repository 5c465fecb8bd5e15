#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include <geogcn/bilateral_filter.hpp>
#include <geogcn/dataset.hpp>
#include <geogcn/kd_tree.hpp>
#include <geogcn/losses.hpp>
#include <geogcn/network.hpp>
#include <geogcn/pipeline.hpp>
#include <geogcn/runtime.hpp>

using namespace geogcn;

namespace {

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  return pts;
}

PointCloud sphere(std::size_t n) {
  ShapeSpec spec;
  spec.kind = ShapeKind::sphere;
  spec.n_points = n;
  spec.rng_seed = 7;
  return generate_shape(spec);
}

}  // namespace

static void bm_kdtree_build(benchmark::State& state) {
  const auto pts = random_points(state.range(0), 1);
  for (auto _ : state) {
    KdTree tree(pts);
    benchmark::DoNotOptimize(tree);
  }
}
BENCHMARK(bm_kdtree_build)->Arg(128)->Arg(5000);

static void bm_knn_graph(benchmark::State& state) {
  const auto pts = random_points(state.range(0), 2);
  for (auto _ : state) benchmark::DoNotOptimize(build_knn_graph(pts, 16));
}
BENCHMARK(bm_knn_graph)->Arg(128)->Arg(5000);

static void bm_hungarian(benchmark::State& state) {
  const auto p = random_points(state.range(0), 3);
  const auto q = random_points(state.range(0), 4);
  for (auto _ : state) benchmark::DoNotOptimize(emd_assignment(p, q));
}
BENCHMARK(bm_hungarian)->Arg(32)->Arg(128)->Arg(512);

static void bm_pca_normals(benchmark::State& state) {
  const auto pts = random_points(128, 5);
  for (auto _ : state) benchmark::DoNotOptimize(initial_normals(pts, 16));
}
BENCHMARK(bm_pca_normals);

static void bm_sgcn_forward(benchmark::State& state) {
  const auto params = NetworkParams::initialize(Architecture{}, 1);
  const auto pts = random_points(128, 6);
  const auto edges = EdgeList::from_graph(build_knn_graph(pts, state.range(0)));
  const auto x = ad::DiffArray::from_rows(pts);
  for (auto _ : state) {
    ad::NoGradGuard no_grad;
    benchmark::DoNotOptimize(forward_sgcn(params, x, edges));
  }
}
BENCHMARK(bm_sgcn_forward)->Arg(8)->Arg(16);

static void bm_sgcn_forward_backward(benchmark::State& state) {
  const auto params = NetworkParams::initialize(Architecture{}, 1);
  const auto pts = random_points(128, 6);
  const auto edges = EdgeList::from_graph(build_knn_graph(pts, state.range(0)));
  const auto x = ad::DiffArray::from_rows(pts);
  for (auto _ : state) {
    ad::backward(ad::sum(forward_sgcn(params, x, edges)));
    params.zero_grad();
  }
}
BENCHMARK(bm_sgcn_forward_backward)->Arg(8)->Arg(16);

static void bm_patch_loss(benchmark::State& state) {
  PipelineConfig cfg;
  const auto params = NetworkParams::initialize(cfg.arch, 1);
  const auto clean = sphere(5000);
  const auto noisy = corrupt(clean, 0.005, 3).noisy;
  const KdTree tree(noisy.positions());
  const auto patch = make_training_patch(noisy, tree, clean, 17, cfg, 9);
  for (auto _ : state) {
    const auto loss = patch_loss(params, patch, cfg, cfg.weights, {true, true});
    ad::backward(loss.total);
    params.zero_grad();
  }
}
BENCHMARK(bm_patch_loss)->Unit(benchmark::kMillisecond);

static void bm_make_training_patch(benchmark::State& state) {
  PipelineConfig cfg;
  const auto clean = sphere(5000);
  const auto noisy = corrupt(clean, 0.005, 3).noisy;
  const KdTree tree(noisy.positions());
  Index seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(make_training_patch(noisy, tree, clean, seed, cfg, seed));
    seed = (seed + 97) % clean.size();
  }
}
BENCHMARK(bm_make_training_patch)->Unit(benchmark::kMicrosecond);

static void bm_filter_step(benchmark::State& state) {
  const auto cloud = sphere(5000);
  const auto graph = build_knn_graph(cloud, 16);
  const FilterConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(filter_step(cloud.positions(), cloud.normals(), graph, cfg));
}
BENCHMARK(bm_filter_step)->Unit(benchmark::kMillisecond);
int main(int argc, char** argv) {
  geogcn::configure_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
