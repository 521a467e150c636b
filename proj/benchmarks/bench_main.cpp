#include <benchmark/benchmark.h>

#include <random>

#include "sfield/geometry.hpp"
#include "sfield/grid.hpp"

namespace {

using namespace sfield;

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PointCloud cloud(n);
    for (Point3& p : cloud) p = {u(rng), u(rng), u(rng)};
    return cloud;
}

void BM_KnnL1(benchmark::State& state) {
    const auto cloud = random_cloud(static_cast<std::size_t>(state.range(0)), 7);
    std::size_t q = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(knn_l1(cloud, cloud[q % cloud.size()], 64));
        ++q;
    }
}
BENCHMARK(BM_KnnL1)->Arg(512)->Arg(2048)->Arg(8192);

void BM_SampleTrilinear(benchmark::State& state) {
    const FieldGrid grid = init_grid(16, 32, InitScheme::uniform, 0.1, 3);
    const auto pts = random_cloud(1024, 11);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(sample_trilinear(grid, pts[i % pts.size()]));
        ++i;
    }
}
BENCHMARK(BM_SampleTrilinear);

void BM_EmbedCloud(benchmark::State& state) {
    const FieldGrid grid = init_grid(16, 32, InitScheme::uniform, 0.1, 3);
    const auto cloud = random_cloud(static_cast<std::size_t>(state.range(0)), 13);
    for (auto _ : state) benchmark::DoNotOptimize(embed_cloud(grid, cloud, 0));
}
BENCHMARK(BM_EmbedCloud)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_ChamferDistance(benchmark::State& state) {
    const auto a = random_cloud(static_cast<std::size_t>(state.range(0)), 17);
    const auto b = random_cloud(static_cast<std::size_t>(state.range(0)), 19);
    for (auto _ : state) benchmark::DoNotOptimize(chamfer_distance(a, b));
}
BENCHMARK(BM_ChamferDistance)->Arg(256)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
