#include <benchmark/benchmark.h>

#include "ctof/forward_ops.hpp"
#include "ctof/mc_transport.hpp"
#include "ctof/parallel.hpp"
#include "ctof/reference.hpp"
#include "ctof/rng.hpp"

using namespace ctof;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

DenseOperator make_dense(std::size_t side) {
  const auto scan = ScanConfig::confocal_grid(side, side, 1.0, {32, 50.0, 0.0});
  const auto grid = VoxelGrid::centered(side, side, 1.0, 1.5, 2, 1.0);
  DenseOperator op(MeasurementLayout::from_scan(scan), grid);
  op.matrix() = random_vector(op.rows() * op.cols(), 1);
  return op;
}

KernelStack make_kernels(std::size_t radius) {
  KernelStack k(radius, {1.5, 2.5}, 1.0, 1.0, {32, 50.0, 0.0});
  for (auto& d : k.kernels) d = random_vector(d.size(), 2);
  return k;
}

void BM_DenseApplySerial(benchmark::State& st) {
  const auto op = make_dense(static_cast<std::size_t>(st.range(0)));
  const auto x = random_vector(op.cols(), 3);
  std::vector<double> y(op.rows());
  for (auto _ : st) {
    reference::dense_apply(op, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_DenseApplyParallel(benchmark::State& st) {
  set_thread_count(0);
  const auto op = make_dense(static_cast<std::size_t>(st.range(0)));
  const auto x = random_vector(op.cols(), 3);
  std::vector<double> y(op.rows());
  for (auto _ : st) {
    op.apply(x, y);
    benchmark::DoNotOptimize(y.data());
  }
  st.counters["threads"] = thread_count();
}

void BM_DenseAdjointSerial(benchmark::State& st) {
  const auto op = make_dense(static_cast<std::size_t>(st.range(0)));
  const auto y = random_vector(op.rows(), 4);
  std::vector<double> x(op.cols());
  for (auto _ : st) {
    reference::dense_adjoint(op, y, x);
    benchmark::DoNotOptimize(x.data());
  }
}

void BM_DenseAdjointParallel(benchmark::State& st) {
  set_thread_count(0);
  const auto op = make_dense(static_cast<std::size_t>(st.range(0)));
  const auto y = random_vector(op.rows(), 4);
  std::vector<double> x(op.cols());
  for (auto _ : st) {
    op.apply_adjoint(y, x);
    benchmark::DoNotOptimize(x.data());
  }
  st.counters["threads"] = thread_count();
}

void BM_ConvDirectSerial(benchmark::State& st) {
  const auto k = make_kernels(6);
  const std::size_t n = static_cast<std::size_t>(st.range(0));
  const auto grid = VoxelGrid::centered(n, n, 1.0, 1.5, 2, 1.0);
  const auto x = random_vector(grid.size(), 5);
  std::vector<double> y(n * n * 32);
  for (auto _ : st) {
    reference::conv_apply(k, grid, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_ConvFftParallel(benchmark::State& st) {
  set_thread_count(0);
  const auto k = make_kernels(6);
  const std::size_t n = static_cast<std::size_t>(st.range(0));
  const auto grid = VoxelGrid::centered(n, n, 1.0, 1.5, 2, 1.0);
  const ConvOperator op(k, grid);
  const auto x = random_vector(grid.size(), 5);
  std::vector<double> y(op.rows());
  for (auto _ : st) {
    op.apply(x, y);
    benchmark::DoNotOptimize(y.data());
  }
  st.counters["threads"] = thread_count();
}

void BM_McPhotons(benchmark::State& st) {
  set_thread_count(static_cast<int>(st.range(0)));
  SlabMedium m;
  mc::McSettings s;
  s.n_photons = 20000;
  const auto scan = ScanConfig::confocal_grid(1, 1, 1.0, {32, 50.0, 0.0});
  for (auto _ : st) {
    auto r = mc::simulate_transients(m, scan, s, 1.0);
    benchmark::DoNotOptimize(r.transients.values.data());
  }
  st.counters["threads"] = thread_count();
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.n_photons));
  set_thread_count(0);
}

}  // namespace

BENCHMARK(BM_DenseApplySerial)->Arg(8)->Arg(16);
BENCHMARK(BM_DenseApplyParallel)->Arg(8)->Arg(16);
BENCHMARK(BM_DenseAdjointSerial)->Arg(8)->Arg(16);
BENCHMARK(BM_DenseAdjointParallel)->Arg(8)->Arg(16);
BENCHMARK(BM_ConvDirectSerial)->Arg(32)->Arg(64);
BENCHMARK(BM_ConvFftParallel)->Arg(32)->Arg(64);
BENCHMARK(BM_McPhotons)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
