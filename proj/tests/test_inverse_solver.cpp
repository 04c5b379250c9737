#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "ctof/forward_ops.hpp"
#include "ctof/inverse_solver.hpp"
#include "ctof/rng.hpp"

using namespace ctof;

namespace {

DenseOperator gaussian_dense(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  auto scan = ScanConfig::confocal_grid(rows, 1, 1.0, {1, 50.0, 0.0});
  DenseOperator op(MeasurementLayout::from_scan(scan), VoxelGrid::centered(cols, 1, 1.0, 1.0, 1, 1.0));
  RngStream rng(seed, 0);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  for (auto& v : op.matrix()) v = n(rng);
  return op;
}

Eigen::MatrixXd to_eigen(const DenseOperator& op) {
  Eigen::MatrixXd A(op.rows(), op.cols());
  for (std::size_t r = 0; r < op.rows(); ++r)
    for (std::size_t c = 0; c < op.cols(); ++c) A(r, c) = op.at(r, c);
  return A;
}

}  // namespace

TEST_SUITE("inverse_solver") {
  TEST_CASE("soft threshold closed forms") {
    CHECK(soft_threshold(3.0, 1.0) == 2.0);
    CHECK(soft_threshold(-0.5, 1.0) == 0.0);
    CHECK(soft_threshold(-3.0, 1.0) == -2.0);
    CHECK(soft_threshold(-3.0, 1.0, true) == 0.0);
    CHECK(soft_threshold(0.7, 0.0) == 0.7);
    std::vector<double> v{1.0, -2.0, 0.25};
    const std::vector<double> th{0.5, 0.5, 0.5};
    soft_threshold(v, th);
    CHECK(v == std::vector<double>{0.5, -1.5, 0.0});
  }

  TEST_CASE("power iteration") {
    CHECK(power_iteration(IdentityOperator(10)) == doctest::Approx(1.0).epsilon(1e-9));
    auto scan = ScanConfig::confocal_grid(3, 1, 1.0, {1, 50.0, 0.0});
    DenseOperator diag(MeasurementLayout::from_scan(scan), VoxelGrid::centered(3, 1, 1.0, 1.0, 1, 1.0),
                       {1, 0, 0, 0, 2, 0, 0, 0, 3});
    CHECK(power_iteration(diag) == doctest::Approx(9.0).epsilon(1e-6));
    const auto A = gaussian_dense(50, 30, 1);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(A));
    const double s = svd.singularValues()(0);
    CHECK(power_iteration(A) == doctest::Approx(s * s).epsilon(0.01));
  }

  TEST_CASE("identity operator recovers the data") {
    const auto grid = VoxelGrid::centered(5, 4, 1.0, 1.0, 1, 1.0);
    const IdentityOperator I(20);
    std::vector<double> m(20);
    RngStream rng(2, 0);
    for (auto& v : m) v = 4.0 * rng.uniform() - 2.0;
    SolveParams p;
    p.lambda_per_depth = {0.0};
    p.tolerance = 1e-12;
    auto [x0, r0] = fista(I, m, grid, p);
    for (std::size_t i = 0; i < 20; ++i) CHECK(std::abs(x0.values[i] - m[i]) < 1e-8);
    p.lambda_per_depth = {0.6};
    auto [xa, ra] = fista(I, m, grid, p);
    for (std::size_t i = 0; i < 20; ++i) CHECK(xa.values[i] == doctest::Approx(soft_threshold(m[i], 0.6)).epsilon(1e-12));
    // with the exact step 1/L = 1 a single proximal step lands on the closed form
    p.step_size = 1.0;
    auto [x1, r1] = fista(I, m, grid, p);
    for (std::size_t i = 0; i < 20; ++i) CHECK(x1.values[i] == soft_threshold(m[i], 0.6));
    p.nonneg = true;
    auto [x2, r2] = fista(I, m, grid, p);
    for (std::size_t i = 0; i < 20; ++i) CHECK(x2.values[i] == std::max(m[i] - 0.6, 0.0));
  }

  TEST_CASE("sparse recovery") {
    const auto A = gaussian_dense(200, 100, 3);
    std::vector<double> truth(100, 0.0);
    RngStream rng(4, 0);
    std::vector<std::size_t> support;
    while (support.size() < 10) {
      const std::size_t i = rng() % 100;
      if (truth[i] != 0.0) continue;
      truth[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (1.0 + rng.uniform());
      support.push_back(i);
    }
    std::vector<double> m(200);
    A.apply(truth, m);
    SolveParams p;
    p.lambda_per_depth = {1e-5};
    p.max_iters = 3000;
    p.tolerance = 0.0;
    auto [x, rep] = fista(A, m, A.grid(), p);
    double err = 0.0, norm = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
      err += (x.values[i] - truth[i]) * (x.values[i] - truth[i]);
      norm += truth[i] * truth[i];
      peak = std::max(peak, std::abs(x.values[i]));
    }
    CHECK(std::sqrt(err / norm) < 1e-3);
    for (std::size_t i = 0; i < 100; ++i) CHECK((std::abs(x.values[i]) > 1e-6 * peak) == (truth[i] != 0.0));
  }

  TEST_CASE("objective stays under the FISTA envelope") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto A = gaussian_dense(40, 60, 100 + seed);
      std::vector<double> m(40);
      RngStream rng(seed, 7);
      for (auto& v : m) v = rng.uniform() - 0.5;
      SolveParams p;
      p.lambda_per_depth = {0.01};
      p.tolerance = 0.0;
      p.max_iters = 6000;
      auto [xs, long_run] = fista(A, m, A.grid(), p);
      double best = long_run.objective_trace.back();
      for (double f : long_run.objective_trace) best = std::min(best, f);
      double xs2 = 0.0;
      for (double v : xs.values) xs2 += v * v;
      p.max_iters = 200;
      auto [x, rep] = fista(A, m, A.grid(), p);
      for (std::size_t k = 0; k < rep.objective_trace.size(); ++k) {
        const double bound = 2.0 * rep.lipschitz * xs2 / ((k + 2.0) * (k + 2.0));
        REQUIRE(rep.objective_trace[k] - best <= bound * (1.0 + 1e-9) + 1e-12);
      }
    }
  }

  TEST_CASE("per-layer lambda can silence a layer") {
    const auto grid = VoxelGrid::centered(2, 2, 1.0, 1.0, 2, 1.0);
    const IdentityOperator I(8);
    const std::vector<double> m{1, 2, 3, 4, 5, 6, 7, 8};
    SolveParams p;
    p.lambda_per_depth = {0.0, 1e12};
    auto [x, r] = fista(I, m, grid, p);
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.values[i] == doctest::Approx(m[i]));
    for (std::size_t i = 4; i < 8; ++i) CHECK(x.values[i] == 0.0);
    p.lambda_per_depth = {0.0, 1.0, 2.0};
    CHECK_THROWS_AS(fista(I, m, grid, p), Error);
  }

  TEST_CASE("stopping and report") {
    const auto A = gaussian_dense(30, 20, 9);
    std::vector<double> m(30, 1.0);
    SolveParams p;
    p.max_iters = 1;
    auto [x, r] = fista(A, m, A.grid(), p);
    CHECK(r.iterations_run == 1);
    CHECK(r.objective_trace.size() == 1);
    CHECK(r.step_size == doctest::Approx(1.0 / r.lipschitz));
    const auto j = r.to_json();
    CHECK(j.at("iterations_run") == 1);
    p.max_iters = 5000;
    p.tolerance = 1e-10;
    auto [x2, r2] = fista(A, m, A.grid(), p);
    CHECK(r2.converged);
    CHECK(r2.iterations_run < 5000);
  }

  TEST_CASE("input validation") {
    const auto A = gaussian_dense(10, 5, 10);
    std::vector<double> m(10, 0.0);
    SolveParams p;
    m[3] = std::nan("");
    CHECK_THROWS_AS(fista(A, m, A.grid(), p), Error);
    m[3] = 0.0;
    std::vector<double> short_m(9, 0.0);
    CHECK_THROWS_AS(fista(A, short_m, A.grid(), p), Error);
    p.step_size = 100.0 / power_iteration(A);
    m.assign(10, 1.0);
    try {
      fista(A, m, A.grid(), p);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::step_size);
    }
  }

  TEST_CASE("multiplexed solve") {
    const auto scan = ScanConfig::full_grid(2, 2, 1.0, {3, 50.0, 0.0});
    const auto grid = VoxelGrid::centered(3, 2, 1.0, 1.0, 1, 1.0);
    DenseOperator op(MeasurementLayout::from_scan(scan), grid);
    RngStream rng(11, 0);
    for (auto& v : op.matrix()) v = rng.uniform();
    std::vector<double> truth{0.2, 0.0, 1.0, 0.5, 0.0, 0.3};
    auto m = TransientSet::zeros_full(4, 4, 3);
    op.apply(truth, m.values);

    SolveParams p;
    p.lambda_per_depth = {1e-4};
    p.max_iters = 50;
    const auto I = build_multiplex(MultiplexScheme::identity, 4, 0.0, scan);
    auto [a, ra] = fista(op, m, grid, p);
    auto [b, rb] = solve_multiplexed(I, op, 4, apply_multiplex(I, m), grid, p);
    CHECK(a.values == b.values);

    p.lambda_per_depth = {0.0};
    p.max_iters = 20000;
    p.tolerance = 0.0;
    const auto H = build_multiplex(MultiplexScheme::hadamard_pm, 4, 0.0, scan);
    auto [c, rc] = fista(op, m, grid, p);
    auto [d, rd] = solve_multiplexed(H, op, 4, apply_multiplex(H, m), grid, p);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      CHECK(std::abs(c.values[i] - d.values[i]) <= 1e-6 * std::max(1.0, std::abs(c.values[i])));
      CHECK(c.values[i] == doctest::Approx(truth[i]).epsilon(1e-6));
    }
  }

  TEST_CASE("layer lambda schedules") {
    KernelStack k(0, {1.0, 2.0}, 1.0, 1.0, {2, 50.0, 0.0});
    k.kernels[0] = {3.0, 4.0};
    k.kernels[1] = {1.0, 0.0};
    const auto kn = layer_lambda(k, 2.0, LambdaSchedule::kernel_norm);
    CHECK(kn[0] == doctest::Approx(2.0));
    CHECK(kn[1] == doctest::Approx(0.4));
    const auto im = layer_lambda(k, 2.0, LambdaSchedule::inverse_mass);
    CHECK(im[0] == doctest::Approx(2.0));
    CHECK(im[1] == doctest::Approx(14.0));
    const auto c = layer_lambda(k, 2.0, LambdaSchedule::constant);
    CHECK(c == std::vector<double>{2.0, 2.0});
    CHECK(lambda_schedule_from_string("inverse_mass") == LambdaSchedule::inverse_mass);
    CHECK_THROWS_AS(lambda_schedule_from_string("nope"), Error);
  }
}
