#include "ctof/inverse_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ctof/rng.hpp"

namespace ctof {
namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double data_term(std::span<const double> ax, std::span<const double> m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double r = ax[i] - m[i];
    s += r * r;
  }
  return 0.5 * s;
}

double l1_term(std::span<const double> x, std::span<const double> lambda) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != 0.0) s += lambda[i] * std::abs(x[i]);
  return s;
}

}  // namespace

nlohmann::json SolveReport::to_json() const {
  return {{"iterations_run", iterations_run}, {"objective_trace", objective_trace}, {"wall_time_ms", wall_time_ms},
          {"converged", converged},           {"step_size", step_size},             {"lipschitz", lipschitz}};
}

double power_iteration(const LinearOperator& op, const PowerIterationOptions& options) {
  const std::size_t n = op.cols();
  if (n == 0 || op.rows() == 0) throw Error(ErrorCode::operator_invalid, "operator has an empty dimension");
  std::vector<double> v(n), av(op.rows()), w(n);
  RngStream rng(options.seed, 0);
  for (double& x : v) x = rng.uniform() - 0.5;
  double nv = norm2(v);
  for (double& x : v) x /= nv;
  double lambda = 0.0;
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    op.apply(v, av);
    op.apply_adjoint(av, w);
    const double nw = norm2(w);
    if (!std::isfinite(nw) || !all_finite(w)) throw Error(ErrorCode::operator_invalid, "non-finite value in power iteration");
    if (nw == 0.0) return 0.0;
    const double prev = lambda;
    lambda = nw;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
    if (it > 0 && std::abs(lambda - prev) <= options.tolerance * lambda) break;
  }
  return lambda;
}

double soft_threshold(double v, double theta, bool nonneg) {
  if (nonneg) return std::max(v - theta, 0.0);
  if (v > theta) return v - theta;
  if (v < -theta) return v + theta;
  return 0.0;
}

void soft_threshold(std::span<double> v, std::span<const double> theta, bool nonneg) {
  if (theta.size() != v.size()) throw Error(ErrorCode::dimension_mismatch, "threshold length mismatch");
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = soft_threshold(v[i], theta[i], nonneg);
}

std::vector<double> expand_lambda(const std::vector<double>& lambda_per_depth, std::size_t n_layers,
                                  std::size_t layer_size) {
  if (lambda_per_depth.size() != 1 && lambda_per_depth.size() != n_layers)
    throw Error(ErrorCode::dimension_mismatch, "lambda_per_depth has " + std::to_string(lambda_per_depth.size()) +
                                                   " entries for " + std::to_string(n_layers) + " layers");
  for (double l : lambda_per_depth)
    if (!(l >= 0.0) || !std::isfinite(l)) throw Error(ErrorCode::invalid_parameter, "lambda must be finite and >= 0");
  std::vector<double> out(n_layers * layer_size);
  for (std::size_t z = 0; z < n_layers; ++z)
    std::fill_n(out.begin() + static_cast<long>(z * layer_size), layer_size,
                lambda_per_depth.size() == 1 ? lambda_per_depth[0] : lambda_per_depth[z]);
  return out;
}

double objective(const LinearOperator& op, std::span<const double> mu, std::span<const double> m,
                 std::span<const double> lambda_per_voxel) {
  std::vector<double> ax(op.rows());
  op.apply(mu, ax);
  return data_term(ax, m) + l1_term(mu, lambda_per_voxel);
}

std::pair<VolumeImage, SolveReport> fista(const LinearOperator& op, std::span<const double> m, const VoxelGrid& grid,
                                          const SolveParams& params) {
  const auto t0 = std::chrono::steady_clock::now();
  if (grid.size() != op.cols())
    throw Error(ErrorCode::dimension_mismatch, "operator has " + std::to_string(op.cols()) + " columns for a grid of " +
                                                   std::to_string(grid.size()) + " voxels");
  if (m.size() != op.rows())
    throw Error(ErrorCode::dimension_mismatch, "measurement has " + std::to_string(m.size()) + " entries, operator " +
                                                   std::to_string(op.rows()) + " rows");
  if (params.max_iters < 1) throw Error(ErrorCode::invalid_parameter, "max_iters must be >= 1");
  if (!(params.tolerance >= 0.0)) throw Error(ErrorCode::invalid_parameter, "tolerance must be >= 0");
  if (!all_finite(m)) throw Error(ErrorCode::non_finite, "measurement contains non-finite values");
  const std::vector<double> lambda = expand_lambda(params.lambda_per_depth, grid.nz(), grid.layer_size());

  SolveReport report;
  double step = 0.0;
  if (params.step_size) {
    step = *params.step_size;
    if (!(step > 0.0) || !std::isfinite(step)) throw Error(ErrorCode::invalid_parameter, "step_size must be > 0");
  } else {
    report.lipschitz = power_iteration(op);
    if (report.lipschitz <= 0.0) throw Error(ErrorCode::operator_invalid, "operator is identically zero");
    step = 1.0 / report.lipschitz;
  }
  report.step_size = step;

  const std::size_t n = op.cols(), rows = op.rows();
  std::vector<double> x(n, 0.0), x_new(n), y(n, 0.0), grad(n), theta(n);
  std::vector<double> ax(rows, 0.0), ax_new(rows), ay(rows, 0.0), resid(rows);
  for (std::size_t i = 0; i < n; ++i) theta[i] = step * lambda[i];
  double t = 1.0;
  double prev = data_term(ax, m);
  int increases = 0;

  for (std::size_t it = 0; it < params.max_iters; ++it) {
    for (std::size_t i = 0; i < rows; ++i) resid[i] = ay[i] - m[i];
    op.apply_adjoint(resid, grad);
    for (std::size_t i = 0; i < n; ++i) x_new[i] = soft_threshold(y[i] - step * grad[i], theta[i], params.nonneg);
    op.apply(x_new, ax_new);
    const double obj = data_term(ax_new, m) + l1_term(x_new, lambda);
    if (!std::isfinite(obj)) throw Error(ErrorCode::non_finite, "objective became non-finite at iteration " + std::to_string(it + 1));
    report.objective_trace.push_back(obj);
    report.iterations_run = it + 1;

    const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_new;
    for (std::size_t i = 0; i < n; ++i) y[i] = x_new[i] + beta * (x_new[i] - x[i]);
    for (std::size_t i = 0; i < rows; ++i) ay[i] = ax_new[i] + beta * (ax_new[i] - ax[i]);
    x.swap(x_new);
    ax.swap(ax_new);
    t = t_new;

    if (params.step_size) {
      increases = obj > prev ? increases + 1 : 0;
      if (increases >= 5)
        throw Error(ErrorCode::step_size, "objective increased for 5 consecutive iterations; step_size exceeds 1/L");
    }
    const bool small_change = std::abs(prev - obj) <= params.tolerance * std::max(std::abs(prev), 1e-300);
    prev = obj;
    if (it > 0 && small_change) {
      report.converged = true;
      break;
    }
  }
  report.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {VolumeImage(grid, std::move(x)), report};
}

std::pair<VolumeImage, SolveReport> fista(const LinearOperator& op, const TransientSet& m, const VoxelGrid& grid,
                                          const SolveParams& params) {
  return fista(op, std::span<const double>(m.values), grid, params);
}

std::pair<VolumeImage, SolveReport> solve_multiplexed(const MultiplexMatrix& S, const LinearOperator& op,
                                                      std::size_t n_detectors, const TransientSet& y,
                                                      const VoxelGrid& grid, const SolveParams& params) {
  if (y.n_sources != S.n_patterns)
    throw Error(ErrorCode::dimension_mismatch, "measurement has " + std::to_string(y.n_sources) + " pattern rows, S has " +
                                                   std::to_string(S.n_patterns));
  MultiplexOperator mux(S, n_detectors, y.n_bins);
  ComposedOperator composed(mux, op);
  return fista(composed, y, grid, params);
}

LambdaSchedule lambda_schedule_from_string(const std::string& name) {
  for (auto s : {LambdaSchedule::kernel_norm, LambdaSchedule::inverse_mass, LambdaSchedule::constant})
    if (name == to_string(s)) return s;
  throw Error(ErrorCode::invalid_parameter, "unknown lambda schedule '" + name + "'");
}

const char* to_string(LambdaSchedule schedule) {
  switch (schedule) {
    case LambdaSchedule::kernel_norm: return "kernel_norm";
    case LambdaSchedule::inverse_mass: return "inverse_mass";
    case LambdaSchedule::constant: return "constant";
  }
  return "unknown";
}

namespace {

std::vector<double> schedule_from(const std::vector<double>& norms, const std::vector<double>& masses, double lambda0,
                                  LambdaSchedule schedule) {
  std::vector<double> out(norms.size(), lambda0);
  if (schedule == LambdaSchedule::kernel_norm) {
    const double top = *std::max_element(norms.begin(), norms.end());
    if (top <= 0.0) throw Error(ErrorCode::operator_invalid, "all layers have zero sensitivity");
    for (std::size_t z = 0; z < norms.size(); ++z) out[z] = lambda0 * norms[z] / top;
  } else if (schedule == LambdaSchedule::inverse_mass) {
    const double top = *std::max_element(masses.begin(), masses.end());
    for (std::size_t z = 0; z < masses.size(); ++z) {
      if (masses[z] <= 0.0) throw Error(ErrorCode::operator_invalid, "layer " + std::to_string(z) + " has zero kernel mass");
      out[z] = lambda0 * top / masses[z];
    }
  }
  return out;
}

}  // namespace

std::vector<double> layer_lambda(const KernelStack& kernels, double lambda0, LambdaSchedule schedule) {
  std::vector<double> norms, masses;
  for (std::size_t z = 0; z < kernels.n_depths(); ++z) {
    norms.push_back(kernels.l2_norm(z));
    masses.push_back(kernels.mass(z));
  }
  return schedule_from(norms, masses, lambda0, schedule);
}

std::vector<double> layer_lambda(const DenseOperator& op, double lambda0, LambdaSchedule schedule) {
  const VoxelGrid& g = op.grid();
  std::vector<double> norms(g.nz(), 0.0), masses(g.nz(), 0.0);
  for (std::size_t r = 0; r < op.rows(); ++r)
    for (std::size_t c = 0; c < op.cols(); ++c) {
      const double v = op.at(r, c);
      norms[c / g.layer_size()] += v * v;
      masses[c / g.layer_size()] += std::abs(v);
    }
  for (double& x : norms) x = std::sqrt(x);
  return schedule_from(norms, masses, lambda0, schedule);
}

}  // namespace ctof
