#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctof/core_types.hpp"
#include "ctof/forward_ops.hpp"

namespace ctof {

struct SolveParams {
  /// One entry per depth layer, or a single value broadcast to every layer.
  std::vector<double> lambda_per_depth{0.0};
  std::size_t max_iters = 200;
  std::optional<double> step_size;  ///< 1/L from power iteration when absent
  bool nonneg = false;
  double tolerance = 1e-6;  ///< relative objective change; 0 runs all iterations
};

struct SolveReport {
  std::size_t iterations_run = 0;
  std::vector<double> objective_trace;
  double wall_time_ms = 0.0;
  bool converged = false;
  double step_size = 0.0;
  double lipschitz = 0.0;

  nlohmann::json to_json() const;
};

struct PowerIterationOptions {
  std::size_t max_iters = 500;
  double tolerance = 1e-9;
  std::uint64_t seed = 0x5eed;
};

/// Largest eigenvalue of A^T A. Throws operator_invalid when an iterate turns non-finite.
double power_iteration(const LinearOperator& op, const PowerIterationOptions& options = {});

/// sign(v) max(|v| - theta, 0), or max(v - theta, 0) with nonneg.
double soft_threshold(double v, double theta, bool nonneg = false);
void soft_threshold(std::span<double> v, std::span<const double> theta, bool nonneg = false);

/// Per-voxel thresholds (lambda(z) * step) for a grid with `layer_size` voxels per layer.
std::vector<double> expand_lambda(const std::vector<double>& lambda_per_depth, std::size_t n_layers,
                                  std::size_t layer_size);

/// 1/2 ||A mu - m||^2 + sum_z lambda(z) ||mu_z||_1.
double objective(const LinearOperator& op, std::span<const double> mu, std::span<const double> m,
                 std::span<const double> lambda_per_voxel);

/// FISTA from mu = 0. `grid` shapes the returned image and must have op.cols() voxels.
std::pair<VolumeImage, SolveReport> fista(const LinearOperator& op, std::span<const double> m, const VoxelGrid& grid,
                                          const SolveParams& params);
std::pair<VolumeImage, SolveReport> fista(const LinearOperator& op, const TransientSet& m, const VoxelGrid& grid,
                                          const SolveParams& params);

/// FISTA on the composition S * op, where op produces full-scan rows (source, detector, bin).
std::pair<VolumeImage, SolveReport> solve_multiplexed(const MultiplexMatrix& S, const LinearOperator& op,
                                                      std::size_t n_detectors, const TransientSet& y,
                                                      const VoxelGrid& grid, const SolveParams& params);

enum class LambdaSchedule {
  kernel_norm,   ///< lambda0 * ||rho_z||_2 / max_z ||rho_z||_2; weaker (deeper) layers are shrunk less
  inverse_mass,  ///< lambda0 * max_z mass_z / mass_z
  constant,
};

LambdaSchedule lambda_schedule_from_string(const std::string& name);
const char* to_string(LambdaSchedule schedule);

std::vector<double> layer_lambda(const KernelStack& kernels, double lambda0,
                                 LambdaSchedule schedule = LambdaSchedule::kernel_norm);

/// Same schedules from per-layer column norms (kernel_norm) or column sums (inverse_mass).
std::vector<double> layer_lambda(const DenseOperator& op, double lambda0,
                                 LambdaSchedule schedule = LambdaSchedule::kernel_norm);

}  // namespace ctof
