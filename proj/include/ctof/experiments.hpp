#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctof/analysis.hpp"
#include "ctof/core_types.hpp"
#include "ctof/forward_ops.hpp"
#include "ctof/inverse_solver.hpp"
#include "ctof/mc_transport.hpp"
#include "ctof/noise_model.hpp"
#include "ctof/phantoms.hpp"

/// End-to-end studies shared by the CLI and the acceptance checks.
namespace ctof::experiments {

/// Noisy acquisition of a per-launched-photon signal, and its conversion back to signal units
/// with the known dark floor removed.
struct CountData {
  TransientSet counts;
  std::vector<double> row_scale;  ///< counts per unit signal, per row
  double dark_per_bin = 0.0;
};

CountData acquire(const TransientSet& signal, double photon_rate, const AcquisitionModel& acq, std::uint64_t seed,
                  bool poisson = true);
TransientSet to_signal_units(const CountData& data);

/// lambda = rel * max |A^T m|, the smallest lambda that zeroes the solution times rel.
double relative_lambda(const LinearOperator& op, std::span<const double> m, double rel);

// --- Jacobian conditioning ---------------------------------------------------------------

struct ConditioningConfig {
  SlabMedium medium;
  std::size_t scan_n = 15;  ///< scan_n x scan_n positions, also the lateral voxel count
  double pitch = 1.0;
  std::size_t nz = 6;
  double first_depth = 0.5;
  double layer_thickness = 1.0;
  TimeAxis axis{33, 50.0, 0.0};
  mc::McSettings mc;
  double aperture = 1.0;
  double floor = 1e-2;
  std::uint64_t pair_seed = 7;  ///< draws the arbitrary pairs of the non-confocal cases
  std::vector<std::string> cases{"dot", "tofdot", "ctofdot"};
};

struct ConditioningStudy {
  std::vector<ConditioningRow> rows;
  std::uint64_t detected = 0;
  double mc_ms = 0.0;
  double svd_ms = 0.0;
};

/// Builds the requested Jacobians from one translation-invariant MC run: a single source at the
/// origin with detectors at every needed offset, recorded on a source-relative voxel window.
/// Every case measures scan_n^2 (source, detector) pairs: "ctofdot" the collocated ones,
/// "tofdot" seeded random pairs with all bins, "dot" the same pairs summed over time.
ConditioningStudy conditioning_study(const ConditioningConfig& cfg);

// --- Two-line resolution ----------------------------------------------------------------

struct ResolutionConfig {
  SlabMedium medium;  ///< needs a fluorophore model
  double line_width = 0.5;
  double separation = 0.5;
  double depth = 6.375;
  double layer_thickness = 0.25;
  double pitch = 0.25;
  std::size_t scan_n = 128;
  std::size_t kernel_radius = 40;
  TimeAxis axis{24, 200.0, 0.0};
  mc::McSettings mc;
  double aperture = 1.0;
  double cw_offset = 4.0;  ///< source-detector separation of the continuous-wave baseline
  double profile_half_length = 8.0;
  double photon_rate = 1e12;  ///< launched photons/s
  AcquisitionModel acquisition;
  bool noise = true;
  double lambda_rel = 0.02;
  std::size_t iters = 300;
};

struct ResolutionKernels {
  KernelStack td;           ///< confocal, time resolved
  KernelStack cw;           ///< offset detector, one bin
  std::vector<double> td_leak, cw_leak;  ///< excitation leak, per launched photon
};

ResolutionKernels resolution_kernels_mc(const ResolutionConfig& cfg);
ResolutionKernels resolution_kernels_analytic(const ResolutionConfig& cfg);

struct ResolutionArm {
  TwoLineResult result;
  std::vector<double> profile;
  VolumeImage recon;
  SolveReport report;
};

struct ResolutionOutcome {
  ResolutionArm td, cw;
  phantoms::TwoLines truth;
};

/// `forward` generates the measurements when given (an independent kernel estimate); otherwise
/// the reconstruction kernels do.
ResolutionOutcome resolution_test(const ResolutionConfig& cfg, const ResolutionKernels& kernels,
                                  const ResolutionKernels* forward = nullptr);

/// Mean over |y| <= half_length of every column of layer k.
std::vector<double> x_profile(const VolumeImage& img, std::size_t k, double half_length);

// --- Multiplexed acquisition --------------------------------------------------------------

struct MultiplexConfig {
  SlabMedium medium;
  std::size_t sources_n = 8;  ///< sources_n x sources_n sources, collocated with the detectors
  double source_pitch = 4.0;
  std::size_t voxels_n = 16;
  double voxel_pitch = 2.0;
  double depth = 3.0;
  double layer_thickness = 1.0;
  TimeAxis axis{32, 100.0, 0.0};
  double lifetime_ns = 1.0;
  AcquisitionModel acquisition;
  double photon_rate = 2e6;  ///< launched photons/s per lit source; dark counts dominate the weak pairs
  MultiplexScheme scheme = MultiplexScheme::hadamard01;
  std::vector<double> integration_times_ms{1.0, 10.0, 100.0};
  std::size_t seeds = 10;
  std::uint64_t seed = 1;
  double lambda_rel = 0.05;
  std::size_t iters = 30;  ///< early stopping regularizes both arms alike
};

struct MultiplexPoint {
  double integration_time_ms = 0.0;
  double psnr_sequential = 0.0;  ///< seed-averaged
  double psnr_multiplexed = 0.0;
};

struct MultiplexStudy {
  std::vector<MultiplexPoint> points;
  std::vector<CsvRow> rows;
  VolumeImage truth;
  VolumeImage last_sequential, last_multiplexed;
};

/// Emission-mode sensitivity of the study: diffusion Jacobian convolved with the lifetime decay.
DenseOperator multiplex_jacobian(const MultiplexConfig& cfg);
MultiplexStudy multiplex_study(const MultiplexConfig& cfg, const DenseOperator& J);

// --- 3D depth localization -------------------------------------------------------------

struct PillarsConfig {
  SlabMedium medium;
  std::size_t scan_n = 32;
  double pitch = 1.0;
  std::vector<double> depths{1, 2, 3, 4, 5, 6};
  double layer_thickness = 1.0;
  TimeAxis axis{40, 50.0, 0.0};
  std::size_t kernel_radius = 12;
  std::vector<phantoms::Disc> discs{{{-2.0, -9.0}, 6.0, 2.0}, {{-8.0, 6.0}, 10.0, 4.0}, {{6.0, 6.0}, 14.0, 6.0}};
  double photon_rate = 1e10;
  AcquisitionModel acquisition;
  bool noise = true;
  double lambda_rel = 0.02;
  LambdaSchedule schedule = LambdaSchedule::kernel_norm;
  std::size_t iters = 400;
};

struct PillarResult {
  double diameter = 0.0;
  double depth = 0.0;
  std::size_t true_layer = 0;
  std::size_t found_layer = 0;
  bool ok = false;
};

struct PillarsOutcome {
  std::vector<PillarResult> pillars;
  VolumeImage truth, recon;
  SolveReport report;
  std::vector<double> lambda;
};

/// Depth of maximum: the layer with the largest mean reconstruction inside each disc footprint.
PillarsOutcome pillars_study(const PillarsConfig& cfg, const KernelStack& kernels);
KernelStack pillars_kernels(const PillarsConfig& cfg);

// --- Runtime ---------------------------------------------------------------------------

struct SpeedupConfig {
  SlabMedium medium;
  std::size_t conf_n = 32;
  double conf_pitch = 1.0;
  TimeAxis conf_axis{64, 50.0, 0.0};
  std::size_t all_pairs_n = 10;
  double all_pairs_pitch = 3.2;
  TimeAxis all_pairs_axis{16, 200.0, 0.0};
  std::size_t voxels_n = 32;
  double voxel_pitch = 1.0;
  double depth = 3.0;
  std::size_t solve_iters = 50;
  int reps = 5;
};

struct SpeedupResult {
  double conv_apply_ms = 0.0;    ///< forward + adjoint
  double dense_apply_ms = 0.0;   ///< forward + adjoint, confocal dense at the same size
  double conv_solve_ms = 0.0;    ///< confocal convolutional solve
  double dense_solve_ms = 0.0;   ///< all-pairs dense solve
  double setup_ms = 0.0;
  std::vector<CsvRow> rows;
};

SpeedupResult speedup_study(const SpeedupConfig& cfg);

struct BenchmarkConfig {
  SlabMedium medium;
  std::string sweep = "sources";  ///< "sources": scan side lengths; "voxels": grid side lengths
  std::vector<std::size_t> sizes{4, 6, 8};
  std::vector<std::string> methods{"dot", "tof_dot", "ctof_dot_conv"};
  TimeAxis axis{32, 100.0, 0.0};
  double pitch = 1.0;
  std::size_t voxels_n = 16;  ///< fixed lateral voxel count for the "sources" sweep
  std::size_t scan_n = 8;     ///< fixed scan side for the "voxels" sweep
  double depth = 3.0;
  std::size_t solve_iters = 20;
  int reps = 5;
};

/// Median-of-reps wall time of forward+adjoint ("apply") and of a fixed-iteration solve per
/// method and sweep point; value holds the operator size (rows * cols).
std::vector<CsvRow> runtime_benchmark(const BenchmarkConfig& cfg);

}  // namespace ctof::experiments
