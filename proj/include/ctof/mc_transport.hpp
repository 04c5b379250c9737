#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ctof/core_types.hpp"
#include "ctof/forward_ops.hpp"
#include "ctof/rng.hpp"

namespace ctof::mc {

struct McSettings {
  std::uint64_t n_photons = 10'000'000;
  std::uint64_t seed = 1;
  bool record_jacobian = true;
  double roulette_threshold = 1e-4;
  double roulette_survival = 0.1;
};

void validate_settings(const McSettings& s);

enum class DetectionSide { reflection, transmission };

/// One photon history as seen by a detector plane.
struct PhotonRecord {
  Vec2 exit_position;
  DetectionSide side = DetectionSide::reflection;
  bool exited = false;  ///< false when killed by roulette, time cutoff or lateral escape
  double arrival_time = 0.0;
  double path_length = 0.0;
  double weight = 0.0;
  std::vector<std::pair<std::uint32_t, double>> per_voxel_pathlength;
};

double step_from_uniform(double u, double mu_t);
double sample_step(RngStream& rng, double mu_t);

struct Deflection {
  double cos_theta;
  double phi;
};

double hg_cos_from_uniform(double u, double g);
double hg_cdf(double cos_theta, double g);
Deflection sample_scatter(RngStream& rng, double g);

/// Fresnel reflectance for unpolarized light leaving a medium of relative index n_rel
/// (inside / outside) at incidence cosine cos_i.
double fresnel_reflectance(double n_rel, double cos_i);

/// Traces one pencil-beam photon launched at (x, y, 0). `time_limit` cuts the history; with
/// `grid` set, path lengths per voxel are recorded.
PhotonRecord trace_photon(const SlabMedium& medium, const McSettings& settings, Vec2 launch,
                          std::uint64_t stream_id, double time_limit, const VoxelGrid* grid = nullptr);

struct TransportOptions {
  double detector_aperture = 1.0;  ///< side of the square aperture, mm
  DetectionSide side = DetectionSide::reflection;
  /// Optional voxelwise absorption added to the background (perturbed-medium reruns).
  const VolumeImage* absorption_perturbation = nullptr;
};

struct SimulatedTransients {
  TransientSet transients;
  std::vector<double> variance;  ///< per-entry variance of the mean estimate
  std::uint64_t detected = 0;
  bool no_detections = false;
};

SimulatedTransients simulate_transients(const SlabMedium& medium, const ScanConfig& scan, const McSettings& settings,
                                        double detector_aperture);
SimulatedTransients simulate_transients(const SlabMedium& medium, const ScanConfig& scan, const McSettings& settings,
                                        const TransportOptions& options);

enum class ContrastMode { absorption, fluorescence };

struct McJacobian {
  DenseOperator op;
  SimulatedTransients background;
};

/// Absorption mode: J[p, q] = -sum over detected photons of w * l_q, per launched photon.
/// Fluorescence mode: excitation fluence composed with emission escape and the lifetime kernel.
McJacobian estimate_jacobian_mc(const SlabMedium& medium, const ScanConfig& scan, const VoxelGrid& grid,
                                const McSettings& settings, ContrastMode mode = ContrastMode::absorption,
                                double detector_aperture = 1.0);

/// Same as above for an arbitrary (source, detector) pair list.
McJacobian estimate_jacobian_pairs(const SlabMedium& medium, const MeasurementLayout& layout, const TimeAxis& axis,
                                   const VoxelGrid& grid, const McSettings& settings, double detector_aperture);

/// Confocal kernels. Absorption kernels hold the attenuation magnitude -dm/dmu_a so they are
/// non-negative; fluorescence kernels the emission response to unit yield.
/// `detector_offset` displaces the detector from the source (0 for confocal).
KernelStack estimate_psf_mc(const SlabMedium& medium, const std::vector<double>& depths, double pitch,
                            double layer_thickness, const TimeAxis& axis, const McSettings& settings,
                            std::size_t kernel_radius, ContrastMode mode = ContrastMode::absorption,
                            double detector_aperture = 1.0, Vec2 detector_offset = {});

/// Fluorescence maps from the two-pass composition, kept for reuse by phantoms that also need
/// the excitation leakage transient.
struct FluorescenceKernels {
  KernelStack kernels;
  std::vector<double> excitation_leak;  ///< detected excitation transient per launched photon
};

FluorescenceKernels estimate_fluorescence_kernels(const SlabMedium& medium, const std::vector<double>& depths,
                                                  double pitch, double layer_thickness, const TimeAxis& axis,
                                                  const McSettings& settings, std::size_t kernel_radius,
                                                  double detector_aperture, Vec2 detector_offset);

/// One pair of MC passes shared by several detector offsets (same order as the input).
std::vector<FluorescenceKernels> estimate_fluorescence_kernels(const SlabMedium& medium,
                                                               const std::vector<double>& depths, double pitch,
                                                               double layer_thickness, const TimeAxis& axis,
                                                               const McSettings& settings, std::size_t kernel_radius,
                                                               double detector_aperture,
                                                               const std::vector<Vec2>& detector_offsets);

/// Bin weights of the discretized decay (1/tau) exp(-t/tau) integrated over each bin.
std::vector<double> lifetime_kernel(std::size_t n_bins, double bin_width_ps, double lifetime_ns);

/// Causal convolution of every row with the lifetime kernel.
TransientSet apply_fluorescence_lifetime(const TransientSet& transient, double bin_width_ps, double lifetime_ns);
std::vector<double> apply_lifetime(std::span<const double> row, double bin_width_ps, double lifetime_ns);

}  // namespace ctof::mc
