#pragma once

#include <cstddef>
#include <vector>

#include "ctof/core_types.hpp"
#include "ctof/forward_ops.hpp"

namespace ctof::analytic {

/// Slab diffusion constants with an extrapolated boundary on both faces.
struct DiffusionParams {
  double D = 0.0;        ///< diffusion coefficient, mm
  double mu_a = 0.0;     ///< mm^-1
  double mu_eff = 0.0;   ///< sqrt(mu_a / D), mm^-1
  double v = 0.0;        ///< mm/ps
  double z_b = 0.0;      ///< extrapolation distance, mm
  double z0 = 0.0;       ///< depth of the equivalent isotropic source, mm
  double thickness = 0.0;
  int image_pairs = 7;
  double min_distance = 0.0;  ///< distances below this are clamped

  static DiffusionParams from_medium(const SlabMedium& medium, int image_pairs = 7);
};

/// Internal-reflection fraction of a boundary with relative index n (0 for matched faces).
double effective_reflection(double n_rel);

/// Time-resolved fluence at `point` from a pencil source at surface position `source`.
double fluence_td(Vec2 source, Vec3 point, double t, const DiffusionParams& p);

/// Fick flux leaving the z = 0 face at `detector` due to an isotropic point emitter at `point`.
double reflectance_td(Vec2 detector, Vec3 point, double t, const DiffusionParams& p);

/// Time integrals of the two quantities above.
double fluence_cw(Vec2 source, Vec3 point, const DiffusionParams& p);
double reflectance_cw(Vec2 detector, Vec3 point, const DiffusionParams& p);

enum class ConvMethod { automatic, direct, fft };

struct TdOptions {
  double detector_aperture = 1.0;  ///< mm; detected flux is R * aperture^2
  std::size_t oversample = 0;      ///< fine steps per bin; 0 picks steps of at most 12.5 ps
  ConvMethod method = ConvMethod::automatic;
};

DenseOperator jacobian_cw(const ScanConfig& scan, const VoxelGrid& grid, const SlabMedium& medium,
                          double detector_aperture = 1.0);

DenseOperator jacobian_td(const ScanConfig& scan, const VoxelGrid& grid, const SlabMedium& medium,
                          const TdOptions& options = {});

/// Same as jacobian_td for an arbitrary pair layout.
DenseOperator jacobian_td_pairs(const MeasurementLayout& layout, const TimeAxis& axis, const VoxelGrid& grid,
                                const SlabMedium& medium, const TdOptions& options = {});

/// Bin-integrated (fluence * reflectance) time convolution for one source/detector/voxel triple,
/// scaled by voxel volume and detector area.
std::vector<double> td_series(Vec2 source, Vec2 detector, Vec3 voxel, double voxel_volume, const TimeAxis& axis,
                              const DiffusionParams& p, const TdOptions& options = {});

KernelStack psf_analytic(const std::vector<double>& depths, double pitch, double layer_thickness,
                         const TimeAxis& axis, const SlabMedium& medium, std::size_t kernel_radius,
                         const TdOptions& options = {});

}  // namespace ctof::analytic
