#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctof {

/// Speed of light in vacuum, mm/ps. All lengths are mm, times ps, coefficients mm^-1.
inline constexpr double kSpeedOfLight = 0.299792458;

enum class ErrorCode {
  invalid_parameter,
  invalid_scene,
  dimension_mismatch,
  non_finite,
  operator_invalid,
  step_size,
  io,
  bad_magic,
  truncated,
  unsupported_version,
  bad_metadata,
  config,
};

const char* to_string(ErrorCode code);

/// Exception carrying a machine-readable code; what() is "<code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct OpticalProperties {
  double mu_s = 9.0;  ///< scattering, mm^-1
  double mu_a = 0.0;  ///< background absorption, mm^-1
  double g = 0.0;     ///< Henyey-Greenstein anisotropy
  double n = 1.4;     ///< refractive index

  double mu_t() const { return mu_s + mu_a; }
  double mu_s_reduced() const { return mu_s * (1.0 - g); }
};

struct FluorophoreModel {
  double lifetime_ns = 1.0;
  OpticalProperties emission_props;
  double excitation_rejection = 1.0;  ///< fraction of excitation light passing the emission filter
};

/// Homogeneous slab occupying x in [-extent_x/2, extent_x/2], y likewise, z in [0, thickness].
/// Light enters and is detected (reflection geometry) on the z = 0 face.
struct SlabMedium {
  OpticalProperties props;
  double thickness = 6.5;
  double extent_x = 50.0;
  double extent_y = 50.0;
  std::optional<FluorophoreModel> fluorescence;
  double ambient_index = 1.0;
  bool fresnel = true;  ///< false: index-matched faces, no internal reflection

  double relative_index() const { return fresnel ? props.n / ambient_index : 1.0; }
};

/// Regular voxel grid. `origin` is the (x, y, z) corner of voxel (0,0,0) in slab coordinates.
/// Linear index is (k * ny + j) * nx + i, x fastest.
struct VoxelGrid {
  std::array<std::size_t, 3> dims{1, 1, 1};
  std::array<double, 3> pitch{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};

  std::size_t nx() const { return dims[0]; }
  std::size_t ny() const { return dims[1]; }
  std::size_t nz() const { return dims[2]; }
  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t layer_size() const { return dims[0] * dims[1]; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (k * dims[1] + j) * dims[0] + i; }
  double voxel_volume() const { return pitch[0] * pitch[1] * pitch[2]; }
  Vec3 center(std::size_t i, std::size_t j, std::size_t k) const;
  Vec3 center(std::size_t linear) const;

  /// Lateral grid centered on (0, 0) with layers whose centers sit at `depths`.
  static VoxelGrid centered(std::size_t nx, std::size_t ny, double lateral_pitch, double first_depth,
                            std::size_t nz, double depth_pitch);
};

struct TimeAxis {
  std::size_t n_bins = 1;
  double bin_width = 200.0;  ///< ps
  double gate_start = 0.0;   ///< ps

  double end() const { return gate_start + static_cast<double>(n_bins) * bin_width; }
  double bin_start(std::size_t k) const { return gate_start + static_cast<double>(k) * bin_width; }
  double bin_center(std::size_t k) const { return bin_start(k) + 0.5 * bin_width; }
  /// Bin containing arrival time `t`, or -1 when outside the gate.
  long bin_of(double t) const;
};

struct ScanConfig {
  std::vector<Vec2> sources;
  std::vector<Vec2> detectors;
  bool confocal = true;
  TimeAxis time_axis;

  std::size_t n_sources() const { return sources.size(); }
  std::size_t n_detectors() const { return confocal ? sources.size() : detectors.size(); }
  /// Number of measured (source, detector) pairs.
  std::size_t n_pairs() const { return confocal ? sources.size() : sources.size() * detectors.size(); }
  std::size_t n_measurements() const { return n_pairs() * time_axis.n_bins; }

  /// nx x ny collocated positions with the given pitch, centered on (0, 0).
  static ScanConfig confocal_grid(std::size_t nx, std::size_t ny, double pitch, TimeAxis axis);
  /// Every source on the grid paired with every detector on the grid.
  static ScanConfig full_grid(std::size_t nx, std::size_t ny, double pitch, TimeAxis axis);
};

/// Time-binned measurements. Row r is a (source, detector) pair in source-major order
/// (confocal: r = source). Values are row-major (row, bin).
struct TransientSet {
  std::size_t n_sources = 0;
  std::size_t n_detectors = 0;  ///< 1 per row group when confocal
  bool confocal = true;
  std::size_t n_bins = 0;
  std::vector<double> values;

  static TransientSet zeros_confocal(std::size_t n_sources, std::size_t n_bins);
  static TransientSet zeros_full(std::size_t n_sources, std::size_t n_detectors, std::size_t n_bins);
  static TransientSet zeros_like(const ScanConfig& scan);

  std::size_t n_rows() const { return confocal ? n_sources : n_sources * n_detectors; }
  std::size_t size() const { return values.size(); }
  double& at(std::size_t row, std::size_t bin) { return values[row * n_bins + bin]; }
  double at(std::size_t row, std::size_t bin) const { return values[row * n_bins + bin]; }
  std::size_t row_of(std::size_t source, std::size_t detector) const {
    return confocal ? source : source * n_detectors + detector;
  }
  double total() const;
  bool non_negative() const;
};

struct VolumeImage {
  VoxelGrid grid;
  std::vector<double> values;

  explicit VolumeImage(VoxelGrid g = {}) : grid(g), values(g.size(), 0.0) {}
  VolumeImage(VoxelGrid g, std::vector<double> v);

  double& at(std::size_t i, std::size_t j, std::size_t k) { return values[grid.index(i, j, k)]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return values[grid.index(i, j, k)]; }
};

double speed_in_medium(const OpticalProperties& props);

struct SceneIssue {
  std::string field;
  std::string message;
};

/// Returns every violated invariant of the scene; empty means valid.
std::vector<SceneIssue> validate_scene(const SlabMedium& medium, const VoxelGrid& grid, const ScanConfig& scan);
std::vector<SceneIssue> validate_medium(const SlabMedium& medium);
void throw_if_invalid(const std::vector<SceneIssue>& issues);

}  // namespace ctof
