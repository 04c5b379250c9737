#include "ctof/core_types.hpp"

#include <algorithm>
#include <cmath>

namespace ctof {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_parameter: return "invalid-parameter";
    case ErrorCode::invalid_scene: return "invalid-scene";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::non_finite: return "non-finite";
    case ErrorCode::operator_invalid: return "operator-invalid";
    case ErrorCode::step_size: return "step-size";
    case ErrorCode::io: return "io";
    case ErrorCode::bad_magic: return "bad-magic";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::unsupported_version: return "unsupported-version";
    case ErrorCode::bad_metadata: return "bad-metadata";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

Vec3 VoxelGrid::center(std::size_t i, std::size_t j, std::size_t k) const {
  return {origin[0] + (static_cast<double>(i) + 0.5) * pitch[0],
          origin[1] + (static_cast<double>(j) + 0.5) * pitch[1],
          origin[2] + (static_cast<double>(k) + 0.5) * pitch[2]};
}

Vec3 VoxelGrid::center(std::size_t linear) const {
  const std::size_t i = linear % dims[0];
  const std::size_t j = (linear / dims[0]) % dims[1];
  const std::size_t k = linear / (dims[0] * dims[1]);
  return center(i, j, k);
}

VoxelGrid VoxelGrid::centered(std::size_t nx, std::size_t ny, double lateral_pitch, double first_depth,
                              std::size_t nz, double depth_pitch) {
  VoxelGrid g;
  g.dims = {nx, ny, nz};
  g.pitch = {lateral_pitch, lateral_pitch, depth_pitch};
  g.origin = {-0.5 * static_cast<double>(nx) * lateral_pitch, -0.5 * static_cast<double>(ny) * lateral_pitch,
              first_depth - 0.5 * depth_pitch};
  return g;
}

long TimeAxis::bin_of(double t) const {
  const double rel = (t - gate_start) / bin_width;
  if (!(rel >= 0.0) || rel >= static_cast<double>(n_bins)) return -1;
  return static_cast<long>(rel);
}

namespace {
std::vector<Vec2> grid_positions(std::size_t nx, std::size_t ny, double pitch) {
  std::vector<Vec2> out;
  out.reserve(nx * ny);
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i)
      out.push_back({(static_cast<double>(i) - 0.5 * static_cast<double>(nx - 1)) * pitch,
                     (static_cast<double>(j) - 0.5 * static_cast<double>(ny - 1)) * pitch});
  return out;
}
}  // namespace

ScanConfig ScanConfig::confocal_grid(std::size_t nx, std::size_t ny, double pitch, TimeAxis axis) {
  ScanConfig s;
  s.sources = grid_positions(nx, ny, pitch);
  s.detectors = s.sources;
  s.confocal = true;
  s.time_axis = axis;
  return s;
}

ScanConfig ScanConfig::full_grid(std::size_t nx, std::size_t ny, double pitch, TimeAxis axis) {
  ScanConfig s = confocal_grid(nx, ny, pitch, axis);
  s.confocal = false;
  return s;
}

TransientSet TransientSet::zeros_confocal(std::size_t n_sources, std::size_t n_bins) {
  TransientSet t;
  t.n_sources = n_sources;
  t.n_detectors = 1;
  t.confocal = true;
  t.n_bins = n_bins;
  t.values.assign(n_sources * n_bins, 0.0);
  return t;
}

TransientSet TransientSet::zeros_full(std::size_t n_sources, std::size_t n_detectors, std::size_t n_bins) {
  TransientSet t;
  t.n_sources = n_sources;
  t.n_detectors = n_detectors;
  t.confocal = false;
  t.n_bins = n_bins;
  t.values.assign(n_sources * n_detectors * n_bins, 0.0);
  return t;
}

TransientSet TransientSet::zeros_like(const ScanConfig& scan) {
  return scan.confocal ? zeros_confocal(scan.n_sources(), scan.time_axis.n_bins)
                       : zeros_full(scan.n_sources(), scan.detectors.size(), scan.time_axis.n_bins);
}

double TransientSet::total() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

bool TransientSet::non_negative() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return v >= 0.0; });
}

VolumeImage::VolumeImage(VoxelGrid g, std::vector<double> v) : grid(g), values(std::move(v)) {
  if (values.size() != grid.size())
    throw Error(ErrorCode::dimension_mismatch, "volume values do not match grid size");
}

double speed_in_medium(const OpticalProperties& props) {
  if (!(props.n >= 1.0)) throw Error(ErrorCode::invalid_parameter, "refractive index must be >= 1");
  return kSpeedOfLight / props.n;
}

namespace {
void check_props(const OpticalProperties& p, const std::string& path, std::vector<SceneIssue>& out) {
  if (!(p.mu_s >= 0.0)) out.push_back({path + ".mu_s", "scattering coefficient must be >= 0"});
  if (!(p.mu_a >= 0.0)) out.push_back({path + ".mu_a", "absorption coefficient must be >= 0"});
  if (!(p.g > -1.0 && p.g < 1.0)) out.push_back({path + ".g", "anisotropy must lie in (-1, 1)"});
  if (!(p.n >= 1.0)) out.push_back({path + ".n", "refractive index must be >= 1"});
}

bool inside_lateral(const SlabMedium& m, Vec2 p) {
  return std::abs(p.x) <= 0.5 * m.extent_x && std::abs(p.y) <= 0.5 * m.extent_y;
}
}  // namespace

std::vector<SceneIssue> validate_medium(const SlabMedium& medium) {
  std::vector<SceneIssue> out;
  check_props(medium.props, "medium.props", out);
  if (!(medium.thickness > 0.0)) out.push_back({"medium.thickness", "thickness must be > 0"});
  if (!(medium.extent_x > 0.0)) out.push_back({"medium.extent_x", "lateral extent must be > 0"});
  if (!(medium.extent_y > 0.0)) out.push_back({"medium.extent_y", "lateral extent must be > 0"});
  if (!(medium.ambient_index >= 1.0)) out.push_back({"medium.ambient_index", "ambient index must be >= 1"});
  if (medium.fluorescence) {
    const auto& f = *medium.fluorescence;
    if (!(f.lifetime_ns > 0.0)) out.push_back({"medium.fluorescence.lifetime", "lifetime must be > 0"});
    if (!(f.excitation_rejection >= 0.0 && f.excitation_rejection <= 1.0))
      out.push_back({"medium.fluorescence.excitation_rejection", "must lie in [0, 1]"});
    check_props(f.emission_props, "medium.fluorescence.emission_props", out);
  }
  return out;
}

std::vector<SceneIssue> validate_scene(const SlabMedium& medium, const VoxelGrid& grid, const ScanConfig& scan) {
  std::vector<SceneIssue> out = validate_medium(medium);

  for (std::size_t a = 0; a < 3; ++a) {
    if (grid.dims[a] < 1) out.push_back({"grid.dims[" + std::to_string(a) + "]", "grid dimension must be >= 1"});
    if (!(grid.pitch[a] > 0.0)) out.push_back({"grid.pitch[" + std::to_string(a) + "]", "pitch must be > 0"});
  }
  const double x0 = grid.origin[0], x1 = x0 + static_cast<double>(grid.dims[0]) * grid.pitch[0];
  const double y0 = grid.origin[1], y1 = y0 + static_cast<double>(grid.dims[1]) * grid.pitch[1];
  const double z0 = grid.origin[2], z1 = z0 + static_cast<double>(grid.dims[2]) * grid.pitch[2];
  const double eps = 1e-9;
  if (z0 < -eps) out.push_back({"grid.origin[2]", "grid starts above the slab entry face"});
  if (z1 > medium.thickness + eps) out.push_back({"grid", "grid exceeds slab depth"});
  if (x0 < -0.5 * medium.extent_x - eps || x1 > 0.5 * medium.extent_x + eps ||
      y0 < -0.5 * medium.extent_y - eps || y1 > 0.5 * medium.extent_y + eps)
    out.push_back({"grid", "grid exceeds slab lateral extent"});

  const TimeAxis& ax = scan.time_axis;
  if (ax.n_bins < 1) out.push_back({"scan.time_axis.n_bins", "need at least one time bin"});
  if (!(ax.bin_width > 0.0)) out.push_back({"scan.time_axis.bin_width", "bin width must be > 0"});
  if (scan.sources.empty()) out.push_back({"scan.sources", "no sources"});

  if (scan.confocal) {
    if (scan.detectors.size() != scan.sources.size()) {
      out.push_back({"scan.detectors", "confocal scan needs one detector per source"});
    } else {
      for (std::size_t i = 0; i < scan.sources.size(); ++i)
        if (!(scan.sources[i] == scan.detectors[i])) {
          out.push_back({"scan.detectors[" + std::to_string(i) + "]", "confocal detector not collocated with source"});
          break;
        }
    }
  } else if (scan.detectors.empty()) {
    out.push_back({"scan.detectors", "no detectors"});
  }
  for (std::size_t i = 0; i < scan.sources.size(); ++i)
    if (!inside_lateral(medium, scan.sources[i])) {
      out.push_back({"scan.sources[" + std::to_string(i) + "]", "position outside slab lateral extent"});
      break;
    }
  for (std::size_t i = 0; i < scan.detectors.size(); ++i)
    if (!inside_lateral(medium, scan.detectors[i])) {
      out.push_back({"scan.detectors[" + std::to_string(i) + "]", "position outside slab lateral extent"});
      break;
    }
  return out;
}

void throw_if_invalid(const std::vector<SceneIssue>& issues) {
  if (issues.empty()) return;
  std::string msg;
  for (const auto& i : issues) {
    if (!msg.empty()) msg += "; ";
    msg += i.field + ": " + i.message;
  }
  throw Error(ErrorCode::invalid_scene, msg);
}

}  // namespace ctof
