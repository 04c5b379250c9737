#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctof/core_types.hpp"
#include "ctof/inverse_solver.hpp"
#include "ctof/mc_transport.hpp"
#include "ctof/noise_model.hpp"
#include "ctof/phantoms.hpp"

namespace ctof {

inline constexpr int kConfigVersion = 1;

struct GridSpec {
  std::size_t nx = 32;
  std::size_t ny = 32;
  double pitch = 1.0;
  double first_depth = 3.0;
  std::size_t nz = 1;
  double layer_thickness = 1.0;

  VoxelGrid grid() const { return VoxelGrid::centered(nx, ny, pitch, first_depth, nz, layer_thickness); }
};

struct ScanSpec {
  std::string geometry = "confocal";  ///< "confocal" or "full"
  std::size_t nx = 32;
  std::size_t ny = 32;
  double pitch = 1.0;
  TimeAxis axis{32, 200.0, 0.0};

  ScanConfig scan() const;
};

struct SolverSpec {
  double lambda = 0.0;                    ///< absolute lambda0 when lambda_rel is 0
  double lambda_rel = 0.0;                ///< lambda0 = lambda_rel * max |A^T m| when > 0
  std::vector<double> lambda_per_depth;   ///< explicit per-layer values, override the schedule
  LambdaSchedule schedule = LambdaSchedule::kernel_norm;
  std::size_t max_iters = 200;
  bool nonneg = true;
  double tolerance = 1e-6;
};

struct McSpec {
  mc::McSettings settings;
  double aperture = 1.0;
  std::size_t kernel_radius = 12;
};

struct PhantomSpec {
  std::string type = "none";  ///< none | letter_r | two_lines | discs
  double amplitude = 0.01;
  std::size_t layer = 0;
  double line_width = 0.5;
  double separation = 0.5;
  std::vector<phantoms::Disc> discs;
};

struct AcquisitionSpec {
  AcquisitionModel model;
  double photon_rate = 1e10;  ///< launched photons/s per lit source
};

/// One declarative scene. Sections: version, medium, grid, scan, acquisition, solver, mc, phantom.
struct SceneConfig {
  SlabMedium medium;
  GridSpec grid;
  ScanSpec scan;
  AcquisitionSpec acquisition;
  SolverSpec solver;
  McSpec mc;
  PhantomSpec phantom;
};

/// Parses and validates; every problem is reported with its JSON path. Missing fields keep their
/// defaults, unknown fields are rejected. Throws Error(ErrorCode::config).
SceneConfig parse_config(const nlohmann::json& doc);
SceneConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const SceneConfig& cfg);

nlohmann::json to_json(const SlabMedium& medium);
nlohmann::json to_json(const VoxelGrid& grid);
nlohmann::json to_json(const TimeAxis& axis);

/// Builds the phantom volume on `grid` (zeros for type "none").
VolumeImage make_phantom(const PhantomSpec& spec, const VoxelGrid& grid);

}  // namespace ctof
