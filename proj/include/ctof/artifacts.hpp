#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ctof/core_types.hpp"
#include "ctof/forward_ops.hpp"
#include "ctof/tensor_io.hpp"

/// DOTT adapters for the toolkit's data types. Every file carries metadata {kind, producer,
/// units, ...}; the loaders check `kind` and rebuild the object from dims and metadata.
namespace ctof::artifacts {

inline constexpr const char* kProducer = "ctof 1.0";
inline constexpr const char* kUnits = "mm,ps";

/// Base metadata: kind, producer, units, merged with `extra`.
nlohmann::json base_metadata(const std::string& kind, const nlohmann::json& extra = nlohmann::json::object());

/// dims (n_rows, n_bins); metadata: confocal, n_sources, n_detectors, time_axis.
void save(const std::filesystem::path& path, const TransientSet& m, const TimeAxis& axis,
          const nlohmann::json& extra = nlohmann::json::object());
/// dims (n_depths, n_bins, K, K); metadata: radius, depths, pitch, layer_thickness, time_axis, backend.
void save(const std::filesystem::path& path, const KernelStack& k, const nlohmann::json& extra = nlohmann::json::object());
/// dims (rows, cols); metadata: grid, layout (kind, sources, detectors, pairs, n_bins), backend.
void save(const std::filesystem::path& path, const DenseOperator& op,
          const nlohmann::json& extra = nlohmann::json::object());
/// dims (nz, ny, nx); metadata: grid.
void save(const std::filesystem::path& path, const VolumeImage& img, const nlohmann::json& extra = nlohmann::json::object());
/// dims (n_patterns, n_sources); metadata: scheme.
void save(const std::filesystem::path& path, const MultiplexMatrix& S,
          const nlohmann::json& extra = nlohmann::json::object());

struct LoadedTransients {
  TransientSet m;
  TimeAxis axis;
  nlohmann::json metadata;
};

LoadedTransients load_transients(const std::filesystem::path& path);
KernelStack load_kernels(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);
DenseOperator load_dense(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);
VolumeImage load_volume(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);
MultiplexMatrix load_multiplex(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

/// The `kind` field of a DOTT file.
std::string kind_of(const std::filesystem::path& path);

VoxelGrid grid_from_json(const nlohmann::json& j);
TimeAxis axis_from_json(const nlohmann::json& j);

/// Binary PGM (P5, 8-bit) of layer k, linearly mapped from [0, max] (negative values clip to 0).
void write_pgm(const std::filesystem::path& path, const VolumeImage& img, std::size_t k);

}  // namespace ctof::artifacts
