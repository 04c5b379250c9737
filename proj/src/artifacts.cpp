#include "ctof/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ctof/config.hpp"

namespace ctof::artifacts {
namespace {

using nlohmann::json;

TensorFile read_kind(const std::filesystem::path& path, const std::string& kind) {
  TensorFile f = read_tensor(path);
  const std::string found = f.metadata.value("kind", std::string());
  if (found != kind)
    throw Error(ErrorCode::bad_metadata, path.string() + " holds '" + found + "', expected '" + kind + "'");
  return f;
}

template <class T>
T meta_get(const json& m, const std::string& key) {
  if (!m.contains(key)) throw Error(ErrorCode::bad_metadata, "metadata lacks '" + key + "'");
  try {
    return m.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::bad_metadata, "metadata field '" + key + "': " + e.what());
  }
}

json points(const std::vector<Vec2>& v) {
  json a = json::array();
  for (const auto& p : v) a.push_back({p.x, p.y});
  return a;
}

std::vector<Vec2> points_from(const json& a) {
  std::vector<Vec2> out;
  for (const auto& p : a) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

void expect_dims(const Tensor& t, std::size_t n, const std::string& kind) {
  if (t.dims.size() != n)
    throw Error(ErrorCode::bad_metadata, kind + " needs " + std::to_string(n) + " dims, file has " +
                                             std::to_string(t.dims.size()));
}

}  // namespace

json base_metadata(const std::string& kind, const json& extra) {
  json m = {{"kind", kind}, {"producer", kProducer}, {"units", kUnits}};
  for (const auto& item : extra.items()) m[item.key()] = item.value();
  return m;
}

VoxelGrid grid_from_json(const json& j) {
  VoxelGrid g;
  try {
    g.dims = j.at("dims").get<std::array<std::size_t, 3>>();
    g.pitch = j.at("pitch").get<std::array<double, 3>>();
    g.origin = j.at("origin").get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::bad_metadata, std::string("grid: ") + e.what());
  }
  return g;
}

TimeAxis axis_from_json(const json& j) {
  TimeAxis a;
  try {
    a.n_bins = j.at("n_bins").get<std::size_t>();
    a.bin_width = j.at("bin_width_ps").get<double>();
    a.gate_start = j.at("gate_start_ps").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::bad_metadata, std::string("time_axis: ") + e.what());
  }
  return a;
}

void save(const std::filesystem::path& path, const TransientSet& m, const TimeAxis& axis, const json& extra) {
  if (axis.n_bins != m.n_bins) throw Error(ErrorCode::dimension_mismatch, "time axis does not match the transients");
  json meta = base_metadata("transient_set", extra);
  meta["confocal"] = m.confocal;
  meta["n_sources"] = m.n_sources;
  meta["n_detectors"] = m.n_detectors;
  meta["time_axis"] = ctof::to_json(axis);
  write_tensor(path, Tensor{{m.n_rows(), m.n_bins}, m.values}, meta);
}

LoadedTransients load_transients(const std::filesystem::path& path) {
  TensorFile f = read_kind(path, "transient_set");
  expect_dims(f.tensor, 2, "transient_set");
  LoadedTransients out;
  out.m.confocal = meta_get<bool>(f.metadata, "confocal");
  out.m.n_sources = meta_get<std::size_t>(f.metadata, "n_sources");
  out.m.n_detectors = meta_get<std::size_t>(f.metadata, "n_detectors");
  out.m.n_bins = f.tensor.dims[1];
  out.axis = axis_from_json(meta_get<json>(f.metadata, "time_axis"));
  if (out.m.n_rows() != f.tensor.dims[0] || out.axis.n_bins != out.m.n_bins)
    throw Error(ErrorCode::bad_metadata, "transient metadata disagrees with the tensor shape");
  out.m.values = std::move(f.tensor.data);
  out.metadata = std::move(f.metadata);
  return out;
}

void save(const std::filesystem::path& path, const KernelStack& k, const json& extra) {
  json meta = base_metadata("kernel_stack", extra);
  meta["radius"] = k.radius;
  meta["depths"] = k.depths;
  meta["pitch"] = k.pitch;
  meta["layer_thickness"] = k.layer_thickness;
  meta["time_axis"] = ctof::to_json(k.time_axis);
  meta["backend"] = k.backend;
  std::vector<double> data;
  data.reserve(k.n_depths() * k.depth_size());
  for (const auto& d : k.kernels) data.insert(data.end(), d.begin(), d.end());
  write_tensor(path, Tensor{{k.n_depths(), k.time_axis.n_bins, k.width(), k.width()}, std::move(data)}, meta);
}

KernelStack load_kernels(const std::filesystem::path& path, json* metadata) {
  TensorFile f = read_kind(path, "kernel_stack");
  expect_dims(f.tensor, 4, "kernel_stack");
  KernelStack k(meta_get<std::size_t>(f.metadata, "radius"), meta_get<std::vector<double>>(f.metadata, "depths"),
                meta_get<double>(f.metadata, "pitch"), meta_get<double>(f.metadata, "layer_thickness"),
                axis_from_json(meta_get<json>(f.metadata, "time_axis")));
  k.backend = f.metadata.value("backend", std::string("unknown"));
  const auto& d = f.tensor.dims;
  if (d[0] != k.n_depths() || d[1] != k.time_axis.n_bins || d[2] != k.width() || d[3] != k.width())
    throw Error(ErrorCode::bad_metadata, "kernel metadata disagrees with the tensor shape");
  for (std::size_t z = 0; z < k.n_depths(); ++z)
    std::copy_n(f.tensor.data.begin() + static_cast<long>(z * k.depth_size()), k.depth_size(), k.kernels[z].begin());
  if (metadata) *metadata = std::move(f.metadata);
  return k;
}

void save(const std::filesystem::path& path, const DenseOperator& op, const json& extra) {
  const MeasurementLayout& l = op.layout();
  json pairs = json::array();
  if (l.kind == MeasurementLayout::Kind::pairs)
    for (const auto& [s, d] : l.pairs) pairs.push_back({s, d});
  const char* kind = l.kind == MeasurementLayout::Kind::confocal ? "confocal"
                     : l.kind == MeasurementLayout::Kind::full   ? "full"
                                                                 : "pairs";
  json meta = base_metadata("dense_operator", extra);
  meta["grid"] = ctof::to_json(op.grid());
  meta["layout"] = {{"kind", kind},
                    {"sources", points(l.sources)},
                    {"detectors", points(l.detectors)},
                    {"pairs", pairs},
                    {"n_bins", l.n_bins}};
  meta["backend"] = op.backend;
  write_tensor(path, Tensor{{op.rows(), op.cols()}, op.matrix()}, meta);
}

DenseOperator load_dense(const std::filesystem::path& path, json* metadata) {
  TensorFile f = read_kind(path, "dense_operator");
  expect_dims(f.tensor, 2, "dense_operator");
  const VoxelGrid grid = grid_from_json(meta_get<json>(f.metadata, "grid"));
  const json lj = meta_get<json>(f.metadata, "layout");
  MeasurementLayout l;
  try {
    const auto kind = lj.at("kind").get<std::string>();
    auto sources = points_from(lj.at("sources"));
    auto detectors = points_from(lj.at("detectors"));
    const auto n_bins = lj.at("n_bins").get<std::size_t>();
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    if (kind == "confocal") {
      for (std::uint32_t i = 0; i < sources.size(); ++i) pairs.emplace_back(i, i);
    } else if (kind == "full") {
      for (std::uint32_t s = 0; s < sources.size(); ++s)
        for (std::uint32_t d = 0; d < detectors.size(); ++d) pairs.emplace_back(s, d);
    } else if (kind == "pairs") {
      for (const auto& p : lj.at("pairs")) pairs.emplace_back(p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>());
    } else {
      throw Error(ErrorCode::bad_metadata, "unknown layout kind '" + kind + "'");
    }
    l = MeasurementLayout::from_pairs(std::move(sources), std::move(detectors), std::move(pairs), n_bins);
    l.kind = kind == "confocal" ? MeasurementLayout::Kind::confocal
             : kind == "full"   ? MeasurementLayout::Kind::full
                                : MeasurementLayout::Kind::pairs;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::bad_metadata, std::string("layout: ") + e.what());
  }
  if (f.tensor.dims[0] != l.rows() || f.tensor.dims[1] != grid.size())
    throw Error(ErrorCode::bad_metadata, "operator metadata disagrees with the tensor shape");
  DenseOperator op(std::move(l), grid, std::move(f.tensor.data));
  op.backend = f.metadata.value("backend", std::string("unknown"));
  if (metadata) *metadata = std::move(f.metadata);
  return op;
}

void save(const std::filesystem::path& path, const VolumeImage& img, const json& extra) {
  json meta = base_metadata("volume_image", extra);
  meta["grid"] = ctof::to_json(img.grid);
  write_tensor(path, Tensor{{img.grid.nz(), img.grid.ny(), img.grid.nx()}, img.values}, meta);
}

VolumeImage load_volume(const std::filesystem::path& path, json* metadata) {
  TensorFile f = read_kind(path, "volume_image");
  expect_dims(f.tensor, 3, "volume_image");
  const VoxelGrid grid = grid_from_json(meta_get<json>(f.metadata, "grid"));
  if (f.tensor.dims[0] != grid.nz() || f.tensor.dims[1] != grid.ny() || f.tensor.dims[2] != grid.nx())
    throw Error(ErrorCode::bad_metadata, "grid metadata disagrees with the tensor shape");
  VolumeImage img(grid, std::move(f.tensor.data));
  if (metadata) *metadata = std::move(f.metadata);
  return img;
}

void save(const std::filesystem::path& path, const MultiplexMatrix& S, const json& extra) {
  json meta = base_metadata("multiplex_matrix", extra);
  meta["scheme"] = to_string(S.scheme);
  write_tensor(path, Tensor{{S.n_patterns, S.n_sources}, S.S}, meta);
}

MultiplexMatrix load_multiplex(const std::filesystem::path& path, json* metadata) {
  TensorFile f = read_kind(path, "multiplex_matrix");
  expect_dims(f.tensor, 2, "multiplex_matrix");
  MultiplexMatrix S;
  S.scheme = multiplex_scheme_from_string(meta_get<std::string>(f.metadata, "scheme"));
  S.n_patterns = f.tensor.dims[0];
  S.n_sources = f.tensor.dims[1];
  S.S = std::move(f.tensor.data);
  if (metadata) *metadata = std::move(f.metadata);
  return S;
}

std::string kind_of(const std::filesystem::path& path) {
  return read_tensor(path).metadata.value("kind", std::string());
}

void write_pgm(const std::filesystem::path& path, const VolumeImage& img, std::size_t k) {
  const VoxelGrid& g = img.grid;
  if (k >= g.nz()) throw Error(ErrorCode::invalid_parameter, "layer out of range");
  double top = 0.0;
  for (std::size_t j = 0; j < g.ny(); ++j)
    for (std::size_t i = 0; i < g.nx(); ++i) top = std::max(top, img.at(i, j, k));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
  f << "P5\n" << g.nx() << " " << g.ny() << "\n255\n";
  for (std::size_t j = 0; j < g.ny(); ++j)
    for (std::size_t i = 0; i < g.nx(); ++i) {
      const double v = top > 0.0 ? std::clamp(img.at(i, j, k) / top, 0.0, 1.0) : 0.0;
      f.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  if (!f) throw Error(ErrorCode::io, "write failed for " + path.string());
}

}  // namespace ctof::artifacts
