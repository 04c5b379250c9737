#include <omp.h>

#include <algorithm>
#include <cmath>

#include "ctof/forward_ops.hpp"

namespace ctof {
namespace {

void check_span(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw Error(ErrorCode::dimension_mismatch,
                std::string(what) + " has length " + std::to_string(got) + ", expected " + std::to_string(want));
}

bool same_position(Vec2 a, Vec2 b) { return std::abs(a.x - b.x) < 1e-9 && std::abs(a.y - b.y) < 1e-9; }

}  // namespace

MeasurementLayout MeasurementLayout::from_scan(const ScanConfig& scan) {
  MeasurementLayout l;
  l.sources = scan.sources;
  l.n_bins = scan.time_axis.n_bins;
  if (scan.confocal) {
    l.kind = Kind::confocal;
    l.detectors = scan.sources;
    for (std::size_t i = 0; i < scan.sources.size(); ++i)
      l.pairs.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i));
  } else {
    l.kind = Kind::full;
    l.detectors = scan.detectors;
    for (std::size_t s = 0; s < scan.sources.size(); ++s)
      for (std::size_t d = 0; d < scan.detectors.size(); ++d)
        l.pairs.emplace_back(static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(d));
  }
  return l;
}

MeasurementLayout MeasurementLayout::from_pairs(std::vector<Vec2> sources, std::vector<Vec2> detectors,
                                                std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs,
                                                std::size_t n_bins) {
  MeasurementLayout l;
  l.kind = Kind::pairs;
  l.sources = std::move(sources);
  l.detectors = std::move(detectors);
  l.pairs = std::move(pairs);
  l.n_bins = n_bins;
  for (const auto& [s, d] : l.pairs)
    if (s >= l.sources.size() || d >= l.detectors.size())
      throw Error(ErrorCode::dimension_mismatch, "pair index outside the position lists");
  return l;
}

bool MeasurementLayout::collocated(std::size_t pair) const {
  return same_position(sources[pairs[pair].first], detectors[pairs[pair].second]);
}

TransientSet MeasurementLayout::empty_transients() const {
  if (kind == Kind::full) return TransientSet::zeros_full(sources.size(), detectors.size(), n_bins);
  if (kind == Kind::confocal) return TransientSet::zeros_confocal(sources.size(), n_bins);
  // Arbitrary pair lists are stored one row per pair.
  return TransientSet::zeros_confocal(pairs.size(), n_bins);
}

DenseOperator::DenseOperator(MeasurementLayout layout, VoxelGrid grid)
    : layout_(std::move(layout)), grid_(grid), matrix_(layout_.rows() * grid_.size(), 0.0) {}

DenseOperator::DenseOperator(MeasurementLayout layout, VoxelGrid grid, std::vector<double> matrix)
    : layout_(std::move(layout)), grid_(grid), matrix_(std::move(matrix)) {
  check_span(matrix_.size(), layout_.rows() * grid_.size(), "matrix");
}

void DenseOperator::apply(std::span<const double> x, std::span<double> y) const {
  check_span(x.size(), cols(), "input");
  check_span(y.size(), rows(), "output");
  const long nr = static_cast<long>(rows());
  const std::size_t nc = cols();
#pragma omp parallel for schedule(static)
  for (long r = 0; r < nr; ++r) {
    const double* a = matrix_.data() + static_cast<std::size_t>(r) * nc;
    double acc = 0.0;
    for (std::size_t c = 0; c < nc; ++c) acc += a[c] * x[c];
    y[static_cast<std::size_t>(r)] = acc;
  }
}

void DenseOperator::apply_adjoint(std::span<const double> y, std::span<double> x) const {
  check_span(y.size(), rows(), "input");
  check_span(x.size(), cols(), "output");
  const std::size_t nr = rows(), nc = cols();
  // Each worker owns a column range, so every output is summed in row order.
#pragma omp parallel
  {
    const std::size_t nt = static_cast<std::size_t>(omp_get_num_threads());
    const std::size_t id = static_cast<std::size_t>(omp_get_thread_num());
    const std::size_t c0 = nc * id / nt, c1 = nc * (id + 1) / nt;
    std::fill(x.begin() + static_cast<long>(c0), x.begin() + static_cast<long>(c1), 0.0);
    for (std::size_t r = 0; r < nr; ++r) {
      const double yr = y[r];
      if (yr == 0.0) continue;
      const double* a = matrix_.data() + r * nc;
      for (std::size_t c = c0; c < c1; ++c) x[c] += a[c] * yr;
    }
  }
}

TransientSet apply_dense(const DenseOperator& op, const VolumeImage& mu) {
  check_span(mu.values.size(), op.cols(), "volume");
  TransientSet out = op.layout().empty_transients();
  op.apply(mu.values, out.values);
  return out;
}

VolumeImage apply_dense_adjoint(const DenseOperator& op, const TransientSet& m) {
  check_span(m.values.size(), op.rows(), "measurement");
  VolumeImage out(op.grid());
  op.apply_adjoint(m.values, out.values);
  return out;
}

DenseOperator extract_confocal(const DenseOperator& op, const ScanConfig& scan) {
  const MeasurementLayout& in = op.layout();
  if (in.kind == MeasurementLayout::Kind::confocal) return op;
  const std::size_t nb = in.n_bins;
  std::vector<std::size_t> keep;
  for (const Vec2& s : scan.sources) {
    std::size_t found = in.n_pairs();
    for (std::size_t p = 0; p < in.n_pairs(); ++p)
      if (same_position(in.sources[in.pairs[p].first], s) && in.collocated(p)) {
        found = p;
        break;
      }
    if (found == in.n_pairs()) throw Error(ErrorCode::dimension_mismatch, "missing collocated rows");
    keep.push_back(found);
  }
  MeasurementLayout l;
  l.kind = MeasurementLayout::Kind::confocal;
  l.sources = scan.sources;
  l.detectors = scan.sources;
  l.n_bins = nb;
  for (std::size_t i = 0; i < keep.size(); ++i)
    l.pairs.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i));
  DenseOperator out(l, op.grid());
  out.backend = op.backend;
  const std::size_t nc = op.cols();
  for (std::size_t i = 0; i < keep.size(); ++i)
    std::copy_n(op.matrix().data() + keep[i] * nb * nc, nb * nc, out.matrix().data() + i * nb * nc);
  return out;
}

DenseOperator sum_time_bins(const DenseOperator& op) {
  MeasurementLayout l = op.layout();
  const std::size_t nb = l.n_bins, nc = op.cols();
  l.n_bins = 1;
  DenseOperator out(l, op.grid());
  out.backend = op.backend;
  for (std::size_t p = 0; p < l.n_pairs(); ++p) {
    double* dst = out.matrix().data() + p * nc;
    for (std::size_t b = 0; b < nb; ++b) {
      const double* src = op.matrix().data() + (p * nb + b) * nc;
      for (std::size_t c = 0; c < nc; ++c) dst[c] += src[c];
    }
  }
  return out;
}

KernelStack::KernelStack(std::size_t r, std::vector<double> d, double p, double lt, TimeAxis axis)
    : radius(r), depths(std::move(d)), pitch(p), layer_thickness(lt), time_axis(axis) {
  kernels.assign(depths.size(), std::vector<double>(depth_size(), 0.0));
}

double KernelStack::mass(std::size_t d) const {
  double s = 0.0;
  for (double v : kernels[d]) s += v;
  return s;
}

double KernelStack::l2_norm(std::size_t d) const {
  double s = 0.0;
  for (double v : kernels[d]) s += v * v;
  return std::sqrt(s);
}

void KernelStack::validate() const {
  if (depths.empty()) throw Error(ErrorCode::invalid_parameter, "kernel stack has no depths");
  for (std::size_t i = 1; i < depths.size(); ++i)
    if (!(depths[i] > depths[i - 1])) throw Error(ErrorCode::invalid_parameter, "depths must be strictly increasing");
  if (!(pitch > 0.0) || !(layer_thickness > 0.0)) throw Error(ErrorCode::invalid_parameter, "pitch must be > 0");
  if (time_axis.n_bins < 1) throw Error(ErrorCode::invalid_parameter, "need at least one time bin");
  if (kernels.size() != depths.size()) throw Error(ErrorCode::dimension_mismatch, "kernel count differs from depth count");
  for (const auto& k : kernels) {
    if (k.size() != depth_size()) throw Error(ErrorCode::dimension_mismatch, "kernel size differs from (K, K, N_t)");
    for (double v : k)
      if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "kernel holds non-finite values");
  }
}

std::size_t KernelStack::radius_for_mass(double discard_fraction) const {
  const std::size_t k = width();
  std::size_t best = 0;
  for (std::size_t d = 0; d < depths.size(); ++d) {
    // Mass inside each Chebyshev ring.
    std::vector<double> ring(radius + 1, 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < time_axis.n_bins; ++t)
      for (std::size_t iy = 0; iy < k; ++iy)
        for (std::size_t ix = 0; ix < k; ++ix) {
          const std::size_t r = std::max(iy > radius ? iy - radius : radius - iy, ix > radius ? ix - radius : radius - ix);
          const double v = std::abs(at(d, t, iy, ix));
          ring[r] += v;
          total += v;
        }
    double inside = 0.0;
    std::size_t r = 0;
    for (; r <= radius; ++r) {
      inside += ring[r];
      if (inside >= (1.0 - discard_fraction) * total) break;
    }
    best = std::max(best, std::min(r, radius));
  }
  return best;
}

KernelStack KernelStack::cropped(std::size_t new_radius) const {
  if (new_radius > radius) throw Error(ErrorCode::invalid_parameter, "cannot crop to a larger radius");
  KernelStack out(new_radius, depths, pitch, layer_thickness, time_axis);
  out.backend = backend;
  const std::size_t off = radius - new_radius, k = out.width();
  for (std::size_t d = 0; d < depths.size(); ++d)
    for (std::size_t t = 0; t < time_axis.n_bins; ++t)
      for (std::size_t iy = 0; iy < k; ++iy)
        for (std::size_t ix = 0; ix < k; ++ix) out.at(d, t, iy, ix) = at(d, t, iy + off, ix + off);
  return out;
}

KernelStack KernelStack::time_window(std::size_t first, std::size_t count) const {
  if (count == 0 || first + count > time_axis.n_bins) throw Error(ErrorCode::invalid_parameter, "time window outside the axis");
  TimeAxis axis{count, time_axis.bin_width, time_axis.bin_start(first)};
  KernelStack out(radius, depths, pitch, layer_thickness, axis);
  out.backend = backend;
  const std::size_t plane = width() * width();
  for (std::size_t d = 0; d < n_depths(); ++d)
    std::copy_n(kernels[d].begin() + static_cast<long>(first * plane), count * plane, out.kernels[d].begin());
  return out;
}

KernelStack KernelStack::time_summed() const {
  TimeAxis axis{1, time_axis.bin_width * static_cast<double>(time_axis.n_bins), time_axis.gate_start};
  KernelStack out(radius, depths, pitch, layer_thickness, axis);
  out.backend = backend;
  const std::size_t plane = width() * width();
  for (std::size_t d = 0; d < n_depths(); ++d)
    for (std::size_t t = 0; t < time_axis.n_bins; ++t)
      for (std::size_t i = 0; i < plane; ++i) out.kernels[d][i] += kernels[d][t * plane + i];
  return out;
}

void check_kernel_grid(const KernelStack& kernels, const VoxelGrid& grid) {
  kernels.validate();
  const double tol = 1e-9 * kernels.pitch;
  if (std::abs(grid.pitch[0] - kernels.pitch) > tol || std::abs(grid.pitch[1] - kernels.pitch) > tol)
    throw Error(ErrorCode::dimension_mismatch, "pitch mismatch between kernels and grid");
  if (grid.nz() != kernels.n_depths()) throw Error(ErrorCode::dimension_mismatch, "depth misalignment: layer count differs");
  for (std::size_t k = 0; k < grid.nz(); ++k)
    if (std::abs(grid.center(0, 0, k).z - kernels.depths[k]) > 1e-6)
      throw Error(ErrorCode::dimension_mismatch, "depth misalignment at layer " + std::to_string(k));
}

DenseOperator expand_conv_to_dense(const KernelStack& kernels, const VoxelGrid& grid) {
  check_kernel_grid(kernels, grid);
  const std::size_t nx = grid.nx(), ny = grid.ny(), nt = kernels.time_axis.n_bins;
  const long r = static_cast<long>(kernels.radius);
  MeasurementLayout l;
  l.kind = MeasurementLayout::Kind::confocal;
  l.n_bins = nt;
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      const Vec3 c = grid.center(i, j, 0);
      l.sources.push_back({c.x, c.y});
      l.pairs.emplace_back(static_cast<std::uint32_t>(j * nx + i), static_cast<std::uint32_t>(j * nx + i));
    }
  l.detectors = l.sources;
  DenseOperator op(l, grid);
  op.backend = "conv-expanded";
  const long lnx = static_cast<long>(nx), lny = static_cast<long>(ny);
#pragma omp parallel for schedule(static)
  for (long j = 0; j < lny; ++j)
    for (long i = 0; i < lnx; ++i)
      for (std::size_t k = 0; k < grid.nz(); ++k)
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const long vi = i - dx, vj = j - dy;
            if (vi < 0 || vj < 0 || vi >= lnx || vj >= lny) continue;
            const std::size_t col = grid.index(static_cast<std::size_t>(vi), static_cast<std::size_t>(vj), k);
            for (std::size_t t = 0; t < nt; ++t)
              op.at((static_cast<std::size_t>(j) * nx + static_cast<std::size_t>(i)) * nt + t, col) =
                  kernels.at(k, t, static_cast<std::size_t>(dy + r), static_cast<std::size_t>(dx + r));
          }
  return op;
}

ComposedOperator::ComposedOperator(const LinearOperator& outer, const LinearOperator& inner) : outer_(outer), inner_(inner) {
  if (outer.cols() != inner.rows()) throw Error(ErrorCode::dimension_mismatch, "composed operator shapes do not chain");
}

void ComposedOperator::apply(std::span<const double> x, std::span<double> y) const {
  std::vector<double> mid(inner_.rows());
  inner_.apply(x, mid);
  outer_.apply(mid, y);
}

void ComposedOperator::apply_adjoint(std::span<const double> y, std::span<double> x) const {
  std::vector<double> mid(outer_.cols());
  outer_.apply_adjoint(y, mid);
  inner_.apply_adjoint(mid, x);
}

RowScaledOperator::RowScaledOperator(const LinearOperator& inner, std::vector<double> weights)
    : inner_(inner), weights_(std::move(weights)) {
  check_span(weights_.size(), inner.rows(), "row weights");
}

void RowScaledOperator::apply(std::span<const double> x, std::span<double> y) const {
  inner_.apply(x, y);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= weights_[i];
}

void RowScaledOperator::apply_adjoint(std::span<const double> y, std::span<double> x) const {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) w[i] = y[i] * weights_[i];
  inner_.apply_adjoint(w, x);
}

void IdentityOperator::apply(std::span<const double> x, std::span<double> y) const {
  check_span(x.size(), n_, "input");
  check_span(y.size(), n_, "output");
  std::copy(x.begin(), x.end(), y.begin());
}

void IdentityOperator::apply_adjoint(std::span<const double> y, std::span<double> x) const { apply(y, x); }

}  // namespace ctof
