#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctof/core_types.hpp"

namespace ctof {

/// Linear map used by the solver. Vectors are flat spans; rows() is the measurement length.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;
  virtual std::size_t rows() const = 0;
  virtual std::size_t cols() const = 0;
  virtual void apply(std::span<const double> x, std::span<double> y) const = 0;
  virtual void apply_adjoint(std::span<const double> y, std::span<double> x) const = 0;
};

/// Row index of a dense operator: rows are (pair, bin) with bin fastest; each pair names a
/// (source, detector) by index into the position lists.
struct MeasurementLayout {
  enum class Kind { confocal, full, pairs };

  Kind kind = Kind::confocal;
  std::vector<Vec2> sources;
  std::vector<Vec2> detectors;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::size_t n_bins = 1;

  static MeasurementLayout from_scan(const ScanConfig& scan);
  static MeasurementLayout from_pairs(std::vector<Vec2> sources, std::vector<Vec2> detectors,
                                      std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs,
                                      std::size_t n_bins);
  std::size_t n_pairs() const { return pairs.size(); }
  std::size_t rows() const { return pairs.size() * n_bins; }
  bool collocated(std::size_t pair) const;
  TransientSet empty_transients() const;
};

/// Explicit Jacobian, row-major rows() x cols().
class DenseOperator final : public LinearOperator {
 public:
  DenseOperator() = default;
  DenseOperator(MeasurementLayout layout, VoxelGrid grid);
  DenseOperator(MeasurementLayout layout, VoxelGrid grid, std::vector<double> matrix);

  std::size_t rows() const override { return layout_.rows(); }
  std::size_t cols() const override { return grid_.size(); }
  void apply(std::span<const double> x, std::span<double> y) const override;
  void apply_adjoint(std::span<const double> y, std::span<double> x) const override;

  const MeasurementLayout& layout() const { return layout_; }
  const VoxelGrid& grid() const { return grid_; }
  std::vector<double>& matrix() { return matrix_; }
  const std::vector<double>& matrix() const { return matrix_; }
  double& at(std::size_t r, std::size_t c) { return matrix_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return matrix_[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {matrix_.data() + r * cols(), cols()}; }

  /// Metadata tag of the producer ("mc", "analytic", "conv-expanded", ...).
  std::string backend = "unknown";

 private:
  MeasurementLayout layout_;
  VoxelGrid grid_;
  std::vector<double> matrix_;
};

TransientSet apply_dense(const DenseOperator& op, const VolumeImage& mu);
VolumeImage apply_dense_adjoint(const DenseOperator& op, const TransientSet& m);

/// Keeps only the rows whose source and detector are collocated.
DenseOperator extract_confocal(const DenseOperator& op, const ScanConfig& scan);

/// Collapses the time axis by summing bins (the continuous-wave measurement).
DenseOperator sum_time_bins(const DenseOperator& op);

/// Depth-stacked confocal kernels. kernel(d)[(t * K + iy) * K + ix] is the response at scan
/// offset ((ix - R) * pitch, (iy - R) * pitch) from a unit perturbation at depth d.
struct KernelStack {
  std::size_t radius = 0;
  std::vector<double> depths;
  double pitch = 1.0;
  double layer_thickness = 1.0;
  TimeAxis time_axis;
  std::vector<std::vector<double>> kernels;
  std::string backend = "unknown";

  KernelStack() = default;
  KernelStack(std::size_t radius, std::vector<double> depths, double pitch, double layer_thickness, TimeAxis axis);

  std::size_t width() const { return 2 * radius + 1; }
  std::size_t n_depths() const { return depths.size(); }
  std::size_t depth_size() const { return width() * width() * time_axis.n_bins; }
  double& at(std::size_t d, std::size_t t, std::size_t iy, std::size_t ix) {
    return kernels[d][(t * width() + iy) * width() + ix];
  }
  double at(std::size_t d, std::size_t t, std::size_t iy, std::size_t ix) const {
    return kernels[d][(t * width() + iy) * width() + ix];
  }
  double mass(std::size_t d) const;
  double l2_norm(std::size_t d) const;
  void validate() const;

  /// Smallest radius keeping at least (1 - discard_fraction) of every depth's kernel mass.
  std::size_t radius_for_mass(double discard_fraction) const;
  KernelStack cropped(std::size_t new_radius) const;
  /// Keeps bins [first, first + count) and shifts the gate accordingly.
  KernelStack time_window(std::size_t first, std::size_t count) const;
  /// One bin holding the sum over all bins (the continuous-wave kernel).
  KernelStack time_summed() const;
};

/// FFT-backed sum over depths of 2D linear convolutions per time bin. Scan positions coincide
/// with the voxel grid's lateral centers; output row (j * nx + i) holds that position's transient.
class ConvOperator final : public LinearOperator {
 public:
  ConvOperator(const KernelStack& kernels, const VoxelGrid& grid);
  ~ConvOperator() override;
  ConvOperator(const ConvOperator&) = delete;
  ConvOperator& operator=(const ConvOperator&) = delete;

  std::size_t rows() const override { return nx_ * ny_ * nt_; }
  std::size_t cols() const override { return nx_ * ny_ * nz_; }
  void apply(std::span<const double> x, std::span<double> y) const override;
  void apply_adjoint(std::span<const double> y, std::span<double> x) const override;

  const VoxelGrid& grid() const { return grid_; }
  std::size_t padded_x() const { return px_; }
  std::size_t padded_y() const { return py_; }

 private:
  struct Plans;
  VoxelGrid grid_;
  std::size_t nx_, ny_, nz_, nt_, radius_;
  std::size_t px_, py_, spec_size_;
  std::vector<std::complex<double>> kernel_spectra_;  // [z][t][spec]
  std::unique_ptr<Plans> plans_;
};

TransientSet apply_conv(const KernelStack& kernels, const VolumeImage& mu);
VolumeImage apply_conv_adjoint(const KernelStack& kernels, const TransientSet& m, const VoxelGrid& grid);

/// Dense operator whose rows are shifted kernel copies; the explicit form of ConvOperator.
DenseOperator expand_conv_to_dense(const KernelStack& kernels, const VoxelGrid& grid);

/// Throws unless the kernel stack's pitch and depths line up with the grid.
void check_kernel_grid(const KernelStack& kernels, const VoxelGrid& grid);

enum class MultiplexScheme { identity, hadamard01, hadamard_pm, far_field_groups };

const char* to_string(MultiplexScheme scheme);
MultiplexScheme multiplex_scheme_from_string(const std::string& name);

struct MultiplexMatrix {
  MultiplexScheme scheme = MultiplexScheme::identity;
  std::size_t n_patterns = 0;
  std::size_t n_sources = 0;
  std::vector<double> S;  ///< row-major n_patterns x n_sources

  double at(std::size_t p, std::size_t s) const { return S[p * n_sources + s]; }
};

/// +-1 Hadamard matrix of order n (Sylvester and Paley constructions and their Kronecker
/// products). Throws invalid_parameter when no construction is known.
std::vector<int> hadamard_matrix(std::size_t n);

MultiplexMatrix build_multiplex(MultiplexScheme scheme, std::size_t n_sources, double min_separation,
                                const ScanConfig& scan);

/// y[p, d, t] = sum_s S[p, s] m[s, d, t] for full scans. For far_field_groups on confocal data
/// each source's transient is attributed to the pattern that lights it.
TransientSet apply_multiplex(const MultiplexMatrix& S, const TransientSet& m);

/// Recovers per-source transients from far-field group patterns: every detector's transient is
/// assigned to the nearest active source of its pattern, giving confocal rows.
TransientSet demultiplex_far_field(const MultiplexMatrix& S, const TransientSet& y, const ScanConfig& scan);

/// Source-axis multiplexing as a linear operator on full-scan measurement vectors.
class MultiplexOperator final : public LinearOperator {
 public:
  MultiplexOperator(const MultiplexMatrix& S, std::size_t n_detectors, std::size_t n_bins);
  std::size_t rows() const override { return S_.n_patterns * block_; }
  std::size_t cols() const override { return S_.n_sources * block_; }
  void apply(std::span<const double> x, std::span<double> y) const override;
  void apply_adjoint(std::span<const double> y, std::span<double> x) const override;

 private:
  MultiplexMatrix S_;
  std::size_t block_;
};

/// outer * inner. Both operands must outlive the composition.
class ComposedOperator final : public LinearOperator {
 public:
  ComposedOperator(const LinearOperator& outer, const LinearOperator& inner);
  std::size_t rows() const override { return outer_.rows(); }
  std::size_t cols() const override { return inner_.cols(); }
  void apply(std::span<const double> x, std::span<double> y) const override;
  void apply_adjoint(std::span<const double> y, std::span<double> x) const override;

 private:
  const LinearOperator& outer_;
  const LinearOperator& inner_;
};

/// diag(weights) * inner, used for noise whitening.
class RowScaledOperator final : public LinearOperator {
 public:
  RowScaledOperator(const LinearOperator& inner, std::vector<double> weights);
  std::size_t rows() const override { return inner_.rows(); }
  std::size_t cols() const override { return inner_.cols(); }
  void apply(std::span<const double> x, std::span<double> y) const override;
  void apply_adjoint(std::span<const double> y, std::span<double> x) const override;

 private:
  const LinearOperator& inner_;
  std::vector<double> weights_;
};

class IdentityOperator final : public LinearOperator {
 public:
  explicit IdentityOperator(std::size_t n) : n_(n) {}
  std::size_t rows() const override { return n_; }
  std::size_t cols() const override { return n_; }
  void apply(std::span<const double> x, std::span<double> y) const override;
  void apply_adjoint(std::span<const double> y, std::span<double> x) const override;

 private:
  std::size_t n_;
};

}  // namespace ctof
