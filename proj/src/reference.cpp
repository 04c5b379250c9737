#include "ctof/reference.hpp"

#include <algorithm>

namespace ctof::reference {
namespace {

void check(std::size_t got, std::size_t want) {
  if (got != want) throw Error(ErrorCode::dimension_mismatch, "reference kernel shape mismatch");
}

}  // namespace

void dense_apply(const DenseOperator& op, std::span<const double> x, std::span<double> y) {
  check(x.size(), op.cols());
  check(y.size(), op.rows());
  for (std::size_t r = 0; r < op.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < op.cols(); ++c) acc += op.at(r, c) * x[c];
    y[r] = acc;
  }
}

void dense_adjoint(const DenseOperator& op, std::span<const double> y, std::span<double> x) {
  check(y.size(), op.rows());
  check(x.size(), op.cols());
  std::fill(x.begin(), x.end(), 0.0);
  for (std::size_t r = 0; r < op.rows(); ++r)
    for (std::size_t c = 0; c < op.cols(); ++c) x[c] += op.at(r, c) * y[r];
}

void conv_apply(const KernelStack& kernels, const VoxelGrid& grid, std::span<const double> x, std::span<double> y) {
  check_kernel_grid(kernels, grid);
  const std::size_t nx = grid.nx(), ny = grid.ny(), nt = kernels.time_axis.n_bins;
  check(x.size(), grid.size());
  check(y.size(), nx * ny * nt);
  std::fill(y.begin(), y.end(), 0.0);
  const long r = static_cast<long>(kernels.radius), lnx = static_cast<long>(nx), lny = static_cast<long>(ny);
  for (long j = 0; j < lny; ++j)
    for (long i = 0; i < lnx; ++i)
      for (std::size_t k = 0; k < grid.nz(); ++k)
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const long vi = i - dx, vj = j - dy;
            if (vi < 0 || vj < 0 || vi >= lnx || vj >= lny) continue;
            const double mu = x[grid.index(static_cast<std::size_t>(vi), static_cast<std::size_t>(vj), k)];
            if (mu == 0.0) continue;
            double* row = y.data() + static_cast<std::size_t>(j * lnx + i) * nt;
            for (std::size_t t = 0; t < nt; ++t)
              row[t] += mu * kernels.at(k, t, static_cast<std::size_t>(dy + r), static_cast<std::size_t>(dx + r));
          }
}

void conv_adjoint(const KernelStack& kernels, const VoxelGrid& grid, std::span<const double> y, std::span<double> x) {
  check_kernel_grid(kernels, grid);
  const std::size_t nx = grid.nx(), ny = grid.ny(), nt = kernels.time_axis.n_bins;
  check(y.size(), nx * ny * nt);
  check(x.size(), grid.size());
  std::fill(x.begin(), x.end(), 0.0);
  const long r = static_cast<long>(kernels.radius), lnx = static_cast<long>(nx), lny = static_cast<long>(ny);
  for (long j = 0; j < lny; ++j)
    for (long i = 0; i < lnx; ++i) {
      const double* row = y.data() + static_cast<std::size_t>(j * lnx + i) * nt;
      for (std::size_t k = 0; k < grid.nz(); ++k)
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const long vi = i - dx, vj = j - dy;
            if (vi < 0 || vj < 0 || vi >= lnx || vj >= lny) continue;
            double acc = 0.0;
            for (std::size_t t = 0; t < nt; ++t)
              acc += row[t] * kernels.at(k, t, static_cast<std::size_t>(dy + r), static_cast<std::size_t>(dx + r));
            x[grid.index(static_cast<std::size_t>(vi), static_cast<std::size_t>(vj), k)] += acc;
          }
    }
}

}  // namespace ctof::reference
