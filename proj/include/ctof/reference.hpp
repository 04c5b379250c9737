#pragma once

#include <span>

#include "ctof/forward_ops.hpp"

/// Single-threaded, loop-for-loop versions of the parallel kernels. Tests use them as oracles
/// and the benchmarks as the serial baseline.
namespace ctof::reference {

void dense_apply(const DenseOperator& op, std::span<const double> x, std::span<double> y);
void dense_adjoint(const DenseOperator& op, std::span<const double> y, std::span<double> x);

/// Direct spatial-domain linear convolution, same layout as ConvOperator.
void conv_apply(const KernelStack& kernels, const VoxelGrid& grid, std::span<const double> x, std::span<double> y);
void conv_adjoint(const KernelStack& kernels, const VoxelGrid& grid, std::span<const double> y, std::span<double> x);

}  // namespace ctof::reference
