#include <fftw3.h>

#include <algorithm>
#include <mutex>

#include "ctof/forward_ops.hpp"

namespace ctof {
namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// Smallest n' >= n whose only prime factors are 2, 3, 5.
std::size_t fft_size(std::size_t n) {
  for (std::size_t m = std::max<std::size_t>(n, 1);; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2, 3, 5})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

struct RealBuffer {
  double* p;
  explicit RealBuffer(std::size_t n) : p(fftw_alloc_real(n)) {}
  ~RealBuffer() { fftw_free(p); }
  RealBuffer(const RealBuffer&) = delete;
  RealBuffer& operator=(const RealBuffer&) = delete;
};

struct ComplexBuffer {
  fftw_complex* p;
  explicit ComplexBuffer(std::size_t n) : p(fftw_alloc_complex(n)) {}
  ~ComplexBuffer() { fftw_free(p); }
  ComplexBuffer(const ComplexBuffer&) = delete;
  ComplexBuffer& operator=(const ComplexBuffer&) = delete;
};

}  // namespace

struct ConvOperator::Plans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

ConvOperator::ConvOperator(const KernelStack& kernels, const VoxelGrid& grid)
    : grid_(grid),
      nx_(grid.nx()),
      ny_(grid.ny()),
      nz_(grid.nz()),
      nt_(kernels.time_axis.n_bins),
      radius_(kernels.radius),
      plans_(std::make_unique<Plans>()) {
  check_kernel_grid(kernels, grid);
  // Padding by the kernel radius is enough for a linear result on the scan window.
  px_ = fft_size(nx_ + radius_);
  py_ = fft_size(ny_ + radius_);
  spec_size_ = py_ * (px_ / 2 + 1);
  {
    RealBuffer r(px_ * py_);
    ComplexBuffer c(spec_size_);
    std::lock_guard<std::mutex> lock(planner_mutex());
    plans_->forward = fftw_plan_dft_r2c_2d(static_cast<int>(py_), static_cast<int>(px_), r.p, c.p, FFTW_ESTIMATE);
    plans_->inverse = fftw_plan_dft_c2r_2d(static_cast<int>(py_), static_cast<int>(px_), c.p, r.p, FFTW_ESTIMATE);
  }

  kernel_spectra_.resize(nz_ * nt_ * spec_size_);
  const long n_items = static_cast<long>(nz_ * nt_);
  const long r = static_cast<long>(radius_);
  const std::size_t k = kernels.width();
#pragma omp parallel
  {
    RealBuffer buf(px_ * py_);
    ComplexBuffer spec(spec_size_);
#pragma omp for schedule(static)
    for (long item = 0; item < n_items; ++item) {
      const std::size_t z = static_cast<std::size_t>(item) / nt_, t = static_cast<std::size_t>(item) % nt_;
      std::fill(buf.p, buf.p + px_ * py_, 0.0);
      for (std::size_t iy = 0; iy < k; ++iy)
        for (std::size_t ix = 0; ix < k; ++ix) {
          const long dy = static_cast<long>(iy) - r, dx = static_cast<long>(ix) - r;
          const std::size_t y = static_cast<std::size_t>((dy + static_cast<long>(py_)) % static_cast<long>(py_));
          const std::size_t x = static_cast<std::size_t>((dx + static_cast<long>(px_)) % static_cast<long>(px_));
          buf.p[y * px_ + x] = kernels.at(z, t, iy, ix);
        }
      fftw_execute_dft_r2c(plans_->forward, buf.p, spec.p);
      std::complex<double>* dst = kernel_spectra_.data() + static_cast<std::size_t>(item) * spec_size_;
      for (std::size_t s = 0; s < spec_size_; ++s) dst[s] = {spec.p[s][0], spec.p[s][1]};
    }
  }
}

ConvOperator::~ConvOperator() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(plans_->forward);
  fftw_destroy_plan(plans_->inverse);
}

void ConvOperator::apply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != cols() || y.size() != rows()) throw Error(ErrorCode::dimension_mismatch, "conv operator shape mismatch");
  const std::size_t layer = nx_ * ny_;
  std::vector<std::complex<double>> mu_spec(nz_ * spec_size_);
  const long lnz = static_cast<long>(nz_), lnt = static_cast<long>(nt_);
  const double scale = 1.0 / static_cast<double>(px_ * py_);
#pragma omp parallel
  {
    RealBuffer buf(px_ * py_);
    ComplexBuffer spec(spec_size_);
#pragma omp for schedule(static)
    for (long z = 0; z < lnz; ++z) {
      std::fill(buf.p, buf.p + px_ * py_, 0.0);
      const double* src = x.data() + static_cast<std::size_t>(z) * layer;
      for (std::size_t j = 0; j < ny_; ++j) std::copy_n(src + j * nx_, nx_, buf.p + j * px_);
      fftw_execute_dft_r2c(plans_->forward, buf.p, spec.p);
      std::complex<double>* dst = mu_spec.data() + static_cast<std::size_t>(z) * spec_size_;
      for (std::size_t s = 0; s < spec_size_; ++s) dst[s] = {spec.p[s][0], spec.p[s][1]};
    }
#pragma omp for schedule(static)
    for (long t = 0; t < lnt; ++t) {
      std::fill(reinterpret_cast<double*>(spec.p), reinterpret_cast<double*>(spec.p) + 2 * spec_size_, 0.0);
      auto* acc = reinterpret_cast<std::complex<double>*>(spec.p);
      for (std::size_t z = 0; z < nz_; ++z) {
        const std::complex<double>* kz = kernel_spectra_.data() + (z * nt_ + static_cast<std::size_t>(t)) * spec_size_;
        const std::complex<double>* mz = mu_spec.data() + z * spec_size_;
        for (std::size_t s = 0; s < spec_size_; ++s) acc[s] += kz[s] * mz[s];
      }
      fftw_execute_dft_c2r(plans_->inverse, spec.p, buf.p);
      for (std::size_t j = 0; j < ny_; ++j)
        for (std::size_t i = 0; i < nx_; ++i) y[(j * nx_ + i) * nt_ + static_cast<std::size_t>(t)] = buf.p[j * px_ + i] * scale;
    }
  }
}

void ConvOperator::apply_adjoint(std::span<const double> y, std::span<double> x) const {
  if (y.size() != rows() || x.size() != cols()) throw Error(ErrorCode::dimension_mismatch, "conv operator shape mismatch");
  const std::size_t layer = nx_ * ny_;
  std::vector<std::complex<double>> m_spec(nt_ * spec_size_);
  const long lnz = static_cast<long>(nz_), lnt = static_cast<long>(nt_);
  const double scale = 1.0 / static_cast<double>(px_ * py_);
#pragma omp parallel
  {
    RealBuffer buf(px_ * py_);
    ComplexBuffer spec(spec_size_);
#pragma omp for schedule(static)
    for (long t = 0; t < lnt; ++t) {
      std::fill(buf.p, buf.p + px_ * py_, 0.0);
      for (std::size_t j = 0; j < ny_; ++j)
        for (std::size_t i = 0; i < nx_; ++i) buf.p[j * px_ + i] = y[(j * nx_ + i) * nt_ + static_cast<std::size_t>(t)];
      fftw_execute_dft_r2c(plans_->forward, buf.p, spec.p);
      std::complex<double>* dst = m_spec.data() + static_cast<std::size_t>(t) * spec_size_;
      for (std::size_t s = 0; s < spec_size_; ++s) dst[s] = {spec.p[s][0], spec.p[s][1]};
    }
#pragma omp for schedule(static)
    for (long z = 0; z < lnz; ++z) {
      std::fill(reinterpret_cast<double*>(spec.p), reinterpret_cast<double*>(spec.p) + 2 * spec_size_, 0.0);
      auto* acc = reinterpret_cast<std::complex<double>*>(spec.p);
      for (std::size_t t = 0; t < nt_; ++t) {
        const std::complex<double>* kz = kernel_spectra_.data() + (static_cast<std::size_t>(z) * nt_ + t) * spec_size_;
        const std::complex<double>* mt = m_spec.data() + t * spec_size_;
        for (std::size_t s = 0; s < spec_size_; ++s) acc[s] += std::conj(kz[s]) * mt[s];
      }
      fftw_execute_dft_c2r(plans_->inverse, spec.p, buf.p);
      double* dst = x.data() + static_cast<std::size_t>(z) * layer;
      for (std::size_t j = 0; j < ny_; ++j)
        for (std::size_t i = 0; i < nx_; ++i) dst[j * nx_ + i] = buf.p[j * px_ + i] * scale;
    }
  }
}

TransientSet apply_conv(const KernelStack& kernels, const VolumeImage& mu) {
  ConvOperator op(kernels, mu.grid);
  TransientSet out = TransientSet::zeros_confocal(mu.grid.layer_size(), kernels.time_axis.n_bins);
  op.apply(mu.values, out.values);
  return out;
}

VolumeImage apply_conv_adjoint(const KernelStack& kernels, const TransientSet& m, const VoxelGrid& grid) {
  ConvOperator op(kernels, grid);
  if (m.values.size() != op.rows()) throw Error(ErrorCode::dimension_mismatch, "measurement does not match scan grid");
  VolumeImage out(grid);
  op.apply_adjoint(m.values, out.values);
  return out;
}

}  // namespace ctof
