#include "ctof/analytic_model.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <unordered_map>

namespace ctof::analytic {
namespace {

constexpr double kPi = std::numbers::pi;

// Image-source depths for an emitter at depth zs: positive images 2m(L + 2zb) + zs, negative
// images 2m(L + 2zb) - 2zb - zs.
template <class F>
void for_each_image(const DiffusionParams& p, double zs, F&& f) {
  const double period = 2.0 * (p.thickness + 2.0 * p.z_b);
  for (int m = -p.image_pairs; m <= p.image_pairs; ++m) {
    const double shift = m * period;
    f(shift + zs, +1.0);
    f(shift - 2.0 * p.z_b - zs, -1.0);
  }
}

double clamp_r2(double r2, const DiffusionParams& p) { return std::max(r2, p.min_distance * p.min_distance); }

double phi_rho(double rho, double z, double t, const DiffusionParams& p) {
  if (!(t > 0.0)) return 0.0;
  const double a = 4.0 * p.D * p.v * t;
  double sum = 0.0;
  for_each_image(p, p.z0, [&](double zi, double sign) {
    const double r2 = clamp_r2(rho * rho + (z - zi) * (z - zi), p);
    sum += sign * std::exp(-r2 / a);
  });
  return p.v * std::pow(kPi * a, -1.5) * std::exp(-p.mu_a * p.v * t) * sum;
}

double refl_rho(double rho, double z, double t, const DiffusionParams& p) {
  if (!(t > 0.0)) return 0.0;
  const double a = 4.0 * p.D * p.v * t;
  double sum = 0.0;
  for_each_image(p, z, [&](double zi, double sign) {
    const double r2 = clamp_r2(rho * rho + zi * zi, p);
    sum += sign * zi * std::exp(-r2 / a);
  });
  return p.D * p.v * std::pow(kPi * a, -1.5) * std::exp(-p.mu_a * p.v * t) * (2.0 / a) * sum;
}

double phi_cw_rho(double rho, double z, const DiffusionParams& p) {
  double sum = 0.0;
  for_each_image(p, p.z0, [&](double zi, double sign) {
    const double r = std::sqrt(clamp_r2(rho * rho + (z - zi) * (z - zi), p));
    sum += sign * std::exp(-p.mu_eff * r) / (4.0 * kPi * p.D * r);
  });
  return sum;
}

double refl_cw_rho(double rho, double z, const DiffusionParams& p) {
  double sum = 0.0;
  for_each_image(p, z, [&](double zi, double sign) {
    const double r = std::sqrt(clamp_r2(rho * rho + zi * zi, p));
    sum += sign * zi * (p.mu_eff + 1.0 / r) * std::exp(-p.mu_eff * r) / (4.0 * kPi * r * r);
  });
  return sum;
}

double lateral(Vec2 a, Vec3 b) { return std::hypot(b.x - a.x, b.y - a.y); }

struct Fine {
  std::size_t oversample;
  double width;
  std::size_t gate_offset;
  std::size_t n;
};

Fine fine_for(const TimeAxis& axis, const TdOptions& o) {
  if (axis.n_bins < 1 || !(axis.bin_width > 0.0)) throw Error(ErrorCode::invalid_parameter, "invalid time axis");
  Fine f{};
  f.oversample = o.oversample ? o.oversample
                              : std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(axis.bin_width / 12.5 - 1e-9)));
  f.width = axis.bin_width / static_cast<double>(f.oversample);
  const double off = axis.gate_start / f.width;
  if (off < -1e-9 || std::abs(off - std::round(off)) > 1e-6)
    throw Error(ErrorCode::invalid_parameter, "gate start must be a non-negative multiple of the fine time step");
  f.gate_offset = static_cast<std::size_t>(std::llround(off));
  f.n = f.gate_offset + axis.n_bins * f.oversample;
  return f;
}

// Fine-bin averages via 4-point Gauss-Legendre.
template <class Q>
std::vector<double> fine_averages(const Fine& f, Q&& q) {
  static constexpr double x[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
  static constexpr double w[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
  std::vector<double> out(f.n);
  for (std::size_t i = 0; i < f.n; ++i) {
    const double c = (static_cast<double>(i) + 0.5) * f.width;
    double acc = 0.0;
    for (int k = 0; k < 4; ++k) acc += w[k] * q(c + 0.5 * f.width * x[k]);
    out[i] = 0.5 * acc;
  }
  return out;
}

std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

// Truncated linear convolution of length-n sequences, by direct sums or FFT.
class SeriesConvolver {
 public:
  SeriesConvolver(std::size_t n, bool use_fft) : n_(n), fft_(use_fft) {
    if (!fft_) return;
    p_ = 1;
    while (p_ < 2 * n_) p_ <<= 1;
    spec_ = p_ / 2 + 1;
    double* r = fftw_alloc_real(p_);
    fftw_complex* c = fftw_alloc_complex(spec_);
    std::lock_guard<std::mutex> lock(plan_mutex());
    fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(p_), r, c, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(p_), c, r, FFTW_ESTIMATE);
    fftw_free(r);
    fftw_free(c);
  }
  ~SeriesConvolver() {
    if (!fft_) return;
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }
  SeriesConvolver(const SeriesConvolver&) = delete;
  SeriesConvolver& operator=(const SeriesConvolver&) = delete;

  bool fft() const { return fft_; }
  std::size_t spectrum_size() const { return spec_; }

  std::vector<std::complex<double>> spectrum(const std::vector<double>& a) const {
    double* r = fftw_alloc_real(p_);
    fftw_complex* c = fftw_alloc_complex(spec_);
    std::fill(r, r + p_, 0.0);
    std::copy(a.begin(), a.end(), r);
    fftw_execute_dft_r2c(fwd_, r, c);
    std::vector<std::complex<double>> out(spec_);
    for (std::size_t k = 0; k < spec_; ++k) out[k] = {c[k][0], c[k][1]};
    fftw_free(r);
    fftw_free(c);
    return out;
  }

  void direct(const double* a, const double* b, double* out) const {
    for (std::size_t k = 0; k < n_; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i <= k; ++i) acc += a[i] * b[k - i];
      out[k] = acc;
    }
  }

  void from_spectra(const std::complex<double>* a, const std::complex<double>* b, double* out) const {
    fftw_complex* c = fftw_alloc_complex(spec_);
    double* r = fftw_alloc_real(p_);
    for (std::size_t k = 0; k < spec_; ++k) {
      const std::complex<double> v = a[k] * b[k];
      c[k][0] = v.real();
      c[k][1] = v.imag();
    }
    fftw_execute_dft_c2r(inv_, c, r);
    const double inv = 1.0 / static_cast<double>(p_);
    for (std::size_t k = 0; k < n_; ++k) out[k] = r[k] * inv;
    fftw_free(c);
    fftw_free(r);
  }

 private:
  std::size_t n_;
  bool fft_;
  std::size_t p_ = 0, spec_ = 0;
  fftw_plan fwd_ = nullptr, inv_ = nullptr;
};

bool use_fft(const Fine& f, ConvMethod m) {
  if (m == ConvMethod::direct) return false;
  if (m == ConvMethod::fft) return true;
  return f.n > 128;
}

// Turns a fine convolution sum C into coarse bin integrals: each product of two bin-constant
// functions spreads half into fine bin k and half into k+1.
void rebin(const Fine& f, const TimeAxis& axis, const double* c, double scale, double* out) {
  for (std::size_t b = 0; b < axis.n_bins; ++b) {
    double acc = 0.0;
    const std::size_t f0 = f.gate_offset + b * f.oversample;
    for (std::size_t k = f0; k < f0 + f.oversample; ++k) acc += 0.5 * (c[k] + (k > 0 ? c[k - 1] : 0.0));
    out[b] = scale * acc;
  }
}

std::uint64_t series_key(double rho, std::size_t layer) {
  return (static_cast<std::uint64_t>(std::llround(rho * rho * 1e6)) << 12) ^ static_cast<std::uint64_t>(layer);
}

}  // namespace

double effective_reflection(double n_rel) {
  if (!(n_rel > 1.0)) return 0.0;
  return -1.440 / (n_rel * n_rel) + 0.710 / n_rel + 0.668 + 0.0636 * n_rel;
}

DiffusionParams DiffusionParams::from_medium(const SlabMedium& medium, int image_pairs) {
  throw_if_invalid(validate_medium(medium));
  const double musp = medium.props.mu_s_reduced();
  if (!(musp > 0.0)) throw Error(ErrorCode::invalid_parameter, "diffusion model needs mu_s' > 0");
  if (image_pairs < 0) throw Error(ErrorCode::invalid_parameter, "image_pairs must be >= 0");
  DiffusionParams p;
  p.D = 1.0 / (3.0 * musp);
  p.mu_a = medium.props.mu_a;
  p.mu_eff = std::sqrt(p.mu_a / p.D);
  p.v = speed_in_medium(medium.props);
  const double r = effective_reflection(medium.relative_index());
  p.z_b = 2.0 * p.D * (1.0 + r) / (1.0 - r);
  p.z0 = 1.0 / musp;
  p.thickness = medium.thickness;
  p.image_pairs = image_pairs;
  return p;
}

double fluence_td(Vec2 source, Vec3 point, double t, const DiffusionParams& p) {
  return phi_rho(lateral(source, point), point.z, t, p);
}

double reflectance_td(Vec2 detector, Vec3 point, double t, const DiffusionParams& p) {
  return refl_rho(lateral(detector, point), point.z, t, p);
}

double fluence_cw(Vec2 source, Vec3 point, const DiffusionParams& p) {
  return phi_cw_rho(lateral(source, point), point.z, p);
}

double reflectance_cw(Vec2 detector, Vec3 point, const DiffusionParams& p) {
  return refl_cw_rho(lateral(detector, point), point.z, p);
}

DenseOperator jacobian_cw(const ScanConfig& scan, const VoxelGrid& grid, const SlabMedium& medium,
                          double detector_aperture) {
  throw_if_invalid(validate_scene(medium, grid, scan));
  DiffusionParams p = DiffusionParams::from_medium(medium);
  p.min_distance = 0.5 * std::min({grid.pitch[0], grid.pitch[1], grid.pitch[2]});
  MeasurementLayout layout = MeasurementLayout::from_scan(scan);
  layout.n_bins = 1;
  DenseOperator op(layout, grid);
  op.backend = "analytic";
  const double scale = grid.voxel_volume() * detector_aperture * detector_aperture;
  const long np = static_cast<long>(layout.n_pairs());
#pragma omp parallel for schedule(dynamic, 4)
  for (long pr = 0; pr < np; ++pr) {
    const auto [si, di] = layout.pairs[static_cast<std::size_t>(pr)];
    for (std::size_t q = 0; q < grid.size(); ++q) {
      const Vec3 c = grid.center(q);
      op.at(static_cast<std::size_t>(pr), q) =
          scale * fluence_cw(layout.sources[si], c, p) * reflectance_cw(layout.detectors[di], c, p);
    }
  }
  return op;
}

std::vector<double> td_series(Vec2 source, Vec2 detector, Vec3 voxel, double voxel_volume, const TimeAxis& axis,
                              const DiffusionParams& p, const TdOptions& options) {
  const Fine f = fine_for(axis, options);
  const double rs = lateral(source, voxel), rd = lateral(detector, voxel);
  const auto a = fine_averages(f, [&](double t) { return phi_rho(rs, voxel.z, t, p); });
  const auto b = fine_averages(f, [&](double t) { return refl_rho(rd, voxel.z, t, p); });
  SeriesConvolver conv(f.n, use_fft(f, options.method));
  std::vector<double> c(f.n);
  if (conv.fft()) {
    const auto sa = conv.spectrum(a), sb = conv.spectrum(b);
    conv.from_spectra(sa.data(), sb.data(), c.data());
  } else {
    conv.direct(a.data(), b.data(), c.data());
  }
  std::vector<double> out(axis.n_bins);
  const double scale = voxel_volume * options.detector_aperture * options.detector_aperture * f.width * f.width;
  rebin(f, axis, c.data(), scale, out.data());
  return out;
}

DenseOperator jacobian_td_pairs(const MeasurementLayout& layout_in, const TimeAxis& axis, const VoxelGrid& grid,
                                const SlabMedium& medium, const TdOptions& options) {
  DiffusionParams p = DiffusionParams::from_medium(medium);
  p.min_distance = 0.5 * std::min({grid.pitch[0], grid.pitch[1], grid.pitch[2]});
  const Fine f = fine_for(axis, options);
  MeasurementLayout layout = layout_in;
  layout.n_bins = axis.n_bins;
  const std::size_t nb = axis.n_bins;

  // Series depend only on (lateral distance, layer), so distinct ones are computed once.
  std::unordered_map<std::uint64_t, std::size_t> phi_index, refl_index;
  std::vector<std::pair<double, std::size_t>> phi_keys, refl_keys;
  auto intern = [](std::unordered_map<std::uint64_t, std::size_t>& idx, std::vector<std::pair<double, std::size_t>>& keys,
                   double rho, std::size_t layer) {
    const auto key = series_key(rho, layer);
    auto it = idx.find(key);
    if (it != idx.end()) return it->second;
    const std::size_t id = keys.size();
    idx.emplace(key, id);
    keys.emplace_back(rho, layer);
    return id;
  };
  const std::size_t np = layout.n_pairs(), nv = grid.size();
  std::vector<std::uint32_t> phi_of(np * nv), refl_of(np * nv);
  for (std::size_t pr = 0; pr < np; ++pr) {
    const auto [si, di] = layout.pairs[pr];
    for (std::size_t q = 0; q < nv; ++q) {
      const Vec3 c = grid.center(q);
      const std::size_t k = q / grid.layer_size();
      phi_of[pr * nv + q] = static_cast<std::uint32_t>(intern(phi_index, phi_keys, lateral(layout.sources[si], c), k));
      refl_of[pr * nv + q] = static_cast<std::uint32_t>(intern(refl_index, refl_keys, lateral(layout.detectors[di], c), k));
    }
  }
  auto depth_of = [&](std::size_t k) { return grid.center(0, 0, k).z; };

  const bool fft = use_fft(f, options.method);
  SeriesConvolver conv(f.n, fft);
  std::vector<std::vector<double>> phi(phi_keys.size()), refl(refl_keys.size());
  const long n_phi = static_cast<long>(phi_keys.size()), n_refl = static_cast<long>(refl_keys.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n_phi; ++i) {
    const auto [rho, k] = phi_keys[static_cast<std::size_t>(i)];
    phi[static_cast<std::size_t>(i)] = fine_averages(f, [&](double t) { return phi_rho(rho, depth_of(k), t, p); });
  }
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n_refl; ++i) {
    const auto [rho, k] = refl_keys[static_cast<std::size_t>(i)];
    refl[static_cast<std::size_t>(i)] = fine_averages(f, [&](double t) { return refl_rho(rho, depth_of(k), t, p); });
  }
  std::vector<std::vector<std::complex<double>>> phi_spec, refl_spec;
  if (fft) {
    phi_spec.resize(phi.size());
    refl_spec.resize(refl.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n_phi; ++i) phi_spec[static_cast<std::size_t>(i)] = conv.spectrum(phi[static_cast<std::size_t>(i)]);
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n_refl; ++i) refl_spec[static_cast<std::size_t>(i)] = conv.spectrum(refl[static_cast<std::size_t>(i)]);
  }

  // Distinct (fluence, reflectance) combinations.
  std::unordered_map<std::uint64_t, std::size_t> combo_index;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> combos;
  std::vector<std::uint32_t> combo_of(np * nv);
  for (std::size_t e = 0; e < np * nv; ++e) {
    const std::uint64_t key = static_cast<std::uint64_t>(phi_of[e]) * refl_keys.size() + refl_of[e];
    auto it = combo_index.find(key);
    if (it == combo_index.end()) {
      it = combo_index.emplace(key, combos.size()).first;
      combos.emplace_back(phi_of[e], refl_of[e]);
    }
    combo_of[e] = static_cast<std::uint32_t>(it->second);
  }
  const double scale = grid.voxel_volume() * options.detector_aperture * options.detector_aperture * f.width * f.width;
  std::vector<double> series(combos.size() * nb);
  const long n_combo = static_cast<long>(combos.size());
#pragma omp parallel
  {
    std::vector<double> c(f.n);
#pragma omp for schedule(dynamic, 16)
    for (long i = 0; i < n_combo; ++i) {
      const auto [a, b] = combos[static_cast<std::size_t>(i)];
      if (fft) conv.from_spectra(phi_spec[a].data(), refl_spec[b].data(), c.data());
      else conv.direct(phi[a].data(), refl[b].data(), c.data());
      rebin(f, axis, c.data(), scale, series.data() + static_cast<std::size_t>(i) * nb);
    }
  }

  DenseOperator op(layout, grid);
  op.backend = "analytic";
  const long n_pairs = static_cast<long>(np);
#pragma omp parallel for schedule(static)
  for (long pr = 0; pr < n_pairs; ++pr)
    for (std::size_t q = 0; q < nv; ++q) {
      const double* s = series.data() + combo_of[static_cast<std::size_t>(pr) * nv + q] * nb;
      for (std::size_t b = 0; b < nb; ++b) op.at(static_cast<std::size_t>(pr) * nb + b, q) = s[b];
    }
  return op;
}

DenseOperator jacobian_td(const ScanConfig& scan, const VoxelGrid& grid, const SlabMedium& medium,
                          const TdOptions& options) {
  throw_if_invalid(validate_scene(medium, grid, scan));
  return jacobian_td_pairs(MeasurementLayout::from_scan(scan), scan.time_axis, grid, medium, options);
}

KernelStack psf_analytic(const std::vector<double>& depths, double pitch, double layer_thickness,
                         const TimeAxis& axis, const SlabMedium& medium, std::size_t kernel_radius,
                         const TdOptions& options) {
  if (depths.empty()) throw Error(ErrorCode::invalid_parameter, "empty depth list");
  for (double d : depths)
    if (d - 0.5 * layer_thickness < -1e-9 || d + 0.5 * layer_thickness > medium.thickness + 1e-9)
      throw Error(ErrorCode::invalid_parameter, "depths outside slab");
  if (static_cast<double>(2 * kernel_radius + 1) * pitch > std::min(medium.extent_x, medium.extent_y))
    throw Error(ErrorCode::invalid_parameter, "kernel radius exceeds slab extent");
  KernelStack ks(kernel_radius, depths, pitch, layer_thickness, axis);
  ks.backend = "analytic";
  ks.validate();

  // Collocated source/detector at scan offset p from a voxel on the axis: both factors see the
  // same lateral distance, and by symmetry only |ix|, |iy| matter.
  DiffusionParams p = DiffusionParams::from_medium(medium);
  p.min_distance = 0.5 * std::min(pitch, layer_thickness);
  const Fine f = fine_for(axis, options);
  const bool fft = use_fft(f, options.method);
  SeriesConvolver conv(f.n, fft);
  const double scale = pitch * pitch * layer_thickness * options.detector_aperture * options.detector_aperture * f.width * f.width;
  const std::size_t r = kernel_radius, nb = axis.n_bins;
  const long n_items = static_cast<long>(depths.size() * (r + 1) * (r + 1));
  std::vector<double> quarter(static_cast<std::size_t>(n_items) * nb);
#pragma omp parallel
  {
    std::vector<double> c(f.n);
#pragma omp for schedule(dynamic, 4)
    for (long it = 0; it < n_items; ++it) {
      const std::size_t d = static_cast<std::size_t>(it) / ((r + 1) * (r + 1));
      const std::size_t rem = static_cast<std::size_t>(it) % ((r + 1) * (r + 1));
      const double rho = std::hypot(static_cast<double>(rem % (r + 1)), static_cast<double>(rem / (r + 1))) * pitch;
      const auto a = fine_averages(f, [&](double t) { return phi_rho(rho, depths[d], t, p); });
      const auto b = fine_averages(f, [&](double t) { return refl_rho(rho, depths[d], t, p); });
      if (fft) {
        const auto sa = conv.spectrum(a), sb = conv.spectrum(b);
        conv.from_spectra(sa.data(), sb.data(), c.data());
      } else {
        conv.direct(a.data(), b.data(), c.data());
      }
      rebin(f, axis, c.data(), scale, quarter.data() + static_cast<std::size_t>(it) * nb);
    }
  }
  for (std::size_t d = 0; d < depths.size(); ++d)
    for (std::size_t iy = 0; iy < ks.width(); ++iy)
      for (std::size_t ix = 0; ix < ks.width(); ++ix) {
        const std::size_t ax = ix > r ? ix - r : r - ix, ay = iy > r ? iy - r : r - iy;
        const double* s = quarter.data() + ((d * (r + 1) + ay) * (r + 1) + ax) * nb;
        for (std::size_t t = 0; t < nb; ++t) ks.at(d, t, iy, ix) = s[t];
      }
  return ks;
}

}  // namespace ctof::analytic
