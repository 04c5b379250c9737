#include "ctof/experiments.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "ctof/analytic_model.hpp"
#include "ctof/parallel.hpp"
#include "ctof/rng.hpp"

namespace ctof::experiments {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

// Explicit small matrix as an operator.
class MatrixOperator final : public LinearOperator {
 public:
  explicit MatrixOperator(Eigen::MatrixXd m) : m_(std::move(m)) {}
  std::size_t rows() const override { return static_cast<std::size_t>(m_.rows()); }
  std::size_t cols() const override { return static_cast<std::size_t>(m_.cols()); }
  void apply(std::span<const double> x, std::span<double> y) const override {
    Eigen::Map<Eigen::VectorXd>(y.data(), m_.rows()) = m_ * Eigen::Map<const Eigen::VectorXd>(x.data(), m_.cols());
  }
  void apply_adjoint(std::span<const double> y, std::span<double> x) const override {
    Eigen::Map<Eigen::VectorXd>(x.data(), m_.cols()) =
        m_.transpose() * Eigen::Map<const Eigen::VectorXd>(y.data(), m_.rows());
  }

 private:
  Eigen::MatrixXd m_;
};

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Least squares in compressed form: with G = A^T A = V diag(e) V^T, R = diag(sqrt(e)) V^T has
// R^T R = G, and b = diag(1/sqrt(e)) V^T A^T y makes R^T (R x - b) = A^T (A x - y). FISTA on
// (R, b) therefore produces the same iterates as on (A, y) at cols x cols cost.
struct NormalForm {
  Eigen::MatrixXd Vt_scaled_inv;  // diag(1/sqrt(e)) V^T, zero rows for null directions
  std::unique_ptr<MatrixOperator> R;

  explicit NormalForm(const Eigen::MatrixXd& gram) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    const Eigen::VectorXd e = es.eigenvalues();
    const double top = e.maxCoeff();
    const Eigen::Index n = e.size();
    Eigen::MatrixXd r(n, n);
    Vt_scaled_inv.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ev = e(i) > 1e-14 * top ? e(i) : 0.0;
      r.row(i) = std::sqrt(ev) * es.eigenvectors().col(i).transpose();
      Vt_scaled_inv.row(i) = ev > 0.0 ? (es.eigenvectors().col(i).transpose() / std::sqrt(ev)).eval()
                                      : Eigen::RowVectorXd::Zero(n);
    }
    R = std::make_unique<MatrixOperator>(std::move(r));
  }

  std::vector<double> rhs(const Eigen::VectorXd& aty) const {
    Eigen::VectorXd b = Vt_scaled_inv * aty;
    return {b.data(), b.data() + b.size()};
  }
};

std::vector<double> lifetime_rows(std::span<const double> series, double bin_width, double lifetime_ns) {
  return mc::apply_lifetime(series, bin_width, lifetime_ns);
}

}  // namespace

CountData acquire(const TransientSet& signal, double photon_rate, const AcquisitionModel& acq, std::uint64_t seed,
                  bool poisson) {
  if (!(photon_rate > 0.0)) throw Error(ErrorCode::invalid_parameter, "photon_rate must be > 0");
  TransientSet rates = signal;
  for (double& v : rates.values) v = std::max(0.0, v) * photon_rate;
  CountData out;
  out.row_scale = count_scale(rates, acq);
  for (double& s : out.row_scale) s *= photon_rate;
  out.dark_per_bin = acq.dark_count_rate * acq.integration_time_ms * 1e-3 / static_cast<double>(signal.n_bins);
  TransientSet expected = expected_counts(rates, acq);
  out.counts = poisson ? sample_counts(expected, seed) : std::move(expected);
  return out;
}

TransientSet to_signal_units(const CountData& data) {
  TransientSet out = data.counts;
  for (std::size_t r = 0; r < out.n_rows(); ++r)
    for (std::size_t t = 0; t < out.n_bins; ++t) out.at(r, t) = (out.at(r, t) - data.dark_per_bin) / data.row_scale[r];
  return out;
}

double relative_lambda(const LinearOperator& op, std::span<const double> m, double rel) {
  std::vector<double> g(op.cols());
  op.apply_adjoint(m, g);
  double mx = 0.0;
  for (double v : g) mx = std::max(mx, std::abs(v));
  return rel * mx;
}

// --- conditioning -------------------------------------------------------------------------

ConditioningStudy conditioning_study(const ConditioningConfig& cfg) {
  const std::size_t n = cfg.scan_n, n2 = n * n, nb = cfg.axis.n_bins;
  const ScanConfig scan = ScanConfig::confocal_grid(n, n, cfg.pitch, cfg.axis);
  const VoxelGrid grid = VoxelGrid::centered(n, n, cfg.pitch, cfg.first_depth, cfg.nz, cfg.layer_thickness);
  throw_if_invalid(validate_scene(cfg.medium, grid, scan));
  for (const auto& c : cfg.cases)
    if (c != "dot" && c != "tofdot" && c != "ctofdot")
      throw Error(ErrorCode::invalid_parameter, "unknown conditioning case '" + c + "'");

  std::vector<std::pair<std::uint32_t, std::uint32_t>> random_pairs, confocal_pairs;
  RngStream rng(cfg.pair_seed, 0);
  for (std::size_t p = 0; p < n2; ++p) {
    const auto s = static_cast<std::uint32_t>(rng() % n2);
    const auto d = static_cast<std::uint32_t>(rng() % n2);
    random_pairs.emplace_back(s, d);
    confocal_pairs.emplace_back(static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(p));
  }

  // Distinct detector offsets (in cells) needed by the cases.
  std::map<std::pair<long, long>, std::uint32_t> offset_index;
  std::vector<Vec2> offsets;
  auto offset_of = [&](std::uint32_t s, std::uint32_t d) {
    return std::make_pair(static_cast<long>(d % n) - static_cast<long>(s % n),
                          static_cast<long>(d / n) - static_cast<long>(s / n));
  };
  auto add_offset = [&](std::pair<long, long> o) {
    if (offset_index.count(o)) return;
    offset_index[o] = static_cast<std::uint32_t>(offsets.size());
    offsets.push_back({static_cast<double>(o.first) * cfg.pitch, static_cast<double>(o.second) * cfg.pitch});
  };
  add_offset({0, 0});
  for (const auto& [s, d] : random_pairs) add_offset(offset_of(s, d));

  std::vector<std::pair<std::uint32_t, std::uint32_t>> rel_pairs;
  for (std::uint32_t i = 0; i < offsets.size(); ++i) rel_pairs.emplace_back(0u, i);
  const MeasurementLayout rel_layout = MeasurementLayout::from_pairs({{0.0, 0.0}}, offsets, rel_pairs, nb);
  const std::size_t wn = 2 * n - 1;
  const VoxelGrid window = VoxelGrid::centered(wn, wn, cfg.pitch, cfg.first_depth, cfg.nz, cfg.layer_thickness);

  ConditioningStudy out;
  auto t0 = Clock::now();
  mc::McJacobian rel = mc::estimate_jacobian_pairs(cfg.medium, rel_layout, cfg.axis, window, cfg.mc, cfg.aperture);
  out.mc_ms = ms_since(t0);
  out.detected = rel.background.detected;

  // J[(s, d), t, q] = J_rel(d - s, t, q - s)
  auto assemble = [&](const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs) {
    DenseOperator op(MeasurementLayout::from_pairs(scan.sources, scan.sources, pairs, nb), grid);
    op.backend = "mc";
    const long half = static_cast<long>(n) - 1;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [s, d] = pairs[p];
      const std::uint32_t oi = offset_index.at(offset_of(s, d));
      const long si = static_cast<long>(s % n), sj = static_cast<long>(s / n);
      for (std::size_t t = 0; t < nb; ++t) {
        const auto src_row = rel.op.row(oi * nb + t);
        double* dst = op.matrix().data() + (p * nb + t) * grid.size();
        for (std::size_t k = 0; k < grid.nz(); ++k)
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i) {
              const auto wi = static_cast<std::size_t>(static_cast<long>(i) - si + half);
              const auto wj = static_cast<std::size_t>(static_cast<long>(j) - sj + half);
              dst[grid.index(i, j, k)] = src_row[window.index(wi, wj, k)];
            }
      }
    }
    return op;
  };

  t0 = Clock::now();
  for (const auto& c : cfg.cases) {
    DenseOperator op = c == "ctofdot" ? assemble(confocal_pairs) : assemble(random_pairs);
    if (c == "dot") op = sum_time_bins(op);
    const auto sv = singular_values(op);
    out.rows.push_back(conditioning_of(c, sv, op.rows(), op.cols(), cfg.floor));
  }
  out.svd_ms = ms_since(t0);
  return out;
}

// --- resolution -----------------------------------------------------------------------------

namespace {

TimeAxis full_axis(const ResolutionConfig& cfg) {
  // Kernels are estimated from t = 0 so that the ungated baseline sees all light.
  const double first = cfg.axis.gate_start / cfg.axis.bin_width;
  if (std::abs(first - std::round(first)) > 1e-9)
    throw Error(ErrorCode::invalid_parameter, "gate start must be a multiple of the bin width");
  return TimeAxis{static_cast<std::size_t>(std::llround(first)) + cfg.axis.n_bins, cfg.axis.bin_width, 0.0};
}

std::vector<double> sum_bins(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return {s};
}

}  // namespace

ResolutionKernels resolution_kernels_mc(const ResolutionConfig& cfg) {
  const TimeAxis axis = full_axis(cfg);
  auto ks = mc::estimate_fluorescence_kernels(cfg.medium, {cfg.depth}, cfg.pitch, cfg.layer_thickness, axis, cfg.mc,
                                              cfg.kernel_radius, cfg.aperture, {Vec2{0.0, 0.0}, Vec2{cfg.cw_offset, 0.0}});
  const std::size_t first = axis.n_bins - cfg.axis.n_bins;
  ResolutionKernels out;
  out.td = ks[0].kernels.time_window(first, cfg.axis.n_bins);
  out.td_leak.assign(ks[0].excitation_leak.begin() + static_cast<long>(first), ks[0].excitation_leak.end());
  out.cw = ks[1].kernels.time_summed();
  out.cw_leak = sum_bins(ks[1].excitation_leak);
  return out;
}

ResolutionKernels resolution_kernels_analytic(const ResolutionConfig& cfg) {
  if (!cfg.medium.fluorescence) throw Error(ErrorCode::invalid_parameter, "resolution test needs a fluorophore model");
  const TimeAxis axis = full_axis(cfg);
  const auto p = analytic::DiffusionParams::from_medium(cfg.medium);
  const double tau = cfg.medium.fluorescence->lifetime_ns;
  analytic::TdOptions opts;
  opts.detector_aperture = cfg.aperture;
  const double voxel = cfg.pitch * cfg.pitch * cfg.layer_thickness;
  auto build = [&](Vec2 det) {
    KernelStack k(cfg.kernel_radius, {cfg.depth}, cfg.pitch, cfg.layer_thickness, axis);
    k.backend = "analytic";
    const long r = static_cast<long>(cfg.kernel_radius);
    const long w = static_cast<long>(k.width());
#pragma omp parallel for schedule(dynamic, 4)
    for (long idx = 0; idx < w * w; ++idx) {
      const long iy = idx / w, ix = idx % w;
      const Vec3 v{-static_cast<double>(ix - r) * cfg.pitch, -static_cast<double>(iy - r) * cfg.pitch, cfg.depth};
      const auto series = analytic::td_series({0.0, 0.0}, det, v, voxel, axis, p, opts);
      const auto decayed = lifetime_rows(series, axis.bin_width, tau);
      for (std::size_t t = 0; t < axis.n_bins; ++t)
        k.at(0, t, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) = decayed[t];
    }
    return k;
  };
  const std::size_t first = axis.n_bins - cfg.axis.n_bins;
  ResolutionKernels out;
  out.td = build({0.0, 0.0}).time_window(first, cfg.axis.n_bins);
  out.cw = build({cfg.cw_offset, 0.0}).time_summed();
  // The diffusion model has no excitation leak term.
  out.td_leak.assign(cfg.axis.n_bins, 0.0);
  out.cw_leak = {0.0};
  return out;
}

std::vector<double> x_profile(const VolumeImage& img, std::size_t k, double half_length) {
  const VoxelGrid& g = img.grid;
  std::vector<double> prof(g.nx(), 0.0);
  std::size_t rows = 0;
  for (std::size_t j = 0; j < g.ny(); ++j) {
    if (half_length > 0.0 && std::abs(g.center(0, j, k).y) > half_length) continue;
    ++rows;
    for (std::size_t i = 0; i < g.nx(); ++i) prof[i] += img.at(i, j, k);
  }
  if (rows > 0)
    for (double& v : prof) v /= static_cast<double>(rows);
  return prof;
}

ResolutionOutcome resolution_test(const ResolutionConfig& cfg, const ResolutionKernels& kernels,
                                  const ResolutionKernels* forward) {
  const ResolutionKernels& fwd = forward ? *forward : kernels;
  const VoxelGrid grid = VoxelGrid::centered(cfg.scan_n, cfg.scan_n, cfg.pitch, cfg.depth, 1, cfg.layer_thickness);
  ResolutionOutcome out;
  out.truth = phantoms::two_lines(grid, cfg.line_width, cfg.separation, 0);

  auto run_arm = [&](const KernelStack& k, const KernelStack& k_fwd, const std::vector<double>& leak,
                     const std::vector<double>& leak_fwd, std::uint64_t seed) {
    ResolutionArm arm;
    ConvOperator op(k, grid);
    const std::size_t nt = k.time_axis.n_bins;
    TransientSet clean = TransientSet::zeros_confocal(grid.layer_size(), nt);
    if (forward) {
      ConvOperator(k_fwd, grid).apply(out.truth.image.values, clean.values);
    } else {
      op.apply(out.truth.image.values, clean.values);
    }
    for (std::size_t r = 0; r < clean.n_rows(); ++r)
      for (std::size_t t = 0; t < nt; ++t) clean.at(r, t) += leak_fwd[t];
    TransientSet sig = clean;
    if (cfg.noise) {
      AcquisitionModel acq = cfg.acquisition;
      const CountData data = acquire(clean, cfg.photon_rate, acq, seed);
      sig = to_signal_units(data);
    }
    // The homogeneous leak is a known calibration background.
    for (std::size_t r = 0; r < sig.n_rows(); ++r)
      for (std::size_t t = 0; t < nt; ++t) sig.at(r, t) -= leak[t];
    SolveParams sp;
    sp.lambda_per_depth = {relative_lambda(op, sig.values, cfg.lambda_rel)};
    sp.max_iters = cfg.iters;
    sp.nonneg = true;
    sp.tolerance = 1e-7;
    auto [recon, report] = fista(op, sig, grid, sp);
    arm.profile = x_profile(recon, 0, cfg.profile_half_length);
    arm.result = evaluate_two_lines(arm.profile, out.truth.center_a, out.truth.center_b);
    arm.recon = std::move(recon);
    arm.report = std::move(report);
    return arm;
  };
  out.td = run_arm(kernels.td, fwd.td, kernels.td_leak, fwd.td_leak, cfg.acquisition.seed);
  out.cw = run_arm(kernels.cw, fwd.cw, kernels.cw_leak, fwd.cw_leak, cfg.acquisition.seed + 1);
  return out;
}

// --- multiplexing -----------------------------------------------------------------------------

DenseOperator multiplex_jacobian(const MultiplexConfig& cfg) {
  const ScanConfig scan = ScanConfig::full_grid(cfg.sources_n, cfg.sources_n, cfg.source_pitch, cfg.axis);
  const VoxelGrid grid = VoxelGrid::centered(cfg.voxels_n, cfg.voxels_n, cfg.voxel_pitch, cfg.depth, 1, cfg.layer_thickness);
  DenseOperator J = analytic::jacobian_td(scan, grid, cfg.medium);
  const std::size_t nb = cfg.axis.n_bins, nc = J.cols();
  const long np = static_cast<long>(J.layout().n_pairs());
#pragma omp parallel for schedule(static)
  for (long p = 0; p < np; ++p) {
    std::vector<double> series(nb);
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t t = 0; t < nb; ++t) series[t] = J.at(static_cast<std::size_t>(p) * nb + t, c);
      const auto d = mc::apply_lifetime(series, cfg.axis.bin_width, cfg.lifetime_ns);
      for (std::size_t t = 0; t < nb; ++t) J.at(static_cast<std::size_t>(p) * nb + t, c) = d[t];
    }
  }
  J.backend = "analytic";
  return J;
}

MultiplexStudy multiplex_study(const MultiplexConfig& cfg, const DenseOperator& J) {
  const std::size_t ns = cfg.sources_n * cfg.sources_n, nb = cfg.axis.n_bins;
  const ScanConfig scan = ScanConfig::full_grid(cfg.sources_n, cfg.sources_n, cfg.source_pitch, cfg.axis);
  const VoxelGrid& grid = J.grid();
  if (J.rows() != ns * ns * nb) throw Error(ErrorCode::dimension_mismatch, "Jacobian does not match the study layout");

  MultiplexStudy out;
  out.truth = phantoms::letter_r(grid);
  TransientSet clean = TransientSet::zeros_full(ns, ns, nb);
  J.apply(out.truth.values, clean.values);

  // Each arm acquires through its patterns and is demultiplexed back to per-source transients,
  // so both reconstruct with the same operator and lambda rule.
  struct Arm {
    std::string name;
    MultiplexMatrix S;
    TransientSet y;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  };
  std::vector<Arm> arms(2);
  arms[0].name = "sequential";
  arms[0].S = build_multiplex(MultiplexScheme::identity, ns, 0.0, scan);
  arms[1].name = std::string("multiplexed_") + to_string(cfg.scheme);
  arms[1].S = build_multiplex(cfg.scheme, ns, 0.0, scan);
  for (auto& a : arms) {
    if (a.S.n_patterns != ns) throw Error(ErrorCode::invalid_parameter, "multiplexing study needs a square pattern matrix");
    a.y = apply_multiplex(a.S, clean);
    a.lu.compute(Eigen::Map<const RowMajor>(a.S.S.data(), static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(ns)));
  }
  const Eigen::Map<const RowMajor> Jm(J.matrix().data(), static_cast<Eigen::Index>(J.rows()),
                                      static_cast<Eigen::Index>(J.cols()));
  const Eigen::MatrixXd gram = Jm.transpose() * Jm;
  const NormalForm normal(gram);

  const int threads = thread_count();
  for (double T : cfg.integration_times_ms) {
    MultiplexPoint pt;
    pt.integration_time_ms = T;
    std::vector<double> psnr_sum(arms.size(), 0.0);
    std::vector<double> wall(arms.size(), 0.0);
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
      for (std::size_t ai = 0; ai < arms.size(); ++ai) {
        Arm& a = arms[ai];
        const auto t0 = Clock::now();
        AcquisitionModel acq = cfg.acquisition;
        acq.integration_time_ms = T;
        const std::uint64_t seed = cfg.seed * 1000003ULL + k;  // shared by both arms
        TransientSet sig = to_signal_units(acquire(a.y, cfg.photon_rate, acq, seed));
        const auto block = static_cast<Eigen::Index>(ns * nb);
        Eigen::Map<RowMajor> Y(sig.values.data(), static_cast<Eigen::Index>(ns), block);
        Y = a.lu.solve(Eigen::MatrixXd(Y));
        const Eigen::Map<const Eigen::VectorXd> yv(sig.values.data(), static_cast<Eigen::Index>(sig.values.size()));
        const Eigen::VectorXd aty = Jm.transpose() * yv;
        const std::vector<double> b = normal.rhs(aty);
        SolveParams sp;
        sp.lambda_per_depth = {cfg.lambda_rel * aty.cwiseAbs().maxCoeff()};
        sp.max_iters = cfg.iters;
        sp.nonneg = true;
        sp.tolerance = 1e-8;
        auto [recon, report] = fista(*normal.R, b, grid, sp);
        const double p = psnr(recon, out.truth);
        psnr_sum[ai] += p;
        wall[ai] += ms_since(t0);
        out.rows.push_back({a.name, "T_ms=" + std::to_string(T) + ";seed_index=" + std::to_string(k), p, ms_since(t0),
                            threads, seed});
        if (ai == 0) out.last_sequential = recon;
        else out.last_multiplexed = recon;
      }
    }
    pt.psnr_sequential = psnr_sum[0] / static_cast<double>(cfg.seeds);
    pt.psnr_multiplexed = psnr_sum[1] / static_cast<double>(cfg.seeds);
    for (std::size_t ai = 0; ai < arms.size(); ++ai)
      out.rows.push_back({arms[ai].name + "_mean", "T_ms=" + std::to_string(T), psnr_sum[ai] / static_cast<double>(cfg.seeds),
                          wall[ai] / static_cast<double>(cfg.seeds), threads, cfg.seed});
    out.points.push_back(pt);
  }
  return out;
}

// --- pillars -----------------------------------------------------------------------------------

KernelStack pillars_kernels(const PillarsConfig& cfg) {
  return analytic::psf_analytic(cfg.depths, cfg.pitch, cfg.layer_thickness, cfg.axis, cfg.medium, cfg.kernel_radius);
}

PillarsOutcome pillars_study(const PillarsConfig& cfg, const KernelStack& kernels) {
  const VoxelGrid grid =
      VoxelGrid::centered(cfg.scan_n, cfg.scan_n, cfg.pitch, cfg.depths.front(), cfg.depths.size(), cfg.layer_thickness);
  PillarsOutcome out;
  out.truth = phantoms::discs(grid, cfg.discs);
  ConvOperator op(kernels, grid);
  const std::size_t nt = kernels.time_axis.n_bins;
  TransientSet clean = TransientSet::zeros_confocal(grid.layer_size(), nt);
  op.apply(out.truth.values, clean.values);
  TransientSet sig = clean;
  if (cfg.noise) sig = to_signal_units(acquire(clean, cfg.photon_rate, cfg.acquisition, cfg.acquisition.seed));

  out.lambda = layer_lambda(kernels, relative_lambda(op, sig.values, cfg.lambda_rel), cfg.schedule);
  SolveParams sp;
  sp.lambda_per_depth = out.lambda;
  sp.max_iters = cfg.iters;
  sp.nonneg = true;
  sp.tolerance = 1e-8;
  auto [recon, report] = fista(op, sig, grid, sp);
  out.recon = std::move(recon);
  out.report = std::move(report);

  for (const auto& d : cfg.discs) {
    PillarResult pr;
    pr.diameter = d.diameter;
    pr.depth = d.depth;
    pr.true_layer = phantoms::nearest_layer(grid, d.depth);
    double best = -1.0;
    for (std::size_t k = 0; k < grid.nz(); ++k) {
      double sum = 0.0;
      std::size_t cnt = 0;
      for (std::size_t j = 0; j < grid.ny(); ++j)
        for (std::size_t i = 0; i < grid.nx(); ++i) {
          const Vec3 c = grid.center(i, j, k);
          if (std::hypot(c.x - d.center.x, c.y - d.center.y) > 0.5 * d.diameter) continue;
          sum += out.recon.at(i, j, k);
          ++cnt;
        }
      const double mean = cnt ? sum / static_cast<double>(cnt) : 0.0;
      if (mean > best) best = mean, pr.found_layer = k;
    }
    const long diff = static_cast<long>(pr.found_layer) - static_cast<long>(pr.true_layer);
    pr.ok = std::abs(diff) <= 1;
    out.pillars.push_back(pr);
  }
  return out;
}

// --- runtime ------------------------------------------------------------------------------------

SpeedupResult speedup_study(const SpeedupConfig& cfg) {
  SpeedupResult out;
  const int threads = thread_count();
  auto setup0 = Clock::now();
  const VoxelGrid grid = VoxelGrid::centered(cfg.voxels_n, cfg.voxels_n, cfg.voxel_pitch, cfg.depth, 1, 1.0);
  // The kernel spans every scan-voxel pair, so the dense expansion is the full confocal Jacobian.
  const std::size_t radius = cfg.voxels_n - 1;
  SlabMedium medium = cfg.medium;
  const double span = static_cast<double>(2 * radius + 1) * cfg.voxel_pitch;
  medium.extent_x = std::max(medium.extent_x, span);
  medium.extent_y = std::max(medium.extent_y, span);
  KernelStack k = analytic::psf_analytic({cfg.depth}, cfg.voxel_pitch, 1.0, cfg.conf_axis, medium, radius);
  ConvOperator conv(k, grid);
  out.setup_ms += ms_since(setup0);

  RngStream rng(3, 0);
  std::vector<double> mu(grid.size()), m(conv.rows()), back(grid.size());
  for (double& v : mu) v = rng.uniform();
  out.conv_apply_ms = median_wall_ms(
      [&] {
        conv.apply(mu, m);
        conv.apply_adjoint(m, back);
      },
      cfg.reps);
  {
    setup0 = Clock::now();
    const DenseOperator dense = expand_conv_to_dense(k, grid);
    out.setup_ms += ms_since(setup0);
    out.dense_apply_ms = median_wall_ms(
        [&] {
          dense.apply(mu, m);
          dense.apply_adjoint(m, back);
        },
        cfg.reps);
  }
  out.rows.push_back({"ctof_dot_conv", "apply", static_cast<double>(conv.rows() * conv.cols()), out.conv_apply_ms, threads, 0});
  out.rows.push_back({"ctof_dot_dense", "apply", static_cast<double>(conv.rows() * conv.cols()), out.dense_apply_ms, threads, 0});

  // Confocal solve on its own scan; measurement from the same model.
  SolveParams sp;
  sp.lambda_per_depth = {0.0};
  sp.max_iters = cfg.solve_iters;
  sp.tolerance = 0.0;
  sp.nonneg = true;
  {
    VolumeImage truth = phantoms::letter_r(grid);
    std::vector<double> y(conv.rows());
    conv.apply(truth.values, y);
    sp.step_size = 1.0 / power_iteration(conv);
    sp.lambda_per_depth = {relative_lambda(conv, y, 0.01)};
    out.conv_solve_ms = median_wall_ms([&] { (void)fista(conv, std::span<const double>(y), grid, sp); }, cfg.reps);
  }
  {
    setup0 = Clock::now();
    const ScanConfig scan = ScanConfig::full_grid(cfg.all_pairs_n, cfg.all_pairs_n, cfg.all_pairs_pitch, cfg.all_pairs_axis);
    const DenseOperator J = analytic::jacobian_td(scan, grid, medium);
    VolumeImage truth = phantoms::letter_r(grid);
    std::vector<double> y(J.rows());
    J.apply(truth.values, y);
    sp.step_size = 1.0 / power_iteration(J);
    sp.lambda_per_depth = {relative_lambda(J, y, 0.01)};
    out.setup_ms += ms_since(setup0);
    out.dense_solve_ms =
        median_wall_ms([&] { (void)fista(J, std::span<const double>(y), grid, sp); }, std::min(cfg.reps, 3));
    out.rows.push_back({"tof_dot_all_pairs", "solve", static_cast<double>(J.rows() * J.cols()), out.dense_solve_ms, threads, 0});
  }
  out.rows.push_back({"ctof_dot_conv", "solve", static_cast<double>(conv.rows() * conv.cols()), out.conv_solve_ms, threads, 0});
  return out;
}

std::vector<CsvRow> runtime_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.sweep != "sources" && cfg.sweep != "voxels")
    throw Error(ErrorCode::invalid_parameter, "sweep must be 'sources' or 'voxels'");
  for (const auto& m : cfg.methods)
    if (m != "dot" && m != "tof_dot" && m != "ctof_dot_conv")
      throw Error(ErrorCode::invalid_parameter, "unknown benchmark method '" + m + "'");
  std::vector<CsvRow> rows;
  const int threads = thread_count();
  for (std::size_t size : cfg.sizes) {
    const std::size_t scan_n = cfg.sweep == "sources" ? size : cfg.scan_n;
    const std::size_t vox_n = cfg.sweep == "voxels" ? size : cfg.voxels_n;
    const VoxelGrid grid = VoxelGrid::centered(vox_n, vox_n, cfg.pitch, cfg.depth, 1, 1.0);
    // Scan spread over the voxel field of view.
    const double scan_pitch = static_cast<double>(vox_n) * cfg.pitch / static_cast<double>(scan_n);
    const std::string param_base = cfg.sweep + "=" + std::to_string(size);
    VolumeImage truth = phantoms::letter_r(grid);
    for (const auto& method : cfg.methods) {
      std::unique_ptr<LinearOperator> holder;
      DenseOperator dense;
      const LinearOperator* op = nullptr;
      if (method == "ctof_dot_conv") {
        KernelStack k = analytic::psf_analytic({cfg.depth}, cfg.pitch, 1.0, cfg.axis, cfg.medium, vox_n - 1);
        holder = std::make_unique<ConvOperator>(k, grid);
        op = holder.get();
      } else {
        const ScanConfig scan = ScanConfig::full_grid(scan_n, scan_n, scan_pitch, cfg.axis);
        dense = analytic::jacobian_td(scan, grid, cfg.medium);
        if (method == "dot") dense = sum_time_bins(dense);
        op = &dense;
      }
      std::vector<double> y(op->rows()), back(op->cols());
      op->apply(truth.values, y);
      const double apply_ms = median_wall_ms(
          [&] {
            op->apply(truth.values, y);
            op->apply_adjoint(y, back);
          },
          cfg.reps);
      SolveParams sp;
      sp.max_iters = cfg.solve_iters;
      sp.tolerance = 0.0;
      sp.nonneg = true;
      sp.step_size = 1.0 / power_iteration(*op);
      sp.lambda_per_depth = {relative_lambda(*op, y, 0.01)};
      const double solve_ms = median_wall_ms([&] { (void)fista(*op, std::span<const double>(y), grid, sp); }, cfg.reps);
      const double size_value = static_cast<double>(op->rows()) * static_cast<double>(op->cols());
      rows.push_back({method, param_base + ";stage=apply", size_value, apply_ms, threads, 0});
      rows.push_back({method, param_base + ";stage=solve", size_value, solve_ms, threads, 0});
    }
  }
  return rows;
}

}  // namespace ctof::experiments
