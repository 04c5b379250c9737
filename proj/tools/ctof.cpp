#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ctof/analysis.hpp"
#include "ctof/analytic_model.hpp"
#include "ctof/artifacts.hpp"
#include "ctof/config.hpp"
#include "ctof/experiments.hpp"
#include "ctof/inverse_solver.hpp"
#include "ctof/mc_transport.hpp"
#include "ctof/noise_model.hpp"
#include "ctof/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctof;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::non_finite:
    case ErrorCode::operator_invalid:
    case ErrorCode::step_size:
      return kExitNumeric;
    case ErrorCode::io:
    case ErrorCode::bad_magic:
    case ErrorCode::truncated:
    case ErrorCode::unsupported_version:
    case ErrorCode::bad_metadata:
      return kExitIo;
    default:
      return kExitConfig;
  }
}

std::vector<double> parse_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, flag + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw Error(ErrorCode::config, flag + ": empty list");
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_json(const fs::path& p, const json& j) {
  ensure_parent(p);
  std::ofstream f(p);
  if (!f) throw Error(ErrorCode::io, "cannot open " + p.string() + " for writing");
  f << j.dump(2) << "\n";
  if (!f) throw Error(ErrorCode::io, "write failed for " + p.string());
}

json scan_metadata(const SceneConfig& cfg) {
  return {{"geometry", cfg.scan.geometry}, {"nx", cfg.scan.nx}, {"ny", cfg.scan.ny}, {"pitch", cfg.scan.pitch}};
}

// --- simulate -------------------------------------------------------------------------------

struct SimulateArgs {
  std::string config, out, backend = "mc";
  std::optional<std::uint64_t> photons, seed;
  bool noise = false;
};

int cmd_simulate(const SimulateArgs& a) {
  SceneConfig cfg = load_config(a.config);
  if (a.photons) {
    if (*a.photons == 0) throw Error(ErrorCode::config, "--photons: must be >= 1");
    cfg.mc.settings.n_photons = *a.photons;
  }
  if (a.seed) cfg.mc.settings.seed = *a.seed;
  if (a.backend != "mc" && a.backend != "analytic") throw Error(ErrorCode::config, "--backend: must be mc or analytic");
  const ScanConfig scan = cfg.scan.scan();
  const VoxelGrid grid = cfg.grid.grid();
  const VolumeImage phantom = make_phantom(cfg.phantom, grid);
  throw_if_invalid(validate_scene(cfg.medium, grid, scan));

  TransientSet m;
  std::string quantity;
  if (a.backend == "mc") {
    mc::TransportOptions opt;
    opt.detector_aperture = cfg.mc.aperture;
    if (cfg.phantom.type != "none") opt.absorption_perturbation = &phantom;
    m = mc::simulate_transients(cfg.medium, scan, cfg.mc.settings, opt).transients;
    quantity = cfg.phantom.type == "none" ? "background" : "perturbed";
  } else {
    if (cfg.phantom.type == "none") throw Error(ErrorCode::config, "phantom.type: the analytic backend needs a phantom");
    // Linear model: the measured change caused by the phantom.
    if (scan.confocal && std::abs(cfg.scan.pitch - cfg.grid.pitch) < 1e-12 && cfg.scan.nx == cfg.grid.nx &&
        cfg.scan.ny == cfg.grid.ny) {
      std::vector<double> depths;
      for (std::size_t k = 0; k < grid.nz(); ++k) depths.push_back(grid.center(0, 0, k).z);
      const KernelStack k = analytic::psf_analytic(depths, grid.pitch[0], grid.pitch[2], scan.time_axis, cfg.medium,
                                                   cfg.mc.kernel_radius);
      m = apply_conv(k, phantom);
    } else {
      const DenseOperator J = analytic::jacobian_td(scan, grid, cfg.medium);
      m = apply_dense(J, phantom);
    }
    quantity = "difference";
  }
  if (a.noise) {
    m = experiments::acquire(m, cfg.acquisition.photon_rate, cfg.acquisition.model, cfg.acquisition.model.seed).counts;
    quantity += "_counts";
  }
  ensure_parent(a.out);
  artifacts::save(a.out, m, scan.time_axis,
                  {{"scan", scan_metadata(cfg)},
                   {"scene", to_json(cfg)},
                   {"backend", a.backend},
                   {"seed", cfg.mc.settings.seed},
                   {"quantity", quantity}});
  std::cout << "wrote " << a.out << " (" << m.n_rows() << " x " << m.n_bins << ")\n";
  return kExitOk;
}

// --- kernel ---------------------------------------------------------------------------------

struct KernelArgs {
  std::string config, out, backend = "analytic", depths, mode = "absorption";
  std::optional<std::size_t> radius;
  std::optional<std::uint64_t> photons, seed;
};

int cmd_kernel(const KernelArgs& a) {
  SceneConfig cfg = load_config(a.config);
  if (a.photons) {
    if (*a.photons == 0) throw Error(ErrorCode::config, "--photons: must be >= 1");
    cfg.mc.settings.n_photons = *a.photons;
  }
  if (a.seed) cfg.mc.settings.seed = *a.seed;
  const VoxelGrid grid = cfg.grid.grid();
  std::vector<double> depths;
  if (!a.depths.empty()) {
    depths = parse_list(a.depths, "--depths");
  } else {
    for (std::size_t k = 0; k < grid.nz(); ++k) depths.push_back(grid.center(0, 0, k).z);
  }
  for (double d : depths)
    if (!(d - 0.5 * cfg.grid.layer_thickness >= -1e-9 && d + 0.5 * cfg.grid.layer_thickness <= cfg.medium.thickness + 1e-9))
      throw Error(ErrorCode::config, "--depths: layer at " + std::to_string(d) + " mm lies outside the slab");
  const std::size_t radius = a.radius.value_or(cfg.mc.kernel_radius);
  if (a.mode != "absorption" && a.mode != "fluorescence") throw Error(ErrorCode::config, "--mode: absorption or fluorescence");
  const bool fluo = a.mode == "fluorescence";
  if (fluo && !cfg.medium.fluorescence) throw Error(ErrorCode::config, "medium.fluorescence: needed for --mode fluorescence");

  KernelStack k;
  if (a.backend == "mc") {
    k = mc::estimate_psf_mc(cfg.medium, depths, cfg.grid.pitch, cfg.grid.layer_thickness, cfg.scan.axis, cfg.mc.settings,
                            radius, fluo ? mc::ContrastMode::fluorescence : mc::ContrastMode::absorption, cfg.mc.aperture);
  } else if (a.backend == "analytic") {
    analytic::TdOptions opts;
    opts.detector_aperture = cfg.mc.aperture;
    k = analytic::psf_analytic(depths, cfg.grid.pitch, cfg.grid.layer_thickness, cfg.scan.axis, cfg.medium, radius, opts);
    if (fluo) {
      const double tau = cfg.medium.fluorescence->lifetime_ns;
      const std::size_t w = k.width(), nt = k.time_axis.n_bins;
      std::vector<double> series(nt);
      for (std::size_t z = 0; z < k.n_depths(); ++z)
        for (std::size_t iy = 0; iy < w; ++iy)
          for (std::size_t ix = 0; ix < w; ++ix) {
            for (std::size_t t = 0; t < nt; ++t) series[t] = k.at(z, t, iy, ix);
            const auto d = mc::apply_lifetime(series, k.time_axis.bin_width, tau);
            for (std::size_t t = 0; t < nt; ++t) k.at(z, t, iy, ix) = d[t];
          }
    }
  } else {
    throw Error(ErrorCode::config, "--backend: must be mc or analytic");
  }
  ensure_parent(a.out);
  artifacts::save(a.out, k,
                  {{"seed", cfg.mc.settings.seed},
                   {"n_photons", a.backend == "mc" ? json(cfg.mc.settings.n_photons) : json(nullptr)},
                   {"mode", a.mode},
                   {"scene", to_json(cfg)}});
  std::cout << "wrote " << a.out << " (" << k.n_depths() << " depths, radius " << k.radius << ", " << k.time_axis.n_bins
            << " bins, backend " << k.backend << ")\n";
  return kExitOk;
}

// --- reconstruct ----------------------------------------------------------------------------

struct ReconstructArgs {
  std::string measurements, op, out, config, lambda_per_depth, multiplex, schedule;
  std::optional<double> lambda, lambda_rel, tolerance;
  std::optional<std::size_t> iters;
  std::optional<bool> nonneg;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  SolverSpec sv;
  if (!a.config.empty()) sv = load_config(a.config).solver;
  if (a.iters) sv.max_iters = *a.iters;
  if (sv.max_iters < 1) throw Error(ErrorCode::config, "--iters: must be >= 1");
  if (a.nonneg) sv.nonneg = *a.nonneg;
  if (a.tolerance) sv.tolerance = *a.tolerance;
  if (!a.schedule.empty()) sv.schedule = lambda_schedule_from_string(a.schedule);
  if (a.lambda) sv.lambda = *a.lambda, sv.lambda_rel = 0.0;
  if (a.lambda_rel) sv.lambda_rel = *a.lambda_rel;
  if (!a.lambda_per_depth.empty()) sv.lambda_per_depth = parse_list(a.lambda_per_depth, "--lambda-per-depth");

  const artifacts::LoadedTransients meas = artifacts::load_transients(a.measurements);
  const std::string kind = artifacts::kind_of(a.op);
  std::unique_ptr<LinearOperator> holder;
  std::optional<KernelStack> kernels;
  std::optional<DenseOperator> dense;
  VoxelGrid grid;
  if (kind == "kernel_stack") {
    kernels = artifacts::load_kernels(a.op);
    if (!meas.metadata.contains("scan")) throw Error(ErrorCode::bad_metadata, "measurements lack scan metadata");
    const json& sc = meas.metadata.at("scan");
    const auto nx = sc.at("nx").get<std::size_t>(), ny = sc.at("ny").get<std::size_t>();
    const double pitch = sc.at("pitch").get<double>();
    if (sc.at("geometry").get<std::string>() != "confocal")
      throw Error(ErrorCode::dimension_mismatch, "convolutional reconstruction needs confocal measurements");
    if (std::abs(pitch - kernels->pitch) > 1e-9)
      throw Error(ErrorCode::dimension_mismatch, "scan pitch differs from the kernel pitch");
    if (meas.m.n_bins != kernels->time_axis.n_bins)
      throw Error(ErrorCode::dimension_mismatch, "measurement has " + std::to_string(meas.m.n_bins) + " bins, kernels " +
                                                     std::to_string(kernels->time_axis.n_bins));
    grid = VoxelGrid::centered(nx, ny, pitch, kernels->depths.front(), kernels->n_depths(), kernels->layer_thickness);
    holder = std::make_unique<ConvOperator>(*kernels, grid);
  } else if (kind == "dense_operator") {
    dense = artifacts::load_dense(a.op);
    grid = dense->grid();
  } else {
    throw Error(ErrorCode::bad_metadata, a.op + " is neither a kernel stack nor a dense operator");
  }
  const LinearOperator& base = holder ? *holder : static_cast<const LinearOperator&>(*dense);

  std::optional<MultiplexMatrix> S;
  std::unique_ptr<MultiplexOperator> mux;
  std::unique_ptr<ComposedOperator> composed;
  const LinearOperator* op = &base;
  if (!a.multiplex.empty()) {
    if (!dense || dense->layout().kind != MeasurementLayout::Kind::full)
      throw Error(ErrorCode::dimension_mismatch, "--multiplex needs a full-scan dense operator");
    S = artifacts::load_multiplex(a.multiplex);
    mux = std::make_unique<MultiplexOperator>(*S, dense->layout().detectors.size(), dense->layout().n_bins);
    composed = std::make_unique<ComposedOperator>(*mux, base);
    op = composed.get();
  }
  if (meas.m.values.size() != op->rows())
    throw Error(ErrorCode::dimension_mismatch, "measurement has " + std::to_string(meas.m.values.size()) +
                                                   " values, operator " + std::to_string(op->rows()) + " rows");

  SolveParams sp;
  sp.max_iters = sv.max_iters;
  sp.nonneg = sv.nonneg;
  sp.tolerance = sv.tolerance;
  if (!sv.lambda_per_depth.empty()) {
    sp.lambda_per_depth = sv.lambda_per_depth;
  } else {
    const double lambda0 =
        sv.lambda_rel > 0.0 ? experiments::relative_lambda(*op, meas.m.values, sv.lambda_rel) : sv.lambda;
    if (sv.schedule == LambdaSchedule::constant || lambda0 == 0.0 || grid.nz() == 1)
      sp.lambda_per_depth = {lambda0};
    else
      sp.lambda_per_depth = kernels ? layer_lambda(*kernels, lambda0, sv.schedule) : layer_lambda(*dense, lambda0, sv.schedule);
  }
  auto [mu, report] = fista(*op, std::span<const double>(meas.m.values), grid, sp);

  const fs::path out(a.out);
  fs::create_directories(out);
  artifacts::save(out / "mu.dott", mu,
                  {{"measurements", a.measurements}, {"operator", a.op}, {"lambda_per_depth", sp.lambda_per_depth}});
  for (std::size_t k = 0; k < grid.nz(); ++k)
    artifacts::write_pgm(out / ("mu_z" + std::to_string(k) + ".pgm"), mu, k);
  json rep = report.to_json();
  rep["lambda_per_depth"] = sp.lambda_per_depth;
  rep["nonneg"] = sp.nonneg;
  rep["operator_kind"] = kind;
  rep["multiplexed"] = S.has_value();
  rep["threads"] = thread_count();
  write_json(out / "report.json", rep);
  std::cout << "reconstructed " << grid.nx() << "x" << grid.ny() << "x" << grid.nz() << " in " << report.iterations_run
            << " iterations (" << report.wall_time_ms << " ms) -> " << out << "\n";
  return kExitOk;
}

// --- conditioning ---------------------------------------------------------------------------

struct ConditioningArgs {
  std::string config, out, cases = "dot,tofdot,ctofdot", report;
  double floor = 1e-2;
  double memory_budget_mb = 2048.0;
  std::optional<std::uint64_t> photons;
};

int cmd_conditioning(const ConditioningArgs& a) {
  SceneConfig cfg = load_config(a.config);
  if (a.photons) {
    if (*a.photons == 0) throw Error(ErrorCode::config, "--photons: must be >= 1");
    cfg.mc.settings.n_photons = *a.photons;
  }
  if (cfg.scan.nx != cfg.scan.ny || cfg.grid.nx != cfg.scan.nx || cfg.grid.ny != cfg.scan.ny ||
      std::abs(cfg.grid.pitch - cfg.scan.pitch) > 1e-12)
    throw Error(ErrorCode::config, "grid: the conditioning study needs a square scan matching the voxel grid");
  if (!(a.floor > 0.0 && a.floor < 1.0)) throw Error(ErrorCode::config, "--floor: must lie in (0, 1)");
  experiments::ConditioningConfig cc;
  cc.medium = cfg.medium;
  cc.scan_n = cfg.scan.nx;
  cc.pitch = cfg.scan.pitch;
  cc.nz = cfg.grid.nz;
  cc.first_depth = cfg.grid.first_depth;
  cc.layer_thickness = cfg.grid.layer_thickness;
  cc.axis = cfg.scan.axis;
  cc.mc = cfg.mc.settings;
  cc.aperture = cfg.mc.aperture;
  cc.floor = a.floor;
  cc.cases = split(a.cases);
  if (cc.cases.empty()) throw Error(ErrorCode::config, "--cases: empty");

  // Largest matrix plus the SVD workspace (roughly three copies).
  const double n2 = static_cast<double>(cc.scan_n * cc.scan_n);
  const double bytes = 3.0 * 8.0 * n2 * static_cast<double>(cc.axis.n_bins) * n2 * static_cast<double>(cc.nz);
  if (bytes / 1048576.0 > a.memory_budget_mb)
    throw Error(ErrorCode::config, "memory budget exceeded: needs about " + std::to_string(bytes / 1048576.0) +
                                       " MB, budget " + std::to_string(a.memory_budget_mb) + " MB");

  const auto study = experiments::conditioning_study(cc);
  std::vector<CsvRow> rows;
  const int threads = thread_count();
  const std::uint64_t seed = cc.mc.seed;
  json rep = json::array();
  for (const auto& r : study.rows) {
    rows.push_back({r.name, "min_sv_above_floor", r.min_sv_above_floor, study.svd_ms, threads, seed});
    rep.push_back({{"case", r.name},
                   {"rows", r.rows},
                   {"cols", r.cols},
                   {"max_sv", r.max_sv},
                   {"min_sv_above_floor", r.min_sv_above_floor},
                   {"count_above_floor", r.count_above_floor}});
  }
  for (const auto& r : study.rows)
    for (std::size_t i = 0; i < r.spectrum.size(); ++i)
      rows.push_back({r.name, "sv_index=" + std::to_string(i), r.spectrum[i], study.svd_ms, threads, seed});
  ensure_parent(a.out);
  write_csv(a.out, rows);
  if (!a.report.empty())
    write_json(a.report, {{"cases", rep},
                          {"floor", a.floor},
                          {"detected_photons", study.detected},
                          {"mc_ms", study.mc_ms},
                          {"svd_ms", study.svd_ms}});
  for (const auto& r : study.rows)
    std::cout << r.name << ": min retained sv " << r.min_sv_above_floor << " (" << r.count_above_floor << " of "
              << std::min(r.rows, r.cols) << " above floor)\n";
  return kExitOk;
}

// --- benchmark ------------------------------------------------------------------------------

struct BenchmarkArgs {
  std::string config, out, sweep = "sources", methods = "dot,tof_dot,ctof_dot_conv", sizes = "4,6,8";
  int reps = 5;
  std::size_t iters = 20;
};

int cmd_benchmark(const BenchmarkArgs& a) {
  experiments::BenchmarkConfig bc;
  if (!a.config.empty()) {
    const SceneConfig cfg = load_config(a.config);
    bc.medium = cfg.medium;
    bc.axis = cfg.scan.axis;
    bc.pitch = cfg.grid.pitch;
    bc.depth = cfg.grid.first_depth;
    bc.voxels_n = cfg.grid.nx;
    bc.scan_n = cfg.scan.nx;
  }
  bc.sweep = a.sweep;
  bc.methods = split(a.methods);
  bc.sizes.clear();
  for (double v : parse_list(a.sizes, "--sizes")) {
    if (v < 1.0 || v != std::floor(v)) throw Error(ErrorCode::config, "--sizes: expected positive integers");
    bc.sizes.push_back(static_cast<std::size_t>(v));
  }
  if (a.reps < 1) throw Error(ErrorCode::config, "--reps: must be >= 1");
  bc.reps = a.reps;
  bc.solve_iters = a.iters;
  const auto rows = experiments::runtime_benchmark(bc);
  ensure_parent(a.out);
  write_csv(a.out, rows);
  std::cout << to_csv(rows);
  return kExitOk;
}

// --- multiplex-study ------------------------------------------------------------------------

struct MultiplexArgs {
  std::string config, out, scheme = "hadamard01", times = "1,10,100", images;
  std::size_t seeds = 10;
};

int cmd_multiplex_study(const MultiplexArgs& a) {
  const SceneConfig cfg = load_config(a.config);
  if (cfg.scan.nx != cfg.scan.ny || cfg.grid.nx != cfg.grid.ny)
    throw Error(ErrorCode::config, "scan: the multiplexing study needs square source and voxel grids");
  experiments::MultiplexConfig mc;
  mc.medium = cfg.medium;
  mc.sources_n = cfg.scan.nx;
  mc.source_pitch = cfg.scan.pitch;
  mc.voxels_n = cfg.grid.nx;
  mc.voxel_pitch = cfg.grid.pitch;
  mc.depth = cfg.grid.first_depth;
  mc.layer_thickness = cfg.grid.layer_thickness;
  mc.axis = cfg.scan.axis;
  mc.lifetime_ns = cfg.medium.fluorescence ? cfg.medium.fluorescence->lifetime_ns : 1.0;
  mc.acquisition = cfg.acquisition.model;
  mc.photon_rate = cfg.acquisition.photon_rate;
  mc.scheme = multiplex_scheme_from_string(a.scheme);
  if (mc.scheme == MultiplexScheme::far_field_groups)
    throw Error(ErrorCode::config, "--scheme: far_field_groups is not supported by the emission study");
  mc.integration_times_ms = parse_list(a.times, "--integration-times");
  for (double t : mc.integration_times_ms)
    if (!(t > 0.0)) throw Error(ErrorCode::config, "--integration-times: values must be > 0");
  if (a.seeds < 1) throw Error(ErrorCode::config, "--seeds: must be >= 1");
  mc.seeds = a.seeds;
  mc.seed = cfg.acquisition.model.seed;
  if (cfg.solver.lambda_rel > 0.0) mc.lambda_rel = cfg.solver.lambda_rel;
  mc.iters = cfg.solver.max_iters;

  const DenseOperator J = experiments::multiplex_jacobian(mc);
  const auto study = experiments::multiplex_study(mc, J);
  ensure_parent(a.out);
  write_csv(a.out, study.rows);
  if (!a.images.empty()) {
    const fs::path dir(a.images);
    fs::create_directories(dir);
    artifacts::write_pgm(dir / "truth.pgm", study.truth, 0);
    artifacts::write_pgm(dir / "sequential.pgm", study.last_sequential, 0);
    artifacts::write_pgm(dir / "multiplexed.pgm", study.last_multiplexed, 0);
  }
  for (const auto& p : study.points)
    std::cout << "T=" << p.integration_time_ms << " ms: sequential " << p.psnr_sequential << " dB, multiplexed "
              << p.psnr_multiplexed << " dB\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confocal time-of-flight diffuse optical tomography toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate transients for a scene config");
  s->add_option("config", sim.config, "Scene config (JSON)")->required();
  s->add_option("--out", sim.out, "Output DOTT file")->required();
  s->add_option("--backend", sim.backend, "mc (transport) or analytic (linear model of the phantom)");
  s->add_option("--photons", sim.photons, "Photons per source (overrides mc.n_photons)");
  s->add_option("--seed", sim.seed, "MC seed (overrides mc.seed)");
  s->add_flag("--noise", sim.noise, "Convert to Poisson counts with the acquisition model");

  KernelArgs ker;
  auto* k = app.add_subcommand("kernel", "Estimate confocal kernels");
  k->add_option("config", ker.config, "Scene config (JSON)")->required();
  k->add_option("--out", ker.out, "Output DOTT file")->required();
  k->add_option("--backend", ker.backend, "mc or analytic");
  k->add_option("--depths", ker.depths, "Comma-separated layer depths in mm (default: grid layers)");
  k->add_option("--radius", ker.radius, "Kernel radius in voxels (default: mc.kernel_radius)");
  k->add_option("--mode", ker.mode, "absorption or fluorescence");
  k->add_option("--photons", ker.photons, "MC photons (overrides mc.n_photons)");
  k->add_option("--seed", ker.seed, "MC seed (overrides mc.seed)");

  ReconstructArgs rec;
  auto* r = app.add_subcommand("reconstruct", "FISTA reconstruction");
  r->add_option("measurements", rec.measurements, "Transient DOTT file")->required();
  r->add_option("operator", rec.op, "Kernel stack or dense operator DOTT file")->required();
  r->add_option("--out", rec.out, "Output directory")->required();
  r->add_option("--config", rec.config, "Scene config supplying solver defaults");
  r->add_option("--lambda", rec.lambda, "Absolute lambda0");
  r->add_option("--lambda-rel", rec.lambda_rel, "lambda0 as a fraction of max |A^T m|");
  r->add_option("--lambda-per-depth", rec.lambda_per_depth, "Comma-separated lambda per layer");
  r->add_option("--schedule", rec.schedule, "kernel_norm, inverse_mass or constant");
  r->add_option("--iters", rec.iters, "Maximum iterations");
  r->add_option("--tolerance", rec.tolerance, "Relative objective change for early stop (0: run all)");
  r->add_flag("--nonneg,!--no-nonneg", rec.nonneg, "Project onto mu >= 0");
  r->add_option("--multiplex", rec.multiplex, "Multiplexing matrix DOTT file");

  ConditioningArgs cond;
  auto* c = app.add_subcommand("conditioning", "Singular spectra of DOT, ToF-DOT and CToF-DOT Jacobians");
  c->add_option("config", cond.config, "Scene config (JSON)")->required();
  c->add_option("--out", cond.out, "Output CSV")->required();
  c->add_option("--cases", cond.cases, "Comma-separated subset of dot,tofdot,ctofdot");
  c->add_option("--floor", cond.floor, "Relative singular value floor");
  c->add_option("--report", cond.report, "Summary JSON");
  c->add_option("--memory-budget-mb", cond.memory_budget_mb, "Refuse studies needing more memory");
  c->add_option("--photons", cond.photons, "MC photons (overrides mc.n_photons)");

  BenchmarkArgs bench;
  auto* b = app.add_subcommand("benchmark", "Runtime of dense and convolutional models");
  b->add_option("--config", bench.config, "Scene config supplying medium, time axis and grid");
  b->add_option("--out", bench.out, "Output CSV")->required();
  b->add_option("--sweep", bench.sweep, "sources or voxels");
  b->add_option("--methods", bench.methods, "Comma-separated subset of dot,tof_dot,ctof_dot_conv");
  b->add_option("--sizes", bench.sizes, "Comma-separated side lengths of the swept dimension");
  b->add_option("--reps", bench.reps, "Repetitions per timing (median)");
  b->add_option("--iters", bench.iters, "Solver iterations per timed solve");

  MultiplexArgs mux;
  auto* m = app.add_subcommand("multiplex-study", "PSNR versus integration time with and without multiplexing");
  m->add_option("config", mux.config, "Scene config (JSON)")->required();
  m->add_option("--out", mux.out, "Output CSV")->required();
  m->add_option("--scheme", mux.scheme, "identity, hadamard01 or hadamard_pm");
  m->add_option("--integration-times", mux.times, "Comma-separated integration times in ms");
  m->add_option("--seeds", mux.seeds, "Noise seeds per point");
  m->add_option("--images", mux.images, "Directory for PGM images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (threads > 0) set_thread_count(threads);
    if (s->parsed()) return cmd_simulate(sim);
    if (k->parsed()) return cmd_kernel(ker);
    if (r->parsed()) return cmd_reconstruct(rec);
    if (c->parsed()) return cmd_conditioning(cond);
    if (b->parsed()) return cmd_benchmark(bench);
    if (m->parsed()) return cmd_multiplex_study(mux);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return kExitConfig;
  }
  return kExitConfig;
}
