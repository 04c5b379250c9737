#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "ctof/mc_transport.hpp"
#include "ctof/parallel.hpp"

using namespace ctof;
using namespace ctof::mc;

namespace {

double centroid(const KernelStack& k, std::size_t d) {
  const std::size_t plane = k.width() * k.width();
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < k.time_axis.n_bins; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += k.kernels[d][t * plane + i];
    num += s * k.time_axis.bin_center(t);
    den += s;
  }
  return num / den;
}

// Normalized RMS difference between depth d of a and of b read at map(iy, ix).
template <class Map>
double nrmse(const KernelStack& a, const KernelStack& b, std::size_t d, Map map) {
  double diff = 0.0, norm = 0.0;
  const std::size_t w = a.width();
  for (std::size_t t = 0; t < a.time_axis.n_bins; ++t)
    for (std::size_t iy = 0; iy < w; ++iy)
      for (std::size_t ix = 0; ix < w; ++ix) {
        const auto [jy, jx] = map(iy, ix);
        const double x = a.at(d, t, iy, ix), y = b.at(d, t, jy, jx);
        diff += (x - y) * (x - y);
        norm += x * x;
      }
  return std::sqrt(diff / norm);
}

}  // namespace

TEST_SUITE("mc_transport") {
  TEST_CASE("step sampling") {
    CHECK(step_from_uniform(std::exp(-1.0), 9.0) == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
    CHECK_THROWS_AS(step_from_uniform(0.5, 0.0), Error);
    RngStream rng(3, 0);
    double s9 = 0.0, s18 = 0.0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) s9 += sample_step(rng, 9.0);
    for (int i = 0; i < n; ++i) s18 += sample_step(rng, 18.0);
    CHECK(std::abs(s9 / n - 0.1111) < 0.001);
    CHECK(s18 / s9 == doctest::Approx(0.5).epsilon(0.01));
  }

  TEST_CASE("Henyey-Greenstein moments") {
    const int n = 1'000'000;
    for (double g : {0.0, 0.9, -0.3}) {
      RngStream rng(5, static_cast<std::uint64_t>(10 * (g + 1)));
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const auto d = sample_scatter(rng, g);
        REQUIRE(std::abs(d.cos_theta) <= 1.0);
        REQUIRE(d.phi >= 0.0);
        REQUIRE(d.phi < 2.0 * M_PI);
        sum += d.cos_theta;
      }
      CHECK(std::abs(sum / n - g) < 0.002);
    }
  }

  TEST_CASE("Henyey-Greenstein CDF agreement") {
    const int n = 1'000'000;
    const double g = 0.5;
    RngStream rng(9, 1);
    std::vector<double> c(n);
    for (auto& v : c) v = sample_scatter(rng, g).cos_theta;
    std::sort(c.begin(), c.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
      const double F = hg_cdf(c[i], g);
      ks = std::max({ks, std::abs(F - static_cast<double>(i) / n), std::abs(F - static_cast<double>(i + 1) / n)});
    }
    CHECK(ks < 0.005);
    CHECK(hg_cdf(-1.0, g) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(hg_cdf(1.0, g) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("Fresnel limits") {
    CHECK(fresnel_reflectance(1.0, 0.3) == 0.0);
    CHECK(fresnel_reflectance(1.4, 1.0) == doctest::Approx(std::pow(0.4 / 2.4, 2)));
    CHECK(fresnel_reflectance(1.4, 0.5) == 1.0);  // beyond the critical angle
    CHECK(fresnel_reflectance(1.4, 0.9) < 0.1);
  }

  TEST_CASE("ballistic transmission lands in one bin") {
    SlabMedium m;
    m.props.mu_s = 0.0;
    m.fresnel = false;
    McSettings s;
    s.n_photons = 1000;
    TimeAxis ax{40, 1.0, 0.0};
    auto scan = ScanConfig::confocal_grid(1, 1, 1.0, ax);
    TransportOptions o;
    o.side = DetectionSide::transmission;
    const auto r = simulate_transients(m, scan, s, o);
    const double transit = m.thickness / speed_in_medium(m.props);
    const auto bin = static_cast<std::size_t>(ax.bin_of(transit));
    CHECK(r.transients.at(0, bin) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.transients.total() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.detected == 1000);
  }

  TEST_CASE("settings validation") {
    McSettings s;
    s.n_photons = 0;
    CHECK_THROWS_AS(validate_settings(s), Error);
    s.n_photons = 10;
    s.roulette_survival = 0.0;
    CHECK_THROWS_AS(validate_settings(s), Error);
  }

  TEST_CASE("lifetime kernel") {
    const auto h = lifetime_kernel(8, 100.0, 1.0);
    CHECK(h[0] == doctest::Approx(1.0 - std::exp(-0.1)));
    CHECK(h[3] / h[2] == doctest::Approx(std::exp(-0.1)));
    std::vector<double> delta(40, 0.0);
    delta[5] = 1.0;
    const auto out = apply_lifetime(delta, 100.0, 1.0);
    for (std::size_t i = 0; i < 5; ++i) CHECK(out[i] == 0.0);
    CHECK(out[5] == doctest::Approx(h[0]));
    CHECK(out[8] == doctest::Approx(h[3]));

    std::vector<double> row(20);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = std::sin(0.3 * static_cast<double>(i)) + 1.5;
    const auto same = apply_lifetime(row, 100.0, 0.001);
    for (std::size_t i = 0; i < row.size(); ++i) CHECK(same[i] == doctest::Approx(row[i]).epsilon(0.01));

    std::vector<double> pulse(130, 0.0);
    for (std::size_t i = 0; i < 10; ++i) pulse[i] = 1.0 + static_cast<double>(i);
    const auto spread = apply_lifetime(pulse, 100.0, 1.0);  // 120 bins = 12 tau beyond the input
    const double in = std::accumulate(pulse.begin(), pulse.end(), 0.0);
    const double outsum = std::accumulate(spread.begin(), spread.end(), 0.0);
    CHECK(std::abs(outsum / in - 1.0) < 0.005);

    auto ts = TransientSet::zeros_confocal(2, 40);
    ts.at(1, 5) = 2.0;
    const auto ft = apply_fluorescence_lifetime(ts, 100.0, 1.0);
    CHECK(ft.at(1, 8) == doctest::Approx(2.0 * h[3]));
    CHECK(ft.at(0, 8) == 0.0);
  }

  TEST_CASE("absorption Jacobian sign, locality and symmetry") {
    SlabMedium m;
    m.thickness = 4.0;
    McSettings s;
    s.n_photons = 40000;
    const auto scan = ScanConfig::confocal_grid(1, 1, 1.0, {16, 50.0, 0.0});
    auto grid = VoxelGrid::centered(21, 1, 1.0, 1.0, 1, 1.0);
    const auto J = estimate_jacobian_mc(m, scan, grid, s);
    double total = 0.0;
    for (double v : J.op.matrix()) {
      CHECK(v <= 0.0);
      total += v;
    }
    CHECK(total < 0.0);
    // voxel 10 mm from the only source: sampled by almost no detected photon
    double far = 0.0, mid_l = 0.0, mid_r = 0.0;
    for (std::size_t r = 0; r < J.op.rows(); ++r) {
      far += J.op.at(r, 0);
      mid_l += J.op.at(r, 9);
      mid_r += J.op.at(r, 11);
    }
    CHECK(std::abs(far) < 1e-3 * std::abs(total));
    CHECK(mid_l == doctest::Approx(mid_r).epsilon(0.1));
  }

  TEST_CASE("voxels outside every path are exactly zero") {
    SlabMedium m;
    m.extent_x = m.extent_y = 200.0;
    McSettings s;
    s.n_photons = 2000;
    const auto scan = ScanConfig::confocal_grid(1, 1, 1.0, {8, 100.0, 0.0});
    VoxelGrid grid;
    grid.dims = {2, 1, 1};
    grid.pitch = {1.0, 1.0, 1.0};
    grid.origin = {-0.5, -0.5, 5.0};
    grid.origin[0] = 90.0;
    const auto J = estimate_jacobian_mc(m, scan, grid, s);
    for (double v : J.op.matrix()) CHECK(v == 0.0);
  }

  TEST_CASE("Born prediction matches perturbed rerun") {
    SlabMedium m;
    m.thickness = 5.0;
    McSettings s;
    s.n_photons = 100000;
    const auto scan = ScanConfig::confocal_grid(1, 1, 1.0, {12, 100.0, 0.0});
    const auto grid = VoxelGrid::centered(3, 3, 1.0, 1.5, 1, 1.0);
    const auto J = estimate_jacobian_mc(m, scan, grid, s);
    VolumeImage dmu(grid);
    const double delta = 0.01;
    dmu.at(1, 1, 0) = delta;
    TransportOptions o;
    o.absorption_perturbation = &dmu;
    const auto pert = simulate_transients(m, scan, s, o);
    const auto& base = J.background.transients;
    double dm = 0.0, pred = 0.0;
    for (std::size_t b = 0; b < 12; ++b) {
      dm += pert.transients.at(0, b) - base.at(0, b);
      pred += J.op.at(b, grid.index(1, 1, 0)) * delta;
    }
    CHECK(pred < 0.0);
    CHECK(dm / pred == doctest::Approx(1.0).epsilon(0.03));
  }

  TEST_CASE("kernels: symmetry and depth ordering") {
    SlabMedium m;
    McSettings s;
    s.n_photons = 100000;
    const TimeAxis ax{24, 50.0, 0.0};
    const auto k = estimate_psf_mc(m, {1.5, 3.5}, 1.0, 1.0, ax, s, 3);
    k.validate();
    CHECK(centroid(k, 1) > centroid(k, 0));
    CHECK(k.mass(1) < k.mass(0));

    // "within MC noise": mirrored kernels differ no more than two independent estimates do
    s.seed = 2;
    const auto k2 = estimate_psf_mc(m, {1.5, 3.5}, 1.0, 1.0, ax, s, 3);
    const double noise = nrmse(k, k2, 0, [](std::size_t iy, std::size_t ix) { return std::pair{iy, ix}; });
    const double point = nrmse(k, k, 0, [](std::size_t iy, std::size_t ix) { return std::pair{6 - iy, 6 - ix}; });
    CHECK(point < 1.5 * noise);

    // a detector displaced by +1 mm mirrors one displaced by -1 mm
    s.seed = 1;
    const auto kp = estimate_psf_mc(m, {1.5}, 1.0, 1.0, ax, s, 3, ContrastMode::absorption, 1.0, {1.0, 0.0});
    const auto km = estimate_psf_mc(m, {1.5}, 1.0, 1.0, ax, s, 3, ContrastMode::absorption, 1.0, {-1.0, 0.0});
    s.seed = 2;
    const auto kp2 = estimate_psf_mc(m, {1.5}, 1.0, 1.0, ax, s, 3, ContrastMode::absorption, 1.0, {1.0, 0.0});
    const double offset_noise = nrmse(kp, kp2, 0, [](std::size_t iy, std::size_t ix) { return std::pair{iy, ix}; });
    const double mirror = nrmse(kp, km, 0, [](std::size_t iy, std::size_t ix) { return std::pair{iy, 6 - ix}; });
    CHECK(mirror < 1.5 * offset_noise);
    CHECK(nrmse(kp, kp, 0, [](std::size_t iy, std::size_t ix) { return std::pair{iy, 6 - ix}; }) > 1.5 * offset_noise);
  }

  TEST_CASE("results are identical across thread counts") {
    SlabMedium m;
    McSettings s;
    s.n_photons = 20000;
    const auto scan = ScanConfig::confocal_grid(2, 2, 2.0, {16, 50.0, 0.0});
    const auto grid = VoxelGrid::centered(4, 4, 1.0, 1.5, 2, 1.0);
    set_thread_count(1);
    const auto a = estimate_jacobian_mc(m, scan, grid, s);
    set_thread_count(4);
    const auto b = estimate_jacobian_mc(m, scan, grid, s);
    set_thread_count(0);
    REQUIRE(a.op.matrix().size() == b.op.matrix().size());
    CHECK(std::memcmp(a.op.matrix().data(), b.op.matrix().data(), 8 * a.op.matrix().size()) == 0);
    CHECK(a.background.transients.values == b.background.transients.values);
  }

  TEST_CASE("more photons shrink the error like 1/sqrt(N)") {
    SlabMedium m;
    const auto scan = ScanConfig::confocal_grid(1, 1, 1.0, {1, 2000.0, 0.0});
    McSettings s;
    std::vector<double> spread;
    for (std::uint64_t n : {4000ull, 16000ull}) {
      s.n_photons = n;
      std::vector<double> v;
      for (std::uint64_t seed = 1; seed <= 24; ++seed) {
        s.seed = seed;
        v.push_back(simulate_transients(m, scan, s, 1.0).transients.at(0, 0));
      }
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      spread.push_back(std::sqrt(ss / static_cast<double>(v.size() - 1)));
    }
    CHECK(spread[0] / spread[1] > 1.4);
    CHECK(spread[0] / spread[1] < 2.8);
  }
}
