#include <doctest.h>

#include <cmath>

#include "ctof/analytic_model.hpp"
#include "ctof/mc_transport.hpp"
#include "ctof/rng.hpp"

using namespace ctof;
using namespace ctof::analytic;

namespace {

double column_centroid(const DenseOperator& J, std::size_t col, const TimeAxis& ax) {
  double num = 0.0, den = 0.0;
  for (std::size_t b = 0; b < ax.n_bins; ++b) {
    num += J.at(b, col) * ax.bin_center(b);
    den += J.at(b, col);
  }
  return num / den;
}

double cw_reflectance(double rho, const DiffusionParams& p) {
  double sum = 0.0;
  for (double t = 0.5; t < 20000.0; t += 1.0) sum += reflectance_td({rho, 0.0}, {0.0, 0.0, 2.0}, t, p);
  return sum;
}

}  // namespace

TEST_SUITE("analytic_model") {
  TEST_CASE("diffusion constants") {
    SlabMedium m;
    const auto p = DiffusionParams::from_medium(m);
    CHECK(p.D == doctest::Approx(1.0 / 27.0));
    CHECK(p.z0 == doctest::Approx(1.0 / 9.0));
    CHECK(p.v == doctest::Approx(0.299792458 / 1.4));
    CHECK(p.z_b > 0.0);
    CHECK(effective_reflection(1.0) == 0.0);
    CHECK(effective_reflection(1.4) > 0.4);
    CHECK(effective_reflection(1.4) < 0.55);
    m.props.mu_s = 0.0;
    CHECK_THROWS_AS(DiffusionParams::from_medium(m), Error);
  }

  TEST_CASE("lateral symmetry") {
    const auto p = DiffusionParams::from_medium(SlabMedium{});
    for (double t : {50.0, 200.0, 800.0}) {
      CHECK(fluence_td({0, 0}, {3.0, 1.0, 2.0}, t, p) == doctest::Approx(fluence_td({0, 0}, {-3.0, -1.0, 2.0}, t, p)));
      CHECK(reflectance_td({1.0, 0}, {0.0, 0.0, 2.0}, t, p) ==
            doctest::Approx(reflectance_td({-1.0, 0}, {0.0, 0.0, 2.0}, t, p)));
    }
  }

  TEST_CASE("infinite-medium peak time") {
    auto p = DiffusionParams::from_medium(SlabMedium{});
    // push the boundary and every image far away so only the direct term remains
    p.z_b = 1e5;
    p.thickness = 1e5;
    p.image_pairs = 0;
    const double r = 5.0;
    const double step = 0.1;
    double best = 0.0, t_best = 0.0;
    for (double t = step; t < 2000.0; t += step) {
      const double v = fluence_td({0, 0}, {r, 0.0, p.z0}, t, p);
      if (v > best) {
        best = v;
        t_best = t;
      }
    }
    CHECK(std::abs(t_best - r * r / (6.0 * p.D * p.v)) <= step);
  }

  TEST_CASE("absorption scales by exp(-mu_a v t)") {
    const auto p0 = DiffusionParams::from_medium(SlabMedium{});
    auto p1 = p0;
    p1.mu_a = 0.01;
    for (double t : {100.0, 400.0, 1000.0}) {
      const double k = std::exp(-0.01 * p0.v * t);
      CHECK(fluence_td({0, 0}, {2.0, 0.0, 3.0}, t, p1) ==
            doctest::Approx(k * fluence_td({0, 0}, {2.0, 0.0, 3.0}, t, p0)).epsilon(1e-12));
      CHECK(reflectance_td({0, 0}, {2.0, 0.0, 3.0}, t, p1) ==
            doctest::Approx(k * reflectance_td({0, 0}, {2.0, 0.0, 3.0}, t, p0)).epsilon(1e-12));
    }
  }

  TEST_CASE("time-integrated reflectance falls with offset") {
    SlabMedium m;
    m.props.mu_a = 0.005;
    const auto p = DiffusionParams::from_medium(m);
    double prev = 1e300;
    for (double rho : {1.0, 2.0, 4.0, 8.0}) {
      const double r = cw_reflectance(rho, p);
      CHECK(r < prev);
      CHECK(r == doctest::Approx(reflectance_cw({rho, 0.0}, {0.0, 0.0, 2.0}, p)).epsilon(0.01));
      prev = r;
    }
  }

  TEST_CASE("CW Jacobian: non-negative, reciprocal, decaying") {
    SlabMedium m;
    m.props.mu_a = 0.01;
    const auto scan = ScanConfig::full_grid(4, 4, 2.0, {1, 1e4, 0.0});
    const auto grid = VoxelGrid::centered(12, 12, 1.0, 2.5, 3, 1.0);
    const auto J = jacobian_cw(scan, grid, m);
    for (double v : J.matrix()) CHECK(v >= 0.0);
    RngStream rng(4, 4);
    for (int k = 0; k < 10; ++k) {
      const std::size_t s = rng() % 16, d = rng() % 16, q = rng() % grid.size();
      const double a = J.at(s * 16 + d, q), b = J.at(d * 16 + s, q);
      CHECK(a == doctest::Approx(b).epsilon(0.05));
    }
    // collocated pair at the origin-adjacent source; voxels moving away along x beyond 3 separations
    const auto single = ScanConfig::confocal_grid(1, 1, 1.0, {1, 1e4, 0.0});
    const auto line = VoxelGrid::centered(41, 1, 1.0, 2.5, 1, 1.0);
    const auto Js = jacobian_cw(single, line, m);
    for (std::size_t i = 24; i < 40; ++i) CHECK(Js.at(0, i + 1) < Js.at(0, i));
    CHECK(Js.at(0, 40) < 1e-4 * Js.at(0, 20));
  }

  TEST_CASE("TD Jacobian sums to the CW Jacobian") {
    SlabMedium m;
    m.props.mu_a = 0.01;
    const auto scan = ScanConfig::confocal_grid(3, 3, 2.0, {200, 50.0, 0.0});
    const auto grid = VoxelGrid::centered(6, 6, 1.0, 1.5, 3, 1.5);
    const auto Jt = jacobian_td(scan, grid, m);
    const auto Jc = jacobian_cw(scan, grid, m);
    const auto Js = sum_time_bins(Jt);
    double worst = 0.0;
    for (std::size_t i = 0; i < Jc.matrix().size(); ++i)
      worst = std::max(worst, std::abs(Js.matrix()[i] - Jc.matrix()[i]) / Jc.matrix()[i]);
    CHECK(worst < 0.02);

    // one bin spanning everything gives the CW shape
    auto one = scan;
    one.time_axis = {1, 10000.0, 0.0};
    const auto J1 = jacobian_td(one, grid, m);
    for (std::size_t i = 0; i < Jc.matrix().size(); ++i)
      CHECK(J1.matrix()[i] == doctest::Approx(Jc.matrix()[i]).epsilon(0.02));

    // deeper voxels arrive later
    const std::size_t c0 = grid.index(2, 2, 0), c1 = grid.index(2, 2, 1), c2 = grid.index(2, 2, 2);
    CHECK(column_centroid(Jt, c1, scan.time_axis) > column_centroid(Jt, c0, scan.time_axis));
    CHECK(column_centroid(Jt, c2, scan.time_axis) > column_centroid(Jt, c1, scan.time_axis));
  }

  TEST_CASE("direct and FFT time convolution agree") {
    const auto p = DiffusionParams::from_medium(SlabMedium{});
    TdOptions a, b;
    a.method = ConvMethod::direct;
    b.method = ConvMethod::fft;
    const TimeAxis ax{40, 50.0, 100.0};
    const auto x = td_series({0, 0}, {1.0, 0}, {0.5, 0.5, 2.0}, 1.0, ax, p, a);
    const auto y = td_series({0, 0}, {1.0, 0}, {0.5, 0.5, 2.0}, 1.0, ax, p, b);
    double peak = 0.0;
    for (double v : x) peak = std::max(peak, v);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) < 1e-9 * peak);
  }

  TEST_CASE("analytic kernels") {
    SlabMedium m;
    const auto k = psf_analytic({1.0, 2.0, 3.0, 4.0}, 1.0, 1.0, {32, 50.0, 0.0}, m, 4);
    k.validate();
    for (std::size_t d = 1; d < 4; ++d) CHECK(k.mass(d) < k.mass(d - 1));
    for (std::size_t d = 0; d < 4; ++d)
      for (std::size_t t = 0; t < 32; t += 5)
        for (std::size_t iy = 0; iy < 9; ++iy)
          for (std::size_t ix = 0; ix < 9; ++ix) {
            CHECK(k.at(d, t, iy, ix) == doctest::Approx(k.at(d, t, ix, iy)).epsilon(1e-12));
            CHECK(k.at(d, t, iy, ix) == doctest::Approx(k.at(d, t, 8 - iy, 8 - ix)).epsilon(1e-12));
          }
    CHECK_THROWS_AS(psf_analytic({7.0}, 1.0, 1.0, {8, 50.0, 0.0}, m, 4), Error);
  }
}

TEST_SUITE("kernel_backends") {
  TEST_CASE("analytic and Monte Carlo kernels agree below the near-source regime") {
    // Shallower layers sit where diffusion misstates the early arrivals.
    SlabMedium m;
    mc::McSettings s;
    s.n_photons = 10'000'000;
    const TimeAxis ax{12, 100.0, 0.0};
    const std::vector<double> depths{2.5, 3.5};
    const auto a = psf_analytic(depths, 1.0, 1.0, ax, m, 2);
    const auto k = mc::estimate_psf_mc(m, depths, 1.0, 1.0, ax, s, 2);
    for (std::size_t d = 0; d < depths.size(); ++d) {
      double diff = 0.0, norm = 0.0;
      for (std::size_t i = 0; i < a.kernels[d].size(); ++i) {
        diff += std::pow(a.kernels[d][i] - k.kernels[d][i], 2);
        norm += a.kernels[d][i] * a.kernels[d][i];
      }
      CAPTURE(depths[d]);
      CHECK(std::sqrt(diff / norm) < 0.15);
      CHECK(k.mass(d) == doctest::Approx(a.mass(d)).epsilon(0.15));
    }
  }
}
