#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctof/forward_ops.hpp"
#include "ctof/reference.hpp"
#include "ctof/rng.hpp"

using namespace ctof;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// |<A x, y> - <x, A^T y>| relative to |<A x, y>|
double adjoint_error(const LinearOperator& op, std::uint64_t seed) {
  const auto x = random_vector(op.cols(), seed);
  const auto y = random_vector(op.rows(), seed + 1);
  std::vector<double> ax(op.rows()), aty(op.cols());
  op.apply(x, ax);
  op.apply_adjoint(y, aty);
  const double l = dot(ax, y), r = dot(x, aty);
  return std::abs(l - r) / std::max(std::abs(l), 1e-300);
}

KernelStack random_kernels(std::size_t radius, std::vector<double> depths, std::size_t nt, std::uint64_t seed) {
  KernelStack k(radius, depths, 1.0, 1.0, {nt, 50.0, 0.0});
  RngStream rng(seed, 0);
  for (auto& d : k.kernels)
    for (auto& v : d) v = rng.uniform();
  return k;
}

DenseOperator random_dense(std::size_t pairs_n, std::size_t nb, const VoxelGrid& g, std::uint64_t seed) {
  auto scan = ScanConfig::confocal_grid(pairs_n, 1, 1.0, {nb, 50.0, 0.0});
  DenseOperator op(MeasurementLayout::from_scan(scan), g);
  op.matrix() = random_vector(op.rows() * op.cols(), seed);
  return op;
}

}  // namespace

TEST_SUITE("forward_ops") {
  TEST_CASE("dense apply basics") {
    const auto g = VoxelGrid::centered(3, 2, 1.0, 1.0, 2, 1.0);
    const auto op = random_dense(4, 3, g, 1);
    VolumeImage mu(g);
    CHECK(apply_dense(op, mu).total() == 0.0);
    mu.values[5] = 1.0;
    const auto m = apply_dense(op, mu);
    for (std::size_t r = 0; r < op.rows(); ++r) CHECK(m.values[r] == op.at(r, 5));
    auto e = TransientSet::zeros_confocal(4, 3);
    e.values[7] = 1.0;
    const auto back = apply_dense_adjoint(op, e);
    for (std::size_t c = 0; c < op.cols(); ++c) CHECK(back.values[c] == op.at(7, c));
    CHECK(apply_dense_adjoint(op, TransientSet::zeros_confocal(4, 3)).values == std::vector<double>(g.size(), 0.0));
  }

  TEST_CASE("full-size operator dimensions") {
    const auto scan = ScanConfig::full_grid(10, 10, 1.0, {50, 50.0, 0.0});
    const auto layout = MeasurementLayout::from_scan(scan);
    const auto g = VoxelGrid::centered(30, 30, 1.0, 0.5, 20, 0.25);
    CHECK(layout.rows() == 500000);
    CHECK(g.size() == 18000);
  }

  TEST_CASE("dense operators match the serial reference") {
    const auto g = VoxelGrid::centered(5, 4, 1.0, 1.0, 3, 1.0);
    const auto op = random_dense(7, 5, g, 2);
    const auto x = random_vector(op.cols(), 3);
    const auto y = random_vector(op.rows(), 4);
    std::vector<double> a(op.rows()), b(op.rows()), c(op.cols()), d(op.cols());
    op.apply(x, a);
    reference::dense_apply(op, x, b);
    op.apply_adjoint(y, c);
    reference::dense_adjoint(op, y, d);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(d[i]).epsilon(1e-13));
    std::vector<double> wrong(op.cols() + 1);
    CHECK_THROWS_AS(op.apply(wrong, a), Error);
  }

  TEST_CASE("adjoint identities for every operator") {
    const auto g = VoxelGrid::centered(9, 7, 1.0, 1.0, 2, 1.0);
    const auto dense = random_dense(6, 4, g, 5);
    CHECK(adjoint_error(dense, 10) < 1e-10);

    const auto k = random_kernels(3, {1.0, 2.0}, 4, 6);
    const ConvOperator conv(k, g);
    CHECK(adjoint_error(conv, 11) < 1e-10);

    const IdentityOperator id(17);
    CHECK(adjoint_error(id, 12) < 1e-10);

    RowScaledOperator scaled(dense, random_vector(dense.rows(), 13));
    CHECK(adjoint_error(scaled, 14) < 1e-10);

    const auto scan = ScanConfig::full_grid(2, 2, 1.0, {3, 50.0, 0.0});
    DenseOperator full(MeasurementLayout::from_scan(scan), g);
    full.matrix() = random_vector(full.rows() * full.cols(), 15);
    const auto H = build_multiplex(MultiplexScheme::hadamard_pm, 4, 0.0, scan);
    const MultiplexOperator mux(H, 4, 3);
    CHECK(adjoint_error(mux, 16) < 1e-10);
    const ComposedOperator composed(mux, full);
    CHECK(adjoint_error(composed, 17) < 1e-10);
  }

  TEST_CASE("convolution equals its dense expansion") {
    const auto g = VoxelGrid::centered(12, 10, 1.0, 1.0, 3, 1.0);
    const auto k = random_kernels(4, {1.0, 2.0, 3.0}, 5, 7);
    const ConvOperator conv(k, g);
    const auto dense = expand_conv_to_dense(k, g);
    REQUIRE(dense.rows() == conv.rows());
    REQUIRE(dense.cols() == conv.cols());
    const auto x = random_vector(conv.cols(), 8);
    std::vector<double> a(conv.rows()), b(conv.rows()), c(conv.rows());
    conv.apply(x, a);
    dense.apply(x, b);
    reference::conv_apply(k, g, x, c);
    double worst = 0.0, peak = 0.0;
    for (double v : b) peak = std::max(peak, std::abs(v));
    for (std::size_t i = 0; i < a.size(); ++i)
      worst = std::max({worst, std::abs(a[i] - b[i]) / peak, std::abs(c[i] - b[i]) / peak});
    CHECK(worst < 1e-10);

    const auto y = random_vector(conv.rows(), 9);
    std::vector<double> d(conv.cols()), e(conv.cols());
    conv.apply_adjoint(y, d);
    reference::conv_adjoint(k, g, y, e);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == doctest::Approx(e[i]).epsilon(1e-9));
  }

  TEST_CASE("delta kernel reproduces the image") {
    const auto g = VoxelGrid::centered(6, 5, 1.0, 1.0, 1, 1.0);
    KernelStack k(2, {1.0}, 1.0, 1.0, {3, 50.0, 0.0});
    k.at(0, 1, 2, 2) = 1.0;
    VolumeImage mu(g, random_vector(g.size(), 10));
    const auto m = apply_conv(k, mu);
    for (std::size_t p = 0; p < g.size(); ++p) {
      CHECK(m.at(p, 0) == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(m.at(p, 1) == doctest::Approx(mu.values[p]).epsilon(1e-12));
    }
  }

  TEST_CASE("shift equivariance") {
    const auto g = VoxelGrid::centered(16, 16, 1.0, 1.0, 1, 1.0);
    const auto k = random_kernels(2, {1.0}, 2, 11);
    VolumeImage a(g), b(g);
    a.at(6, 7, 0) = 1.0;
    a.at(8, 9, 0) = 0.5;
    b.at(7, 7, 0) = 1.0;
    b.at(9, 9, 0) = 0.5;
    const auto ma = apply_conv(k, a), mb = apply_conv(k, b);
    for (std::size_t j = 3; j < 13; ++j)
      for (std::size_t i = 3; i < 12; ++i)
        for (std::size_t t = 0; t < 2; ++t)
          CHECK(mb.at(j * 16 + i + 1, t) == doctest::Approx(ma.at(j * 16 + i, t)).epsilon(1e-12));
  }

  TEST_CASE("symmetric kernel is self-adjoint on one bin") {
    const auto g = VoxelGrid::centered(8, 8, 1.0, 1.0, 1, 1.0);
    KernelStack k(1, {1.0}, 1.0, 1.0, {1, 50.0, 0.0});
    const double w[9] = {0.1, 0.3, 0.1, 0.3, 1.0, 0.3, 0.1, 0.3, 0.1};
    std::copy(w, w + 9, k.kernels[0].begin());
    VolumeImage mu(g, random_vector(g.size(), 12));
    const auto fwd = apply_conv(k, mu);
    const auto adj = apply_conv_adjoint(k, fwd, g);
    const auto fwd2 = apply_conv(k, VolumeImage(g, fwd.values));
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(adj.values[i] == doctest::Approx(fwd2.values[i]).epsilon(1e-10));
    CHECK(apply_conv_adjoint(k, TransientSet::zeros_confocal(64, 1), g).values == std::vector<double>(64, 0.0));
  }

  TEST_CASE("kernel grid checks") {
    const auto k = random_kernels(2, {1.0, 2.0}, 2, 13);
    CHECK_THROWS_AS(ConvOperator(k, VoxelGrid::centered(8, 8, 0.5, 1.0, 2, 1.0)), Error);
    CHECK_THROWS_AS(ConvOperator(k, VoxelGrid::centered(8, 8, 1.0, 1.5, 2, 1.0)), Error);
    CHECK_NOTHROW(check_kernel_grid(k, VoxelGrid::centered(8, 8, 1.0, 1.0, 2, 1.0)));
  }

  TEST_CASE("kernel stack reshaping") {
    auto k = random_kernels(3, {1.0}, 4, 14);
    const auto c = k.cropped(1);
    CHECK(c.width() == 3);
    CHECK(c.at(0, 2, 1, 1) == k.at(0, 2, 3, 3));
    const auto w = k.time_window(1, 2);
    CHECK(w.time_axis.n_bins == 2);
    CHECK(w.time_axis.gate_start == doctest::Approx(50.0));
    CHECK(w.at(0, 0, 2, 2) == k.at(0, 1, 2, 2));
    const auto s = k.time_summed();
    CHECK(s.at(0, 0, 1, 4) ==
          doctest::Approx(k.at(0, 0, 1, 4) + k.at(0, 1, 1, 4) + k.at(0, 2, 1, 4) + k.at(0, 3, 1, 4)));
    CHECK(s.mass(0) == doctest::Approx(k.mass(0)));
    KernelStack peaked(4, {1.0}, 1.0, 1.0, {1, 50.0, 0.0});
    peaked.at(0, 0, 4, 4) = 1.0;
    peaked.at(0, 0, 4, 5) = 1e-6;
    CHECK(peaked.radius_for_mass(1e-3) == 0);
    CHECK(peaked.radius_for_mass(1e-9) == 1);
  }

  TEST_CASE("confocal extraction and time summing") {
    const auto scan = ScanConfig::full_grid(10, 10, 1.0, {2, 50.0, 0.0});
    const auto g = VoxelGrid::centered(2, 2, 1.0, 1.0, 1, 1.0);
    DenseOperator full(MeasurementLayout::from_scan(scan), g);
    for (std::size_t i = 0; i < full.matrix().size(); ++i) full.matrix()[i] = static_cast<double>(i);
    CHECK(full.layout().n_pairs() == 10000);
    const auto conf = extract_confocal(full, scan);
    CHECK(conf.layout().n_pairs() == 100);
    const std::size_t pair = 37 * 100 + 37;
    CHECK(conf.at(37 * 2 + 1, 3) == full.at(pair * 2 + 1, 3));
    const auto again = extract_confocal(conf, ScanConfig::confocal_grid(10, 10, 1.0, scan.time_axis));
    CHECK(again.matrix() == conf.matrix());
    const auto cw = sum_time_bins(conf);
    CHECK(cw.rows() == 100);
    CHECK(cw.at(5, 2) == conf.at(10, 2) + conf.at(11, 2));
  }

  TEST_CASE("Hadamard and multiplex matrices") {
    for (std::size_t n : {1u, 2u, 4u, 12u, 20u, 64u}) {
      const auto h = hadamard_matrix(n);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          long s = 0;
          for (std::size_t c = 0; c < n; ++c) s += h[a * n + c] * h[b * n + c];
          REQUIRE(s == (a == b ? static_cast<long>(n) : 0));
        }
    }
    CHECK_THROWS_AS(hadamard_matrix(6), Error);
    const auto scan = ScanConfig::confocal_grid(8, 8, 50.0 / 8.0, {1, 50.0, 0.0});
    const auto I = build_multiplex(MultiplexScheme::identity, 64, 0.0, scan);
    for (std::size_t p = 0; p < 64; ++p)
      for (std::size_t s = 0; s < 64; ++s) CHECK(I.at(p, s) == (p == s ? 1.0 : 0.0));
    const auto F = build_multiplex(MultiplexScheme::far_field_groups, 64, 25.0, scan);
    CHECK(F.n_patterns == 16);
    for (std::size_t p = 0; p < F.n_patterns; ++p) {
      double lit = 0.0;
      for (std::size_t s = 0; s < 64; ++s) lit += F.at(p, s);
      CHECK(lit == 4.0);
    }
    CHECK(std::string(to_string(multiplex_scheme_from_string("hadamard_pm"))) == "hadamard_pm");
  }

  TEST_CASE("multiplexing full scans") {
    const auto scan = ScanConfig::full_grid(2, 2, 1.0, {3, 50.0, 0.0});
    auto m = TransientSet::zeros_full(4, 4, 3);
    m.values = random_vector(m.values.size(), 20);
    const auto I = build_multiplex(MultiplexScheme::identity, 4, 0.0, scan);
    CHECK(apply_multiplex(I, m).values == m.values);

    MultiplexMatrix ones{MultiplexScheme::hadamard01, 1, 4, {1, 1, 1, 1}};
    const auto y1 = apply_multiplex(ones, m);
    for (std::size_t d = 0; d < 4; ++d)
      for (std::size_t t = 0; t < 3; ++t) {
        double s = 0.0;
        for (std::size_t src = 0; src < 4; ++src) s += m.at(m.row_of(src, d), t);
        CHECK(y1.at(d, t) == doctest::Approx(s));
      }

    const auto H = build_multiplex(MultiplexScheme::hadamard_pm, 4, 0.0, scan);
    const auto y = apply_multiplex(H, m);
    // H^-1 = H^T / n
    MultiplexMatrix Hinv = H;
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t s = 0; s < 4; ++s) Hinv.S[p * 4 + s] = H.at(s, p) / 4.0;
    const auto back = apply_multiplex(Hinv, y);
    for (std::size_t i = 0; i < m.values.size(); ++i) CHECK(std::abs(back.values[i] - m.values[i]) < 1e-12);
  }

  TEST_CASE("far-field demultiplexing recovers confocal rows") {
    const auto scan = ScanConfig::confocal_grid(8, 8, 50.0 / 8.0, {4, 50.0, 0.0});
    const auto F = build_multiplex(MultiplexScheme::far_field_groups, 64, 25.0, scan);
    auto m = TransientSet::zeros_confocal(64, 4);
    m.values = random_vector(m.values.size(), 21);
    const auto y = apply_multiplex(F, m);
    const auto back = demultiplex_far_field(F, y, scan);
    CHECK(back.confocal);
    for (std::size_t i = 0; i < m.values.size(); ++i) CHECK(back.values[i] == doctest::Approx(m.values[i]));
  }

  TEST_CASE("pair layouts") {
    auto layout = MeasurementLayout::from_pairs({{0, 0}, {1, 0}}, {{0, 0}, {3, 0}}, {{0, 0}, {1, 1}, {0, 1}}, 2);
    CHECK(layout.rows() == 6);
    CHECK(layout.collocated(0));
    CHECK_FALSE(layout.collocated(2));
    CHECK_THROWS_AS(MeasurementLayout::from_pairs({{0, 0}}, {{0, 0}}, {{0, 1}}, 1), Error);
  }
}
