#include <doctest.h>

#include <algorithm>

#include "ctof/core_types.hpp"
#include "ctof/rng.hpp"

using namespace ctof;

namespace {

bool has_issue(const std::vector<SceneIssue>& issues, const std::string& message) {
  return std::any_of(issues.begin(), issues.end(), [&](const SceneIssue& i) { return i.message == message; });
}

}  // namespace

TEST_SUITE("core_types") {
  TEST_CASE("speed in medium") {
    OpticalProperties p;
    p.n = 1.0;
    CHECK(speed_in_medium(p) == doctest::Approx(0.299792458).epsilon(1e-15));
    p.n = 1.4;
    CHECK(speed_in_medium(p) == doctest::Approx(0.299792458 / 1.4).epsilon(1e-15));
    CHECK(6.5 / speed_in_medium(p) == doctest::Approx(30.355).epsilon(1e-4));
  }

  TEST_CASE("valid full-size scene") {
    SlabMedium m;
    const auto grid = VoxelGrid::centered(25, 25, 1.0, 0.5, 6, 1.0);
    const auto scan = ScanConfig::confocal_grid(25, 25, 1.0, {65, 50.0, 0.0});
    CHECK(validate_scene(m, grid, scan).empty());
    CHECK(scan.n_pairs() == 625);
  }

  TEST_CASE("grid deeper than slab") {
    SlabMedium m;
    const auto grid = VoxelGrid::centered(25, 25, 1.0, 0.5, 8, 1.0);
    const auto scan = ScanConfig::confocal_grid(25, 25, 1.0, {65, 50.0, 0.0});
    const auto issues = validate_scene(m, grid, scan);
    CHECK(has_issue(issues, "grid exceeds slab depth"));
    CHECK_THROWS_AS(throw_if_invalid(issues), Error);
  }

  TEST_CASE("confocal scan with mismatched lists") {
    SlabMedium m;
    auto scan = ScanConfig::confocal_grid(4, 4, 1.0, {8, 100.0, 0.0});
    scan.detectors.resize(3);
    CHECK(has_issue(validate_scene(m, VoxelGrid::centered(4, 4, 1.0, 1.0, 1, 1.0), scan),
                    "confocal scan needs one detector per source"));
  }

  TEST_CASE("medium invariants") {
    SlabMedium m;
    m.props.g = 1.0;
    m.props.n = 0.9;
    m.thickness = 0.0;
    const auto issues = validate_medium(m);
    CHECK(issues.size() == 3);
    try {
      throw_if_invalid(issues);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::invalid_scene);
    }
  }

  TEST_CASE("voxel grid indexing and centers") {
    const auto g = VoxelGrid::centered(4, 3, 0.5, 1.0, 2, 2.0);
    CHECK(g.size() == 24);
    CHECK(g.index(1, 2, 1) == (1 * 3 + 2) * 4 + 1);
    const Vec3 c = g.center(0, 0, 0);
    CHECK(c.x == doctest::Approx(-0.75));
    CHECK(c.y == doctest::Approx(-0.5));
    CHECK(c.z == doctest::Approx(1.0));
    CHECK(g.center(0, 0, 1).z == doctest::Approx(3.0));
    const Vec3 d = g.center(g.index(3, 2, 1));
    CHECK(d.x == doctest::Approx(0.75));
    CHECK(d.y == doctest::Approx(0.5));
  }

  TEST_CASE("time axis binning") {
    TimeAxis ax{10, 50.0, 100.0};
    CHECK(ax.bin_of(99.9) == -1);
    CHECK(ax.bin_of(100.0) == 0);
    CHECK(ax.bin_of(149.9) == 0);
    CHECK(ax.bin_of(150.0) == 1);
    CHECK(ax.bin_of(600.0) == -1);
    CHECK(ax.end() == doctest::Approx(600.0));
  }

  TEST_CASE("transient set layout") {
    auto full = TransientSet::zeros_full(3, 4, 5);
    CHECK(full.n_rows() == 12);
    CHECK(full.row_of(2, 1) == 9);
    full.at(9, 4) = 2.0;
    CHECK(full.values[9 * 5 + 4] == 2.0);
    CHECK(full.total() == 2.0);
    CHECK(full.non_negative());
    full.at(0, 0) = -1.0;
    CHECK_FALSE(full.non_negative());
  }

  TEST_CASE("error messages carry the code") {
    const Error e(ErrorCode::bad_magic, "x");
    CHECK(std::string(e.what()).find("bad-magic") != std::string::npos);
  }

  TEST_CASE("philox known answers") {
    using C = std::array<std::uint32_t, 4>;
    using K = std::array<std::uint32_t, 2>;
    CHECK(philox4x32(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32(C{~0u, ~0u, ~0u, ~0u}, K{~0u, ~0u}) == C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}) ==
          C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
  }

  TEST_CASE("rng streams are reproducible and distinct") {
    RngStream a(7, 3), b(7, 3), c(7, 4);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
      const auto x = a();
      CHECK(x == b());
      differs |= x != c();
    }
    CHECK(differs);
    RngStream u(1, 1);
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const double v = u.uniform();
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
      sum += v;
    }
    CHECK(sum / 100000 == doctest::Approx(0.5).epsilon(0.01));
  }
}
