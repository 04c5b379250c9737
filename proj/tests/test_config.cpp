#include <doctest.h>

#include <numeric>

#include "ctof/config.hpp"
#include "ctof/phantoms.hpp"

using namespace ctof;
using nlohmann::json;

namespace {

std::string config_error(const json& doc) {
  try {
    parse_config(doc);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::config);
    return e.what();
  }
  return "";
}

double layer_sum(const VolumeImage& v, std::size_t k) {
  const auto n = v.grid.layer_size();
  return std::accumulate(v.values.begin() + static_cast<long>(k * n), v.values.begin() + static_cast<long>((k + 1) * n),
                         0.0);
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("minimal document keeps defaults") {
    const auto cfg = parse_config({{"version", 1}});
    CHECK(cfg.medium.props.mu_s == 9.0);
    CHECK(cfg.medium.props.n == 1.4);
    CHECK(cfg.medium.thickness == 6.5);
    CHECK(cfg.acquisition.model.dark_count_rate == 200.0);
    CHECK(cfg.acquisition.model.max_count_rate == 5e6);
  }

  TEST_CASE("unknown and malformed fields report their path") {
    CHECK(config_error({{"version", 1}, {"medium", {{"mu_x", 1.0}}}}).find("medium.mu_x") != std::string::npos);
    CHECK(config_error({{"version", 1}, {"bogus", 1}}).find("bogus") != std::string::npos);
    CHECK(config_error({{"version", 1}, {"scan", {{"time_axis", {{"n_bins", -3}}}}}})
              .find("scan.time_axis.n_bins") != std::string::npos);
    CHECK(config_error({{"version", 1}, {"medium", {{"mu_s", "nine"}}}}).find("medium.mu_s") != std::string::npos);
    CHECK(config_error({{"version", 2}}).find("version") != std::string::npos);
    CHECK(config_error(json::object()).find("version") != std::string::npos);
  }

  TEST_CASE("to_json round trip") {
    json doc = {{"version", 1},
                {"medium", {{"mu_s", 5.0}, {"fluorescence", {{"lifetime_ns", 2.0}, {"excitation_rejection", 0.1}}}}},
                {"grid", {{"nx", 8}, {"ny", 6}, {"nz", 2}, {"first_depth", 1.0}}},
                {"solver", {{"lambda_schedule", "inverse_mass"}, {"max_iters", 7}}},
                {"phantom", {{"type", "discs"}, {"discs", {{{"center", {1.0, 2.0}}, {"diameter", 3.0}, {"depth", 2.0}}}}}}};
    const auto a = parse_config(doc);
    const auto b = parse_config(to_json(a));
    CHECK(to_json(a) == to_json(b));
    CHECK(b.medium.props.mu_s == 5.0);
    REQUIRE(b.medium.fluorescence.has_value());
    CHECK(b.medium.fluorescence->lifetime_ns == 2.0);
    CHECK(b.solver.schedule == LambdaSchedule::inverse_mass);
    CHECK(b.phantom.discs.size() == 1);
    CHECK(b.grid.grid().nz() == 2);
  }

  TEST_CASE("shipped configs parse") {
    for (const char* name : {"paper_defaults.json", "slab6p5.json"}) {
      const auto cfg = load_config(std::string(CTOF_SOURCE_DIR) + "/configs/" + name);
      CHECK(validate_scene(cfg.medium, cfg.grid.grid(), cfg.scan.scan()).empty());
    }
    const auto s = load_config(std::string(CTOF_SOURCE_DIR) + "/configs/slab6p5.json");
    CHECK(s.scan.scan().n_pairs() == 1024);
    CHECK(s.scan.axis.bin_width == 200.0);
  }

  TEST_CASE("missing file is an io error") {
    try {
      load_config("/nonexistent.json");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::io);
    }
  }
}

TEST_SUITE("config") {
  TEST_CASE("two-line phantom geometry") {
    const auto g = VoxelGrid::centered(40, 4, 0.25, 1.0, 1, 1.0);
    const auto t = phantoms::two_lines(g, 0.5, 0.5, 0, 1.0);
    // 0.5 mm lines at 0.25 mm voxels: two voxels each, one line of separation (two voxels)
    CHECK(layer_sum(t.image, 0) == doctest::Approx(4.0 * 4));
    CHECK(t.center_b - t.center_a == doctest::Approx(4.0));
    CHECK(t.image.at(20, 0, 0) == 0.0);
    CHECK(t.image.at(19, 0, 0) == 0.0);
    CHECK(t.image.at(22, 0, 0) == 1.0);
    CHECK(t.image.at(17, 0, 0) == 1.0);
  }

  TEST_CASE("disc phantom uses nearest layer and area") {
    const auto g = VoxelGrid::centered(32, 32, 1.0, 1.0, 6, 1.0);
    CHECK(phantoms::nearest_layer(g, 4.2) == 3);
    const auto v = phantoms::discs(g, {{{0.0, 0.0}, 10.0, 4.0}});
    CHECK(layer_sum(v, 3) == doctest::Approx(3.14159265 * 25.0).epsilon(0.08));
    CHECK(layer_sum(v, 2) == 0.0);
  }

  TEST_CASE("letter R is non-empty and asymmetric") {
    const auto g = VoxelGrid::centered(16, 16, 1.0, 1.0, 1, 1.0);
    const auto r = phantoms::letter_r(g, 0, 1.0);
    double left = 0.0, right = 0.0;
    for (std::size_t j = 0; j < 16; ++j)
      for (std::size_t i = 0; i < 16; ++i) (i < 8 ? left : right) += r.at(i, j, 0);
    CHECK(left + right > 20.0);
    CHECK(left != right);
  }

  TEST_CASE("make_phantom checks the layer") {
    PhantomSpec spec;
    spec.type = "letter_r";
    spec.layer = 3;
    CHECK_THROWS_AS(make_phantom(spec, VoxelGrid::centered(8, 8, 1.0, 1.0, 2, 1.0)), Error);
    spec.type = "none";
    CHECK(layer_sum(make_phantom(spec, VoxelGrid::centered(8, 8, 1.0, 1.0, 2, 1.0)), 0) == 0.0);
  }
}
