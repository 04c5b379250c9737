#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>

#include "ctof/artifacts.hpp"
#include "ctof/rng.hpp"
#include "ctof/tensor_io.hpp"

using namespace ctof;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ctof_tests";
  fs::create_directories(dir);
  return dir / name;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::io;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), 8 * a.size()) == 0;
}

}  // namespace

TEST_SUITE("tensor_io") {
  TEST_CASE("random 3D round trip is bit exact") {
    Tensor t{{3, 4, 5}, {}};
    RngStream rng(11, 0);
    for (int i = 0; i < 60; ++i) t.data.push_back((rng.uniform() - 0.5) * std::pow(10.0, 40.0 * (rng.uniform() - 0.5)));
    const auto path = temp_file("rt.dott");
    write_tensor(path, t, {{"units", "mm,ps"}, {"seed", 11}});
    const auto back = read_tensor(path);
    CHECK(back.tensor.dims == t.dims);
    CHECK(bit_equal(back.tensor.data, t.data));
    CHECK(back.metadata.at("units") == "mm,ps");
  }

  TEST_CASE("signed zeros and denormals survive") {
    const double denorm = std::numeric_limits<double>::denorm_min();
    Tensor t{{4}, {0.0, -0.0, denorm, -denorm * 3}};
    const auto back = decode_tensor(encode_tensor(t, nlohmann::json::object()));
    CHECK(bit_equal(back.tensor.data, t.data));
    CHECK(std::signbit(back.tensor.data[1]));
  }

  TEST_CASE("empty dims and bad payloads rejected") {
    CHECK(code_of([] { encode_tensor(Tensor{{}, {}}, nlohmann::json::object()); }) == ErrorCode::invalid_parameter);
    CHECK(code_of([] { encode_tensor(Tensor{{2}, {1.0}}, nlohmann::json::object()); }) ==
          ErrorCode::dimension_mismatch);
    CHECK(code_of([] { encode_tensor(Tensor{{1}, {1.0}}, nlohmann::json::array()); }) == ErrorCode::bad_metadata);
  }

  TEST_CASE("non-finite values need the flag") {
    Tensor t{{2}, {1.0, std::numeric_limits<double>::quiet_NaN()}};
    CHECK(code_of([&] { encode_tensor(t, nlohmann::json::object()); }) == ErrorCode::non_finite);
    const auto back = decode_tensor(encode_tensor(t, nlohmann::json::object(), true));
    CHECK(std::isnan(back.tensor.data[1]));
  }

  TEST_CASE("header layout") {
    const auto bytes = encode_tensor(Tensor{{2, 1}, {1.5, -2.0}}, {{"a", 1}});
    CHECK(std::memcmp(bytes.data(), "DOTT", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == kDtypeF64);
    CHECK(bytes[7] == 2);
    std::uint64_t d0 = 0;
    std::memcpy(&d0, bytes.data() + 8, 8);
    CHECK(d0 == 2);
    double v0 = 0;
    std::memcpy(&v0, bytes.data() + 24, 8);
    CHECK(v0 == 1.5);
    std::uint64_t meta_len = 0;
    std::memcpy(&meta_len, bytes.data() + 40, 8);
    CHECK(meta_len == std::string(R"({"a":1})").size());
    CHECK(bytes.size() == 48 + meta_len);
  }

  TEST_CASE("decoding errors have distinct codes") {
    const auto good = encode_tensor(Tensor{{3}, {1, 2, 3}}, {{"k", "v"}});
    auto bad = good;
    bad[0] = 'X';
    CHECK(code_of([&] { decode_tensor(bad); }) == ErrorCode::bad_magic);
    for (std::size_t cut : {std::size_t{2}, std::size_t{10}, std::size_t{20}, good.size() - 3}) {
      std::vector<std::uint8_t> part(good.begin(), good.begin() + static_cast<long>(cut));
      CHECK(code_of([&] { decode_tensor(part); }) == (cut < 4 ? ErrorCode::bad_magic : ErrorCode::truncated));
    }
    auto ver = good;
    ver[4] = 2;
    CHECK(code_of([&] { decode_tensor(ver); }) == ErrorCode::unsupported_version);
    auto meta = good;
    meta[meta.size() - 1] = '!';
    CHECK(code_of([&] { decode_tensor(meta); }) == ErrorCode::bad_metadata);
    CHECK(code_of([] { read_tensor("/nonexistent/dir/x.dott"); }) == ErrorCode::io);
  }

  TEST_CASE("truncated file on disk") {
    const auto path = temp_file("trunc.dott");
    write_tensor(path, Tensor{{16}, std::vector<double>(16, 1.0)}, nlohmann::json::object());
    fs::resize_file(path, 60);
    CHECK(code_of([&] { read_tensor(path); }) == ErrorCode::truncated);
  }

  TEST_CASE("artifact adapters round trip") {
    KernelStack k(2, {1.0, 2.0}, 0.5, 1.0, {3, 100.0, 50.0});
    for (auto& d : k.kernels)
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.01 * static_cast<double>(i);
    k.backend = "analytic";
    const auto kp = temp_file("k.dott");
    artifacts::save(kp, k);
    nlohmann::json meta;
    const auto k2 = artifacts::load_kernels(kp, &meta);
    CHECK(k2.kernels == k.kernels);
    CHECK(k2.time_axis.gate_start == 50.0);
    CHECK(meta.at("backend") == "analytic");
    CHECK(meta.at("units") == "mm,ps");
    CHECK(artifacts::kind_of(kp) == "kernel_stack");

    VolumeImage v(VoxelGrid::centered(3, 2, 1.0, 1.5, 2, 1.0));
    for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] = static_cast<double>(i);
    const auto vp = temp_file("v.dott");
    artifacts::save(vp, v);
    const auto v2 = artifacts::load_volume(vp);
    CHECK(v2.values == v.values);
    CHECK(v2.grid.dims == v.grid.dims);
    CHECK(v2.grid.origin[2] == doctest::Approx(v.grid.origin[2]));

    auto m = TransientSet::zeros_full(2, 3, 4);
    m.values[5] = 3.0;
    const auto mp = temp_file("m.dott");
    artifacts::save(mp, m, TimeAxis{4, 25.0, 0.0});
    const auto m2 = artifacts::load_transients(mp);
    CHECK(m2.m.values == m.values);
    CHECK_FALSE(m2.m.confocal);
    CHECK(m2.m.n_detectors == 3);
    CHECK(m2.axis.bin_width == 25.0);

    CHECK(code_of([&] { artifacts::load_volume(kp); }) == ErrorCode::bad_metadata);
  }
}
