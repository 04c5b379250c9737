#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctof/artifacts.hpp"
#include "ctof/tensor_io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kData = fs::path(CTOF_TEST_DIR) / "data";
const fs::path kGolden = fs::path(CTOF_TEST_DIR) / "golden";

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "ctof_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(CTOF_CLI) + " " + args + " > " + (work_dir() / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool update_goldens() { return std::getenv("CTOF_UPDATE_GOLDENS") != nullptr; }

// Byte-identical comparison against a stored output.
void check_golden_bytes(const fs::path& produced, const std::string& name) {
  if (update_goldens()) fs::copy_file(produced, kGolden / name, fs::copy_options::overwrite_existing);
  REQUIRE(fs::exists(kGolden / name));
  CHECK(slurp(produced) == slurp(kGolden / name));
}

// CSV comparison on (method, param, value); timing columns are ignored.
std::vector<std::string> csv_values(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    out.push_back(a + "," + b + "," + c);
  }
  return out;
}

void check_golden_csv(const fs::path& produced, const std::string& name) {
  if (update_goldens()) fs::copy_file(produced, kGolden / name, fs::copy_options::overwrite_existing);
  REQUIRE(fs::exists(kGolden / name));
  CHECK(csv_values(produced) == csv_values(kGolden / name));
}

std::string tiny() { return (kData / "tiny.json").string(); }
std::string out(const std::string& name) { return (work_dir() / name).string(); }

}  // namespace

TEST_CASE("simulate: shape, determinism and golden") {
  REQUIRE(run("simulate " + tiny() + " --out " + out("sim_a.dott")) == 0);
  REQUIRE(run("--threads 3 simulate " + tiny() + " --out " + out("sim_b.dott")) == 0);
  CHECK(slurp(out("sim_a.dott")) == slurp(out("sim_b.dott")));
  const auto t = ctof::artifacts::load_transients(out("sim_a.dott"));
  CHECK(t.m.n_rows() == 16);
  CHECK(t.m.n_bins == 8);
  CHECK(t.metadata.at("seed") == 5);
  CHECK(t.metadata.at("backend") == "mc");
  check_golden_bytes(out("sim_a.dott"), "simulate_tiny.dott");

  REQUIRE(run("simulate " + tiny() + " --out " + out("sim_noise.dott") + " --noise") == 0);
  const auto n = ctof::artifacts::load_transients(out("sim_noise.dott"));
  for (double v : n.m.values) CHECK(v == static_cast<double>(static_cast<long long>(v)));
}

TEST_CASE("simulate: shipped slab config") {
  const std::string cfg = (fs::path(CTOF_CONFIG_DIR) / "slab6p5.json").string();
  REQUIRE(run("simulate " + cfg + " --backend analytic --out " + out("slab.dott")) == 0);
  const auto t = ctof::artifacts::load_transients(out("slab.dott"));
  CHECK(t.m.n_rows() == 1024);
  CHECK(t.m.n_bins == 32);
}

TEST_CASE("simulate: errors") {
  CHECK(run("simulate " + tiny() + " --out " + out("x.dott") + " --photons 0") == 2);
  CHECK(run("simulate /nonexistent.json --out " + out("x.dott")) == 4);
  std::ofstream(work_dir() / "bad.json") << R"({"version": 1, "medium": {"mu_x": 1}})";
  CHECK(run("simulate " + out("bad.json") + " --out " + out("x.dott")) == 2);
  CHECK(slurp(work_dir() / "last.log").find("medium.mu_x") != std::string::npos);
  CHECK(run("simulate") == 2);
}

TEST_CASE("kernel: backends agree and metadata") {
  REQUIRE(run("kernel " + tiny() + " --backend analytic --out " + out("k_an.dott")) == 0);
  REQUIRE(run("kernel " + tiny() + " --backend mc --photons 20000 --out " + out("k_mc.dott")) == 0);
  nlohmann::json meta;
  const auto a = ctof::artifacts::load_kernels(out("k_an.dott"));
  const auto m = ctof::artifacts::load_kernels(out("k_mc.dott"), &meta);
  CHECK(meta.at("backend") == "mc");
  CHECK(meta.at("seed") == 5);
  CHECK(a.n_depths() == 2);
  CHECK(a.width() == 5);
  check_golden_bytes(out("k_an.dott"), "kernel_tiny_analytic.dott");
  check_golden_bytes(out("k_mc.dott"), "kernel_tiny_mc.dott");
  CHECK(run("kernel " + tiny() + " --depths 7 --out " + out("x.dott")) == 2);
  CHECK(run("kernel " + tiny() + " --depths -1 --out " + out("x.dott")) == 2);
}

TEST_CASE("reconstruct: outputs, iteration count and errors") {
  REQUIRE(run("simulate " + tiny() + " --backend analytic --out " + out("rsim.dott")) == 0);
  REQUIRE(run("kernel " + tiny() + " --backend analytic --out " + out("rk.dott")) == 0);
  REQUIRE(run("reconstruct " + out("rsim.dott") + " " + out("rk.dott") + " --config " + tiny() + " --out " +
              out("rec")) == 0);
  CHECK(fs::exists(work_dir() / "rec" / "mu.dott"));
  CHECK(fs::exists(work_dir() / "rec" / "mu_z0.pgm"));
  CHECK(fs::exists(work_dir() / "rec" / "mu_z1.pgm"));
  check_golden_bytes(work_dir() / "rec" / "mu.dott", "reconstruct_tiny_mu.dott");

  REQUIRE(run("reconstruct " + out("rsim.dott") + " " + out("rk.dott") + " --iters 1 --out " + out("rec1")) == 0);
  std::ifstream rep(work_dir() / "rec1" / "report.json");
  const auto j = nlohmann::json::parse(rep);
  CHECK(j.at("iterations_run") == 1);

  CHECK(run("reconstruct " + out("rsim.dott") + " " + out("rk.dott") + " --lambda-per-depth 1,2,3 --out " +
            out("rec2")) == 2);
  CHECK(run("reconstruct " + out("rsim.dott") + " " + out("sim_a.dott") + " --out " + out("rec3")) == 4);
  CHECK(run("reconstruct " + out("missing.dott") + " " + out("rk.dott") + " --out " + out("rec4")) == 4);
}

TEST_CASE("conditioning: cases and golden") {
  REQUIRE(run("conditioning " + tiny() + " --out " + out("cond.csv") + " --report " + out("cond.json")) == 0);
  const auto rows = csv_values(out("cond.csv"));
  REQUIRE(rows.size() > 4);
  CHECK(rows[0] == "method,param,value");
  check_golden_csv(out("cond.csv"), "conditioning_tiny.csv");

  REQUIRE(run("conditioning " + tiny() + " --cases ctofdot --out " + out("cond1.csv")) == 0);
  std::size_t summary = 0;
  for (const auto& r : csv_values(out("cond1.csv"))) summary += r.find("min_sv_above_floor") != std::string::npos;
  CHECK(summary == 1);
  CHECK(run("conditioning " + tiny() + " --memory-budget-mb 0.001 --out " + out("c.csv")) == 2);
  CHECK(run("conditioning " + tiny() + " --cases nope --out " + out("c.csv")) == 2);
}

TEST_CASE("benchmark: schema") {
  REQUIRE(run("benchmark --out " + out("bench.csv") + " --sizes 2,3 --reps 1 --iters 2") == 0);
  const auto lines = csv_values(out("bench.csv"));
  CHECK(lines[0] == "method,param,value");
  CHECK(lines.size() > 6);
  CHECK(slurp(out("bench.csv")).rfind("method,param,value,wall_ms,threads,seed", 0) == 0);
}

TEST_CASE("multiplex-study: identity arms match and golden") {
  REQUIRE(run("multiplex-study " + tiny() + " --scheme identity --integration-times 10 --seeds 2 --out " +
              out("mux_id.csv")) == 0);
  std::ifstream f(out("mux_id.csv"));
  std::string line;
  std::vector<double> values;
  std::getline(f, line);
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    values.push_back(std::stod(c));
  }
  REQUIRE(values.size() >= 2);
  CHECK(values[0] == values[1]);

  REQUIRE(run("multiplex-study " + tiny() + " --integration-times 1,10 --seeds 2 --out " + out("mux.csv") +
              " --images " + out("mux_img")) == 0);
  CHECK(fs::exists(work_dir() / "mux_img" / "multiplexed.pgm"));
  check_golden_csv(out("mux.csv"), "multiplex_tiny.csv");
}
