#include "ctof/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace ctof {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw Error(ErrorCode::config, path + ": " + msg);
}

// Reads fields of one JSON object and rejects any key that was never asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }
  ~Section() = default;

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key);
  }

  void number(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) fail(at(key), "must be finite");
  }
  void count(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(at(key), "expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(at(key), "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    if (!j_.at(key).is_boolean()) fail(at(key), "expected true or false");
    out = j_.at(key).get<bool>();
  }
  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    if (!j_.at(key).is_string()) fail(at(key), "expected a string");
    out = j_.at(key).get<std::string>();
  }
  void numbers(const std::string& key, std::vector<double>& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(at(key), "expected an array of numbers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
  }
  const json& child(const std::string& key) {
    known_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!known_.count(item.key())) fail(at(item.key()), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

void read_props(Section& s, OpticalProperties& p) {
  s.number("mu_s", p.mu_s);
  s.number("mu_a", p.mu_a);
  s.number("g", p.g);
  s.number("n", p.n);
}

void read_medium(const json& j, SlabMedium& m) {
  Section s(j, "medium");
  read_props(s, m.props);
  s.number("thickness", m.thickness);
  s.number("extent_x", m.extent_x);
  s.number("extent_y", m.extent_y);
  s.number("ambient_index", m.ambient_index);
  s.boolean("fresnel", m.fresnel);
  if (s.has("fluorescence")) {
    Section f(s.child("fluorescence"), "medium.fluorescence");
    FluorophoreModel fm;
    fm.emission_props = m.props;
    f.number("lifetime_ns", fm.lifetime_ns);
    f.number("excitation_rejection", fm.excitation_rejection);
    if (f.has("emission")) {
      Section e(f.child("emission"), "medium.fluorescence.emission");
      read_props(e, fm.emission_props);
      e.finish();
    }
    f.finish();
    if (!(fm.lifetime_ns > 0.0)) fail("medium.fluorescence.lifetime_ns", "must be > 0");
    if (!(fm.excitation_rejection >= 0.0 && fm.excitation_rejection <= 1.0))
      fail("medium.fluorescence.excitation_rejection", "must lie in [0, 1]");
    m.fluorescence = fm;
  }
  s.finish();
  for (const auto& issue : validate_medium(m)) fail("medium." + issue.field, issue.message);
}

void read_axis(Section& parent, const std::string& key, TimeAxis& axis) {
  if (!parent.has(key)) return;
  Section s(parent.child(key), parent.at(key));
  s.count("n_bins", axis.n_bins);
  s.number("bin_width_ps", axis.bin_width);
  s.number("gate_start_ps", axis.gate_start);
  s.finish();
  if (axis.n_bins < 1) fail(s.at("n_bins"), "must be >= 1");
  if (!(axis.bin_width > 0.0)) fail(s.at("bin_width_ps"), "must be > 0");
  if (!(axis.gate_start >= 0.0)) fail(s.at("gate_start_ps"), "must be >= 0");
}

void read_grid(const json& j, GridSpec& g) {
  Section s(j, "grid");
  s.count("nx", g.nx);
  s.count("ny", g.ny);
  s.number("pitch", g.pitch);
  s.number("first_depth", g.first_depth);
  s.count("nz", g.nz);
  s.number("layer_thickness", g.layer_thickness);
  s.finish();
  if (g.nx < 1 || g.ny < 1 || g.nz < 1) fail("grid", "nx, ny and nz must be >= 1");
  if (!(g.pitch > 0.0)) fail("grid.pitch", "must be > 0");
  if (!(g.layer_thickness > 0.0)) fail("grid.layer_thickness", "must be > 0");
}

void read_scan(const json& j, ScanSpec& sc) {
  Section s(j, "scan");
  s.string("geometry", sc.geometry);
  s.count("nx", sc.nx);
  s.count("ny", sc.ny);
  s.number("pitch", sc.pitch);
  read_axis(s, "time_axis", sc.axis);
  s.finish();
  if (sc.geometry != "confocal" && sc.geometry != "full") fail("scan.geometry", "must be \"confocal\" or \"full\"");
  if (sc.nx < 1 || sc.ny < 1) fail("scan", "nx and ny must be >= 1");
  if (!(sc.pitch > 0.0)) fail("scan.pitch", "must be > 0");
}

void read_acquisition(const json& j, AcquisitionSpec& a) {
  Section s(j, "acquisition");
  s.number("integration_time_ms", a.model.integration_time_ms);
  s.number("max_count_rate", a.model.max_count_rate);
  s.number("dark_count_rate", a.model.dark_count_rate);
  s.u64("seed", a.model.seed);
  s.boolean("cap_per_detector", a.model.cap_per_detector);
  s.number("photon_rate", a.photon_rate);
  s.finish();
  try {
    validate_acquisition(a.model);
  } catch (const Error& e) {
    fail("acquisition", e.what());
  }
  if (!(a.photon_rate > 0.0)) fail("acquisition.photon_rate", "must be > 0");
}

void read_solver(const json& j, SolverSpec& sv) {
  Section s(j, "solver");
  s.number("lambda", sv.lambda);
  s.number("lambda_rel", sv.lambda_rel);
  s.numbers("lambda_per_depth", sv.lambda_per_depth);
  std::string schedule = to_string(sv.schedule);
  s.string("lambda_schedule", schedule);
  s.count("max_iters", sv.max_iters);
  s.boolean("nonneg", sv.nonneg);
  s.number("tolerance", sv.tolerance);
  s.finish();
  try {
    sv.schedule = lambda_schedule_from_string(schedule);
  } catch (const Error&) {
    fail("solver.lambda_schedule", "unknown schedule '" + schedule + "'");
  }
  if (sv.lambda < 0.0) fail("solver.lambda", "must be >= 0");
  if (sv.lambda_rel < 0.0) fail("solver.lambda_rel", "must be >= 0");
  for (std::size_t i = 0; i < sv.lambda_per_depth.size(); ++i)
    if (sv.lambda_per_depth[i] < 0.0) fail("solver.lambda_per_depth[" + std::to_string(i) + "]", "must be >= 0");
  if (sv.max_iters < 1) fail("solver.max_iters", "must be >= 1");
  if (sv.tolerance < 0.0) fail("solver.tolerance", "must be >= 0");
}

void read_mc(const json& j, McSpec& m) {
  Section s(j, "mc");
  s.u64("n_photons", m.settings.n_photons);
  s.u64("seed", m.settings.seed);
  s.number("roulette_threshold", m.settings.roulette_threshold);
  s.number("roulette_survival", m.settings.roulette_survival);
  s.number("aperture", m.aperture);
  s.count("kernel_radius", m.kernel_radius);
  s.finish();
  try {
    mc::validate_settings(m.settings);
  } catch (const Error& e) {
    fail("mc", e.what());
  }
  if (!(m.aperture > 0.0)) fail("mc.aperture", "must be > 0");
}

void read_phantom(const json& j, PhantomSpec& p) {
  Section s(j, "phantom");
  s.string("type", p.type);
  s.number("amplitude", p.amplitude);
  s.count("layer", p.layer);
  s.number("line_width", p.line_width);
  s.number("separation", p.separation);
  if (s.has("discs")) {
    const json& arr = s.child("discs");
    if (!arr.is_array()) fail("phantom.discs", "expected an array");
    p.discs.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string path = "phantom.discs[" + std::to_string(i) + "]";
      Section d(arr[i], path);
      phantoms::Disc disc;
      std::vector<double> center{0.0, 0.0};
      d.numbers("center", center);
      if (center.size() != 2) fail(path + ".center", "expected [x, y]");
      disc.center = {center[0], center[1]};
      d.number("diameter", disc.diameter);
      d.number("depth", disc.depth);
      d.finish();
      if (!(disc.diameter > 0.0)) fail(path + ".diameter", "must be > 0");
      p.discs.push_back(disc);
    }
  }
  s.finish();
  if (p.type != "none" && p.type != "letter_r" && p.type != "two_lines" && p.type != "discs")
    fail("phantom.type", "must be one of none, letter_r, two_lines, discs");
}

}  // namespace

ScanConfig ScanSpec::scan() const {
  return geometry == "full" ? ScanConfig::full_grid(nx, ny, pitch, axis) : ScanConfig::confocal_grid(nx, ny, pitch, axis);
}

SceneConfig parse_config(const json& doc) {
  if (!doc.is_object()) fail("(root)", "expected an object");
  SceneConfig cfg;
  Section root(doc, "");
  if (!root.has("version")) fail("version", "missing");
  if (!doc.at("version").is_number_integer() || doc.at("version").get<long long>() != kConfigVersion)
    fail("version", "unsupported, expected " + std::to_string(kConfigVersion));
  if (root.has("medium")) read_medium(root.child("medium"), cfg.medium);
  if (root.has("grid")) read_grid(root.child("grid"), cfg.grid);
  if (root.has("scan")) read_scan(root.child("scan"), cfg.scan);
  if (root.has("acquisition")) read_acquisition(root.child("acquisition"), cfg.acquisition);
  if (root.has("solver")) read_solver(root.child("solver"), cfg.solver);
  if (root.has("mc")) read_mc(root.child("mc"), cfg.mc);
  if (root.has("phantom")) read_phantom(root.child("phantom"), cfg.phantom);
  root.finish();
  return cfg;
}

SceneConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(doc);
}

json to_json(const SlabMedium& m) {
  json j = {{"mu_s", m.props.mu_s},       {"mu_a", m.props.mu_a},         {"g", m.props.g},
            {"n", m.props.n},             {"thickness", m.thickness},     {"extent_x", m.extent_x},
            {"extent_y", m.extent_y},     {"ambient_index", m.ambient_index}, {"fresnel", m.fresnel}};
  if (m.fluorescence) {
    const auto& f = *m.fluorescence;
    j["fluorescence"] = {{"lifetime_ns", f.lifetime_ns},
                         {"excitation_rejection", f.excitation_rejection},
                         {"emission",
                          {{"mu_s", f.emission_props.mu_s},
                           {"mu_a", f.emission_props.mu_a},
                           {"g", f.emission_props.g},
                           {"n", f.emission_props.n}}}};
  }
  return j;
}

json to_json(const VoxelGrid& g) { return {{"dims", g.dims}, {"pitch", g.pitch}, {"origin", g.origin}}; }

json to_json(const TimeAxis& a) {
  return {{"n_bins", a.n_bins}, {"bin_width_ps", a.bin_width}, {"gate_start_ps", a.gate_start}};
}

json to_json(const SceneConfig& c) {
  json discs = json::array();
  for (const auto& d : c.phantom.discs)
    discs.push_back({{"center", {d.center.x, d.center.y}}, {"diameter", d.diameter}, {"depth", d.depth}});
  json solver = {{"lambda", c.solver.lambda},
                 {"lambda_rel", c.solver.lambda_rel},
                 {"lambda_schedule", to_string(c.solver.schedule)},
                 {"max_iters", c.solver.max_iters},
                 {"nonneg", c.solver.nonneg},
                 {"tolerance", c.solver.tolerance}};
  if (!c.solver.lambda_per_depth.empty()) solver["lambda_per_depth"] = c.solver.lambda_per_depth;
  return {{"version", kConfigVersion},
          {"medium", to_json(c.medium)},
          {"grid",
           {{"nx", c.grid.nx},
            {"ny", c.grid.ny},
            {"pitch", c.grid.pitch},
            {"first_depth", c.grid.first_depth},
            {"nz", c.grid.nz},
            {"layer_thickness", c.grid.layer_thickness}}},
          {"scan",
           {{"geometry", c.scan.geometry},
            {"nx", c.scan.nx},
            {"ny", c.scan.ny},
            {"pitch", c.scan.pitch},
            {"time_axis", to_json(c.scan.axis)}}},
          {"acquisition",
           {{"integration_time_ms", c.acquisition.model.integration_time_ms},
            {"max_count_rate", c.acquisition.model.max_count_rate},
            {"dark_count_rate", c.acquisition.model.dark_count_rate},
            {"seed", c.acquisition.model.seed},
            {"cap_per_detector", c.acquisition.model.cap_per_detector},
            {"photon_rate", c.acquisition.photon_rate}}},
          {"solver", solver},
          {"mc",
           {{"n_photons", c.mc.settings.n_photons},
            {"seed", c.mc.settings.seed},
            {"roulette_threshold", c.mc.settings.roulette_threshold},
            {"roulette_survival", c.mc.settings.roulette_survival},
            {"aperture", c.mc.aperture},
            {"kernel_radius", c.mc.kernel_radius}}},
          {"phantom",
           {{"type", c.phantom.type},
            {"amplitude", c.phantom.amplitude},
            {"layer", c.phantom.layer},
            {"line_width", c.phantom.line_width},
            {"separation", c.phantom.separation},
            {"discs", discs}}}};
}

VolumeImage make_phantom(const PhantomSpec& spec, const VoxelGrid& grid) {
  if (spec.type != "none" && spec.type != "discs" && spec.layer >= grid.nz())
    throw Error(ErrorCode::config, "phantom.layer: outside the grid");
  if (spec.type == "letter_r") return phantoms::letter_r(grid, spec.layer, spec.amplitude);
  if (spec.type == "two_lines")
    return phantoms::two_lines(grid, spec.line_width, spec.separation, spec.layer, spec.amplitude).image;
  if (spec.type == "discs") return phantoms::discs(grid, spec.discs, spec.amplitude);
  return VolumeImage(grid);
}

}  // namespace ctof
