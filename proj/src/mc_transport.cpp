#include "ctof/mc_transport.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

namespace ctof::mc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Tallies are fixed-point integers so the reduction is exact and independent of the order in
// which workers finish.
constexpr double kFixed = 0x1p32;
constexpr double kInvFixed = 0x1p-32;

inline std::int64_t to_fixed(double v) { return std::llround(v * kFixed); }

inline void atomic_add(std::int64_t& slot, std::int64_t v) {
  std::atomic_ref<std::int64_t>(slot).fetch_add(v, std::memory_order_relaxed);
}

struct Medium {
  double mus, mua, g;
  double thickness, half_x, half_y;
  double n_rel;
  double ps_per_mm;
  bool fresnel;
};

Medium make_medium(const SlabMedium& slab, const OpticalProperties& p) {
  Medium m{};
  m.mus = p.mu_s;
  m.mua = p.mu_a;
  m.g = p.g;
  m.thickness = slab.thickness;
  m.half_x = 0.5 * slab.extent_x;
  m.half_y = 0.5 * slab.extent_y;
  m.n_rel = p.n / slab.ambient_index;
  m.fresnel = slab.fresnel && m.n_rel != 1.0;
  m.ps_per_mm = p.n / kSpeedOfLight;
  return m;
}

enum class Launch { pencil, lambertian };

inline double hg_cos(double u, double g) {
  if (std::abs(g) < 1e-9) return 2.0 * u - 1.0;
  const double tmp = (1.0 - g * g) / (1.0 - g + 2.0 * g * u);
  return std::clamp((1.0 + g * g - tmp * tmp) / (2.0 * g), -1.0, 1.0);
}

inline void spin(double u[3], double ct, double phi) {
  const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
  const double cp = std::cos(phi), sp = std::sin(phi);
  if (std::abs(u[2]) > 0.99999) {
    u[0] = st * cp;
    u[1] = st * sp;
    u[2] = u[2] > 0 ? ct : -ct;
    return;
  }
  const double tmp = std::sqrt(1.0 - u[2] * u[2]);
  const double ux = st * (u[0] * u[2] * cp - u[1] * sp) / tmp + u[0] * ct;
  const double uy = st * (u[1] * u[2] * cp + u[0] * sp) / tmp + u[1] * ct;
  const double uz = -st * cp * tmp + u[2] * ct;
  u[0] = ux;
  u[1] = uy;
  u[2] = uz;
}

// Recorder contract:
//   double segment(p, u, len, path_before, w)  returns extra absorption optical depth
//   void exit(x, y, top, path, w)
template <class Rec>
void run_photon(const Medium& m, double x0, double y0, Launch launch, RngStream& rng, double path_max,
                double threshold, double survival, Rec& rec) {
  double p[3] = {x0, y0, 0.0};
  double u[3];
  double w = 1.0;
  if (launch == Launch::pencil) {
    u[0] = 0.0;
    u[1] = 0.0;
    u[2] = 1.0;
    if (m.fresnel) {
      const double r = (m.n_rel - 1.0) / (m.n_rel + 1.0);
      w = 1.0 - r * r;
    }
  } else {
    const double ct = std::sqrt(rng.uniform());
    const double st = std::sqrt(1.0 - ct * ct);
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    u[0] = st * std::cos(phi);
    u[1] = st * std::sin(phi);
    u[2] = ct;
    if (m.fresnel) w = 1.0 - fresnel_reflectance(m.n_rel, ct);
    if (!(w > 0.0)) return;
  }

  double path = 0.0;
  while (true) {
    double step = m.mus > 0.0 ? -std::log(rng.uniform()) / m.mus : kInf;
    while (true) {
      double db = kInf;
      if (u[2] > 0.0) db = (m.thickness - p[2]) / u[2];
      else if (u[2] < 0.0) db = -p[2] / u[2];
      bool hit = db <= step;
      double move = hit ? db : step;
      if (!std::isfinite(move)) return;
      bool timeout = false;
      if (path + move >= path_max) {
        move = path_max - path;
        timeout = true;
        hit = false;
      }
      const double tau = rec.segment(p, u, move, path, w);
      w *= std::exp(-(m.mua * move + tau));
      p[0] += u[0] * move;
      p[1] += u[1] * move;
      p[2] += u[2] * move;
      path += move;
      if (timeout) return;
      if (std::abs(p[0]) > m.half_x || std::abs(p[1]) > m.half_y) return;
      if (!hit) break;

      const bool top = u[2] < 0.0;
      p[2] = top ? 0.0 : m.thickness;
      if (m.fresnel) {
        const double r = fresnel_reflectance(m.n_rel, std::abs(u[2]));
        if (r >= 1.0 || (r > 0.0 && rng.uniform() < r)) {
          u[2] = -u[2];
          step -= move;
          continue;
        }
      }
      rec.exit(p[0], p[1], top, path, w);
      return;
    }
    if (w < threshold) {
      if (rng.uniform() < survival) w /= survival;
      else return;
    }
    const double ct = hg_cos(rng.uniform(), m.g);
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    spin(u, ct, phi);
  }
}

// Amanatides-Woo traversal of the segment p + s*u, s in [0, len). Calls f(i, j, k, s0, l).
template <class F>
void traverse(const VoxelGrid& g, const double p[3], const double u[3], double len, F&& f) {
  double t0 = 0.0, t1 = len;
  for (int a = 0; a < 3; ++a) {
    const double lo = g.origin[a];
    const double hi = lo + static_cast<double>(g.dims[a]) * g.pitch[a];
    if (u[a] == 0.0) {
      if (p[a] < lo || p[a] >= hi) return;
      continue;
    }
    double ta = (lo - p[a]) / u[a], tb = (hi - p[a]) / u[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return;

  long idx[3];
  int step[3];
  double tmax[3], tdelta[3];
  for (int a = 0; a < 3; ++a) {
    const double lo = g.origin[a];
    const long n = static_cast<long>(g.dims[a]);
    const double pos = p[a] + u[a] * t0;
    idx[a] = std::clamp(static_cast<long>(std::floor((pos - lo) / g.pitch[a])), 0L, n - 1);
    if (u[a] > 0.0) {
      step[a] = 1;
      tmax[a] = (lo + static_cast<double>(idx[a] + 1) * g.pitch[a] - p[a]) / u[a];
      tdelta[a] = g.pitch[a] / u[a];
    } else if (u[a] < 0.0) {
      step[a] = -1;
      tmax[a] = (lo + static_cast<double>(idx[a]) * g.pitch[a] - p[a]) / u[a];
      tdelta[a] = -g.pitch[a] / u[a];
    } else {
      step[a] = 0;
      tmax[a] = kInf;
      tdelta[a] = kInf;
    }
  }
  double t = t0;
  while (true) {
    int a = 0;
    if (tmax[1] < tmax[a]) a = 1;
    if (tmax[2] < tmax[a]) a = 2;
    const double tn = std::min(tmax[a], t1);
    if (tn > t) f(idx[0], idx[1], idx[2], t, tn - t);
    if (tmax[a] >= t1) return;
    t = tn;
    idx[a] += step[a];
    if (idx[a] < 0 || idx[a] >= static_cast<long>(g.dims[a])) return;
    tmax[a] += tdelta[a];
  }
}

double perturbation_depth(const VolumeImage& img, const double p[3], const double u[3], double len) {
  double tau = 0.0;
  traverse(img.grid, p, u, len, [&](long i, long j, long k, double, double l) {
    tau += img.values[img.grid.index(i, j, k)] * l;
  });
  return tau;
}

// Columns recorded by the Jacobian tally: a lateral window times a subset of layers.
struct ColumnMap {
  VoxelGrid grid;
  std::vector<long> slot_of_layer;
  std::size_t n_slots = 0;

  std::size_t n_cols() const { return n_slots * grid.layer_size(); }
  long column(long i, long j, long k) const {
    const long s = slot_of_layer[k];
    if (s < 0) return -1;
    return (s * static_cast<long>(grid.ny()) + j) * static_cast<long>(grid.nx()) + i;
  }

  static ColumnMap whole(const VoxelGrid& g) {
    ColumnMap c;
    c.grid = g;
    c.n_slots = g.nz();
    for (std::size_t k = 0; k < g.nz(); ++k) c.slot_of_layer.push_back(static_cast<long>(k));
    return c;
  }
};

// Layer stack for a depth list. Depths must be increasing and lie on a lattice of `dz`.
ColumnMap layered_window(const std::vector<double>& depths, double dz, std::size_t half_width, double pitch,
                         double thickness) {
  if (depths.empty()) throw Error(ErrorCode::invalid_parameter, "empty depth list");
  if (!(dz > 0.0) || !(pitch > 0.0)) throw Error(ErrorCode::invalid_parameter, "pitch and layer thickness must be > 0");
  for (std::size_t i = 1; i < depths.size(); ++i)
    if (!(depths[i] > depths[i - 1])) throw Error(ErrorCode::invalid_parameter, "depths must be strictly increasing");
  const double zlo = depths.front() - 0.5 * dz;
  if (zlo < -1e-9 || depths.back() + 0.5 * dz > thickness + 1e-9)
    throw Error(ErrorCode::invalid_parameter, "depths outside slab");
  ColumnMap c;
  const std::size_t w = 2 * half_width + 1;
  std::vector<long> layer_of_depth;
  for (double d : depths) {
    const double rel = (d - depths.front()) / dz;
    const double r = std::round(rel);
    if (std::abs(rel - r) > 1e-6) throw Error(ErrorCode::invalid_parameter, "depths are not aligned to the layer thickness");
    layer_of_depth.push_back(static_cast<long>(r));
  }
  const std::size_t nz = static_cast<std::size_t>(layer_of_depth.back()) + 1;
  c.grid.dims = {w, w, nz};
  c.grid.pitch = {pitch, pitch, dz};
  const double half = (static_cast<double>(half_width) + 0.5) * pitch;
  c.grid.origin = {-half, -half, zlo};
  c.slot_of_layer.assign(nz, -1);
  for (std::size_t s = 0; s < layer_of_depth.size(); ++s) c.slot_of_layer[layer_of_depth[s]] = static_cast<long>(s);
  c.n_slots = depths.size();
  return c;
}

// Nearest detector whose square aperture contains a point.
class DetectorLookup {
 public:
  DetectorLookup(std::vector<Vec2> dets, double aperture) : dets_(std::move(dets)), half_(0.5 * aperture), cell_(aperture) {
    if (dets_.size() > 8) {
      for (std::size_t i = 0; i < dets_.size(); ++i)
        buckets_[key(cell_of(dets_[i].x), cell_of(dets_[i].y))].push_back(static_cast<std::uint32_t>(i));
    }
  }

  long find(double x, double y) const {
    long best = -1;
    double best_d = kInf;
    auto consider = [&](std::size_t i) {
      const double dx = x - dets_[i].x, dy = y - dets_[i].y;
      if (std::abs(dx) > half_ || std::abs(dy) > half_) return;
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = static_cast<long>(i);
      }
    };
    if (buckets_.empty()) {
      for (std::size_t i = 0; i < dets_.size(); ++i) consider(i);
      return best;
    }
    const long cx = cell_of(x), cy = cell_of(y);
    for (long a = cx - 1; a <= cx + 1; ++a)
      for (long b = cy - 1; b <= cy + 1; ++b) {
        auto it = buckets_.find(key(a, b));
        if (it == buckets_.end()) continue;
        for (auto i : it->second) consider(i);
      }
    return best;
  }

 private:
  long cell_of(double v) const { return static_cast<long>(std::floor(v / cell_)); }
  static std::int64_t key(long a, long b) { return (static_cast<std::int64_t>(a) << 32) ^ (b & 0xffffffffL); }

  std::vector<Vec2> dets_;
  double half_, cell_;
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> buckets_;
};

struct ExitInfo {
  bool exited = false;
  double x = 0, y = 0, path = 0, w = 0;
  bool top = true;
};

struct PathBuffer {
  std::vector<std::pair<std::uint32_t, double>> entries;
  void add(std::uint32_t c, double l) {
    if (!entries.empty() && entries.back().first == c) entries.back().second += l;
    else entries.emplace_back(c, l);
  }
};

struct AbsorptionRecorder {
  const VolumeImage* perturbation = nullptr;
  const ColumnMap* columns = nullptr;
  PathBuffer* buffer = nullptr;
  ExitInfo out;

  double segment(const double p[3], const double u[3], double len, double, double) {
    double tau = 0.0;
    if (perturbation) tau = perturbation_depth(*perturbation, p, u, len);
    if (columns) {
      traverse(columns->grid, p, u, len, [&](long i, long j, long k, double, double l) {
        const long c = columns->column(i, j, k);
        if (c >= 0) buffer->add(static_cast<std::uint32_t>(c), l);
      });
    }
    return tau;
  }
  void exit(double x, double y, bool top, double path, double w) { out = {true, x, y, path, w, top}; }
};

struct AbsorptionTally {
  std::size_t n_dets = 0, n_bins = 0, n_cols = 0;
  std::vector<std::int64_t> hist, hist_sq, jac;
  std::uint64_t detected = 0;

  AbsorptionTally(std::size_t d, std::size_t b, std::size_t c)
      : n_dets(d), n_bins(b), n_cols(c), hist(d * b, 0), hist_sq(d * b, 0), jac(d * b * c, 0) {}
};

void run_absorption_source(const Medium& m, Vec2 src, const DetectorLookup& dets, const TimeAxis& axis,
                           const McSettings& s, std::uint64_t stream_base, DetectionSide side,
                           const VolumeImage* perturbation, const ColumnMap* columns, AbsorptionTally& tally) {
  const double path_max = axis.end() / m.ps_per_mm;
  const bool want_top = side == DetectionSide::reflection;
  const std::int64_t n = static_cast<std::int64_t>(s.n_photons);
  std::uint64_t detected = 0;
#pragma omp parallel reduction(+ : detected)
  {
    PathBuffer buffer;
#pragma omp for schedule(dynamic, 256)
    for (std::int64_t i = 0; i < n; ++i) {
      RngStream rng(s.seed, stream_base + static_cast<std::uint64_t>(i));
      buffer.entries.clear();
      AbsorptionRecorder rec{perturbation, columns, &buffer, {}};
      run_photon(m, src.x, src.y, Launch::pencil, rng, path_max, s.roulette_threshold, s.roulette_survival, rec);
      if (!rec.out.exited || rec.out.top != want_top) continue;
      const long d = dets.find(rec.out.x, rec.out.y);
      if (d < 0) continue;
      const long b = axis.bin_of(rec.out.path * m.ps_per_mm);
      if (b < 0) continue;
      const double w = rec.out.w;
      const std::size_t row = static_cast<std::size_t>(d) * tally.n_bins + static_cast<std::size_t>(b);
      atomic_add(tally.hist[row], to_fixed(w));
      atomic_add(tally.hist_sq[row], to_fixed(w * w));
      ++detected;
      if (columns) {
        std::int64_t* base = tally.jac.data() + row * tally.n_cols;
        for (const auto& [c, l] : buffer.entries) atomic_add(base[c], to_fixed(w * l));
      }
    }
  }
  tally.detected += detected;
}

// Time-resolved fluence tally on a lateral window times a subset of layers, fine time bins
// starting at launch (t = 0).
struct FluenceTally {
  ColumnMap map;
  std::size_t n_fine = 0;
  double fine_width = 0.0;
  double zlo = 0.0, zhi = 0.0;
  std::vector<std::int64_t> acc;  // [column][fine]

  FluenceTally(ColumnMap m, std::size_t nf, double fw) : map(std::move(m)), n_fine(nf), fine_width(fw) {
    zlo = map.grid.origin[2];
    zhi = zlo + static_cast<double>(map.grid.nz()) * map.grid.pitch[2];
    acc.assign(map.n_cols() * n_fine, 0);
  }
};

struct FluenceRecorder {
  FluenceTally* tally;
  double ps_per_mm;
  double mua;
  ExitInfo out;

  double segment(const double p[3], const double u[3], double len, double path0, double w) {
    const double z1 = p[2] + u[2] * len;
    if (std::max(p[2], z1) < tally->zlo || std::min(p[2], z1) > tally->zhi) return 0.0;
    traverse(tally->map.grid, p, u, len, [&](long i, long j, long k, double s0, double l) {
      const long c = tally->map.column(i, j, k);
      if (c < 0) return;
      const double mid = s0 + 0.5 * l;
      const double t = (path0 + mid) * ps_per_mm;
      const auto fb = static_cast<std::size_t>(t / tally->fine_width);
      if (fb >= tally->n_fine) return;
      atomic_add(tally->acc[static_cast<std::size_t>(c) * tally->n_fine + fb], to_fixed(w * std::exp(-mua * mid) * l));
    });
    return 0.0;
  }
  void exit(double x, double y, bool top, double path, double w) { out = {true, x, y, path, w, top}; }
};

// Runs one fluence pass from the origin. With `leak` set, also tallies photons reaching each
// detector in `dets` on the coarse axis (leak is [detector][bin]).
void run_fluence_pass(const Medium& m, Launch launch, const McSettings& s, std::uint64_t stream_base,
                      FluenceTally& tally, const std::vector<Vec2>& dets, double aperture, const TimeAxis& axis,
                      std::vector<std::int64_t>* leak) {
  const double path_max = static_cast<double>(tally.n_fine) * tally.fine_width / m.ps_per_mm;
  const std::int64_t n = static_cast<std::int64_t>(s.n_photons);
  const double half = 0.5 * aperture;
  const std::size_t nb = axis.n_bins;
#pragma omp parallel for schedule(dynamic, 256)
  for (std::int64_t i = 0; i < n; ++i) {
    RngStream rng(s.seed, stream_base + static_cast<std::uint64_t>(i));
    FluenceRecorder rec{&tally, m.ps_per_mm, m.mua, {}};
    run_photon(m, 0.0, 0.0, launch, rng, path_max, s.roulette_threshold, s.roulette_survival, rec);
    if (!leak || !rec.out.exited || !rec.out.top) continue;
    const long b = axis.bin_of(rec.out.path * m.ps_per_mm);
    if (b < 0) continue;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (std::abs(rec.out.x - dets[d].x) > half || std::abs(rec.out.y - dets[d].y) > half) continue;
      atomic_add((*leak)[d * nb + static_cast<std::size_t>(b)], to_fixed(rec.out.w));
    }
  }
}

struct FineAxis {
  std::size_t oversample = 1;
  double width = 0.0;
  std::size_t gate_offset = 0;
  std::size_t n_fine = 0;
};

FineAxis fine_axis_for(const TimeAxis& axis) {
  FineAxis f;
  f.oversample = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(axis.bin_width / 50.0 - 1e-9)));
  f.width = axis.bin_width / static_cast<double>(f.oversample);
  const double off = axis.gate_start / f.width;
  if (off < -1e-9 || std::abs(off - std::round(off)) > 1e-6)
    throw Error(ErrorCode::invalid_parameter, "gate start must be a non-negative multiple of the fine time step");
  f.gate_offset = static_cast<std::size_t>(std::llround(off));
  f.n_fine = f.gate_offset + axis.n_bins * f.oversample;
  return f;
}

// Excitation and reciprocal-emission fluence maps around a source at the origin.
struct FluenceMaps {
  std::size_t half_width = 0;
  FineAxis fine;
  ColumnMap map;
  std::vector<double> excitation;  // per mm^2 per ps per launched photon
  std::vector<double> escape;      // exit density per mm^2 per ps per emitted photon
  std::vector<std::vector<double>> leak;  // per detector, coarse bins, detected excitation per launched photon

  const double* fx(std::size_t slot, long cx, long cy) const { return series(excitation, slot, cx, cy); }
  const double* esc(std::size_t slot, long cx, long cy) const { return series(escape, slot, cx, cy); }

 private:
  const double* series(const std::vector<double>& v, std::size_t slot, long cx, long cy) const {
    const long w = static_cast<long>(half_width);
    const std::size_t col = (slot * map.grid.ny() + static_cast<std::size_t>(cy + w)) * map.grid.nx() +
                            static_cast<std::size_t>(cx + w);
    return v.data() + col * fine.n_fine;
  }
};

FluenceMaps fluence_maps(const SlabMedium& medium, ColumnMap map, std::size_t half_width, const TimeAxis& axis,
                         const McSettings& s, const std::vector<Vec2>& dets, double aperture) {
  if (!medium.fluorescence) throw Error(ErrorCode::invalid_parameter, "fluorescence mode needs a fluorophore model");
  FluenceMaps out;
  out.half_width = half_width;
  out.fine = fine_axis_for(axis);
  out.map = map;
  const double cell_volume = map.grid.voxel_volume();
  const double norm = kInvFixed / (static_cast<double>(s.n_photons) * cell_volume * out.fine.width);

  std::vector<std::int64_t> leak(dets.size() * axis.n_bins, 0);
  {
    FluenceTally tally(map, out.fine.n_fine, out.fine.width);
    run_fluence_pass(make_medium(medium, medium.props), Launch::pencil, s, 0, tally, dets, aperture, axis, &leak);
    out.excitation.resize(tally.acc.size());
    for (std::size_t i = 0; i < tally.acc.size(); ++i) out.excitation[i] = static_cast<double>(tally.acc[i]) * norm;
  }
  {
    FluenceTally tally(map, out.fine.n_fine, out.fine.width);
    run_fluence_pass(make_medium(medium, medium.fluorescence->emission_props), Launch::lambertian, s, s.n_photons, tally,
                     dets, aperture, axis, nullptr);
    out.escape.resize(tally.acc.size());
    // Reciprocity: exit density = reciprocal fluence / 4 for a cosine-weighted launch.
    for (std::size_t i = 0; i < tally.acc.size(); ++i) out.escape[i] = 0.25 * static_cast<double>(tally.acc[i]) * norm;
  }
  out.leak.assign(dets.size(), std::vector<double>(axis.n_bins));
  for (std::size_t d = 0; d < dets.size(); ++d)
    for (std::size_t b = 0; b < axis.n_bins; ++b)
      out.leak[d][b] = static_cast<double>(leak[d * axis.n_bins + b]) * kInvFixed / static_cast<double>(s.n_photons) *
                       medium.fluorescence->excitation_rejection;
  return out;
}

// Composes excitation fluence, escape density and lifetime decay, then rebins to the coarse axis.
class Composer {
 public:
  Composer(const FineAxis& fine, const TimeAxis& axis, double lifetime_ns, double scale)
      : fine_(fine), n_bins_(axis.n_bins), scale_(scale), life_(lifetime_kernel(fine.n_fine, fine.width, lifetime_ns)),
        c_(fine.n_fine), mass_(fine.n_fine), decayed_(fine.n_fine) {}

  void compose(const double* fx, const double* e, double* out) {
    const std::size_t n = fine_.n_fine;
    std::size_t first = n;
    for (std::size_t i = 0; i < n; ++i)
      if (fx[i] != 0.0) {
        first = i;
        break;
      }
    std::fill(out, out + n_bins_, 0.0);
    if (first == n) return;
    for (std::size_t k = 0; k < n; ++k) {
      double acc = 0.0;
      for (std::size_t i = first; i <= k; ++i) acc += fx[i] * e[k - i];
      c_[k] = acc;
    }
    // Product of two bin-constant functions: each pair contributes a triangle split across
    // fine bins k and k+1.
    mass_[0] = 0.5 * c_[0];
    for (std::size_t k = 1; k < n; ++k) mass_[k] = 0.5 * (c_[k] + c_[k - 1]);
    for (std::size_t k = 0; k < n; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= k; ++j) acc += life_[j] * mass_[k - j];
      decayed_[k] = acc;
    }
    for (std::size_t b = 0; b < n_bins_; ++b) {
      double acc = 0.0;
      const std::size_t f0 = fine_.gate_offset + b * fine_.oversample;
      for (std::size_t f = f0; f < f0 + fine_.oversample; ++f) acc += decayed_[f];
      out[b] = scale_ * acc;
    }
  }

 private:
  FineAxis fine_;
  std::size_t n_bins_;
  double scale_;
  std::vector<double> life_, c_, mass_, decayed_;
};

long lattice_cells(double v, double pitch, const char* what) {
  const double r = v / pitch;
  const double k = std::round(r);
  if (std::abs(r - k) > 1e-6) throw Error(ErrorCode::invalid_parameter, std::string(what) + " is not on the voxel lattice");
  return static_cast<long>(k);
}

McJacobian fluorescence_jacobian(const SlabMedium& medium, const MeasurementLayout& layout, const TimeAxis& axis,
                                 const VoxelGrid& grid, const McSettings& s, double aperture) {
  if (grid.pitch[0] != grid.pitch[1]) throw Error(ErrorCode::invalid_parameter, "fluorescence Jacobian needs square voxels");
  const double pitch = grid.pitch[0];
  long reach = 0;
  auto cell = [&](double v) { return lattice_cells(v, pitch, "position"); };
  std::vector<long> vx(grid.nx()), vy(grid.ny());
  for (std::size_t i = 0; i < grid.nx(); ++i) vx[i] = cell(grid.center(i, 0, 0).x);
  for (std::size_t j = 0; j < grid.ny(); ++j) vy[j] = cell(grid.center(0, j, 0).y);
  auto extend = [&](Vec2 pos) {
    const long px = cell(pos.x), py = cell(pos.y);
    reach = std::max({reach, std::abs(vx.front() - px), std::abs(vx.back() - px), std::abs(vy.front() - py),
                      std::abs(vy.back() - py)});
  };
  for (const auto& p : layout.sources) extend(p);
  for (const auto& p : layout.detectors) extend(p);

  const std::size_t w = static_cast<std::size_t>(reach);
  ColumnMap map;
  map.grid.dims = {2 * w + 1, 2 * w + 1, grid.nz()};
  map.grid.pitch = {pitch, pitch, grid.pitch[2]};
  const double half = (static_cast<double>(w) + 0.5) * pitch;
  map.grid.origin = {-half, -half, grid.origin[2]};
  map.n_slots = grid.nz();
  for (std::size_t k = 0; k < grid.nz(); ++k) map.slot_of_layer.push_back(static_cast<long>(k));

  FluenceMaps maps = fluence_maps(medium, map, w, axis, s, {Vec2{}}, aperture);
  const double scale = aperture * aperture * grid.voxel_volume() * maps.fine.width * maps.fine.width;
  const std::size_t nb = axis.n_bins;

  McJacobian out;
  out.op = DenseOperator(layout, grid);
  out.op.backend = "mc";
  const long np = static_cast<long>(layout.n_pairs());
#pragma omp parallel
  {
    Composer comp(maps.fine, axis, medium.fluorescence->lifetime_ns, scale);
    std::vector<double> series(nb);
#pragma omp for schedule(dynamic, 1)
    for (long pr = 0; pr < np; ++pr) {
      const auto [si, di] = layout.pairs[static_cast<std::size_t>(pr)];
      const long sx = cell(layout.sources[si].x), sy = cell(layout.sources[si].y);
      const long dx = cell(layout.detectors[di].x), dy = cell(layout.detectors[di].y);
      for (std::size_t k = 0; k < grid.nz(); ++k)
        for (std::size_t j = 0; j < grid.ny(); ++j)
          for (std::size_t i = 0; i < grid.nx(); ++i) {
            comp.compose(maps.fx(k, vx[i] - sx, vy[j] - sy), maps.esc(k, vx[i] - dx, vy[j] - dy), series.data());
            const std::size_t col = grid.index(i, j, k);
            for (std::size_t b = 0; b < nb; ++b) out.op.at(static_cast<std::size_t>(pr) * nb + b, col) = series[b];
          }
    }
  }
  out.background.transients = layout.empty_transients();
  out.background.variance.assign(out.background.transients.size(), 0.0);
  out.background.no_detections = true;
  return out;
}

}  // namespace

void validate_settings(const McSettings& s) {
  if (s.n_photons < 1) throw Error(ErrorCode::invalid_parameter, "n_photons must be >= 1");
  if (!(s.roulette_threshold > 0.0 && s.roulette_threshold < 1.0))
    throw Error(ErrorCode::invalid_parameter, "roulette_threshold must lie in (0, 1)");
  if (!(s.roulette_survival > 0.0 && s.roulette_survival < 1.0))
    throw Error(ErrorCode::invalid_parameter, "roulette_survival must lie in (0, 1)");
}

double step_from_uniform(double u, double mu_t) {
  if (!(mu_t > 0.0)) throw Error(ErrorCode::invalid_parameter, "mu_t must be > 0");
  return -std::log(u) / mu_t;
}

double sample_step(RngStream& rng, double mu_t) { return step_from_uniform(rng.uniform(), mu_t); }

double hg_cos_from_uniform(double u, double g) {
  if (!(g > -1.0 && g < 1.0)) throw Error(ErrorCode::invalid_parameter, "anisotropy must lie in (-1, 1)");
  return hg_cos(u, g);
}

double hg_cdf(double cos_theta, double g) {
  if (std::abs(g) < 1e-9) return 0.5 * (cos_theta + 1.0);
  return (1.0 - g * g) / (2.0 * g) * (1.0 / std::sqrt(1.0 + g * g - 2.0 * g * cos_theta) - 1.0 / (1.0 + g));
}

Deflection sample_scatter(RngStream& rng, double g) {
  const double ct = hg_cos_from_uniform(rng.uniform(), g);
  return {ct, 2.0 * std::numbers::pi * rng.uniform()};
}

double fresnel_reflectance(double n_rel, double cos_i) {
  if (n_rel == 1.0) return 0.0;
  if (cos_i > 1.0 - 1e-12) {
    const double r = (n_rel - 1.0) / (n_rel + 1.0);
    return r * r;
  }
  if (cos_i < 1e-6) return 1.0;
  const double sa1 = std::sqrt(1.0 - cos_i * cos_i);
  const double sa2 = n_rel * sa1;
  if (sa2 >= 1.0) return 1.0;
  const double ca2 = std::sqrt(1.0 - sa2 * sa2);
  const double cap = cos_i * ca2 - sa1 * sa2;
  const double cam = cos_i * ca2 + sa1 * sa2;
  const double sap = sa1 * ca2 + cos_i * sa2;
  const double sam = sa1 * ca2 - cos_i * sa2;
  return 0.5 * sam * sam * (cam * cam + cap * cap) / (sap * sap * cam * cam);
}

PhotonRecord trace_photon(const SlabMedium& medium, const McSettings& settings, Vec2 launch, std::uint64_t stream_id,
                          double time_limit, const VoxelGrid* grid) {
  validate_settings(settings);
  const Medium m = make_medium(medium, medium.props);
  std::optional<ColumnMap> cols;
  if (grid) cols = ColumnMap::whole(*grid);
  PathBuffer buffer;
  AbsorptionRecorder rec{nullptr, cols ? &*cols : nullptr, &buffer, {}};
  RngStream rng(settings.seed, stream_id);
  run_photon(m, launch.x, launch.y, Launch::pencil, rng, time_limit / m.ps_per_mm, settings.roulette_threshold,
             settings.roulette_survival, rec);
  PhotonRecord r;
  r.exited = rec.out.exited;
  r.exit_position = {rec.out.x, rec.out.y};
  r.side = rec.out.top ? DetectionSide::reflection : DetectionSide::transmission;
  r.path_length = rec.out.path;
  r.arrival_time = rec.out.path * m.ps_per_mm;
  r.weight = rec.out.w;
  r.per_voxel_pathlength = std::move(buffer.entries);
  return r;
}

SimulatedTransients simulate_transients(const SlabMedium& medium, const ScanConfig& scan, const McSettings& settings,
                                        double detector_aperture) {
  TransportOptions o;
  o.detector_aperture = detector_aperture;
  return simulate_transients(medium, scan, settings, o);
}

namespace {

// Shared absorption driver: for every source, tallies its pairs' transients and optionally
// the Jacobian columns.
struct AbsorptionRun {
  SimulatedTransients transients;
  std::vector<double> jacobian;  // rows() x n_cols, positive magnitudes
};

AbsorptionRun run_absorption(const SlabMedium& medium, const MeasurementLayout& layout, const TimeAxis& axis,
                             const McSettings& s, const TransportOptions& opt, const ColumnMap* columns) {
  validate_settings(s);
  if (!(opt.detector_aperture > 0.0)) throw Error(ErrorCode::invalid_parameter, "detector aperture must be > 0");
  throw_if_invalid(validate_medium(medium));
  const Medium m = make_medium(medium, medium.props);
  const std::size_t nb = axis.n_bins;
  const std::size_t n_cols = columns ? columns->n_cols() : 0;
  const double inv_n = 1.0 / static_cast<double>(s.n_photons);

  AbsorptionRun run;
  run.transients.transients = layout.empty_transients();
  run.transients.variance.assign(layout.rows(), 0.0);
  if (columns) run.jacobian.assign(layout.rows() * n_cols, 0.0);

  std::vector<std::vector<std::size_t>> pairs_of_source(layout.sources.size());
  for (std::size_t p = 0; p < layout.pairs.size(); ++p) pairs_of_source[layout.pairs[p].first].push_back(p);

  for (std::size_t src = 0; src < layout.sources.size(); ++src) {
    const auto& pairs = pairs_of_source[src];
    if (pairs.empty()) continue;
    std::vector<Vec2> dets;
    for (auto p : pairs) dets.push_back(layout.detectors[layout.pairs[p].second]);
    DetectorLookup lookup(dets, opt.detector_aperture);
    AbsorptionTally tally(dets.size(), nb, n_cols);
    run_absorption_source(m, layout.sources[src], lookup, axis, s, src * s.n_photons, opt.side,
                          opt.absorption_perturbation, columns, tally);
    run.transients.detected += tally.detected;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const std::size_t pair = pairs[d];
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t t = d * nb + b;
        const double mean = static_cast<double>(tally.hist[t]) * kInvFixed * inv_n;
        const double sq = static_cast<double>(tally.hist_sq[t]) * kInvFixed * inv_n;
        run.transients.transients.values[pair * nb + b] = mean;
        run.transients.variance[pair * nb + b] = std::max(0.0, sq - mean * mean) * inv_n;
        if (columns) {
          const std::int64_t* srcrow = tally.jac.data() + t * n_cols;
          double* dst = run.jacobian.data() + (pair * nb + b) * n_cols;
          for (std::size_t c = 0; c < n_cols; ++c) dst[c] = static_cast<double>(srcrow[c]) * kInvFixed * inv_n;
        }
      }
    }
  }
  run.transients.no_detections = run.transients.detected == 0;
  return run;
}

}  // namespace

SimulatedTransients simulate_transients(const SlabMedium& medium, const ScanConfig& scan, const McSettings& settings,
                                        const TransportOptions& options) {
  VoxelGrid dummy;
  dummy.origin = {-0.5, -0.5, 0.0};
  dummy.pitch = {1.0, 1.0, std::min(1.0, medium.thickness)};
  std::vector<SceneIssue> issues = validate_scene(medium, dummy, scan);
  throw_if_invalid(issues);
  return run_absorption(medium, MeasurementLayout::from_scan(scan), scan.time_axis, settings, options, nullptr).transients;
}

McJacobian estimate_jacobian_pairs(const SlabMedium& medium, const MeasurementLayout& layout, const TimeAxis& axis,
                                   const VoxelGrid& grid, const McSettings& settings, double detector_aperture) {
  TransportOptions opt;
  opt.detector_aperture = detector_aperture;
  const ColumnMap cols = ColumnMap::whole(grid);
  AbsorptionRun run = run_absorption(medium, layout, axis, settings, opt, &cols);
  for (double& v : run.jacobian) v = -v;
  McJacobian out;
  out.op = DenseOperator(layout, grid, std::move(run.jacobian));
  out.op.backend = "mc";
  out.background = std::move(run.transients);
  return out;
}

McJacobian estimate_jacobian_mc(const SlabMedium& medium, const ScanConfig& scan, const VoxelGrid& grid,
                                const McSettings& settings, ContrastMode mode, double detector_aperture) {
  if (!settings.record_jacobian) throw Error(ErrorCode::invalid_parameter, "record_jacobian must be enabled");
  throw_if_invalid(validate_scene(medium, grid, scan));
  const MeasurementLayout layout = MeasurementLayout::from_scan(scan);
  if (mode == ContrastMode::fluorescence) {
    validate_settings(settings);
    return fluorescence_jacobian(medium, layout, scan.time_axis, grid, settings, detector_aperture);
  }
  return estimate_jacobian_pairs(medium, layout, scan.time_axis, grid, settings, detector_aperture);
}

std::vector<FluorescenceKernels> estimate_fluorescence_kernels(const SlabMedium& medium,
                                                               const std::vector<double>& depths, double pitch,
                                                               double layer_thickness, const TimeAxis& axis,
                                                               const McSettings& settings, std::size_t kernel_radius,
                                                               double detector_aperture,
                                                               const std::vector<Vec2>& detector_offsets) {
  validate_settings(settings);
  throw_if_invalid(validate_medium(medium));
  if (!medium.fluorescence) throw Error(ErrorCode::invalid_parameter, "fluorescence mode needs a fluorophore model");
  if (detector_offsets.empty()) throw Error(ErrorCode::invalid_parameter, "no detector offsets given");
  std::vector<std::pair<long, long>> cells;
  long reach = 0;
  for (const Vec2& o : detector_offsets) {
    cells.emplace_back(lattice_cells(o.x, pitch, "detector offset"), lattice_cells(o.y, pitch, "detector offset"));
    reach = std::max({reach, std::abs(cells.back().first), std::abs(cells.back().second)});
  }
  const std::size_t w = kernel_radius + static_cast<std::size_t>(reach);
  if (static_cast<double>(2 * w + 1) * pitch > std::min(medium.extent_x, medium.extent_y))
    throw Error(ErrorCode::invalid_parameter, "kernel radius exceeds slab extent");
  ColumnMap map = layered_window(depths, layer_thickness, w, pitch, medium.thickness);
  FluenceMaps maps = fluence_maps(medium, map, w, axis, settings, detector_offsets, detector_aperture);

  const double voxel = pitch * pitch * layer_thickness;
  const double scale = detector_aperture * detector_aperture * voxel * maps.fine.width * maps.fine.width;
  const long r = static_cast<long>(kernel_radius);
  const std::size_t nb = axis.n_bins;
  std::vector<FluorescenceKernels> result;
  for (std::size_t o = 0; o < detector_offsets.size(); ++o) {
    const auto [ox, oy] = cells[o];
    FluorescenceKernels out;
    out.kernels = KernelStack(kernel_radius, depths, pitch, layer_thickness, axis);
    out.kernels.backend = "mc";
    out.excitation_leak = maps.leak[o];
    const std::size_t k = out.kernels.width();
    const long n_pix = static_cast<long>(depths.size() * k * k);
#pragma omp parallel
    {
      Composer comp(maps.fine, axis, medium.fluorescence->lifetime_ns, scale);
      std::vector<double> series(nb);
#pragma omp for schedule(dynamic, 16)
      for (long idx = 0; idx < n_pix; ++idx) {
        const std::size_t d = static_cast<std::size_t>(idx) / (k * k);
        const std::size_t iy = (static_cast<std::size_t>(idx) / k) % k;
        const std::size_t ix = static_cast<std::size_t>(idx) % k;
        // Scan offset p = source - voxel, so the voxel sits at -p from the source and at
        // -p - offset from the detector.
        const long px = static_cast<long>(ix) - r, py = static_cast<long>(iy) - r;
        comp.compose(maps.fx(d, -px, -py), maps.esc(d, -px - ox, -py - oy), series.data());
        for (std::size_t t = 0; t < nb; ++t) out.kernels.at(d, t, iy, ix) = series[t];
      }
    }
    result.push_back(std::move(out));
  }
  return result;
}

FluorescenceKernels estimate_fluorescence_kernels(const SlabMedium& medium, const std::vector<double>& depths,
                                                  double pitch, double layer_thickness, const TimeAxis& axis,
                                                  const McSettings& settings, std::size_t kernel_radius,
                                                  double detector_aperture, Vec2 detector_offset) {
  return std::move(estimate_fluorescence_kernels(medium, depths, pitch, layer_thickness, axis, settings, kernel_radius,
                                                 detector_aperture, std::vector<Vec2>{detector_offset})
                       .front());
}

KernelStack estimate_psf_mc(const SlabMedium& medium, const std::vector<double>& depths, double pitch,
                            double layer_thickness, const TimeAxis& axis, const McSettings& settings,
                            std::size_t kernel_radius, ContrastMode mode, double detector_aperture, Vec2 detector_offset) {
  if (mode == ContrastMode::fluorescence)
    return estimate_fluorescence_kernels(medium, depths, pitch, layer_thickness, axis, settings, kernel_radius,
                                         detector_aperture, detector_offset)
        .kernels;
  if (static_cast<double>(2 * kernel_radius + 1) * pitch > std::min(medium.extent_x, medium.extent_y))
    throw Error(ErrorCode::invalid_parameter, "kernel radius exceeds slab extent");
  const ColumnMap cols = layered_window(depths, layer_thickness, kernel_radius, pitch, medium.thickness);
  const MeasurementLayout layout = MeasurementLayout::from_pairs({{0.0, 0.0}}, {detector_offset}, {{0u, 0u}}, axis.n_bins);
  TransportOptions opt;
  opt.detector_aperture = detector_aperture;
  const AbsorptionRun run = run_absorption(medium, layout, axis, settings, opt, &cols);

  KernelStack ks(kernel_radius, depths, pitch, layer_thickness, axis);
  ks.backend = "mc";
  const std::size_t k = ks.width();
  const std::size_t n_cols = cols.n_cols();
  for (std::size_t d = 0; d < depths.size(); ++d)
    for (std::size_t t = 0; t < axis.n_bins; ++t)
      for (std::size_t iy = 0; iy < k; ++iy)
        for (std::size_t ix = 0; ix < k; ++ix) {
          const std::size_t col = (d * k + (k - 1 - iy)) * k + (k - 1 - ix);
          ks.at(d, t, iy, ix) = run.jacobian[t * n_cols + col];
        }
  return ks;
}

std::vector<double> lifetime_kernel(std::size_t n_bins, double bin_width_ps, double lifetime_ns) {
  if (!(lifetime_ns > 0.0)) throw Error(ErrorCode::invalid_parameter, "lifetime must be > 0");
  const double tau = 1000.0 * lifetime_ns;
  const double step = std::exp(-bin_width_ps / tau);
  std::vector<double> h(n_bins);
  double decay = 1.0;
  for (std::size_t k = 0; k < n_bins; ++k) {
    h[k] = decay * (1.0 - step);
    decay *= step;
  }
  return h;
}

std::vector<double> apply_lifetime(std::span<const double> row, double bin_width_ps, double lifetime_ns) {
  const std::vector<double> h = lifetime_kernel(row.size(), bin_width_ps, lifetime_ns);
  std::vector<double> out(row.size(), 0.0);
  for (std::size_t n = 0; n < row.size(); ++n) {
    double acc = 0.0;
    for (std::size_t k = 0; k <= n; ++k) acc += h[k] * row[n - k];
    out[n] = acc;
  }
  return out;
}

TransientSet apply_fluorescence_lifetime(const TransientSet& transient, double bin_width_ps, double lifetime_ns) {
  TransientSet out = transient;
  for (std::size_t r = 0; r < transient.n_rows(); ++r) {
    const auto row = apply_lifetime(std::span<const double>(transient.values.data() + r * transient.n_bins, transient.n_bins),
                                    bin_width_ps, lifetime_ns);
    std::copy(row.begin(), row.end(), out.values.begin() + static_cast<long>(r * transient.n_bins));
  }
  return out;
}

}  // namespace ctof::mc
