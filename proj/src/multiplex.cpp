#include <algorithm>
#include <cmath>
#include <limits>

#include "ctof/forward_ops.hpp"

namespace ctof {
namespace {

bool is_prime(std::size_t q) {
  if (q < 2) return false;
  for (std::size_t d = 2; d * d <= q; ++d)
    if (q % d == 0) return false;
  return true;
}

// Quadratic character mod prime q.
std::vector<int> quadratic_character(std::size_t q) {
  std::vector<int> chi(q, -1);
  chi[0] = 0;
  for (std::size_t x = 1; x < q; ++x) chi[(x * x) % q] = 1;
  return chi;
}

using Matrix = std::vector<int>;

Matrix kron2(const Matrix& h, std::size_t n) {
  Matrix out(4 * n * n);
  const std::size_t m = 2 * n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const int v = h[i * n + j];
      out[i * m + j] = v;
      out[i * m + j + n] = v;
      out[(i + n) * m + j] = v;
      out[(i + n) * m + j + n] = -v;
    }
  return out;
}

Matrix paley1(std::size_t q) {
  const std::size_t n = q + 1;
  const auto chi = quadratic_character(q);
  Matrix h(n * n, 0);
  for (std::size_t j = 1; j < n; ++j) {
    h[j] = 1;
    h[j * n] = -1;
  }
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < q; ++j) h[(i + 1) * n + j + 1] = chi[(j + q - i) % q];
  for (std::size_t i = 0; i < n; ++i) h[i * n + i] += 1;
  return h;
}

Matrix paley2(std::size_t q) {
  const std::size_t m = q + 1, n = 2 * m;
  const auto chi = quadratic_character(q);
  Matrix c(m * m, 0);
  for (std::size_t j = 1; j < m; ++j) c[j] = c[j * m] = 1;
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < q; ++j) c[(i + 1) * m + j + 1] = chi[(j + q - i) % q];
  Matrix h(n * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const int v = c[i * m + j];
      int b[4];
      if (v == 0) {
        b[0] = 1, b[1] = -1, b[2] = -1, b[3] = -1;
      } else {
        b[0] = v, b[1] = v, b[2] = v, b[3] = -v;
      }
      h[(2 * i) * n + 2 * j] = b[0];
      h[(2 * i) * n + 2 * j + 1] = b[1];
      h[(2 * i + 1) * n + 2 * j] = b[2];
      h[(2 * i + 1) * n + 2 * j + 1] = b[3];
    }
  return h;
}

bool construct(std::size_t n, Matrix& out) {
  if (n == 1) {
    out = {1};
    return true;
  }
  if (n == 2) {
    out = {1, 1, 1, -1};
    return true;
  }
  if (n % 4 != 0) return false;
  if (is_prime(n - 1) && (n - 1) % 4 == 3) {
    out = paley1(n - 1);
    return true;
  }
  if (is_prime(n / 2 - 1) && (n / 2 - 1) % 4 == 1) {
    out = paley2(n / 2 - 1);
    return true;
  }
  Matrix half;
  if (!construct(n / 2, half)) return false;
  out = kron2(half, n / 2);
  return true;
}

// Flip row signs so the first column is all +1, then column signs so the first row is too.
void normalize(Matrix& h, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (h[i * n] < 0)
      for (std::size_t j = 0; j < n; ++j) h[i * n + j] = -h[i * n + j];
  for (std::size_t j = 0; j < n; ++j)
    if (h[j] < 0)
      for (std::size_t i = 0; i < n; ++i) h[i * n + j] = -h[i * n + j];
}

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Sorted distinct coordinates along one axis, merged within a small tolerance.
std::vector<double> distinct(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  for (double x : v)
    if (out.empty() || x - out.back() > 1e-9) out.push_back(x);
  return out;
}

// Groups of a full regular lattice: sources whose lattice indices agree modulo the smallest step
// that keeps min_separation. Empty when the positions do not form one.
std::vector<std::vector<std::size_t>> lattice_groups(const std::vector<Vec2>& pos, double min_separation) {
  std::vector<double> xs, ys;
  for (const auto& p : pos) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  const auto ux = distinct(xs), uy = distinct(ys);
  if (ux.size() * uy.size() != pos.size() || ux.size() < 2 || uy.size() < 2) return {};
  const double px = ux[1] - ux[0], py = uy[1] - uy[0];
  for (std::size_t i = 1; i < ux.size(); ++i)
    if (std::abs(ux[i] - ux[i - 1] - px) > 1e-9 * std::max(1.0, px)) return {};
  for (std::size_t i = 1; i < uy.size(); ++i)
    if (std::abs(uy[i] - uy[i - 1] - py) > 1e-9 * std::max(1.0, py)) return {};
  const auto step = [&](double pitch) {
    return static_cast<std::size_t>(std::max(1.0, std::ceil(min_separation / pitch - 1e-9)));
  };
  const std::size_t kx = step(px), ky = step(py);
  std::vector<std::vector<std::size_t>> groups(std::min(kx, ux.size()) * std::min(ky, uy.size()));
  for (std::size_t s = 0; s < pos.size(); ++s) {
    const auto i = static_cast<std::size_t>(std::lround((pos[s].x - ux[0]) / px));
    const auto j = static_cast<std::size_t>(std::lround((pos[s].y - uy[0]) / py));
    groups[(j % ky) * std::min(kx, ux.size()) + i % kx].push_back(s);
  }
  return groups;
}

}  // namespace

const char* to_string(MultiplexScheme scheme) {
  switch (scheme) {
    case MultiplexScheme::identity: return "identity";
    case MultiplexScheme::hadamard01: return "hadamard01";
    case MultiplexScheme::hadamard_pm: return "hadamard_pm";
    case MultiplexScheme::far_field_groups: return "far_field_groups";
  }
  return "unknown";
}

MultiplexScheme multiplex_scheme_from_string(const std::string& name) {
  for (auto s : {MultiplexScheme::identity, MultiplexScheme::hadamard01, MultiplexScheme::hadamard_pm,
                 MultiplexScheme::far_field_groups})
    if (name == to_string(s)) return s;
  throw Error(ErrorCode::invalid_parameter, "unknown multiplex scheme '" + name + "'");
}

std::vector<int> hadamard_matrix(std::size_t n) {
  Matrix h;
  if (n == 0 || !construct(n, h))
    throw Error(ErrorCode::invalid_parameter, "no Hadamard construction for order " + std::to_string(n));
  normalize(h, n);
  return h;
}

MultiplexMatrix build_multiplex(MultiplexScheme scheme, std::size_t n_sources, double min_separation,
                                const ScanConfig& scan) {
  if (n_sources == 0) throw Error(ErrorCode::invalid_parameter, "multiplexing needs at least one source");
  MultiplexMatrix m;
  m.scheme = scheme;
  m.n_sources = n_sources;
  switch (scheme) {
    case MultiplexScheme::identity:
      m.n_patterns = n_sources;
      m.S.assign(n_sources * n_sources, 0.0);
      for (std::size_t i = 0; i < n_sources; ++i) m.S[i * n_sources + i] = 1.0;
      break;
    case MultiplexScheme::hadamard01:
    case MultiplexScheme::hadamard_pm: {
      const auto h = hadamard_matrix(n_sources);
      m.n_patterns = n_sources;
      m.S.resize(h.size());
      for (std::size_t i = 0; i < h.size(); ++i)
        m.S[i] = scheme == MultiplexScheme::hadamard_pm ? static_cast<double>(h[i]) : (h[i] + 1) / 2;
      break;
    }
    case MultiplexScheme::far_field_groups: {
      if (!(min_separation >= 0.0) || !std::isfinite(min_separation))
        throw Error(ErrorCode::invalid_parameter, "separation infeasible: min_separation must be finite and >= 0");
      if (scan.sources.size() != n_sources)
        throw Error(ErrorCode::dimension_mismatch, "far-field grouping needs one scan position per source");
      // Regular lattices use the (i mod k, j mod k) classes; other layouts a greedy first-fit coloring.
      std::vector<std::vector<std::size_t>> groups = lattice_groups(scan.sources, min_separation);
      const bool greedy = groups.empty();
      for (std::size_t s = 0; greedy && s < n_sources; ++s) {
        bool placed = false;
        for (auto& g : groups) {
          const bool ok = std::all_of(g.begin(), g.end(), [&](std::size_t o) {
            return distance(scan.sources[o], scan.sources[s]) >= min_separation - 1e-9;
          });
          if (ok) {
            g.push_back(s);
            placed = true;
            break;
          }
        }
        if (!placed) groups.push_back({s});
      }
      m.n_patterns = groups.size();
      m.S.assign(m.n_patterns * n_sources, 0.0);
      for (std::size_t p = 0; p < groups.size(); ++p)
        for (std::size_t s : groups[p]) m.S[p * n_sources + s] = 1.0;
      break;
    }
  }
  return m;
}

TransientSet apply_multiplex(const MultiplexMatrix& S, const TransientSet& m) {
  if (m.n_sources != S.n_sources)
    throw Error(ErrorCode::dimension_mismatch, "pattern width " + std::to_string(S.n_sources) + " does not match " +
                                                   std::to_string(m.n_sources) + " sources");
  const std::size_t nt = m.n_bins;
  if (m.confocal && S.scheme == MultiplexScheme::far_field_groups) {
    // Each lit source is only seen by its own collocated detector.
    TransientSet y = TransientSet::zeros_full(S.n_patterns, S.n_sources, nt);
    for (std::size_t p = 0; p < S.n_patterns; ++p)
      for (std::size_t s = 0; s < S.n_sources; ++s)
        if (S.at(p, s) != 0.0)
          for (std::size_t t = 0; t < nt; ++t) y.at(y.row_of(p, s), t) = S.at(p, s) * m.at(s, t);
    return y;
  }
  const std::size_t nd = m.confocal ? 1 : m.n_detectors;
  TransientSet y = m.confocal ? TransientSet::zeros_confocal(S.n_patterns, nt)
                              : TransientSet::zeros_full(S.n_patterns, nd, nt);
  MultiplexOperator op(S, nd, nt);
  op.apply(m.values, y.values);
  return y;
}

TransientSet demultiplex_far_field(const MultiplexMatrix& S, const TransientSet& y, const ScanConfig& scan) {
  if (S.scheme != MultiplexScheme::far_field_groups)
    throw Error(ErrorCode::invalid_parameter, "far-field demultiplexing needs a far_field_groups matrix");
  if (y.confocal || y.n_sources != S.n_patterns)
    throw Error(ErrorCode::dimension_mismatch, "measurement rows do not match the pattern count");
  const std::vector<Vec2>& dets = scan.confocal ? scan.sources : scan.detectors;
  if (dets.size() != y.n_detectors) throw Error(ErrorCode::dimension_mismatch, "detector count mismatch");
  TransientSet out = TransientSet::zeros_confocal(S.n_sources, y.n_bins);
  for (std::size_t s = 0; s < S.n_sources; ++s) {
    std::size_t pattern = S.n_patterns;
    for (std::size_t p = 0; p < S.n_patterns && pattern == S.n_patterns; ++p)
      if (S.at(p, s) != 0.0) pattern = p;
    if (pattern == S.n_patterns) continue;
    // The detector nearest this source, provided this source is the nearest lit one to it.
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const double dist = distance(dets[d], scan.sources[s]);
      if (dist < best_d) best_d = dist, best = d;
    }
    bool nearest = true;
    for (std::size_t o = 0; o < S.n_sources; ++o)
      if (o != s && S.at(pattern, o) != 0.0 && distance(dets[best], scan.sources[o]) < best_d) nearest = false;
    if (!nearest) continue;
    for (std::size_t t = 0; t < y.n_bins; ++t) out.at(s, t) = y.at(y.row_of(pattern, best), t);
  }
  return out;
}

MultiplexOperator::MultiplexOperator(const MultiplexMatrix& S, std::size_t n_detectors, std::size_t n_bins)
    : S_(S), block_(n_detectors * n_bins) {
  if (S_.S.size() != S_.n_patterns * S_.n_sources)
    throw Error(ErrorCode::dimension_mismatch, "multiplex matrix storage does not match its shape");
}

void MultiplexOperator::apply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != cols() || y.size() != rows()) throw Error(ErrorCode::dimension_mismatch, "multiplex operator shape mismatch");
  const long np = static_cast<long>(S_.n_patterns);
#pragma omp parallel for schedule(static)
  for (long p = 0; p < np; ++p) {
    double* dst = y.data() + static_cast<std::size_t>(p) * block_;
    bool first = true;
    for (std::size_t s = 0; s < S_.n_sources; ++s) {
      const double w = S_.at(static_cast<std::size_t>(p), s);
      if (w == 0.0) continue;
      const double* src = x.data() + s * block_;
      if (first) {
        for (std::size_t i = 0; i < block_; ++i) dst[i] = w * src[i];
        first = false;
      } else {
        for (std::size_t i = 0; i < block_; ++i) dst[i] += w * src[i];
      }
    }
    if (first) std::fill(dst, dst + block_, 0.0);
  }
}

void MultiplexOperator::apply_adjoint(std::span<const double> y, std::span<double> x) const {
  if (y.size() != rows() || x.size() != cols()) throw Error(ErrorCode::dimension_mismatch, "multiplex operator shape mismatch");
  const long ns = static_cast<long>(S_.n_sources);
#pragma omp parallel for schedule(static)
  for (long s = 0; s < ns; ++s) {
    double* dst = x.data() + static_cast<std::size_t>(s) * block_;
    bool first = true;
    for (std::size_t p = 0; p < S_.n_patterns; ++p) {
      const double w = S_.at(p, static_cast<std::size_t>(s));
      if (w == 0.0) continue;
      const double* src = y.data() + p * block_;
      if (first) {
        for (std::size_t i = 0; i < block_; ++i) dst[i] = w * src[i];
        first = false;
      } else {
        for (std::size_t i = 0; i < block_; ++i) dst[i] += w * src[i];
      }
    }
    if (first) std::fill(dst, dst + block_, 0.0);
  }
}

}  // namespace ctof
