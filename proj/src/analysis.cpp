#include "ctof/analysis.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace ctof {

std::vector<double> singular_values(const DenseOperator& op) {
  const auto& a = op.matrix();
  if (!std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); }))
    throw Error(ErrorCode::non_finite, "matrix contains non-finite entries");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMajor> m(a.data(), static_cast<Eigen::Index>(op.rows()), static_cast<Eigen::Index>(op.cols()));
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

std::vector<double> singular_spectrum(const DenseOperator& op) {
  std::vector<double> s = singular_values(op);
  if (s.empty() || s.front() == 0.0) return s;
  const double top = s.front();
  for (double& v : s) v /= top;
  return s;
}

ConditioningRow conditioning_of(const std::string& name, std::span<const double> sv, std::size_t rows,
                                std::size_t cols, double floor) {
  ConditioningRow r;
  r.name = name;
  r.rows = rows;
  r.cols = cols;
  if (sv.empty()) return r;
  r.max_sv = sv.front();
  for (double v : sv) {
    const double normalized = r.max_sv > 0.0 ? v / r.max_sv : 0.0;
    r.spectrum.push_back(normalized);
    if (r.max_sv > 0.0 && normalized >= floor) {
      ++r.count_above_floor;
      r.min_sv_above_floor = v;
    }
  }
  return r;
}

std::vector<ConditioningRow> conditioning_report(const std::vector<NamedOperator>& ops, double floor) {
  std::vector<ConditioningRow> out;
  for (const auto& n : ops) {
    const auto sv = singular_values(*n.op);
    out.push_back(conditioning_of(n.name, sv, n.op->rows(), n.op->cols(), floor));
  }
  return out;
}

double psnr(std::span<const double> recon, std::span<const double> truth) {
  if (recon.size() != truth.size() || truth.empty())
    throw Error(ErrorCode::dimension_mismatch, "psnr needs equally shaped, non-empty images");
  const auto [lo, hi] = std::minmax_element(truth.begin(), truth.end());
  if (*lo == *hi) throw Error(ErrorCode::invalid_parameter, "psnr needs a non-constant truth image");
  double mse = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) mse += (recon[i] - truth[i]) * (recon[i] - truth[i]);
  mse /= static_cast<double>(truth.size());
  if (mse == 0.0) return std::numeric_limits<double>::max();
  const double peak = *std::max_element(truth.begin(), truth.end());
  if (!(peak > 0.0)) throw Error(ErrorCode::invalid_parameter, "psnr needs a truth image with a positive peak");
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const VolumeImage& recon, const VolumeImage& truth) {
  if (recon.grid.dims != truth.grid.dims) throw Error(ErrorCode::dimension_mismatch, "psnr shape mismatch");
  return psnr(std::span<const double>(recon.values), std::span<const double>(truth.values));
}

TwoLineResult evaluate_two_lines(std::span<const double> profile, double center_a, double center_b, double threshold,
                                 double tolerance) {
  TwoLineResult r;
  const long n = static_cast<long>(profile.size());
  auto peak_near = [&](double c) -> long {
    const long lo = std::max<long>(0, static_cast<long>(std::ceil(c - tolerance - 1e-9)));
    const long hi = std::min<long>(n - 1, static_cast<long>(std::floor(c + tolerance + 1e-9)));
    long best = -1;
    for (long i = lo; i <= hi; ++i) {
      const bool left_ok = i == 0 || profile[static_cast<std::size_t>(i)] >= profile[static_cast<std::size_t>(i - 1)];
      const bool right_ok = i == n - 1 || profile[static_cast<std::size_t>(i)] >= profile[static_cast<std::size_t>(i + 1)];
      if (!left_ok || !right_ok) continue;
      if (best < 0 || profile[static_cast<std::size_t>(i)] > profile[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
  };
  r.peak_a = peak_near(center_a);
  r.peak_b = peak_near(center_b);
  if (r.peak_a < 0 || r.peak_b < 0 || r.peak_b - r.peak_a < 2) return r;
  const double pa = profile[static_cast<std::size_t>(r.peak_a)], pb = profile[static_cast<std::size_t>(r.peak_b)];
  const double mean_peak = 0.5 * (pa + pb);
  if (!(mean_peak > 0.0)) return r;
  double dip = std::numeric_limits<double>::infinity();
  for (long i = r.peak_a + 1; i < r.peak_b; ++i) dip = std::min(dip, profile[static_cast<std::size_t>(i)]);
  r.dip_ratio = dip / mean_peak;
  r.resolved = r.dip_ratio < threshold;
  return r;
}

std::string to_csv(const std::vector<CsvRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << kCsvHeader << '\n';
  for (const auto& r : rows)
    os << r.method << ',' << r.param << ',' << r.value << ',' << r.wall_ms << ',' << r.threads << ',' << r.seed << '\n';
  return os.str();
}

void write_csv(const std::filesystem::path& path, const std::vector<CsvRow>& rows) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
  f << to_csv(rows);
  if (!f) throw Error(ErrorCode::io, "write failed for " + path.string());
}

double median_wall_ms(const std::function<void()>& fn, int reps) {
  std::vector<double> t;
  for (int i = 0; i < std::max(reps, 1); ++i) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

}  // namespace ctof
