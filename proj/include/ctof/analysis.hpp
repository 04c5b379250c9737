#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ctof/core_types.hpp"
#include "ctof/forward_ops.hpp"

namespace ctof {

/// Singular values in descending order, unnormalized.
std::vector<double> singular_values(const DenseOperator& op);

/// Singular values divided by the largest, descending.
std::vector<double> singular_spectrum(const DenseOperator& op);

struct NamedOperator {
  std::string name;
  const DenseOperator* op = nullptr;
};

struct ConditioningRow {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double max_sv = 0.0;
  double min_sv_above_floor = 0.0;  ///< unnormalized
  std::size_t count_above_floor = 0;
  std::vector<double> spectrum;  ///< normalized
};

/// A singular value is retained when sv / max_sv >= floor.
ConditioningRow conditioning_of(const std::string& name, std::span<const double> singular_values, std::size_t rows,
                                std::size_t cols, double floor = 1e-2);
std::vector<ConditioningRow> conditioning_report(const std::vector<NamedOperator>& ops, double floor = 1e-2);

/// 10 log10(max(truth)^2 / MSE); identical images give numeric_limits<double>::max().
double psnr(const VolumeImage& recon, const VolumeImage& truth);
double psnr(std::span<const double> recon, std::span<const double> truth);

struct TwoLineResult {
  bool resolved = false;
  double dip_ratio = 1.0;  ///< min between the peaks over the mean peak height
  long peak_a = -1;
  long peak_b = -1;
};

inline constexpr double kDipRatioThreshold = 0.735;

/// Resolution criterion on a 1D profile across two lines whose true centers sit at fractional
/// sample indices center_a < center_b. Each line needs a local maximum within `tolerance`
/// samples of its center, and the minimum strictly between the two peaks must fall below
/// `threshold` times the mean peak height.
TwoLineResult evaluate_two_lines(std::span<const double> profile, double center_a, double center_b,
                                 double threshold = kDipRatioThreshold, double tolerance = 1.0);

/// One output row of every CSV the toolkit writes.
struct CsvRow {
  std::string method;
  std::string param;
  double value = 0.0;
  double wall_ms = 0.0;
  int threads = 1;
  std::uint64_t seed = 0;
};

inline constexpr const char* kCsvHeader = "method,param,value,wall_ms,threads,seed";

void write_csv(const std::filesystem::path& path, const std::vector<CsvRow>& rows);
std::string to_csv(const std::vector<CsvRow>& rows);

/// Median wall time in ms of `reps` calls of fn.
double median_wall_ms(const std::function<void()>& fn, int reps = 5);

}  // namespace ctof
