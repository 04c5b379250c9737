#include "ctof/noise_model.hpp"

#include <cmath>
#include <random>

#include "ctof/rng.hpp"

namespace ctof {

void validate_acquisition(const AcquisitionModel& acq) {
  if (!(acq.integration_time_ms > 0.0)) throw Error(ErrorCode::invalid_parameter, "acquisition.integration_time_ms must be > 0");
  if (!(acq.max_count_rate >= 0.0)) throw Error(ErrorCode::invalid_parameter, "acquisition.max_count_rate must be >= 0");
  if (!(acq.dark_count_rate >= 0.0)) throw Error(ErrorCode::invalid_parameter, "acquisition.dark_count_rate must be >= 0");
}

std::vector<double> count_scale(const TransientSet& m, const AcquisitionModel& acq) {
  validate_acquisition(acq);
  if (!m.non_negative()) throw Error(ErrorCode::invalid_parameter, "expected_counts needs non-negative rates");
  const double seconds = acq.integration_time_ms * 1e-3;
  const std::size_t nt = m.n_bins;
  const std::size_t rows_per_group = acq.cap_per_detector || m.confocal ? 1 : m.n_detectors;
  std::vector<double> scale(m.n_rows(), seconds);
  for (std::size_t r0 = 0; r0 < m.n_rows(); r0 += rows_per_group) {
    double rate = 0.0;
    for (std::size_t i = r0 * nt; i < (r0 + rows_per_group) * nt; ++i) rate += m.values[i];
    if (rate > acq.max_count_rate)
      for (std::size_t r = r0; r < r0 + rows_per_group; ++r) scale[r] = seconds * acq.max_count_rate / rate;
  }
  return scale;
}

TransientSet expected_counts(const TransientSet& m, const AcquisitionModel& acq) {
  const std::vector<double> scale = count_scale(m, acq);
  TransientSet out = m;
  const std::size_t nt = m.n_bins;
  const double dark = acq.dark_count_rate * acq.integration_time_ms * 1e-3 / static_cast<double>(nt);
  for (std::size_t r = 0; r < m.n_rows(); ++r)
    for (std::size_t t = 0; t < nt; ++t) out.at(r, t) = out.at(r, t) * scale[r] + dark;
  return out;
}

TransientSet sample_counts(const TransientSet& expected, std::uint64_t seed) {
  TransientSet out = expected;
  const long n = static_cast<long>(out.values.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const double lambda = expected.values[static_cast<std::size_t>(i)];
    if (!(lambda > 0.0)) {
      out.values[static_cast<std::size_t>(i)] = 0.0;
      continue;
    }
    RngStream rng(seed, static_cast<std::uint64_t>(i));
    std::poisson_distribution<long long> pd(lambda);
    out.values[static_cast<std::size_t>(i)] = static_cast<double>(pd(rng));
  }
  return out;
}

}  // namespace ctof
