#pragma once

#include <cstdint>
#include <vector>

#include "ctof/core_types.hpp"

namespace ctof {

/// SPAD acquisition. Rates are counts/s, integration time is ms per pattern.
struct AcquisitionModel {
  double integration_time_ms = 10.0;
  double max_count_rate = 5e6;
  double dark_count_rate = 200.0;
  std::uint64_t seed = 1;
  bool cap_per_detector = false;  ///< apply the rate cap to each detector row instead of the whole pattern
};

void validate_acquisition(const AcquisitionModel& acq);

/// `m` holds detected photon rates (counts/s). Each pattern (source row group) is scaled down so
/// its total rate is at most max_count_rate, multiplied by the integration time, and a uniform
/// dark floor dark_count_rate * T / n_bins is added to every bin.
TransientSet expected_counts(const TransientSet& m, const AcquisitionModel& acq);

/// Per-row factor turning rates into expected signal counts (cap scaling times integration time).
std::vector<double> count_scale(const TransientSet& m, const AcquisitionModel& acq);

/// Independent Poisson draw per bin; bin i uses the stream (seed, i).
TransientSet sample_counts(const TransientSet& expected, std::uint64_t seed);

}  // namespace ctof
