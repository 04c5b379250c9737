#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctof {

/// Dense row-major f64 tensor.
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::uint64_t element_count() const;
};

struct TensorFile {
  Tensor tensor;
  nlohmann::json metadata;
};

inline constexpr std::uint16_t kDottVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

/// Writes the DOTT container (see docs/dott_format.md). Metadata must be a JSON object.
void write_tensor(const std::filesystem::path& path, const Tensor& tensor, const nlohmann::json& metadata,
                  bool allow_non_finite = false);

/// Reads and validates a DOTT container; throws Error with bad_magic, truncated,
/// unsupported_version, bad_metadata or io.
TensorFile read_tensor(const std::filesystem::path& path);

/// In-memory encode/decode used by the file functions.
std::vector<std::uint8_t> encode_tensor(const Tensor& tensor, const nlohmann::json& metadata,
                                        bool allow_non_finite = false);
TensorFile decode_tensor(const std::vector<std::uint8_t>& bytes);

}  // namespace ctof
