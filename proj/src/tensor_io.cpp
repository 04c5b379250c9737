#include "ctof/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ctof/core_types.hpp"

namespace ctof {

static_assert(std::endian::native == std::endian::little, "DOTT I/O assumes a little-endian host");

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

namespace {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::truncated, "file ends before expected content");
  }
  const std::uint8_t* cursor() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor, const nlohmann::json& metadata, bool allow_non_finite) {
  if (tensor.dims.empty() || tensor.dims.size() > 255)
    throw Error(ErrorCode::invalid_parameter, "tensor needs between 1 and 255 dimensions");
  for (auto d : tensor.dims)
    if (d == 0) throw Error(ErrorCode::invalid_parameter, "tensor dimensions must be non-zero");
  if (tensor.element_count() != tensor.data.size())
    throw Error(ErrorCode::dimension_mismatch, "payload length does not match dims");
  if (!metadata.is_object()) throw Error(ErrorCode::bad_metadata, "metadata must be a JSON object");
  if (!allow_non_finite)
    for (double v : tensor.data)
      if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "tensor contains non-finite values");

  const std::string meta = metadata.dump();
  std::vector<std::uint8_t> out;
  out.reserve(16 + 8 * tensor.dims.size() + 8 * tensor.data.size() + 8 + meta.size());
  out.insert(out.end(), {'D', 'O', 'T', 'T'});
  put<std::uint16_t>(out, kDottVersion);
  put<std::uint8_t>(out, kDtypeF64);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put<std::uint64_t>(out, d);
  const auto* p = reinterpret_cast<const std::uint8_t*>(tensor.data.data());
  out.insert(out.end(), p, p + 8 * tensor.data.size());
  put<std::uint64_t>(out, meta.size());
  out.insert(out.end(), meta.begin(), meta.end());
  return out;
}

TensorFile decode_tensor(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "DOTT", 4) != 0)
    throw Error(ErrorCode::bad_magic, "missing DOTT magic");
  r.skip(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kDottVersion)
    throw Error(ErrorCode::unsupported_version, "container version " + std::to_string(version));
  const auto dtype = r.get<std::uint8_t>();
  if (dtype != kDtypeF64) throw Error(ErrorCode::unsupported_version, "dtype code " + std::to_string(dtype));
  const auto ndim = r.get<std::uint8_t>();
  if (ndim == 0) throw Error(ErrorCode::bad_metadata, "zero-dimensional tensor");

  TensorFile out;
  out.tensor.dims.resize(ndim);
  std::uint64_t count = 1;
  for (auto& d : out.tensor.dims) {
    d = r.get<std::uint64_t>();
    if (d == 0) throw Error(ErrorCode::bad_metadata, "zero-length dimension");
    count *= d;
  }
  if (count > r.remaining() / 8) throw Error(ErrorCode::truncated, "payload shorter than dims imply");
  out.tensor.data.resize(count);
  std::memcpy(out.tensor.data.data(), r.cursor(), 8 * count);
  r.skip(8 * count);

  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > r.remaining()) throw Error(ErrorCode::truncated, "metadata shorter than declared");
  std::string meta(reinterpret_cast<const char*>(r.cursor()), meta_len);
  try {
    out.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_metadata, e.what());
  }
  if (!out.metadata.is_object()) throw Error(ErrorCode::bad_metadata, "metadata is not a JSON object");
  return out;
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor, const nlohmann::json& metadata,
                  bool allow_non_finite) {
  const auto bytes = encode_tensor(tensor, metadata, allow_non_finite);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::io, "write failed for " + path.string());
}

TensorFile read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace ctof
