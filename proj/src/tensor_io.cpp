#include "scfa/tensor_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

namespace scfa {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::vector<unsigned char>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
Tensor4<T> decode_values(const std::vector<unsigned char>& bytes, const Shape4& shape) {
  std::vector<T> values(shape.numel());
  const unsigned char* p = bytes.data() + kTensorHeaderBytes;
  for (std::size_t i = 0; i < values.size(); ++i, p += sizeof(T)) {
    values[i] = std::bit_cast<T>(get_le<Bits<T>>(p));
    if (!std::isfinite(values[i])) {
      throw FormatError("non-finite value", kTensorHeaderBytes + i * sizeof(T));
    }
  }
  return Tensor4<T>(shape, std::move(values));
}

}  // namespace

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor4<T>& tensor) {
  const Tensor4<T> hm = to_layout(tensor, Layout::kHeadMajor);
  const Shape4& s = hm.shape();
  std::vector<unsigned char> out;
  out.reserve(kTensorHeaderBytes + s.numel() * sizeof(T));
  out.insert(out.end(), {'S', 'C', 'F', 'A'});
  put_le<std::uint32_t>(out, kTensorFileVersion);
  out.push_back(static_cast<unsigned char>(sizeof(T)));
  for (std::uint64_t e : {s.batch, s.heads, s.length, s.dim}) put_le<std::uint64_t>(out, e);
  for (T v : hm.values()) {
    if (!std::isfinite(v)) throw NumericError("refusing to write a non-finite tensor");
    put_le<Bits<T>>(out, std::bit_cast<Bits<T>>(v));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("short write to " + path.string());
}

template void write_tensor(const std::filesystem::path&, const Tensor4<float>&);
template void write_tensor(const std::filesystem::path&, const Tensor4<double>&);

AnyTensor read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string(), 0);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4) throw FormatError("truncated magic", bytes.size());
  if (std::memcmp(bytes.data(), "SCFA", 4) != 0) throw FormatError("bad magic", 0);
  if (bytes.size() < 8) throw FormatError("truncated version", bytes.size());
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kTensorFileVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  if (bytes.size() < 9) throw FormatError("truncated precision", bytes.size());
  const unsigned precision = bytes[8];
  if (precision != 4 && precision != 8) {
    throw FormatError("precision must be 4 or 8 bytes, got " + std::to_string(precision), 8);
  }
  if (bytes.size() < kTensorHeaderBytes) throw FormatError("truncated extents", bytes.size());

  std::array<std::uint64_t, 4> ext{};
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t at = 9 + 8 * i;
    ext[i] = get_le<std::uint64_t>(bytes.data() + at);
    if (ext[i] == 0) throw FormatError("zero extent", at);
    if (count > std::numeric_limits<std::uint64_t>::max() / ext[i]) throw FormatError("extent overflow", at);
    count *= ext[i];
  }
  const std::uint64_t payload = bytes.size() - kTensorHeaderBytes;
  const std::string need = std::to_string(count) + " values of " + std::to_string(precision) + " bytes";
  if (count > payload / precision) {
    throw FormatError("truncated payload, extents need " + need, bytes.size());
  }
  if (payload != count * precision) {
    throw FormatError("trailing bytes after " + need, kTensorHeaderBytes + count * precision);
  }

  const Shape4 shape{ext[0], ext[1], ext[2], ext[3]};
  if (precision == 4) return decode_values<float>(bytes, shape);
  return decode_values<double>(bytes, shape);
}

template <typename T>
Tensor4<T> read_tensor_as(const std::filesystem::path& path) {
  return std::visit([](const auto& t) { return cast<T>(t); }, read_tensor(path));
}

template Tensor4<float> read_tensor_as(const std::filesystem::path&);
template Tensor4<double> read_tensor_as(const std::filesystem::path&);

}  // namespace scfa
