#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>

#include "scfa/tensor.hpp"

namespace scfa {

// Binary tensor file:
//   "SCFA" | u32 version = 1 | u8 bytes per element (4 or 8) |
//   u64 B | u64 H | u64 T | u64 D | values, little-endian IEEE-754,
//   head-major order.
inline constexpr std::uint32_t kTensorFileVersion = 1;
inline constexpr std::size_t kTensorHeaderBytes = 4 + 4 + 1 + 4 * 8;

using AnyTensor = std::variant<Tensor4<float>, Tensor4<double>>;

// Seq-major tensors are written in head-major order.
template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor4<T>& tensor);

// Throws FormatError with the failing byte offset; nothing is returned on error.
AnyTensor read_tensor(const std::filesystem::path& path);

// Reads and converts to the requested precision.
template <typename T>
Tensor4<T> read_tensor_as(const std::filesystem::path& path);

}  // namespace scfa
