#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "arfc/tensor.hpp"

namespace arfc {

/// Raw tensor file:
///   "ARFC" | version u8 = 1 | dtype u8 (0 = f32, 1 = f64) | ndim u8 = 4 |
///   4 x u32 LE dims (N, C, H, W) | row-major LE payload
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);
template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t);

/// Reads a tensor of either dtype, converting to T when they differ.
/// Throws ParseError (with byte offset) on malformed input.
template <typename T>
Tensor<T> read_tensor(std::istream& is);
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path);

/// dtype stored in a raw tensor file header.
DType peek_dtype(const std::filesystem::path& path);

}  // namespace arfc
