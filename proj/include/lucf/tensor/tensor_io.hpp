#pragma once

#include <filesystem>
#include <iosfwd>

#include "lucf/tensor/tensor.hpp"

namespace lucf {

/// Golden-file tensor dump, little-endian:
///   "LUCT" | u32 rank | u32 extent * rank | u8 dtype (0 = f32, 1 = f64) | raw data
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace le {
void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
/// Raw scalar buffers in little-endian byte order.
void put_values(std::ostream& os, const Tensor& t);
void get_values(std::istream& is, Tensor& t);
}  // namespace le

}  // namespace lucf
