#include "lucf/tensor/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace lucf {

namespace {

template <class U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r = (r << 8) | ((v >> (8 * i)) & 0xFF);
    return r;
  }
}

void require(std::istream& is, const char* what) {
  if (!is) throw std::runtime_error(std::string("tensor dump truncated while reading ") + what);
}

}  // namespace

namespace le {

void put_u32(std::ostream& os, std::uint32_t v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(is, "u32");
  return byteswap_if_big(v);
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(is, "u64");
  return byteswap_if_big(v);
}

void put_values(std::ostream& os, const Tensor& t) {
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    auto d = t.data<T>();
    if constexpr (std::endian::native == std::endian::little) {
      os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
    } else {
      for (T v : d) {
        U bits;
        std::memcpy(&bits, &v, sizeof bits);
        bits = byteswap_if_big(bits);
        os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    }
  });
}

void get_values(std::istream& is, Tensor& t) {
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    auto d = t.mutable_data<T>();
    is.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
    require(is, "tensor data");
    if constexpr (std::endian::native != std::endian::little) {
      for (T& v : d) {
        U bits;
        std::memcpy(&bits, &v, sizeof bits);
        bits = byteswap_if_big(bits);
        std::memcpy(&v, &bits, sizeof bits);
      }
    }
  });
}

}  // namespace le

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("LUCT", 4);
  le::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) le::put_u32(os, static_cast<std::uint32_t>(e));
  const auto code = static_cast<std::uint8_t>(t.dtype());
  os.write(reinterpret_cast<const char*>(&code), 1);
  le::put_values(os, t);
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  require(is, "magic");
  if (std::memcmp(magic.data(), "LUCT", 4) != 0) throw std::runtime_error("tensor dump: bad magic");
  const auto rank = le::get_u32(is);
  if (rank == 0 || rank > 8) throw std::runtime_error("tensor dump: unsupported rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(le::get_u32(is));
  std::uint8_t code = 0;
  is.read(reinterpret_cast<char*>(&code), 1);
  require(is, "dtype");
  if (code > 1) throw std::runtime_error("tensor dump: unknown dtype code " + std::to_string(code));
  Tensor t = Tensor::zeros(shape, static_cast<DType>(code));
  le::get_values(is, t);
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace lucf
