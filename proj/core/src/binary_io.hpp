#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "planeloc/error.hpp"

namespace planeloc::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(ErrorKind::IoError, "unexpected end of binary stream");
  return value;
}

inline void write_magic(std::ostream& out, const char (&magic)[9]) { out.write(magic, 8); }

inline bool read_magic(std::istream& in, const char (&magic)[9]) {
  char buf[8];
  in.read(buf, 8);
  return in && std::memcmp(buf, magic, 8) == 0;
}

}  // namespace planeloc::detail
