// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

#include "spirl/common/error.hpp"

// Little-endian fixed-width reads and writes, independent of host order.
namespace spirl::io {

template <class U>
void write_le(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes, sizeof(U));
}

template <class U>
U read_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw FormatError("unexpected end of file");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void write_u16(std::ostream& out, std::uint16_t v) { write_le(out, v); }
inline void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint16_t read_u16(std::istream& in) { return read_le<std::uint16_t>(in); }
inline std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
inline std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<std::uint32_t>(in)); }

// Same encodings on raw byte buffers (wire protocol).
template <class U>
void put_le(unsigned char* dst, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
}

template <class U>
U get_le(const unsigned char* src) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(src[i]) << (8 * i);
  return value;
}

}  // namespace spirl::io
