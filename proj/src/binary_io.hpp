#pragma once

// Little-endian primitives shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "foldnet/error.hpp"

namespace foldnet::io {

template <typename UInt>
void write_le(std::ostream& out, UInt value) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(UInt));
}

inline void write_f32(std::ostream& out, double value) {
  write_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

inline void write_f64(std::ostream& out, double value) {
  write_le(out, std::bit_cast<std::uint64_t>(value));
}

inline void write_bytes(std::ostream& out, const std::string& s) { out.write(s.data(), static_cast<std::streamsize>(s.size())); }

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename UInt>
  UInt read_le(const char* what) {
    unsigned char bytes[sizeof(UInt)];
    read_raw(reinterpret_cast<char*>(bytes), sizeof(UInt), what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
    return v;
  }

  double read_f32(const char* what) {
    return static_cast<double>(std::bit_cast<float>(read_le<std::uint32_t>(what)));
  }
  double read_f64(const char* what) { return std::bit_cast<double>(read_le<std::uint64_t>(what)); }

  std::string read_string(std::size_t n, const char* what) {
    std::string s(n, '\0');
    if (n) read_raw(s.data(), n, what);
    return s;
  }

  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) {
      throw FormatError(source_ + ": trailing bytes after payload");
    }
  }

  const std::string& source() const { return source_; }

 private:
  void read_raw(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(source_ + ": truncated while reading " + what);
    }
  }

  std::istream& in_;
  std::string source_;
};

}  // namespace foldnet::io
