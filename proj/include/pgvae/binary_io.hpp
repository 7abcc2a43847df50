#pragma once

// Little-endian primitive readers/writers shared by the PGPV, PGPP and
// checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>

namespace pgvae {

/// Malformed or incompatible file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void write_array(std::ostream& os, std::span<const T> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw FormatError(std::string("truncated file while reading ") + what);
  return v;
}

template <typename T>
void read_array(std::istream& is, std::span<T> out, const char* what) {
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
  if (is.gcount() != static_cast<std::streamsize>(out.size_bytes()))
    throw FormatError(std::string("truncated payload while reading ") + what);
}

inline std::string read_string(std::istream& is, const char* what, std::uint32_t max_len = 1u << 26) {
  const auto n = read_pod<std::uint32_t>(is, what);
  if (n > max_len) throw FormatError(std::string("implausible string length in ") + what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw FormatError(std::string("truncated file while reading ") + what);
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4] = {};
  is.read(buf, 4);
  if (is.gcount() != 4 || std::memcmp(buf, magic, 4) != 0)
    throw FormatError(std::string("bad magic, expected ") + magic);
}

inline void expect_eof(std::istream& is, const char* what) {
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError(std::string("trailing bytes after ") + what);
}

}  // namespace io
}  // namespace pgvae
