#pragma once

// Little-endian primitives shared by the container formats, plus atomic
// (write-then-rename) file output.

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "posdec/core.hpp"

namespace posdec::io {

template <class T>
T to_little(T v) noexcept {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <class T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void u8(std::uint8_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i32(std::int32_t v) { put(v); }
  void f32(float v) { put(v); }
  void f64(double v) { put(v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void bytes(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  template <class T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw DataError(what_ + ": truncated file");
    return to_little(v);
  }
  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int32_t i32() { return get<std::int32_t>(); }
  float f32() { return get<float>(); }
  double f64() { return get<double>(); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 24)) throw DataError(what_ + ": implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw DataError(what_ + ": truncated file");
    return s;
  }
  void expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (!in_ || got != magic) throw DataError(what_ + ": bad magic, expected '" + std::string(magic) + "'");
  }
  void read_raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (!in_) throw DataError(what_ + ": truncated file");
  }
  const std::string& what() const noexcept { return what_; }

 private:
  std::istream& in_;
  std::string what_;
};

/// Writes through a temporary sibling and renames it into place.
inline void write_atomic(const std::filesystem::path& path,
                         const std::function<void(std::ostream&)>& body, bool binary = true) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    body(out);
    out.flush();
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_atomic(path, [&](std::ostream& out) { out << text; }, false);
}

inline std::ifstream open_input(const std::filesystem::path& path, bool binary = true) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError("missing input file '" + path.string() + "'");
  return in;
}

inline std::string read_text(const std::filesystem::path& path) {
  auto in = open_input(path, false);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Shortest round-trip decimal representation, locale independent.
/// Locale-independent text for a double. Precision 0 gives the shortest form
/// that reads back to the same value.
inline std::string fmt_double(double v, int precision = 0) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (precision <= 0) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  }
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss.precision(precision);
  ss << v;
  return ss.str();
}

inline std::string fmt_fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

}  // namespace posdec::io
