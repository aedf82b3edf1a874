#pragma once

// Little-endian primitives shared by the store and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace selar::detail {

template <typename T>
T to_little(T value) {
  static_assert(sizeof(T) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    auto bits = std::bit_cast<std::uint32_t>(value);
    bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) |
           (bits >> 24);
    return std::bit_cast<T>(bits);
  }
}

// Conversion is an involution.
template <typename T>
T from_little(T value) {
  return to_little(value);
}

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  }

  template <typename T>
  void put(T value) {
    const T le = to_little(value);
    out_.write(reinterpret_cast<const char*>(&le), sizeof(T));
  }

  template <typename T>
  void put_all(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size_bytes()));
    } else {
      for (const T v : values) put(v);
    }
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open " + path.string());
  }

  template <typename T>
  T get() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in_) throw std::runtime_error("unexpected end of file: " + path_.string());
    return from_little(value);
  }

  template <typename T>
  std::vector<T> get_all(std::size_t count) {
    std::vector<T> values(count);
    in_.read(reinterpret_cast<char*>(values.data()),
             static_cast<std::streamsize>(count * sizeof(T)));
    if (!in_) throw std::runtime_error("unexpected end of file: " + path_.string());
    if constexpr (std::endian::native != std::endian::little) {
      for (auto& v : values) v = from_little(v);
    }
    return values;
  }

  bool at_end() {
    return in_.peek() == std::char_traits<char>::eof();
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace selar::detail
