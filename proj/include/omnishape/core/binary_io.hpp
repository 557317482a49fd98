#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace omnishape::io {

// Little-endian byte sink. Files are assembled in memory and written in one go.
class ByteWriter {
 public:
  void magic(std::string_view tag);
  void u32(std::uint32_t v);
  void f32(float v);
  void f32_array(std::span<const double> values);
  void f64_array(std::span<const double> values);
  void bytes(std::string_view raw);

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}
  static ByteReader open(const std::filesystem::path& path);

  void expect_magic(std::string_view tag);
  std::uint32_t u32();
  float f32();
  std::vector<double> f32_array(std::size_t count);
  std::vector<double> f64_array(std::size_t count);
  std::string bytes(std::size_t count);
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// 64-bit FNV-1a, rendered as 16 hex digits. Used for manifest content hashes.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace omnishape::io
