#include "omnishape/core/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "omnishape/core/error.hpp"

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace omnishape::io {

void ByteWriter::magic(std::string_view tag) { bytes(tag); }

void ByteWriter::u32(std::uint32_t v) {
  std::uint8_t b[4];
  std::memcpy(b, &v, 4);
  buf_.insert(buf_.end(), b, b + 4);
}

void ByteWriter::f32(float v) {
  std::uint8_t b[4];
  std::memcpy(b, &v, 4);
  buf_.insert(buf_.end(), b, b + 4);
}

void ByteWriter::f32_array(std::span<const double> values) {
  for (double v : values) f32(static_cast<float>(v));
}

void ByteWriter::f64_array(std::span<const double> values) {
  for (double v : values) {
    std::uint8_t b[8];
    std::memcpy(b, &v, 8);
    buf_.insert(buf_.end(), b, b + 8);
  }
}

void ByteWriter::bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

void ByteWriter::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw UsageError("write failed: " + path.string());
}

ByteReader ByteReader::open(const std::filesystem::path& path) { return ByteReader(read_file(path)); }

void ByteReader::need(std::size_t n) const {
  if (pos_ + n > buf_.size()) throw ValidationError("truncated file");
}

void ByteReader::expect_magic(std::string_view tag) {
  if (bytes(tag.size()) != tag) throw ValidationError("bad magic, expected " + std::string(tag));
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

float ByteReader::f32() {
  need(4);
  float v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::vector<double> ByteReader::f32_array(std::size_t count) {
  need(count * 4);
  std::vector<double> out(count);
  for (auto& v : out) v = f32();
  return out;
}

std::vector<double> ByteReader::f64_array(std::size_t count) {
  need(count * 8);
  std::vector<double> out(count);
  for (auto& v : out) {
    std::memcpy(&v, buf_.data() + pos_, 8);
    pos_ += 8;
  }
  return out;
}

std::string ByteReader::bytes(std::size_t count) {
  need(count);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), count);
  pos_ += count;
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open for writing: " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = kHex[h & 0xf];
    h >>= 4;
  }
  return s;
}

std::string file_hash(const std::filesystem::path& path) { return fnv1a_hex(read_file(path)); }

}  // namespace omnishape::io
