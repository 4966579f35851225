#include "tsaug/binary_io.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "tsaug/numerics.hpp"

namespace tsaug {

void ByteReader::require(std::uint64_t n, std::string_view what) const {
  if (n > bytes_.size() - pos_) {
    throw FormatError(container_ + ": truncated file while reading " + std::string(what) + " (need " +
                      std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", " +
                      std::to_string(bytes_.size() - pos_) + " left)");
  }
}

std::string ByteReader::raw(std::size_t n) {
  require(n, "raw bytes");
  std::string out(bytes_.substr(pos_, n));
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() {
  require(1, "u8");
  return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint32_t ByteReader::u32() {
  require(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  require(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

std::string ByteReader::str() {
  const auto n = u32();
  require(n, "string");
  return raw(n);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string file_digest(const std::filesystem::path& path) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(read_file(path))));
  return buf;
}

}  // namespace tsaug
