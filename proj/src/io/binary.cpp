#include "tinysense/io/binary.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace tinysense::io {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::bad_magic: return "bad magic";
    case FormatErrorKind::version_mismatch: return "version mismatch";
    case FormatErrorKind::truncated: return "truncated";
    case FormatErrorKind::crc_mismatch: return "crc mismatch";
    case FormatErrorKind::invalid_field: return "invalid field";
  }
  return "format error";
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded pieces.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = ::crc32(c, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

void ByteWriter::u16(std::uint16_t v) {
  u8(static_cast<std::uint8_t>(v));
  u8(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::tag(std::string_view four_cc) {
  for (char c : four_cc) u8(static_cast<std::uint8_t>(c));
}

void ByteWriter::append_crc() { u32(crc32(buf_)); }

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) {
    throw FormatError(FormatErrorKind::truncated, "need " + std::to_string(n) + " bytes at offset " +
                                                      std::to_string(pos_) + ", have " + std::to_string(remaining()));
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint16_t ByteReader::u16() {
  need(2);
  const auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  need(n);
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

ByteReader open_container(std::span<const std::uint8_t> file, std::string_view magic, std::uint16_t version) {
  const std::size_t header = magic.size() + 2;
  if (file.size() < magic.size()) throw FormatError(FormatErrorKind::truncated, "file shorter than magic");
  if (std::memcmp(file.data(), magic.data(), magic.size()) != 0) {
    throw FormatError(FormatErrorKind::bad_magic, "expected '" + std::string(magic) + "'");
  }
  if (file.size() < header + 4) throw FormatError(FormatErrorKind::truncated, "file shorter than header + crc");
  const auto found = static_cast<std::uint16_t>(file[magic.size()] | (file[magic.size() + 1] << 8));
  if (found != version) {
    throw FormatError(FormatErrorKind::version_mismatch,
                      "file version " + std::to_string(found) + ", supported " + std::to_string(version));
  }
  const auto body_end = file.size() - 4;
  ByteReader tail(file.subspan(body_end));
  if (tail.u32() != crc32(file.first(body_end))) {
    throw FormatError(FormatErrorKind::crc_mismatch, "checksum does not match contents");
  }
  return ByteReader(file.subspan(header, body_end - header));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace tinysense::io
