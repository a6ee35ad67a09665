#include "tinysense/codec/codec.hpp"
#include "tinysense/io/binary.hpp"

namespace tinysense::codec {

namespace {
constexpr std::string_view kBookMagic = "TSCB";
constexpr std::string_view kStreamMagic = "TSVQ";
constexpr std::uint16_t kVersion = 1;

[[noreturn]] void invalid(const std::string& what) { throw io::FormatError(io::FormatErrorKind::invalid_field, what); }
}  // namespace

std::vector<std::uint8_t> encode_codebook(const Codebook& cb) {
  io::ByteWriter w;
  w.tag(kBookMagic);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(cb.size()));
  w.u32(static_cast<std::uint32_t>(cb.dim()));
  w.u8(cb.parent_id() ? 1 : 0);
  w.u64(cb.parent_id().value_or(0));
  for (double v : cb.entries().values()) w.f32(static_cast<float>(v));
  w.append_crc();
  return std::move(w).take();
}

Codebook decode_codebook(std::span<const std::uint8_t> bytes) {
  auto r = io::open_container(bytes, kBookMagic, kVersion);
  const std::size_t s = r.u32();
  const std::size_t d = r.u32();
  const bool has_parent = r.u8() != 0;
  const std::uint64_t parent = r.u64();
  if (s < kMinCodebookSize || s > kMaxCodebookSize || d == 0) invalid("codebook extents out of range");
  if (r.remaining() != 4 * s * d) {
    throw io::FormatError(io::FormatErrorKind::truncated, "codebook body length does not match S x D");
  }
  numerics::Tensor entries({s, d});
  for (auto& v : entries.values()) v = r.f32();
  try {
    return Codebook(std::move(entries), has_parent ? std::optional(parent) : std::nullopt);
  } catch (const CodecError& e) {
    invalid(e.what());
  }
}

void save_codebook(const Codebook& cb, const std::filesystem::path& path) { io::write_file(path, encode_codebook(cb)); }

Codebook load_codebook(const std::filesystem::path& path) { return decode_codebook(io::read_file(path)); }

void save_compressed(const CompressedStream& s, const std::filesystem::path& path) {
  if (s.frames.size() != s.frame_ids.size()) throw std::invalid_argument("frame id count differs from frame count");
  io::ByteWriter w;
  w.tag(kStreamMagic);
  w.u16(kVersion);
  w.u64(s.codebook_id);
  w.u32(static_cast<std::uint32_t>(s.codebook_size));
  w.u32(static_cast<std::uint32_t>(s.rows));
  w.u32(static_cast<std::uint32_t>(s.cols));
  w.u32(static_cast<std::uint32_t>(s.frames.size()));
  const auto expect = packed_size(s.rows * s.cols, s.codebook_size);
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    if (s.frames[i].bytes.size() != expect) throw std::invalid_argument("frame payload size differs from grid");
    w.u32(s.frame_ids[i]);
    w.bytes(s.frames[i].bytes);
  }
  w.append_crc();
  io::write_file(path, w.buffer());
}

CompressedStream load_compressed(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  auto r = io::open_container(bytes, kStreamMagic, kVersion);
  CompressedStream s;
  s.codebook_id = r.u64();
  s.codebook_size = r.u32();
  s.rows = r.u32();
  s.cols = r.u32();
  const std::size_t count = r.u32();
  if (s.codebook_size < kMinCodebookSize || s.codebook_size > kMaxCodebookSize || s.rows == 0 || s.cols == 0) {
    invalid("compressed stream header out of range");
  }
  const auto per = packed_size(s.rows * s.cols, s.codebook_size);
  if (r.remaining() != count * (4 + per)) {
    throw io::FormatError(io::FormatErrorKind::truncated, "stream body length does not match frame count");
  }
  const auto width = bits_per_index(s.codebook_size);
  for (std::size_t i = 0; i < count; ++i) {
    s.frame_ids.push_back(r.u32());
    const auto payload = r.bytes(per);
    s.frames.push_back({{payload.begin(), payload.end()}, width, s.rows * s.cols});
  }
  return s;
}

}  // namespace tinysense::codec
