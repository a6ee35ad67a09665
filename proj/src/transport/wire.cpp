#include "tinysense/transport/wire.hpp"

#include <algorithm>
#include <cstring>

#include "tinysense/io/binary.hpp"

namespace tinysense::transport {

namespace {

constexpr char kMagic[] = "TSNW";

[[noreturn]] void fail(io::FormatErrorKind kind, const std::string& what) { throw io::FormatError(kind, what); }

bool known_type(std::uint8_t t) { return t >= 1 && t <= 5; }

// splitmix64 finaliser; good enough to decorrelate neighbouring chunk ids.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_chunk_indices(std::size_t chunk_indices) {
  if (chunk_indices < 8 || chunk_indices > kMaxChunkIndices || chunk_indices % 8 != 0) {
    throw std::invalid_argument("chunk_indices must be a multiple of 8 in [8, 128]");
  }
}

}  // namespace

const char* to_string(MsgType t) {
  switch (t) {
    case MsgType::hello: return "HELLO";
    case MsgType::codebook_check: return "CODEBOOK_CHECK";
    case MsgType::index_chunk: return "INDEX_CHUNK";
    case MsgType::ack: return "ACK";
    case MsgType::stats: return "STATS";
  }
  return "UNKNOWN";
}

std::vector<std::uint8_t> encode_wire(const WireFrame& f) {
  if (f.payload.size() > kMaxPayload) throw std::invalid_argument("wire payload too large");
  if (f.chunk_seq >= f.chunk_count) throw std::invalid_argument("chunk_seq must be below chunk_count");
  io::ByteWriter w;
  w.tag(kMagic);
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(f.type));
  w.u32(f.frame_id);
  w.u64(f.codebook_hash);
  w.u16(f.grid_h);
  w.u16(f.grid_w);
  w.u16(f.chunk_seq);
  w.u16(f.chunk_count);
  w.u32(static_cast<std::uint32_t>(f.payload.size()));
  w.bytes(f.payload);
  w.append_crc();
  return std::move(w).take();
}

std::size_t payload_length(std::span<const std::uint8_t> header) {
  if (header.size() < kHeaderSize) fail(io::FormatErrorKind::truncated, "wire header truncated");
  if (std::memcmp(header.data(), kMagic, 4) != 0) fail(io::FormatErrorKind::bad_magic, "not a TSNW frame");
  io::ByteReader r(header.subspan(kHeaderSize - 4, 4));
  const std::size_t n = r.u32();
  if (n > kMaxPayload) fail(io::FormatErrorKind::invalid_field, "wire payload length " + std::to_string(n) + " too large");
  return n;
}

WireFrame decode_wire(std::span<const std::uint8_t> bytes) {
  const std::size_t n = payload_length(bytes);
  if (bytes.size() < kFrameOverhead + n) fail(io::FormatErrorKind::truncated, "wire frame truncated");
  if (bytes.size() > kFrameOverhead + n) fail(io::FormatErrorKind::invalid_field, "trailing bytes after wire frame");
  io::ByteReader r(bytes);
  r.bytes(4);
  const auto version = r.u8();
  if (version != kWireVersion) {
    fail(io::FormatErrorKind::version_mismatch, "wire version " + std::to_string(version) + " is not supported");
  }
  const auto body = bytes.first(kHeaderSize + n);
  io::ByteReader tail(bytes.subspan(kHeaderSize + n));
  if (tail.u32() != io::crc32(body)) fail(io::FormatErrorKind::crc_mismatch, "wire frame CRC mismatch");

  WireFrame f;
  const auto type = r.u8();
  if (!known_type(type)) fail(io::FormatErrorKind::invalid_field, "unknown message type " + std::to_string(type));
  f.type = static_cast<MsgType>(type);
  f.frame_id = r.u32();
  f.codebook_hash = r.u64();
  f.grid_h = r.u16();
  f.grid_w = r.u16();
  f.chunk_seq = r.u16();
  f.chunk_count = r.u16();
  r.u32();
  if (f.chunk_seq >= f.chunk_count) fail(io::FormatErrorKind::invalid_field, "chunk_seq not below chunk_count");
  const auto p = r.bytes(n);
  f.payload.assign(p.begin(), p.end());
  return f;
}

WireFrame make_hello(const Hello& h, std::uint64_t codebook_hash) {
  WireFrame f;
  f.type = MsgType::hello;
  f.codebook_hash = codebook_hash;
  f.grid_h = h.grid_h;
  f.grid_w = h.grid_w;
  io::ByteWriter w;
  w.u16(h.chunk_indices);
  w.u16(h.codebook_size);
  f.payload = std::move(w).take();
  return f;
}

Hello parse_hello(const WireFrame& f) {
  if (f.type != MsgType::hello) fail(io::FormatErrorKind::invalid_field, "expected HELLO");
  io::ByteReader r(f.payload);
  Hello h;
  h.chunk_indices = r.u16();
  h.codebook_size = r.u16();
  h.grid_h = f.grid_h;
  h.grid_w = f.grid_w;
  return h;
}

WireFrame make_ack(AckStatus status, std::uint64_t codebook_hash) {
  WireFrame f;
  f.type = MsgType::ack;
  f.codebook_hash = codebook_hash;
  f.payload = {static_cast<std::uint8_t>(status)};
  return f;
}

AckStatus parse_ack(const WireFrame& f) {
  if (f.type != MsgType::ack || f.payload.size() != 1 || f.payload[0] > 1) {
    fail(io::FormatErrorKind::invalid_field, "malformed ACK");
  }
  return static_cast<AckStatus>(f.payload[0]);
}

WireFrame make_stats(const StatsMap& kv) {
  io::ByteWriter w;
  w.u16(static_cast<std::uint16_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    w.u16(static_cast<std::uint16_t>(k.size()));
    w.tag(k);
    w.u16(static_cast<std::uint16_t>(v.size()));
    w.tag(v);
  }
  WireFrame f;
  f.type = MsgType::stats;
  f.payload = std::move(w).take();
  return f;
}

StatsMap parse_stats(const WireFrame& f) {
  if (f.type != MsgType::stats) fail(io::FormatErrorKind::invalid_field, "expected STATS");
  io::ByteReader r(f.payload);
  StatsMap kv;
  const std::size_t n = r.u16();
  auto text = [&r] {
    const auto b = r.bytes(r.u16());
    return std::string(b.begin(), b.end());
  };
  for (std::size_t i = 0; i < n; ++i) {
    auto k = text();
    kv[std::move(k)] = text();
  }
  if (r.remaining() != 0) fail(io::FormatErrorKind::invalid_field, "trailing bytes in STATS");
  return kv;
}

std::size_t chunk_count(std::size_t cells, std::size_t chunk_indices) {
  check_chunk_indices(chunk_indices);
  return std::max<std::size_t>(1, (cells + chunk_indices - 1) / chunk_indices);
}

std::pair<std::size_t, std::size_t> chunk_cells(std::size_t cells, std::size_t chunk_indices, std::size_t seq) {
  const std::size_t first = std::min(cells, seq * chunk_indices);
  return {first, std::min(cells, first + chunk_indices)};
}

std::size_t frame_wire_bytes(std::size_t cells, std::size_t codebook_size, std::size_t chunk_indices) {
  return codec::packed_size(cells, codebook_size) + chunk_count(cells, chunk_indices) * kFrameOverhead;
}

std::vector<WireFrame> chunk_map(const codec::IndexMap& map, std::size_t codebook_size, std::size_t chunk_indices) {
  const std::size_t n = map.size(), count = chunk_count(n, chunk_indices);
  if (map.rows > 0xFFFF || map.cols > 0xFFFF || count > 0xFFFF) throw std::invalid_argument("grid too large for the wire");
  std::vector<WireFrame> out;
  out.reserve(count);
  for (std::size_t seq = 0; seq < count; ++seq) {
    const auto [first, last] = chunk_cells(n, chunk_indices, seq);
    WireFrame f;
    f.type = MsgType::index_chunk;
    f.frame_id = map.frame_id;
    f.codebook_hash = map.codebook_id;
    f.grid_h = static_cast<std::uint16_t>(map.rows);
    f.grid_w = static_cast<std::uint16_t>(map.cols);
    f.chunk_seq = static_cast<std::uint16_t>(seq);
    f.chunk_count = static_cast<std::uint16_t>(count);
    f.payload = codec::pack(std::span(map.cells).subspan(first, last - first), codebook_size).bytes;
    out.push_back(std::move(f));
  }
  return out;
}

FrameAssembly::FrameAssembly(std::uint32_t frame_id, std::size_t rows, std::size_t cols, std::uint64_t codebook_id,
                             std::size_t codebook_size, std::size_t chunk_indices)
    : codebook_size_(codebook_size), chunk_indices_(chunk_indices), expected_(chunk_count(rows * cols, chunk_indices)) {
  map_.rows = rows;
  map_.cols = cols;
  map_.codebook_id = codebook_id;
  map_.frame_id = frame_id;
  map_.cells.assign(rows * cols, codec::kLost);
  have_.assign(expected_, false);
}

void FrameAssembly::add(const WireFrame& chunk) {
  if (chunk.type != MsgType::index_chunk || chunk.frame_id != map_.frame_id || chunk.grid_h != map_.rows ||
      chunk.grid_w != map_.cols || chunk.chunk_count != expected_ || chunk.codebook_hash != map_.codebook_id) {
    fail(io::FormatErrorKind::invalid_field, "chunk does not belong to frame " + std::to_string(map_.frame_id));
  }
  if (have_[chunk.chunk_seq]) fail(io::FormatErrorKind::invalid_field, "duplicate chunk");
  const auto [first, last] = chunk_cells(map_.size(), chunk_indices_, chunk.chunk_seq);
  if (chunk.payload.size() != codec::packed_size(last - first, codebook_size_)) {
    fail(io::FormatErrorKind::invalid_field, "chunk payload has the wrong length");
  }
  const auto idx = codec::unpack_indices(chunk.payload, last - first, codebook_size_);
  std::copy(idx.begin(), idx.end(), map_.cells.begin() + static_cast<std::ptrdiff_t>(first));
  have_[chunk.chunk_seq] = true;
  ++received_;
}

std::vector<std::uint16_t> FrameAssembly::missing() const {
  std::vector<std::uint16_t> out;
  for (std::size_t i = 0; i < have_.size(); ++i)
    if (!have_[i]) out.push_back(static_cast<std::uint16_t>(i));
  return out;
}

void LossModel::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
}

bool LossModel::drops(std::uint32_t frame_id, std::uint16_t chunk_seq) const {
  if (epsilon <= 0.0) return false;
  if (epsilon >= 1.0) return true;
  const std::uint64_t h = mix(seed ^ mix((static_cast<std::uint64_t>(frame_id) << 16) | chunk_seq));
  return static_cast<double>(h >> 11) * 0x1.0p-53 < epsilon;
}

}  // namespace tinysense::transport
