#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tinysense/codec/codec.hpp"

namespace tinysense::transport {

enum class MsgType : std::uint8_t {
  hello = 1,
  codebook_check = 2,
  index_chunk = 3,
  ack = 4,
  stats = 5,
};

const char* to_string(MsgType t);

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kHeaderSize = 30;
inline constexpr std::size_t kTrailerSize = 4;  // crc32
/// Bytes a frame adds on top of its payload.
inline constexpr std::size_t kFrameOverhead = kHeaderSize + kTrailerSize;
inline constexpr std::size_t kMaxPayload = 1 << 20;
inline constexpr std::size_t kMaxChunkIndices = 128;

/// One framed message. Integers are little-endian on the wire; the trailing
/// crc32 covers header and payload.
struct WireFrame {
  MsgType type = MsgType::hello;
  std::uint32_t frame_id = 0;
  std::uint64_t codebook_hash = 0;
  std::uint16_t grid_h = 0;
  std::uint16_t grid_w = 0;
  std::uint16_t chunk_seq = 0;
  std::uint16_t chunk_count = 1;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const WireFrame&, const WireFrame&) = default;
};

std::vector<std::uint8_t> encode_wire(const WireFrame& f);
/// Parses exactly one frame. Throws io::FormatError (bad_magic,
/// version_mismatch, truncated, crc_mismatch, invalid_field).
WireFrame decode_wire(std::span<const std::uint8_t> bytes);
/// Reads payload_len from a complete header, validating magic and bound.
std::size_t payload_length(std::span<const std::uint8_t> header);

// ---- session messages ---------------------------------------------------

struct Hello {
  std::uint16_t chunk_indices = 32;
  std::uint16_t codebook_size = 256;
  std::uint16_t grid_h = 0;
  std::uint16_t grid_w = 0;
};
WireFrame make_hello(const Hello& h, std::uint64_t codebook_hash);
Hello parse_hello(const WireFrame& f);

enum class AckStatus : std::uint8_t { ok = 0, nack = 1 };
WireFrame make_ack(AckStatus status, std::uint64_t codebook_hash);
AckStatus parse_ack(const WireFrame& f);

using StatsMap = std::map<std::string, std::string>;
/// Payload: u16 count, then per pair u16 key length, key, u16 value length, value.
WireFrame make_stats(const StatsMap& kv);
StatsMap parse_stats(const WireFrame& f);

// ---- chunking -----------------------------------------------------------

/// Splits a map into INDEX_CHUNK frames of at most chunk_indices cells each,
/// packed MSB-first at bits_per_index(S). chunk_indices must be a multiple
/// of 8 in [8, 128] so that only the last chunk carries padding bits.
std::vector<WireFrame> chunk_map(const codec::IndexMap& map, std::size_t codebook_size, std::size_t chunk_indices);

/// Number of chunks for a grid of n cells.
std::size_t chunk_count(std::size_t cells, std::size_t chunk_indices);
/// Cell range [first, last) carried by chunk seq.
std::pair<std::size_t, std::size_t> chunk_cells(std::size_t cells, std::size_t chunk_indices, std::size_t seq);

/// Payload bytes plus per-chunk overhead for one frame.
std::size_t frame_wire_bytes(std::size_t cells, std::size_t codebook_size, std::size_t chunk_indices);

/// Collects the chunks of one frame; cells of chunks that never arrive stay kLost.
class FrameAssembly {
 public:
  FrameAssembly(std::uint32_t frame_id, std::size_t rows, std::size_t cols, std::uint64_t codebook_id,
                std::size_t codebook_size, std::size_t chunk_indices);

  /// Throws io::FormatError(invalid_field) for a chunk that does not fit this frame.
  void add(const WireFrame& chunk);
  bool complete() const { return received_ == expected_; }
  std::size_t received() const { return received_; }
  std::size_t expected() const { return expected_; }
  const codec::IndexMap& map() const { return map_; }
  /// Sequence numbers that have not arrived.
  std::vector<std::uint16_t> missing() const;

 private:
  codec::IndexMap map_;
  std::size_t codebook_size_, chunk_indices_, expected_, received_ = 0;
  std::vector<bool> have_;
};

// ---- loss model ---------------------------------------------------------

/// Stateless per-chunk Bernoulli drop decided by hashing (seed, frame, chunk).
struct LossModel {
  double epsilon = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool drops(std::uint32_t frame_id, std::uint16_t chunk_seq) const;
};

}  // namespace tinysense::transport
