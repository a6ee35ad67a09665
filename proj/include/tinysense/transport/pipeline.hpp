#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "tinysense/data/csi.hpp"
#include "tinysense/models/model.hpp"
#include "tinysense/recovery/transformer.hpp"
#include "tinysense/transport/net.hpp"
#include "tinysense/transport/wire.hpp"

namespace tinysense::transport {

// ---- double buffer ------------------------------------------------------

/// Two acquisition buffers handed back and forth between an acquirer and an
/// encoder. Every buffer carries an ownership token; touching a buffer one
/// does not own is counted as a violation instead of being silently allowed.
class DoubleBuffer {
 public:
  enum class Owner : int { acquirer, encoder };

  /// Acquirer: the buffer currently being filled.
  std::vector<data::CsiFrame>& fill_slot();
  /// Acquirer: hands the filled buffer to the encoder and takes the other one.
  /// Blocks while the encoder still holds the other buffer; returns the time
  /// spent blocked.
  std::chrono::nanoseconds publish();

  /// Encoder: waits for a published buffer; nullopt once closed and drained.
  std::optional<std::span<const data::CsiFrame>> acquire();
  /// Encoder: returns the buffer from acquire() to the acquirer.
  void release();

  void close();

  std::size_t swaps() const { return swaps_.load(); }
  std::size_t violations() const { return violations_.load(); }
  Owner owner(int slot) const { return static_cast<Owner>(owner_[slot].load()); }

 private:
  std::vector<data::CsiFrame> slots_[2];
  std::atomic<int> owner_[2] = {static_cast<int>(Owner::acquirer), static_cast<int>(Owner::acquirer)};
  int filling_ = 0;
  int ready_ = -1;    // slot published but not yet acquired
  int encoding_ = -1; // slot held by the encoder
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable cv_;
  std::atomic<std::size_t> swaps_{0}, violations_{0};
};

// ---- edge ---------------------------------------------------------------

struct EdgeConfig {
  std::size_t chunk_indices = 32;
  double buffer_period_s = 1.0;   // T_buf
  std::size_t frames_per_buffer = 1;
  bool pace = true;               // wait out T_buf per buffer like a live radio
  int connect_attempts = 5;
  int retry_delay_ms = 200;

  void validate() const;
};

struct EdgeStats {
  std::size_t frames = 0, chunks = 0;
  std::size_t bytes_sent = 0;     // INDEX_CHUNK frames, overhead included
  std::size_t control_bytes = 0;  // HELLO, CODEBOOK_CHECK, STATS
  double encode_ms = 0, serialize_ms = 0, send_ms = 0;  // sums over frames
  double first_buffer_ms = 0;     // cold-start fill, kept out of the sums
  double acquire_stall_ms = 0;    // time the acquirer waited on the encoder
  std::size_t swaps = 0, ownership_violations = 0;
  std::vector<std::size_t> frame_bytes;       // per frame
  std::vector<codec::IndexMap> sent;          // maps as encoded, frame_id = wire id
  StatsMap server_stats;
};

/// Streams `source` to a server. Wire frame ids count up from 0.
/// Throws HandshakeError when the server rejects the codebook and
/// TransportError on socket failure.
EdgeStats edge_run(std::span<const data::CsiFrame> source, const models::ModelBundle& m, const Endpoint& server,
                   const EdgeConfig& config);

// ---- server -------------------------------------------------------------

struct ServerFrame {
  std::uint32_t frame_id = 0;
  codec::IndexMap received;   // kLost where chunks were missing
  codec::IndexMap recovered;  // no kLost
  std::vector<std::uint16_t> lost_chunks;
  std::size_t lost_cells = 0;
  numerics::Tensor x_hat;
  data::PoseLabel pose;
  double decode_ms = 0, recover_ms = 0;
  std::optional<double> nmse_db, mpjpe;
};

struct ServerConfig {
  int frame_timeout_ms = 50;
  recovery::RecoverMode recover_mode = recovery::RecoverMode::argmax;
  std::uint64_t recover_seed = 0;
  /// Ground truth for eval mode: wire frame k is truth->frames[truth_offset + k].
  const data::Dataset* truth = nullptr;
  std::size_t truth_offset = 0;
  std::function<void(const ServerFrame&)> on_frame;
};

struct SessionResult {
  Hello hello;
  std::vector<ServerFrame> frames;  // sorted by frame_id
  StatsMap edge_stats;
  std::size_t crc_failures = 0, late_chunks = 0;
  data::FrameShape frame_shape;
};

/// Serves one edge connection accepted on `listener` until the edge signs
/// off. Answers a codebook mismatch with NACK and throws HandshakeError.
SessionResult server_run(const models::ModelBundle& m, Listener& listener, const ServerConfig& config);

// ---- loss proxy ---------------------------------------------------------

struct DropRecord {
  std::uint32_t frame_id = 0;
  std::uint16_t chunk_seq = 0;
  friend bool operator==(const DropRecord&, const DropRecord&) = default;
};

struct ProxyLog {
  std::size_t frames_forwarded = 0, chunks_seen = 0;
  std::vector<DropRecord> drops;
  double drop_rate() const;
};

/// Relays one session from a client on `in` to `out`, dropping INDEX_CHUNK
/// frames per the loss model. Control frames always pass.
ProxyLog loss_proxy(Listener& in, const Endpoint& out, const LossModel& loss);

// ---- metering -----------------------------------------------------------

struct MeterReport {
  std::size_t frames = 0;
  double encode_ms = 0, tx_ms = 0, decode_ms = 0, recover_ms = 0;  // means per frame
  std::size_t bytes_sent = 0, bytes_raw_equiv = 0;                 // totals
  std::size_t lost_cells = 0;

  StatsMap to_stats() const;
};

/// Combines the edge's STATS with the server's own timings.
MeterReport meter(const SessionResult& session);

}  // namespace tinysense::transport
