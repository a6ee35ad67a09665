#include "tinysense/transport/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <deque>
#include <exception>
#include <map>
#include <thread>

#include "tinysense/io/binary.hpp"
#include "tinysense/metrics/metrics.hpp"

namespace tinysense::transport {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t) { return std::chrono::duration<double, std::milli>(Clock::now() - t).count(); }

// shortest text that reads back to the same double
std::string num(double v) {
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double stat_or(const StatsMap& kv, const std::string& key, double fallback = 0.0) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    return fallback;
  }
}

template <class T>
class BlockingQueue {
 public:
  void push(T v) {
    {
      std::lock_guard lk(mu_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }
  /// Waits until an item arrives, the queue is closed, or `until` passes.
  std::optional<T> pop(std::optional<Clock::time_point> until = std::nullopt) {
    std::unique_lock lk(mu_);
    auto ready = [this] { return !q_.empty() || closed_; };
    if (until) {
      cv_.wait_until(lk, *until, ready);
    } else {
      cv_.wait(lk, ready);
    }
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
  bool closed_ = false;
};

}  // namespace

// ---- double buffer ------------------------------------------------------

std::vector<data::CsiFrame>& DoubleBuffer::fill_slot() {
  if (owner(filling_) != Owner::acquirer) ++violations_;
  return slots_[filling_];
}

std::chrono::nanoseconds DoubleBuffer::publish() {
  const auto start = Clock::now();
  std::unique_lock lk(mu_);
  const int other = 1 - filling_;
  cv_.wait(lk, [&] { return closed_ || (ready_ == -1 && encoding_ != other); });
  if (closed_) return Clock::now() - start;
  owner_[filling_] = static_cast<int>(Owner::encoder);
  ready_ = filling_;
  filling_ = other;
  if (owner(filling_) != Owner::acquirer) ++violations_;
  slots_[filling_].clear();
  ++swaps_;
  lk.unlock();
  cv_.notify_all();
  return Clock::now() - start;
}

std::optional<std::span<const data::CsiFrame>> DoubleBuffer::acquire() {
  std::unique_lock lk(mu_);
  cv_.wait(lk, [&] { return ready_ != -1 || closed_; });
  if (ready_ == -1) return std::nullopt;
  encoding_ = ready_;
  ready_ = -1;
  if (owner(encoding_) != Owner::encoder) ++violations_;
  return std::span<const data::CsiFrame>(slots_[encoding_]);
}

void DoubleBuffer::release() {
  {
    std::lock_guard lk(mu_);
    if (encoding_ < 0) return;
    owner_[encoding_] = static_cast<int>(Owner::acquirer);
    encoding_ = -1;
  }
  cv_.notify_all();
}

void DoubleBuffer::close() {
  {
    std::lock_guard lk(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

// ---- edge ---------------------------------------------------------------

void EdgeConfig::validate() const {
  chunk_count(1, chunk_indices);
  if (!(buffer_period_s >= 0.0)) throw std::invalid_argument("buffer_period_s must be >= 0");
  if (frames_per_buffer == 0) throw std::invalid_argument("frames_per_buffer must be >= 1");
  if (connect_attempts < 1 || retry_delay_ms < 0) throw std::invalid_argument("connect_attempts must be >= 1");
}

EdgeStats edge_run(std::span<const data::CsiFrame> source, const models::ModelBundle& m, const Endpoint& server,
                   const EdgeConfig& cfg) {
  cfg.validate();
  const auto& book = m.codebook();
  const auto& mc = m.config();
  EdgeStats st;

  auto conn = Connection::connect(server, cfg.connect_attempts, std::chrono::milliseconds(cfg.retry_delay_ms));
  Hello hello;
  hello.chunk_indices = static_cast<std::uint16_t>(cfg.chunk_indices);
  hello.codebook_size = static_cast<std::uint16_t>(book.size());
  hello.grid_h = static_cast<std::uint16_t>(mc.grid_rows());
  hello.grid_w = static_cast<std::uint16_t>(mc.grid_cols());
  st.control_bytes += conn.send(make_hello(hello, book.id()));
  WireFrame check;
  check.type = MsgType::codebook_check;
  check.codebook_hash = book.id();
  check.grid_h = hello.grid_h;
  check.grid_w = hello.grid_w;
  st.control_bytes += conn.send(check);
  const auto reply = conn.read();
  if (!reply || reply->type != MsgType::ack) throw HandshakeError("server closed the session during the handshake");
  if (parse_ack(*reply) != AckStatus::ok) throw HandshakeError("server rejected codebook " + std::to_string(book.id()));
  spdlog::debug("edge: session open with {}", server.str());

  struct Packet {
    std::vector<std::vector<std::uint8_t>> chunks;
    codec::IndexMap map;
    double encode_ms = 0, serialize_ms = 0;
  };
  DoubleBuffer buffers;
  BlockingQueue<Packet> outbox;
  std::exception_ptr acq_error, enc_error;
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(cfg.buffer_period_s));

  std::thread acquirer([&] {
    try {
      const auto t0 = Clock::now();
      std::size_t next = 0;
      for (std::size_t b = 0; next < source.size(); ++b) {
        auto& slot = buffers.fill_slot();
        for (std::size_t i = 0; i < cfg.frames_per_buffer && next < source.size(); ++i) slot.push_back(source[next++]);
        if (cfg.pace) std::this_thread::sleep_until(t0 + period * static_cast<long>(b + 1));
        if (b == 0) st.first_buffer_ms = ms_since(t0);
        st.acquire_stall_ms += std::chrono::duration<double, std::milli>(buffers.publish()).count();
      }
    } catch (...) {
      acq_error = std::current_exception();
    }
    buffers.close();
  });

  std::thread encoder([&] {
    try {
      std::uint32_t next_id = 0;
      while (auto frames = buffers.acquire()) {
        for (const auto& frame : *frames) {
          Packet p;
          auto t = Clock::now();
          p.map = models::compress(m, frame);
          p.map.frame_id = next_id++;
          p.encode_ms = ms_since(t);
          t = Clock::now();
          for (const auto& chunk : chunk_map(p.map, book.size(), cfg.chunk_indices)) p.chunks.push_back(encode_wire(chunk));
          p.serialize_ms = ms_since(t);
          outbox.push(std::move(p));
        }
        buffers.release();
      }
    } catch (...) {
      enc_error = std::current_exception();
      buffers.close();
    }
    outbox.close();
  });

  std::exception_ptr send_error;
  try {
    while (auto p = outbox.pop()) {
      const auto t = Clock::now();
      std::size_t bytes = 0;
      for (const auto& c : p->chunks) {
        conn.write_raw(c);
        bytes += c.size();
      }
      st.send_ms += ms_since(t);
      st.encode_ms += p->encode_ms;
      st.serialize_ms += p->serialize_ms;
      st.bytes_sent += bytes;
      st.chunks += p->chunks.size();
      st.frame_bytes.push_back(bytes);
      st.sent.push_back(std::move(p->map));
      ++st.frames;
    }
  } catch (...) {
    send_error = std::current_exception();
    buffers.close();
    // Drain so the encoder never blocks on a full pipeline.
    while (outbox.pop()) {
    }
  }
  acquirer.join();
  encoder.join();
  for (auto e : {send_error, enc_error, acq_error})
    if (e) std::rethrow_exception(e);
  st.swaps = buffers.swaps();
  st.ownership_violations = buffers.violations();

  st.control_bytes += conn.send(make_stats({{"frames", std::to_string(st.frames)},
                                            {"chunks", std::to_string(st.chunks)},
                                            {"bytes_sent", std::to_string(st.bytes_sent)},
                                            {"encode_ms", num(st.encode_ms)},
                                            {"serialize_ms", num(st.serialize_ms)},
                                            {"send_ms", num(st.send_ms)},
                                            {"first_buffer_ms", num(st.first_buffer_ms)}}));
  conn.shutdown_send();
  while (auto f = conn.read()) {
    if (f->type == MsgType::stats) st.server_stats = parse_stats(*f);
  }
  spdlog::debug("edge: sent {} frames, {} bytes", st.frames, st.bytes_sent);
  return st;
}

// ---- server -------------------------------------------------------------

namespace {

struct Event {
  enum Kind { frame, crc_failure, end, error } kind = frame;
  WireFrame f;
  std::exception_ptr err;
};

struct Pending {
  FrameAssembly assembly;
  Clock::time_point deadline;
};

}  // namespace

SessionResult server_run(const models::ModelBundle& m, Listener& listener, const ServerConfig& cfg) {
  const auto& book = m.codebook();
  const auto& mc = m.config();
  SessionResult out;
  out.frame_shape = mc.frame;

  auto conn = listener.accept();
  const auto first = conn.read();
  if (!first || first->type != MsgType::hello) throw HandshakeError("expected HELLO");
  out.hello = parse_hello(*first);
  const auto check = conn.read();
  if (!check || check->type != MsgType::codebook_check) throw HandshakeError("expected CODEBOOK_CHECK");
  std::string why;
  if (check->codebook_hash != book.id()) why = "unknown codebook hash " + std::to_string(check->codebook_hash);
  else if (out.hello.codebook_size != book.size()) why = "codebook size differs";
  else if (out.hello.grid_h != mc.grid_rows() || out.hello.grid_w != mc.grid_cols()) why = "grid size differs";
  else {
    try {
      chunk_count(1, out.hello.chunk_indices);
    } catch (const std::invalid_argument& e) {
      why = e.what();
    }
  }
  if (!why.empty()) {
    conn.send(make_ack(AckStatus::nack, book.id()));
    throw HandshakeError("rejected edge: " + why);
  }
  conn.send(make_ack(AckStatus::ok, book.id()));

  BlockingQueue<Event> inbox;
  std::thread receiver([&] {
    try {
      while (auto raw = conn.read_raw()) {
        try {
          inbox.push({Event::frame, decode_wire(*raw), nullptr});
        } catch (const io::FormatError&) {
          inbox.push({Event::crc_failure, {}, nullptr});
        }
      }
      inbox.push({Event::end, {}, nullptr});
    } catch (...) {
      inbox.push({Event::error, {}, std::current_exception()});
    }
  });

  const auto timeout = std::chrono::milliseconds(cfg.frame_timeout_ms);
  const std::size_t rows = mc.grid_rows(), cols = mc.grid_cols();
  std::map<std::uint32_t, Pending> pending;
  std::uint32_t next_id = 0;
  bool warned_no_transformer = false;

  auto finalize = [&](std::uint32_t id) {
    auto node = pending.extract(id);
    const auto& a = node.mapped().assembly;
    ServerFrame f;
    f.frame_id = id;
    f.received = a.map();
    f.lost_chunks = a.missing();
    f.lost_cells = f.received.lost_count();
    auto t = Clock::now();
    if (f.lost_cells == 0) {
      f.recovered = f.received;
    } else if (m.transformer) {
      f.recovered = recovery::recover(f.received, *m.transformer, cfg.recover_mode, cfg.recover_seed ^ id);
      f.recover_ms = ms_since(t);
    } else {
      if (!warned_no_transformer) spdlog::warn("server: model has no transformer; lost indices become 0");
      warned_no_transformer = true;
      f.recovered = f.received;
      for (auto& c : f.recovered.cells)
        if (c == codec::kLost) c = 0;
      f.recover_ms = ms_since(t);
    }
    t = Clock::now();
    const auto z_q = codec::dequantize(f.recovered, book);
    f.x_hat = models::decode_latent(m, z_q);
    f.pose = models::estimate_pose(m, z_q);
    f.decode_ms = ms_since(t);
    if (cfg.truth && cfg.truth_offset + id < cfg.truth->size()) {
      const std::size_t k = cfg.truth_offset + id;
      f.nmse_db = metrics::nmse_db(cfg.truth->frames[k].amplitude, f.x_hat);
      f.mpjpe = metrics::mpjpe(f.pose, cfg.truth->labels[k]);
    }
    if (cfg.on_frame) cfg.on_frame(f);
    out.frames.push_back(std::move(f));
  };
  auto open_through = [&](std::uint32_t id) {
    for (; next_id <= id; ++next_id) {
      pending.emplace(next_id, Pending{FrameAssembly(next_id, rows, cols, book.id(), book.size(), out.hello.chunk_indices),
                                       Clock::now() + timeout});
    }
  };
  auto finalize_all = [&] {
    while (!pending.empty()) finalize(pending.begin()->first);
  };

  std::exception_ptr failure;
  bool signed_off = false;
  for (;;) {
    std::optional<Clock::time_point> until;
    for (const auto& [id, p] : pending) until = until ? std::min(*until, p.deadline) : p.deadline;
    auto ev = inbox.pop(until);
    if (ev) {
      if (ev->kind == Event::end) break;
      if (ev->kind == Event::error) {
        failure = ev->err;
        break;
      }
      if (ev->kind == Event::crc_failure) {
        ++out.crc_failures;
      } else if (ev->f.type == MsgType::index_chunk && !signed_off) {
        const auto id = ev->f.frame_id;
        if (id >= next_id) open_through(id);
        auto it = pending.find(id);
        if (it == pending.end()) {
          ++out.late_chunks;
        } else {
          try {
            it->second.assembly.add(ev->f);
            it->second.deadline = Clock::now() + timeout;
            if (it->second.assembly.complete()) finalize(id);
          } catch (const io::FormatError& e) {
            spdlog::warn("server: dropping malformed chunk: {}", e.what());
            ++out.crc_failures;
          }
        }
      } else if (ev->f.type == MsgType::stats && !signed_off) {
        out.edge_stats = parse_stats(ev->f);
        const auto frames = static_cast<std::uint32_t>(stat_or(out.edge_stats, "frames"));
        if (frames > 0) open_through(frames - 1);
        finalize_all();
        signed_off = true;
        const auto mr = meter(out);
        try {
          conn.send(make_stats(mr.to_stats()));
        } catch (const TransportError& e) {
          spdlog::warn("server: could not send STATS: {}", e.what());
        }
      }
    }
    const auto now = Clock::now();
    std::vector<std::uint32_t> due;
    for (const auto& [id, p] : pending)
      if (p.deadline <= now) due.push_back(id);
    for (auto id : due) finalize(id);
  }
  conn.close();
  receiver.join();
  if (failure) std::rethrow_exception(failure);
  if (!signed_off) {
    spdlog::warn("server: edge left without STATS; flushing {} pending frames", pending.size());
    finalize_all();
  }
  std::sort(out.frames.begin(), out.frames.end(),
            [](const ServerFrame& a, const ServerFrame& b) { return a.frame_id < b.frame_id; });
  return out;
}

// ---- proxy --------------------------------------------------------------

double ProxyLog::drop_rate() const {
  return chunks_seen == 0 ? 0.0 : static_cast<double>(drops.size()) / static_cast<double>(chunks_seen);
}

ProxyLog loss_proxy(Listener& in, const Endpoint& out, const LossModel& loss) {
  loss.validate();
  auto client = in.accept();
  auto upstream = Connection::connect(out);
  ProxyLog log;
  std::exception_ptr back_error, fwd_error;
  std::thread back([&] {
    try {
      while (auto raw = upstream.read_raw()) client.write_raw(*raw);
    } catch (...) {
      back_error = std::current_exception();
    }
    client.shutdown_send();
  });
  try {
    while (auto raw = client.read_raw()) {
      // The header is read without checking the CRC; a corrupt chunk is the
      // server's problem, exactly as on a real link.
      io::ByteReader r(*raw);
      r.bytes(5);
      const auto type = static_cast<MsgType>(r.u8());
      const auto frame_id = r.u32();
      r.u64();
      r.u16();
      r.u16();
      const auto seq = r.u16();
      if (type == MsgType::index_chunk) {
        ++log.chunks_seen;
        if (loss.drops(frame_id, seq)) {
          log.drops.push_back({frame_id, seq});
          continue;
        }
      }
      upstream.write_raw(*raw);
      ++log.frames_forwarded;
    }
  } catch (...) {
    fwd_error = std::current_exception();
  }
  upstream.shutdown_send();
  back.join();
  if (fwd_error) std::rethrow_exception(fwd_error);
  if (back_error) std::rethrow_exception(back_error);
  return log;
}

// ---- meter --------------------------------------------------------------

StatsMap MeterReport::to_stats() const {
  return {{"frames", std::to_string(frames)},       {"encode_ms", num(encode_ms)},
          {"tx_ms", num(tx_ms)},                    {"decode_ms", num(decode_ms)},
          {"recover_ms", num(recover_ms)},          {"bytes_sent", std::to_string(bytes_sent)},
          {"bytes_raw_equiv", std::to_string(bytes_raw_equiv)}, {"lost_cells", std::to_string(lost_cells)}};
}

MeterReport meter(const SessionResult& s) {
  MeterReport r;
  r.frames = s.frames.size();
  const double n = static_cast<double>(std::max<std::size_t>(r.frames, 1));
  r.encode_ms = stat_or(s.edge_stats, "encode_ms") / n;
  r.tx_ms = stat_or(s.edge_stats, "send_ms") / n;
  r.bytes_sent = static_cast<std::size_t>(stat_or(s.edge_stats, "bytes_sent"));
  for (const auto& f : s.frames) {
    r.decode_ms += f.decode_ms / n;
    r.recover_ms += f.recover_ms / n;
    r.lost_cells += f.lost_cells;
  }
  r.bytes_raw_equiv = r.frames * s.frame_shape.elements() * 4;
  return r;
}

}  // namespace tinysense::transport
