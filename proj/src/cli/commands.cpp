#include "tinysense/cli/cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <future>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include "tinysense/cli/config.hpp"
#include "tinysense/io/binary.hpp"
#include "tinysense/metrics/metrics.hpp"
#include "tinysense/transport/net.hpp"

namespace tinysense::cli {

namespace {

struct Args {
  std::string data, model, codebook, out, in, checkpoint, model_out;
  std::string connect, listen, forward, drop_log, port_file;
  std::string format = "text";
  std::size_t to = 0;
  std::size_t limit = 0;
};

void setup_logging() {
  static std::once_flag once;
  std::call_once(once, [] {
    auto logger = spdlog::stderr_color_mt("tinysense");
    logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    spdlog::set_default_logger(logger);
  });
  const char* env = std::getenv("TS_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::pair<std::size_t, std::size_t> split_range(const data::Dataset& ds, const std::string& split) {
  std::pair<std::size_t, std::size_t> r{0, ds.size()};
  if (split == "train") r.second = ds.train_size;
  if (split == "test") r.first = ds.train_size;
  if (r.first >= r.second) throw ConfigError("split '" + split + "' has no frames");
  return r;
}

models::ModelBundle load_bundle(const Args& a) {
  auto m = models::load_model(a.model);
  if (!a.codebook.empty()) m.set_codebook(codec::load_codebook(a.codebook));
  return m;
}

void require_shape(const models::ModelBundle& m, const data::Dataset& ds) {
  const auto& f = m.config().frame;
  if (!(f == ds.shape)) {
    throw ConfigError("dataset frames are " + std::to_string(ds.shape.freq) + "x" + std::to_string(ds.shape.time) +
                      "x" + std::to_string(ds.shape.channels) + " but the model expects " + std::to_string(f.freq) +
                      "x" + std::to_string(f.time) + "x" + std::to_string(f.channels));
  }
}

void print_stats(std::ostream& out, const transport::StatsMap& kv, const std::string& prefix = "") {
  for (const auto& [k, v] : kv) out << prefix << k << '=' << v << '\n';
}

void write_port_file(const std::string& path, std::uint16_t port) {
  if (path.empty()) return;
  const std::string s = std::to_string(port) + "\n";
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

codec::IndexMap fill_zero(codec::IndexMap map) {
  for (auto& v : map.cells)
    if (v == codec::kLost) v = 0;
  return map;
}

data::CsiFrame reconstructed_frame(numerics::Tensor x_hat, std::uint32_t frame_id) {
  data::CsiFrame f;
  f.amplitude = std::move(x_hat);
  f.frame_id = frame_id;
  return f;
}

// ---- subcommands ---------------------------------------------------------

int cmd_gen(const RunConfig& c, const Args& a, std::ostream& out) {
  const auto ds = data::generate_dataset(c.dataset());
  data::save_dataset(ds, a.out);
  out << "frames=" << ds.size() << "\ntrain=" << ds.train_size << "\ntest=" << ds.test_size() << '\n';
  return kOk;
}

int cmd_train(const RunConfig& c, const Args& a, std::ostream& out) {
  const auto ds = data::load_dataset(a.data);
  auto mc = c.model();
  mc.frame = ds.shape;
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  auto tc = c.training();
  tc.checkpoint = a.checkpoint;
  tc.on_epoch = [&](std::size_t epoch, const models::LossReport& r) {
    spdlog::info("epoch {:3d}  rec {:.5f}  vq {:.5f}  kp {:.5f}  gan_g {:.4f}  gan_d {:.4f}  codes {}", epoch + 1,
                 r.l_rec, r.l_vq, r.l_keypoint, r.l_gan_g, r.l_gan_d, r.codes_used);
  };
  std::vector<models::LossReport> log;
  try {
    const auto m = models::train_new(ds, mc, tc, &log);
    models::save_model(m, a.out);
    if (ds.test_size() > 0) {
      const auto pcks = c.pck_list();
      out << metrics::evaluate(m, ds, ds.train_size, ds.size(), pcks).to_text();
    }
  } catch (const models::TrainingDiverged& e) {
    const std::string keep = a.out + ".last-good";
    models::save_model(e.last_good(), keep);
    spdlog::error("{}; last good model written to {}", e.what(), keep);
    throw;
  }
  if (!log.empty()) out << "final_rec=" << log.back().l_rec << "\ncodes_used=" << log.back().codes_used << '\n';
  return kOk;
}

int cmd_train_recovery(const RunConfig& c, const Args& a, std::ostream& out) {
  auto m = load_bundle(a);
  const auto ds = data::load_dataset(a.data);
  require_shape(m, ds);
  if (ds.train_size == 0) throw ConfigError("dataset has no training frames");
  std::vector<codec::IndexMap> train, held;
  for (std::size_t i = 0; i < ds.size(); ++i) (i < ds.train_size ? train : held).push_back(models::compress(m, ds.frames[i]));
  auto tc = c.transformer_training();
  tc.on_progress = [](std::size_t step, double loss) { spdlog::info("step {:5d}  loss {:.4f}", step, loss); };
  auto t = recovery::train_transformer(train, c.transformer(m.codebook().size()), tc);
  out << "uniform_nll=" << std::log(static_cast<double>(m.codebook().size())) << '\n';
  if (!held.empty()) out << "heldout_nll=" << recovery::heldout_nll(t, held) << '\n';
  m.transformer = std::move(t);
  models::save_model(m, a.out);
  return kOk;
}

int cmd_resize(const RunConfig& c, const Args& a, std::ostream& out) {
  auto m = load_bundle(a);
  m.resize_codebook(a.to, c.kmeans());
  codec::save_codebook(m.codebook(), a.out);
  if (!a.model_out.empty()) models::save_model(m, a.model_out);
  out << "size=" << m.codebook().size() << "\nid=" << m.codebook().id()
      << "\nparent_id=" << m.codebook().parent_id().value_or(0) << '\n';
  return kOk;
}

int cmd_compress(const RunConfig& c, const Args& a, std::ostream& out) {
  const auto m = load_bundle(a);
  const auto ds = data::load_dataset(a.data);
  require_shape(m, ds);
  const auto [begin, end] = split_range(ds, c.split);
  codec::CompressedStream s;
  s.codebook_id = m.codebook().id();
  s.codebook_size = m.codebook().size();
  s.rows = m.config().grid_rows();
  s.cols = m.config().grid_cols();
  for (std::size_t i = begin; i < end; ++i) {
    const auto map = models::compress(m, ds.frames[i]);
    s.frame_ids.push_back(ds.frames[i].frame_id);
    s.frames.push_back(codec::pack(map, s.codebook_size));
  }
  codec::save_compressed(s, a.out);
  out << "frames=" << s.frames.size() << "\ncodebook_id=" << s.codebook_id << '\n';
  return kOk;
}

int cmd_decompress(const RunConfig&, const Args& a, std::ostream& out) {
  const auto m = load_bundle(a);
  const auto s = codec::load_compressed(a.in);
  const auto& cb = m.codebook();
  if (s.codebook_id != cb.id() || s.codebook_size != cb.size())
    throw codec::CodecError(codec::CodecErrorKind::codebook_mismatch,
                            "stream was made with codebook " + std::to_string(s.codebook_id) + ", model has " +
                                std::to_string(cb.id()));
  if (s.rows != m.config().grid_rows() || s.cols != m.config().grid_cols())
    throw ConfigError("stream grid does not match the model");
  data::Dataset ds;
  ds.shape = m.config().frame;
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    auto map = codec::unpack(s.frames[i], s.rows, s.cols, s.codebook_size);
    map.codebook_id = s.codebook_id;
    const auto z_q = codec::dequantize(map, cb);
    ds.frames.push_back(reconstructed_frame(models::decode_latent(m, z_q), s.frame_ids[i]));
    ds.labels.push_back(models::estimate_pose(m, z_q));
  }
  data::save_dataset(ds, a.out);
  out << "frames=" << ds.size() << '\n';
  return kOk;
}

int cmd_edge(const RunConfig& c, const Args& a, std::ostream& out) {
  const auto m = load_bundle(a);
  const auto ds = data::load_dataset(a.data);
  require_shape(m, ds);
  auto [begin, end] = split_range(ds, c.split);
  if (a.limit > 0) end = std::min(end, begin + a.limit);
  const std::span<const data::CsiFrame> frames(ds.frames.data() + begin, end - begin);
  const auto st = transport::edge_run(frames, m, transport::Endpoint::parse(a.connect), c.edge());
  out << "frames=" << st.frames << "\nchunks=" << st.chunks << "\nbytes_sent=" << st.bytes_sent
      << "\ncontrol_bytes=" << st.control_bytes << "\nencode_ms=" << st.encode_ms << "\nsend_ms=" << st.send_ms
      << "\nacquire_stall_ms=" << st.acquire_stall_ms << "\nownership_violations=" << st.ownership_violations << '\n';
  print_stats(out, st.server_stats, "server.");
  return kOk;
}

struct SessionQuality {
  double nmse_db = 0.0, mpjpe = 0.0;
  bool have = false;
};

SessionQuality quality(const transport::SessionResult& r) {
  SessionQuality q;
  double ratio = 0.0;
  std::size_t n = 0;
  for (const auto& f : r.frames) {
    if (!f.nmse_db || !f.mpjpe) continue;
    ratio += std::pow(10.0, *f.nmse_db / 10.0);
    q.mpjpe += *f.mpjpe;
    ++n;
  }
  if (n == 0) return q;
  q.have = true;
  q.nmse_db = std::max(10.0 * std::log10(ratio / static_cast<double>(n)), metrics::kNmseFloorDb);
  q.mpjpe /= static_cast<double>(n);
  return q;
}

void print_session(std::ostream& out, const transport::SessionResult& r) {
  print_stats(out, transport::meter(r).to_stats());
  std::size_t lost_frames = 0;
  for (const auto& f : r.frames) lost_frames += f.lost_cells == f.received.size() ? 1 : 0;
  out << "frames_fully_lost=" << lost_frames << "\ncrc_failures=" << r.crc_failures << '\n';
  const auto q = quality(r);
  if (q.have) out << "nmse_db=" << q.nmse_db << "\nmpjpe=" << q.mpjpe << '\n';
}

int cmd_serve(const RunConfig& c, const Args& a, std::ostream& out) {
  const auto m = load_bundle(a);
  std::optional<data::Dataset> truth;
  auto sc = c.server();
  if (!a.data.empty()) {
    truth = data::load_dataset(a.data);
    require_shape(m, *truth);
    sc.truth = &*truth;
    sc.truth_offset = split_range(*truth, c.split).first;
  }
  sc.on_frame = [](const transport::ServerFrame& f) {
    spdlog::debug("frame {} lost_cells {} decode {:.2f} ms", f.frame_id, f.lost_cells, f.decode_ms);
  };
  transport::Listener listener(transport::Endpoint::parse(a.listen));
  spdlog::info("listening on port {}", listener.port());
  write_port_file(a.port_file, listener.port());
  const auto r = transport::server_run(m, listener, sc);
  print_session(out, r);
  if (!a.out.empty()) {
    data::Dataset ds;
    ds.shape = m.config().frame;
    for (const auto& f : r.frames) {
      std::uint32_t id = f.frame_id;
      if (truth && sc.truth_offset + f.frame_id < truth->size()) id = truth->frames[sc.truth_offset + f.frame_id].frame_id;
      ds.frames.push_back(reconstructed_frame(f.x_hat, id));
      ds.labels.push_back(f.pose);
    }
    data::save_dataset(ds, a.out);
  }
  return kOk;
}

int cmd_proxy(const RunConfig& c, const Args& a, std::ostream& out) {
  transport::Listener listener(transport::Endpoint::parse(a.listen));
  spdlog::info("proxy listening on port {}, forwarding to {}", listener.port(), a.forward);
  write_port_file(a.port_file, listener.port());
  const auto log = transport::loss_proxy(listener, transport::Endpoint::parse(a.forward), c.loss());
  out << "frames_forwarded=" << log.frames_forwarded << "\nchunks_seen=" << log.chunks_seen
      << "\nchunks_dropped=" << log.drops.size() << "\ndrop_rate=" << log.drop_rate() << '\n';
  if (!a.drop_log.empty()) {
    std::ostringstream csv;
    csv << "frame_id,chunk_seq\n";
    for (const auto& d : log.drops) csv << d.frame_id << ',' << d.chunk_seq << '\n';
    const std::string s = csv.str();
    io::write_file(a.drop_log, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  return kOk;
}

int cmd_eval(const RunConfig& c, const Args& a, std::ostream& out) {
  const auto m = load_bundle(a);
  const auto ds = data::load_dataset(a.data);
  require_shape(m, ds);
  const auto [begin, end] = split_range(ds, c.split);
  const auto pcks = c.pck_list();
  metrics::Channel channel;
  std::size_t lost = 0;
  if (c.epsilon > 0.0) {
    if (!m.transformer) spdlog::warn("model has no transformer; lost indices are filled with 0");
    const auto loss = c.loss();
    channel = [&](const codec::IndexMap& map) {
      codec::IndexMap hit = map;
      if (c.loss_unit == "index") {
        hit = recovery::apply_mask(map, {c.epsilon, mix(c.loss_seed, map.frame_id)});
      } else {
        const std::size_t n = transport::chunk_count(map.size(), c.chunk_indices);
        for (std::size_t seq = 0; seq < n; ++seq) {
          if (!loss.drops(map.frame_id, static_cast<std::uint16_t>(seq))) continue;
          const auto [first, last] = transport::chunk_cells(map.size(), c.chunk_indices, seq);
          for (std::size_t i = first; i < last; ++i) hit.cells[i] = codec::kLost;
        }
      }
      lost += hit.lost_count();
      if (!m.transformer) return fill_zero(std::move(hit));
      return recovery::recover(hit, *m.transformer, c.mode(), mix(c.loss_seed, ~std::uint64_t{map.frame_id}));
    };
  }
  const auto report = metrics::evaluate(m, ds, begin, end, pcks, channel);
  if (a.format == "csv") {
    out << report.to_csv();
  } else {
    out << report.to_text();
    if (c.epsilon > 0.0) out << "lost_cells=" << lost << '\n';
  }
  return kOk;
}

int cmd_bench(const RunConfig& c, const Args& a, std::ostream& out) {
  const auto m = load_bundle(a);
  const auto ds = data::load_dataset(a.data);
  require_shape(m, ds);
  auto [begin, end] = split_range(ds, c.split);
  end = std::min(end, begin + c.bench_frames);
  const std::span<const data::CsiFrame> frames(ds.frames.data() + begin, end - begin);
  const transport::Endpoint local{"127.0.0.1", 0};
  for (double eps : c.bench_epsilon_list()) {
    auto sc = c.server();
    sc.truth = &ds;
    sc.truth_offset = begin;
    transport::Listener server_l(local);
    const transport::Endpoint server_at{"127.0.0.1", server_l.port()};
    auto server = std::async(std::launch::async, [&] { return transport::server_run(m, server_l, sc); });
    std::optional<transport::Listener> proxy_l;
    std::future<transport::ProxyLog> proxy;
    transport::Endpoint edge_to = server_at;
    if (eps > 0.0) {
      proxy_l.emplace(local);
      edge_to.port = proxy_l->port();
      proxy = std::async(std::launch::async,
                         [&, eps] { return transport::loss_proxy(*proxy_l, server_at, {eps, c.loss_seed}); });
    }
    try {
      transport::edge_run(frames, m, edge_to, c.edge());
    } catch (...) {
      // wake any side still waiting for a client so the threads can finish
      for (auto port : {edge_to.port, server_at.port}) {
        try {
          transport::Connection::connect({"127.0.0.1", port}, 1, std::chrono::milliseconds(0)).close();
        } catch (...) {
        }
      }
      if (proxy.valid()) proxy.wait();
      server.wait();
      throw;
    }
    const auto r = server.get();
    out << "[epsilon=" << eps << "]\n";
    print_session(out, r);
    if (proxy.valid()) out << "drop_rate=" << proxy.get().drop_rate() << '\n';
    out << '\n';
  }
  return kOk;
}

int cmd_dump(const RunConfig&, const Args& a, std::ostream& out) {
  const auto m = load_bundle(a);
  const auto ds = data::load_dataset(a.data);
  require_shape(m, ds);
  metrics::dump_embeddings(ds, m, a.out);
  out << "rows=" << ds.size() << '\n';
  return kOk;
}

using Handler = int (*)(const RunConfig&, const Args&, std::ostream&);

int dispatch(std::map<std::string, CLI::Option*>& key_opts, const std::string& config_file,
             bool dump, const std::map<CLI::App*, Handler>& handlers, std::map<std::string, std::string>& values,
             const Args& args, std::ostream& out) {
  RunConfig c;
  if (!config_file.empty()) apply_config_file(c, config_file);
  for (const auto& k : config_keys())
    if (key_opts.at(k.name)->count() > 0) k.set(c, values.at(k.name));
  c.validate();
  if (dump) {
    out << dump_config(c);
    return kOk;
  }
  for (const auto& [sub, run] : handlers)
    if (sub->parsed()) return run(c, args, out);
  throw ConfigError("no subcommand given");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  setup_logging();
  CLI::App app{"TinySense: VQ codec for Wi-Fi CSI with an edge/server pipeline", "tinysense"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  std::string config_file;
  bool dump = false;
  app.add_option("--config", config_file, "key = value config file (flags override it)")->group("Global");
  app.add_flag("--dump-config", dump, "print the effective configuration and exit")->group("Global");

  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> key_opts;
  const RunConfig defaults;
  for (const auto& k : config_keys()) {
    auto* o = app.add_option("--" + k.name, values[k.name], k.help + " [" + k.get(defaults) + "]");
    o->group("Config: " + k.group)->type_name("VALUE");
    key_opts[k.name] = o;
  }

  Args a;
  std::map<CLI::App*, Handler> handlers;
  auto sub = [&](const char* name, const char* help, Handler h) {
    auto* s = app.add_subcommand(name, help);
    handlers[s] = h;
    return s;
  };
  auto req = [](CLI::App* s, const char* flag, std::string& v, const char* help) {
    s->add_option(flag, v, help)->required();
  };
  auto opt = [](CLI::App* s, const char* flag, std::string& v, const char* help) { s->add_option(flag, v, help); };

  auto* gen = sub("gen", "synthesise a CSI dataset (.tsds)", cmd_gen);
  req(gen, "--out", a.out, "output dataset");

  auto* train = sub("train", "train a model bundle (.tsmd)", cmd_train);
  req(train, "--data", a.data, "training dataset");
  req(train, "--out", a.out, "output bundle");
  opt(train, "--checkpoint", a.checkpoint, "bundle rewritten after every epoch");

  auto* trec = sub("train-recovery", "train the index transformer and store it in the bundle", cmd_train_recovery);
  req(trec, "--data", a.data, "dataset");
  req(trec, "--model", a.model, "input bundle");
  opt(trec, "--codebook", a.codebook, "codebook to train against (.tscb)");
  req(trec, "--out", a.out, "output bundle");

  auto* resize = sub("resize-codebook", "shrink the codebook with k-means", cmd_resize);
  req(resize, "--model", a.model, "input bundle");
  resize->add_option("--to", a.to, "target codebook size S")->required();
  req(resize, "--out", a.out, "output codebook (.tscb)");
  opt(resize, "--model-out", a.model_out, "also write a bundle using the new codebook");

  auto* comp = sub("compress", "encode frames into an index stream (.tsvq)", cmd_compress);
  req(comp, "--model", a.model, "bundle");
  opt(comp, "--codebook", a.codebook, "codebook override (.tscb)");
  req(comp, "--data", a.data, "dataset");
  req(comp, "--out", a.out, "output stream");

  auto* decomp = sub("decompress", "decode an index stream back to a dataset", cmd_decompress);
  req(decomp, "--model", a.model, "bundle");
  opt(decomp, "--codebook", a.codebook, "codebook override (.tscb)");
  req(decomp, "--in", a.in, "input stream (.tsvq)");
  req(decomp, "--out", a.out, "output dataset (.tsds)");

  auto* edge = sub("edge", "stream frames to a server", cmd_edge);
  req(edge, "--model", a.model, "bundle");
  opt(edge, "--codebook", a.codebook, "codebook override (.tscb)");
  req(edge, "--data", a.data, "dataset supplying the frames");
  req(edge, "--connect", a.connect, "server or proxy, host:port");
  edge->add_option("--limit", a.limit, "send at most this many frames");

  auto* serve = sub("serve", "receive one edge session, recover and decode", cmd_serve);
  req(serve, "--model", a.model, "bundle");
  opt(serve, "--codebook", a.codebook, "codebook override (.tscb)");
  req(serve, "--listen", a.listen, "bind address, host:port or :port (0 picks a free port)");
  opt(serve, "--data", a.data, "ground-truth dataset for per-frame NMSE and MPJPE");
  opt(serve, "--out", a.out, "write reconstructed frames (.tsds)");
  opt(serve, "--port-file", a.port_file, "write the bound port here");

  auto* proxy = sub("proxy", "relay one session, dropping index chunks with probability epsilon", cmd_proxy);
  req(proxy, "--listen", a.listen, "bind address for the edge");
  req(proxy, "--forward", a.forward, "server address");
  opt(proxy, "--drop-log", a.drop_log, "CSV of dropped (frame_id, chunk_seq)");
  opt(proxy, "--port-file", a.port_file, "write the bound port here");

  auto* eval = sub("eval", "NMSE, PCK, MPJPE and eta, optionally through a lossy channel", cmd_eval);
  req(eval, "--model", a.model, "bundle");
  opt(eval, "--codebook", a.codebook, "codebook override (.tscb)");
  req(eval, "--data", a.data, "dataset");
  eval->add_option("--format", a.format, "text or csv")->check(CLI::IsMember({"text", "csv"}));

  auto* bench = sub("bench", "loopback sessions per epsilon with meter output", cmd_bench);
  req(bench, "--model", a.model, "bundle");
  opt(bench, "--codebook", a.codebook, "codebook override (.tscb)");
  req(bench, "--data", a.data, "dataset");

  auto* dumpe = sub("dump-embeddings", "per-frame latent means as CSV", cmd_dump);
  req(dumpe, "--model", a.model, "bundle");
  opt(dumpe, "--codebook", a.codebook, "codebook override (.tscb)");
  req(dumpe, "--data", a.data, "dataset");
  req(dumpe, "--out", a.out, "output CSV");

  try {
    app.parse(argc, argv);
    if (!dump && app.get_subcommands().empty()) throw CLI::RequiredError("a subcommand");
    return dispatch(key_opts, config_file, dump, handlers, values, a, out);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nrun with --help for usage\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const models::TrainingDiverged& e) {
    err << "training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const transport::TransportError& e) {
    err << "network error: " << e.what() << '\n';
    return kNetwork;
  } catch (const io::IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const io::FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const codec::CodecError& e) {
    err << "codec error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace tinysense::cli
