#include "tinysense/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "tinysense/io/binary.hpp"

namespace tinysense::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& text, const char* want) {
  throw ConfigError("key '" + key + "': '" + text + "' is not " + want);
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || p != end) bad(key, text, "a non-negative integer");
  return v;
}

int parse_int(const std::string& key, const std::string& text) {
  int v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || p != end) bad(key, text, "an integer");
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || p != end) bad(key, text, "a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  bad(key, text, "a boolean (true/false)");
}

std::string show(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <class T>
ConfigKey make_key(std::string name, std::string group, std::string help, T RunConfig::*field) {
  ConfigKey k{name, std::move(group), std::move(help), nullptr, nullptr};
  k.get = [field](const RunConfig& c) {
    const auto& v = c.*field;
    if constexpr (std::is_same_v<T, bool>) return std::string(v ? "true" : "false");
    else if constexpr (std::is_same_v<T, std::string>) return v;
    else if constexpr (std::is_same_v<T, double>) return show(v);
    else return std::to_string(v);
  };
  k.set = [field, name](RunConfig& c, const std::string& text) {
    auto& v = c.*field;
    if constexpr (std::is_same_v<T, bool>) v = parse_bool(name, text);
    else if constexpr (std::is_same_v<T, std::string>) v = text;
    else if constexpr (std::is_same_v<T, double>) v = parse_double(name, text);
    else if constexpr (std::is_same_v<T, int>) v = parse_int(name, text);
    else v = parse_unsigned<T>(name, text);
  };
  return k;
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError("key '" + key + "' needs at least one value");
  return out;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("key '" + key + "' " + what);
}

template <class F>
void checked(const char* what, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  using C = RunConfig;
  static const std::vector<ConfigKey> keys = {
      make_key("frames", "data", "frames to synthesise", &C::frames),
      make_key("freq", "data", "subcarriers per frame (F)", &C::freq),
      make_key("time", "data", "time samples per frame (T)", &C::time),
      make_key("channels", "data", "antennas (C)", &C::channels),
      make_key("test_fraction", "data", "share of frames held out for testing", &C::test_fraction),
      make_key("activities", "data", "distinct motion classes", &C::activities),
      make_key("noise_std", "data", "additive amplitude noise", &C::noise_std),
      make_key("data_seed", "data", "synthesis seed", &C::data_seed),
      make_key("downsample", "model", "encoder downsampling M (2, 4 or 8)", &C::downsample),
      make_key("embed_dim", "model", "latent and codeword dimension D", &C::embed_dim),
      make_key("codebook_size", "model", "trained codebook entries K", &C::codebook_size),
      make_key("width", "model", "channels of the first conv layer", &C::width),
      make_key("epochs", "train", "training epochs", &C::epochs),
      make_key("batch_size", "train", "frames per step", &C::batch_size),
      make_key("lr", "train", "learning rate", &C::lr),
      make_key("momentum", "train", "SGD momentum (sgd only)", &C::momentum),
      make_key("optimizer", "train", "adam or sgd", &C::optimizer),
      make_key("beta", "train", "commitment weight", &C::beta),
      make_key("lambda_weight", "train", "adversarial weight", &C::lambda_weight),
      make_key("lambda_max", "train", "clip for the adaptive lambda", &C::lambda_max),
      make_key("delta", "train", "adaptive lambda stabiliser", &C::delta),
      make_key("disc_warmup_frac", "train", "share of epochs before the discriminator starts", &C::disc_warmup_frac),
      make_key("keypoint_weight", "train", "weight of the keypoint loss", &C::keypoint_weight),
      make_key("dead_code_restart", "train", "reseed unused codewords during training", &C::dead_code_restart),
      make_key("seed", "train", "initialisation and shuffling seed", &C::seed),
      make_key("kmeans_restarts", "codebook", "k-means restarts when resizing", &C::kmeans_restarts),
      make_key("kmeans_iters", "codebook", "k-means iteration cap", &C::kmeans_iters),
      make_key("kmeans_seed", "codebook", "k-means seed", &C::kmeans_seed),
      make_key("window", "recovery", "transformer window P", &C::window),
      make_key("tf_width", "recovery", "transformer width", &C::tf_width),
      make_key("tf_heads", "recovery", "attention heads", &C::tf_heads),
      make_key("tf_blocks", "recovery", "transformer blocks", &C::tf_blocks),
      make_key("tf_steps", "recovery", "transformer training steps", &C::tf_steps),
      make_key("tf_batch", "recovery", "windows per transformer step", &C::tf_batch),
      make_key("tf_lr", "recovery", "transformer learning rate", &C::tf_lr),
      make_key("tf_seed", "recovery", "transformer seed", &C::tf_seed),
      make_key("recover_mode", "recovery", "argmax or sample", &C::recover_mode),
      make_key("chunk_indices", "transport", "indices per INDEX_CHUNK (multiple of 8, <= 128)", &C::chunk_indices),
      make_key("buffer_period_s", "transport", "acquisition buffer period T_buf", &C::buffer_period_s),
      make_key("frames_per_buffer", "transport", "frames filled per buffer", &C::frames_per_buffer),
      make_key("pace", "transport", "wait out T_buf per buffer like a live radio", &C::pace),
      make_key("frame_timeout_ms", "transport", "wait after a frame's last chunk before declaring loss", &C::frame_timeout_ms),
      make_key("connect_attempts", "transport", "connection attempts before giving up", &C::connect_attempts),
      make_key("retry_delay_ms", "transport", "pause between connection attempts", &C::retry_delay_ms),
      make_key("epsilon", "transport", "loss probability per index or chunk", &C::epsilon),
      make_key("loss_seed", "transport", "loss model seed", &C::loss_seed),
      make_key("loss_unit", "transport", "eval loss granularity: index or chunk", &C::loss_unit),
      make_key("split", "eval", "frames to use: train, test or all", &C::split),
      make_key("pck_thresholds", "eval", "comma-separated PCK thresholds in percent", &C::pck_thresholds),
      make_key("bench_epsilons", "eval", "comma-separated epsilons for bench", &C::bench_epsilons),
      make_key("bench_frames", "eval", "frames per bench scenario", &C::bench_frames),
  };
  return keys;
}

void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::map<std::string, int> seen;
  for (int n = 1; std::getline(in, line); ++n) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = origin + ":" + std::to_string(n);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (seen.count(key)) throw ConfigError(where + ": '" + key + "' already set on line " + std::to_string(seen[key]));
    seen[key] = n;
    try {
      set_key(c, key, trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  apply_config_text(c, std::string(bytes.begin(), bytes.end()), path.string());
}

std::string dump_config(const RunConfig& c) {
  std::ostringstream out;
  std::string group;
  for (const auto& k : config_keys()) {
    if (k.group != group) {
      out << (group.empty() ? "" : "\n") << "# " << k.group << '\n';
      group = k.group;
    }
    out << k.name << " = " << k.get(c) << '\n';
  }
  return out.str();
}

void RunConfig::validate() const {
  require(frames >= 1, "frames", "must be >= 1");
  require(freq >= 1 && time >= 1 && channels >= 1, "freq", "freq, time and channels must be >= 1");
  require(test_fraction >= 0.0 && test_fraction < 1.0, "test_fraction", "must lie in [0, 1)");
  require(activities >= 1, "activities", "must be >= 1");
  require(noise_std >= 0.0, "noise_std", "must be >= 0");
  require(optimizer == "adam" || optimizer == "sgd", "optimizer", "must be adam or sgd");
  require(recover_mode == "argmax" || recover_mode == "sample", "recover_mode", "must be argmax or sample");
  require(loss_unit == "index" || loss_unit == "chunk", "loss_unit", "must be index or chunk");
  require(split == "train" || split == "test" || split == "all", "split", "must be train, test or all");
  require(kmeans_restarts >= 1 && kmeans_iters >= 1, "kmeans_restarts", "restarts and iterations must be >= 1");
  require(tf_steps >= 1 && tf_batch >= 1 && tf_lr > 0.0, "tf_steps", "tf_steps, tf_batch and tf_lr must be positive");
  require(frame_timeout_ms >= 0, "frame_timeout_ms", "must be >= 0");
  require(bench_frames >= 1, "bench_frames", "must be >= 1");
  for (double a : pck_list()) require(a >= 0.0, "pck_thresholds", "must be >= 0");
  for (double e : bench_epsilon_list()) require(e >= 0.0 && e <= 1.0, "bench_epsilons", "must lie in [0, 1]");
  checked("model", [&] { model().validate(); });
  checked("training", [&] { training().validate(); });
  checked("recovery", [&] { transformer(codebook_size).validate(); });
  checked("transport", [&] { edge().validate(); });
  checked("transport", [&] { loss().validate(); });
}

data::DatasetConfig RunConfig::dataset() const {
  data::DatasetConfig d;
  d.frames = frames;
  d.shape = {freq, time, channels};
  d.test_fraction = test_fraction;
  d.activities = activities;
  d.noise_std = noise_std;
  d.seed = data_seed;
  return d;
}

models::ModelConfig RunConfig::model() const {
  models::ModelConfig m;
  m.frame = {freq, time, channels};
  m.downsample = downsample;
  m.embed_dim = embed_dim;
  m.codebook_size = codebook_size;
  m.width = width;
  return m;
}

models::TrainConfig RunConfig::training() const {
  models::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.lr = lr;
  t.momentum = momentum;
  t.optimizer = optimizer == "sgd" ? numerics::OptimizerKind::sgd : numerics::OptimizerKind::adam;
  t.beta = beta;
  t.lambda_weight = lambda_weight;
  t.lambda_max = lambda_max;
  t.delta = delta;
  t.disc_warmup_frac = disc_warmup_frac;
  t.keypoint_weight = keypoint_weight;
  t.dead_code_restart = dead_code_restart;
  t.seed = seed;
  return t;
}

codec::KMeansOptions RunConfig::kmeans() const {
  codec::KMeansOptions k;
  k.seed = kmeans_seed;
  k.max_iters = kmeans_iters;
  k.restarts = kmeans_restarts;
  return k;
}

recovery::TransformerConfig RunConfig::transformer(std::size_t vocab) const {
  recovery::TransformerConfig t;
  t.vocab = vocab;
  t.window = window;
  t.width = tf_width;
  t.heads = tf_heads;
  t.blocks = tf_blocks;
  return t;
}

recovery::TransformerTrainConfig RunConfig::transformer_training() const {
  recovery::TransformerTrainConfig t;
  t.steps = tf_steps;
  t.batch_size = tf_batch;
  t.lr = tf_lr;
  t.seed = tf_seed;
  return t;
}

recovery::RecoverMode RunConfig::mode() const {
  return recover_mode == "sample" ? recovery::RecoverMode::sample : recovery::RecoverMode::argmax;
}

transport::EdgeConfig RunConfig::edge() const {
  transport::EdgeConfig e;
  e.chunk_indices = chunk_indices;
  e.buffer_period_s = buffer_period_s;
  e.frames_per_buffer = frames_per_buffer;
  e.pace = pace;
  e.connect_attempts = connect_attempts;
  e.retry_delay_ms = retry_delay_ms;
  return e;
}

transport::ServerConfig RunConfig::server() const {
  transport::ServerConfig s;
  s.frame_timeout_ms = frame_timeout_ms;
  s.recover_mode = mode();
  s.recover_seed = loss_seed;
  return s;
}

transport::LossModel RunConfig::loss() const { return {epsilon, loss_seed}; }

std::vector<double> RunConfig::pck_list() const { return parse_list("pck_thresholds", pck_thresholds); }

std::vector<double> RunConfig::bench_epsilon_list() const { return parse_list("bench_epsilons", bench_epsilons); }

}  // namespace tinysense::cli
