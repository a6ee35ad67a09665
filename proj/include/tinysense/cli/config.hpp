#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinysense/codec/codec.hpp"
#include "tinysense/data/csi.hpp"
#include "tinysense/models/model.hpp"
#include "tinysense/recovery/transformer.hpp"
#include "tinysense/transport/pipeline.hpp"

namespace tinysense::cli {

/// Bad key, bad value or failed validation. Maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every tunable of the tool. Values come from defaults, then an optional
/// key = value file, then command-line flags.
struct RunConfig {
  // data
  std::size_t frames = 256;
  std::size_t freq = 32;
  std::size_t time = 64;
  std::size_t channels = 3;
  double test_fraction = 0.25;
  std::size_t activities = 4;
  double noise_std = 0.01;
  std::uint64_t data_seed = 7;
  // model
  std::size_t downsample = 4;
  std::size_t embed_dim = 16;
  std::size_t codebook_size = 256;
  std::size_t width = 16;
  // training
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double momentum = 0.9;
  std::string optimizer = "adam";
  double beta = 0.25;
  double lambda_weight = 0.1;
  double lambda_max = 10.0;
  double delta = 1e-6;
  double disc_warmup_frac = 0.2;
  double keypoint_weight = 1.0;
  bool dead_code_restart = true;
  std::uint64_t seed = 1;
  // codebook resizing
  std::size_t kmeans_restarts = 10;
  std::size_t kmeans_iters = 100;
  std::uint64_t kmeans_seed = 0;
  // recovery
  std::size_t window = 3;
  std::size_t tf_width = 64;
  std::size_t tf_heads = 4;
  std::size_t tf_blocks = 2;
  std::size_t tf_steps = 1500;
  std::size_t tf_batch = 32;
  double tf_lr = 1e-3;
  std::uint64_t tf_seed = 1;
  std::string recover_mode = "argmax";
  // transport
  std::size_t chunk_indices = 32;
  double buffer_period_s = 1.0;
  std::size_t frames_per_buffer = 1;
  bool pace = true;
  int frame_timeout_ms = 50;
  int connect_attempts = 5;
  int retry_delay_ms = 200;
  double epsilon = 0.0;
  std::uint64_t loss_seed = 0;
  std::string loss_unit = "index";
  // evaluation
  std::string split = "test";
  std::string pck_thresholds = "5,10,20";
  std::string bench_epsilons = "0,0.1,0.3,0.5";
  std::size_t bench_frames = 32;

  /// Throws ConfigError naming the first offending key.
  void validate() const;

  data::DatasetConfig dataset() const;
  models::ModelConfig model() const;
  models::TrainConfig training() const;
  codec::KMeansOptions kmeans() const;
  recovery::TransformerConfig transformer(std::size_t vocab) const;
  recovery::TransformerTrainConfig transformer_training() const;
  recovery::RecoverMode mode() const;
  transport::EdgeConfig edge() const;
  transport::ServerConfig server() const;
  transport::LossModel loss() const;
  std::vector<double> pck_list() const;
  std::vector<double> bench_epsilon_list() const;
};

struct ConfigKey {
  std::string name;
  std::string group;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  /// Throws ConfigError for unparsable text.
  std::function<void(RunConfig&, const std::string&)> set;
};

/// All keys, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Sets one key; unknown keys are a ConfigError.
void set_key(RunConfig& c, const std::string& key, const std::string& value);

/// Applies a flat "key = value" text. Blank lines and lines starting with
/// '#' are ignored; repeated keys are an error.
void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin = "config");
void apply_config_file(RunConfig& c, const std::filesystem::path& path);

/// The effective configuration as a loadable config file.
std::string dump_config(const RunConfig& c);

}  // namespace tinysense::cli
