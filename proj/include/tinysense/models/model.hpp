#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinysense/codec/codec.hpp"
#include "tinysense/data/csi.hpp"
#include "tinysense/numerics/autodiff.hpp"
#include "tinysense/numerics/optim.hpp"
#include "tinysense/recovery/transformer.hpp"

namespace tinysense::models {

using numerics::Graph;
using numerics::Parameter;
using numerics::Tensor;
using numerics::Var;

/// Architecture. The encoder halves F and T log2(M) times; the patch
/// discriminator always downsamples by 8, so F and T must be multiples of 8.
struct ModelConfig {
  data::FrameShape frame{};
  std::size_t downsample = 4;  // M, one of 2, 4, 8
  std::size_t embed_dim = 16;  // D
  std::size_t codebook_size = 256;  // K
  std::size_t joints = data::kJointCount;
  std::size_t width = 16;  // channels of the first conv layer

  void validate() const;
  std::size_t grid_rows() const { return frame.freq / downsample; }
  std::size_t grid_cols() const { return frame.time / downsample; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ConvLayer {
  Parameter weight;  // [k, k, Cin, Cout]
  Parameter bias;    // [Cout]
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool transposed = false;
};

struct DenseLayer {
  Parameter weight;  // [in, out]
  Parameter bias;    // [out]
};

/// Per-dataset amplitude standardisation applied before the encoder and
/// undone after the decoder.
struct Normalizer {
  double mean = 0.0;
  double scale = 1.0;
};

/// Everything needed to run both sides of the codec.
class ModelBundle {
 public:
  /// Random initialisation; codebook entries uniform, normaliser identity.
  static ModelBundle init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  std::vector<ConvLayer> encoder;
  std::vector<ConvLayer> decoder;  // decoder.back() is the layer adaptive lambda watches
  std::vector<DenseLayer> estimator;
  std::vector<ConvLayer> discriminator;
  Parameter codebook_weights;  // [K, D], trained
  Normalizer normalizer;
  double beta = 0.25;
  double delta = 1e-6;
  double lambda_weight = 0.1;

  /// Codebook used by compress/decompress. Starts as the trained K-entry
  /// book; resize_codebook swaps in a K-means reduction of it.
  const codec::Codebook& codebook() const { return active_; }
  /// Swaps in another book of the same D; a transformer bound to a different book is dropped.
  void set_codebook(codec::Codebook cb);
  /// Rebuilds the active codebook from codebook_weights.
  void reset_codebook();
  void resize_codebook(std::size_t size, const codec::KMeansOptions& options = {});

  std::optional<recovery::IndexTransformer> transformer;

  std::vector<Parameter*> generator_parameters();
  std::vector<Parameter*> discriminator_parameters();
  std::vector<const Parameter*> all_parameters() const;

  /// Rounds every parameter to float32 so save/load is exact.
  void round_to_storage();

  friend bool operator==(const ModelBundle& a, const ModelBundle& b);

 private:
  ModelBundle(const ModelConfig& config, codec::Codebook active) : config_(config), active_(std::move(active)) {}

  ModelConfig config_;
  codec::Codebook active_;
};

// ---- graph-level building blocks --------------------------------------

/// Maps a parameter to a graph node: trainable (g.param) or frozen (g.constant).
struct Binder {
  Graph& graph;
  bool trainable = false;
  Var operator()(const Parameter& p) const;
};

Var apply(const Binder& bind, const ConvLayer& layer, Var x);
Var apply(const Binder& bind, const DenseLayer& layer, Var x);

/// x [F,T,C] (normalised) -> z [F/M, T/M, D]
Var encode(const Binder& bind, const ModelBundle& m, Var x);
/// z [F/M, T/M, D] -> x_hat [F,T,C] (normalised)
Var decode(const Binder& bind, const ModelBundle& m, Var z);
/// z [F/M, T/M, D] -> [1, 2J] as (x0, y0, x1, y1, ...)
Var estimate(const Binder& bind, const ModelBundle& m, Var z);
/// x [F,T,C] -> per-patch probabilities [F/8, T/8, 1], clamped to [1e-7, 1 - 1e-7]
Var discriminate(const Binder& bind, const ModelBundle& m, Var x);

// ---- losses -------------------------------------------------------------

struct VqLoss {
  Var total;     // rec + codebook + commit
  Var rec;       // sum (x - x_hat)^2
  Var codebook;  // sum (sg[z] - z_q)^2
  Var commit;    // beta * sum (sg[z_q] - z)^2
};
VqLoss vq_loss(Var x, Var x_hat, Var z, Var z_q, double beta);

struct GanLoss {
  Var objective;  // mean over patches of log D(x) + log(1 - D(x_hat))
  Var disc;       // -objective
  Var gen;        // non-saturating: -mean log D(x_hat)
};
/// Takes the discriminator's clamped probabilities on real and reconstructed input.
GanLoss gan_losses(Var p_real, Var p_fake);

/// Sum of squared coordinate differences.
Var keypoint_loss(Var predicted, Var target);

/// rec_norm / (gan_norm + delta). Throws std::invalid_argument on negative norms.
double adaptive_lambda(double rec_grad_norm, double gan_grad_norm, double delta = 1e-6);

// ---- inference ----------------------------------------------------------

Tensor normalize(const ModelBundle& m, const Tensor& amplitude);
Tensor denormalize(const ModelBundle& m, const Tensor& normalized);

/// Continuous latent of one frame.
Tensor encode_frame(const ModelBundle& m, const Tensor& amplitude);
/// Frame -> index map under the active codebook.
codec::IndexMap compress(const ModelBundle& m, const data::CsiFrame& frame);
/// Quantized latent -> amplitude frame.
Tensor decode_latent(const ModelBundle& m, const Tensor& z_q);
/// Index map (no LOST cells) -> amplitude frame.
Tensor decompress(const ModelBundle& m, const codec::IndexMap& map);
data::PoseLabel estimate_pose(const ModelBundle& m, const Tensor& z_q);

// ---- training -----------------------------------------------------------

struct LossReport {
  double l_vq = 0, l_rec = 0, l_commit = 0, l_codebook = 0;
  double l_gan_g = 0, l_gan_d = 0, l_keypoint = 0, lambda = 0;
  std::size_t codes_used = 0;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double momentum = 0.9;
  numerics::OptimizerKind optimizer = numerics::OptimizerKind::adam;
  double beta = 0.25;
  double lambda_weight = 0.1;
  double lambda_max = 10.0;
  double delta = 1e-6;
  double disc_warmup_frac = 0.2;
  double keypoint_weight = 1.0;
  bool dead_code_restart = true;
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint;  // written after every epoch when non-empty
  std::function<void(std::size_t epoch, const LossReport&)> on_epoch;

  void validate() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, ModelBundle last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const ModelBundle& last_good() const noexcept { return last_good_; }

 private:
  ModelBundle last_good_;
};

/// Sets the normaliser from the training split and seeds the codebook with
/// encoder outputs of training frames.
void prepare(ModelBundle& m, const data::Dataset& ds, std::uint64_t seed);

/// Trains in place on ds's training split; returns one report per epoch.
/// With lr == 0 nothing is modified and the reports only evaluate.
std::vector<LossReport> train(ModelBundle& m, const data::Dataset& ds, const TrainConfig& config);

/// init + prepare + train.
ModelBundle train_new(const data::Dataset& ds, const ModelConfig& model, const TrainConfig& config,
                      std::vector<LossReport>* log = nullptr);

// ---- persistence --------------------------------------------------------

void save_model(const ModelBundle& m, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_model(const ModelBundle& m);
ModelBundle decode_model(std::span<const std::uint8_t> bytes);

}  // namespace tinysense::models
