#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tinysense/codec/codec.hpp"
#include "tinysense/io/binary.hpp"
#include "tinysense/numerics/autodiff.hpp"

namespace tinysense::recovery {

using numerics::Parameter;
using numerics::Tensor;

struct MaskSpec {
  double alpha = 0.0;  // fraction of cells to hide
  std::uint64_t seed = 0;
};

/// Positions of exactly round(alpha * n) masked cells, chosen by seed.
std::vector<bool> mask_positions(std::size_t n, const MaskSpec& spec);

/// Replaces round(alpha * N) cells with kLost. Throws std::invalid_argument
/// for alpha outside [0, 1] or an input that already has lost cells.
codec::IndexMap apply_mask(const codec::IndexMap& map, const MaskSpec& spec);

struct TransformerConfig {
  std::size_t vocab = 256;  // S; MASK is token S, PAD is token S + 1
  std::size_t window = 3;   // P
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;

  void validate() const;
  std::size_t tokens() const { return window * window; }
  /// Offset of the target cell inside the window (both axes).
  std::size_t center() const { return (window - 1) / 2; }
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

/// Masked-token predictor over a P x P window of codeword indices.
class IndexTransformer {
 public:
  static IndexTransformer init(const TransformerConfig& config, std::uint64_t seed);

  const TransformerConfig& config() const noexcept { return config_; }
  std::uint64_t codebook_id = 0;  // book whose indices this model predicts

  struct Block {
    Parameter ln1_gain, ln1_bias;
    std::vector<Parameter> wq, wk, wv, wo;  // one per head
    Parameter out_bias;
    Parameter ln2_gain, ln2_bias;
    Parameter w1, b1, w2, b2;
  };

  Parameter token_embedding;     // [S + 2, d]
  Parameter position_embedding;  // [P*P, d]
  std::vector<Block> blocks;
  Parameter final_gain, final_bias;
  Parameter head_weight, head_bias;  // [d, S], [S]

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  /// Log-probabilities [B, S] for a batch of windows given as B*P*P tokens.
  numerics::Var forward(numerics::Graph& g, std::span<const std::uint32_t> tokens, bool trainable) const;

  void write(io::ByteWriter& w) const;
  static IndexTransformer read(io::ByteReader& r);
  void round_to_storage();

  friend bool operator==(const IndexTransformer& a, const IndexTransformer& b);

 private:
  explicit IndexTransformer(const TransformerConfig& c) : config_(c) {}
  TransformerConfig config_;
};

/// Window tokens around (row, col). Out-of-grid cells become PAD, kLost
/// cells and the target itself become MASK.
std::vector<std::uint32_t> window_tokens(const codec::IndexMap& map, std::size_t row, std::size_t col,
                                         const TransformerConfig& config);

/// Class probabilities [S] for the cell at (row, col).
Tensor predict(const IndexTransformer& t, const codec::IndexMap& map, std::size_t row, std::size_t col);

enum class RecoverMode { argmax, sample };

/// Fills every kLost cell in raster order; each fill is visible to later
/// windows. Surviving cells are never changed.
codec::IndexMap recover(const codec::IndexMap& lost, const IndexTransformer& t, RecoverMode mode = RecoverMode::argmax,
                        std::uint64_t seed = 0);

struct TransformerTrainConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::function<void(std::size_t step, double loss)> on_progress;  // every 100 steps
};

/// Each example hides a random fraction alpha ~ U(0, 1] of the cells after
/// the target in raster order; earlier cells are shown (they will have been
/// filled by the time recovery reaches the target).
IndexTransformer train_transformer(std::span<const codec::IndexMap> maps, const TransformerConfig& config,
                                   const TransformerTrainConfig& train);

/// Mean per-token negative log-likelihood with every later cell hidden.
double heldout_nll(const IndexTransformer& t, std::span<const codec::IndexMap> maps);

}  // namespace tinysense::recovery
