#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>

#include "tinysense/data/csi.hpp"
#include "tinysense/models/model.hpp"

namespace tinysense::metrics {

using numerics::Tensor;

/// Floor reported when the reconstruction is exact.
inline constexpr double kNmseFloorDb = -300.0;

/// 10 log10(|x - x_hat|^2 / |x|^2). Throws std::invalid_argument for a
/// zero-norm reference or mismatched shapes.
double nmse_db(const Tensor& x, const Tensor& x_hat);

/// Percentage of joints whose error is at most a% of the diagonal of the
/// ground-truth bounding box. Throws for a degenerate box.
double pck(const data::PoseLabel& predicted, const data::PoseLabel& truth, double a);
/// Mean Euclidean joint error.
double mpjpe(const data::PoseLabel& predicted, const data::PoseLabel& truth);

struct EvalReport {
  double nmse_db = 0.0;
  std::map<double, double> pck;  // threshold a -> percentage
  double mpjpe = 0.0;
  double eta = 0.0;
  std::size_t frames_evaluated = 0;

  void validate() const;
  /// One "key=value" line per field, pck as pck@<a>.
  std::string to_text() const;
  /// Header line plus one data line.
  std::string to_csv() const;
};

/// Averages over frames: NMSE as 10 log10 of the mean per-frame ratio,
/// PCK and MPJPE as plain means. Uses the model's active codebook.
EvalReport evaluate(const models::ModelBundle& m, const data::Dataset& ds, std::size_t begin, std::size_t end,
                    std::span<const double> pck_thresholds);

/// What happens to an index map between edge and server: loss plus any
/// recovery. Must return a map without lost cells.
using Channel = std::function<codec::IndexMap(const codec::IndexMap&)>;

/// As above, with every map passed through `channel` before decoding.
EvalReport evaluate(const models::ModelBundle& m, const data::Dataset& ds, std::size_t begin, std::size_t end,
                    std::span<const double> pck_thresholds, const Channel& channel);

/// CSV with columns frame_id, label, z0..z{D-1}: per-frame means of the
/// continuous latent over grid cells. Throws io::IoError on write failure.
void dump_embeddings(const data::Dataset& ds, const models::ModelBundle& m, const std::filesystem::path& path);

}  // namespace tinysense::metrics
