#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinysense/numerics/tensor.hpp"

namespace tinysense::codec {

enum class CodecErrorKind {
  dimension_mismatch,
  lost_index,
  codebook_mismatch,
  length_mismatch,
  index_out_of_range,
  invalid_argument,
};

class CodecError : public std::runtime_error {
 public:
  CodecError(CodecErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  CodecErrorKind kind() const noexcept { return kind_; }

 private:
  CodecErrorKind kind_;
};

inline constexpr std::size_t kMinCodebookSize = 2;
inline constexpr std::size_t kMaxCodebookSize = 1024;

/// Ordered codeword table [S, D]. Entries are rounded to float32 on
/// construction so the content hash and the on-disk form agree exactly.
class Codebook {
 public:
  Codebook(numerics::Tensor entries, std::optional<std::uint64_t> parent_id = std::nullopt);

  std::size_t size() const noexcept { return entries_.dim(0); }
  std::size_t dim() const noexcept { return entries_.dim(1); }
  const numerics::Tensor& entries() const noexcept { return entries_; }
  std::span<const double> entry(std::size_t k) const;
  std::uint64_t id() const noexcept { return id_; }
  const std::optional<std::uint64_t>& parent_id() const noexcept { return parent_id_; }

  friend bool operator==(const Codebook& a, const Codebook& b) {
    return a.entries_ == b.entries_ && a.parent_id_ == b.parent_id_;
  }

 private:
  numerics::Tensor entries_;
  std::optional<std::uint64_t> parent_id_;
  std::uint64_t id_ = 0;
};

/// Content hash over S, D and the float32 entries.
std::uint64_t codebook_hash(const numerics::Tensor& entries);

inline constexpr std::uint32_t kLost = 0xFFFFFFFFu;

/// Row-major grid of codeword indices; a cell may be kLost after transport.
struct IndexMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> cells;
  std::uint64_t codebook_id = 0;
  std::uint32_t frame_id = 0;

  IndexMap() = default;
  IndexMap(std::size_t r, std::size_t c, std::uint64_t cb = 0, std::uint32_t frame = 0)
      : rows(r), cols(c), cells(r * c, 0), codebook_id(cb), frame_id(frame) {}

  std::uint32_t& at(std::size_t i, std::size_t j) { return cells[i * cols + j]; }
  std::uint32_t at(std::size_t i, std::size_t j) const { return cells[i * cols + j]; }
  std::size_t size() const noexcept { return cells.size(); }
  std::size_t lost_count() const;
  friend bool operator==(const IndexMap&, const IndexMap&) = default;
};

struct Quantized {
  IndexMap indices;
  numerics::Tensor z_q;  // [rows, cols, D]
};

/// Index of the codeword closest to `v` in Euclidean distance; ties go to
/// the lowest index.
std::uint32_t nearest(std::span<const double> v, const numerics::Tensor& entries);

/// Quantizes a latent grid [rows, cols, D].
Quantized quantize(const numerics::Tensor& z, const Codebook& cb);

/// Table lookup back to a [rows, cols, D] grid. Throws lost_index if any
/// cell is kLost and codebook_mismatch if the map was made with another book.
numerics::Tensor dequantize(const IndexMap& map, const Codebook& cb);

/// ceil(log2 S), the fixed width of one packed index.
unsigned bits_per_index(std::size_t codebook_size);

struct Bitstream {
  std::vector<std::uint8_t> bytes;
  unsigned bits_per_index = 0;
  std::size_t index_count = 0;
  friend bool operator==(const Bitstream&, const Bitstream&) = default;
};

/// Row-major, MSB-first fixed-width packing; trailing bits are zero.
Bitstream pack(std::span<const std::uint32_t> indices, std::size_t codebook_size);
Bitstream pack(const IndexMap& map, std::size_t codebook_size);

std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> bytes, std::size_t count,
                                          std::size_t codebook_size);
IndexMap unpack(const Bitstream& stream, std::size_t rows, std::size_t cols, std::size_t codebook_size);

/// Bytes needed for `count` indices over a book of `codebook_size`.
std::size_t packed_size(std::size_t count, std::size_t codebook_size);

struct KMeansOptions {
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  double tol = 1e-10;
  std::size_t restarts = 10;  // random initialisations, lowest cost wins; ignored when all seed sets (<= 4096) are tried
};

struct KMeansResult {
  Codebook codebook;
  std::vector<double> cost_history;  // J after initialisation and after every iteration (winning run)
  std::size_t iterations = 0;
};

/// Clusters the parent's entries into S centroids (Lloyd iterations from
/// seeded distinct-entry initialisations).
KMeansResult kmeans_resize(const Codebook& parent, std::size_t target_size, const KMeansOptions& options = {});

/// Sum over points of the squared distance to the closest centroid.
double kmeans_cost(const numerics::Tensor& points, const numerics::Tensor& centroids);

/// Raw-to-compressed byte ratio for one frame: (F*T*C*4) / ((F/M)*(T/M)*ceil(log2 S)/8).
double compression_rate(std::size_t freq, std::size_t time, std::size_t channels, std::size_t downsample,
                        std::size_t codebook_size);

/// Uncompressed CSI stream rate in bits per second.
double raw_bitrate(std::size_t antennas, std::size_t subcarriers, double sample_rate_hz, std::size_t values_per_point,
                   std::size_t bytes_per_value);

void save_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_codebook(const Codebook& cb);
Codebook decode_codebook(std::span<const std::uint8_t> bytes);

/// A sequence of packed frames sharing one codebook and grid size.
struct CompressedStream {
  std::uint64_t codebook_id = 0;
  std::size_t codebook_size = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> frame_ids;
  std::vector<Bitstream> frames;
  friend bool operator==(const CompressedStream&, const CompressedStream&) = default;
};

void save_compressed(const CompressedStream& stream, const std::filesystem::path& path);
CompressedStream load_compressed(const std::filesystem::path& path);

}  // namespace tinysense::codec
