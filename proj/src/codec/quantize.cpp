#include <bit>
#include <cmath>
#include <limits>

#include "tinysense/codec/codec.hpp"
#include "tinysense/io/binary.hpp"

namespace tinysense::codec {

using numerics::Tensor;

std::uint64_t codebook_hash(const Tensor& entries) {
  io::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(entries.dim(0)));
  w.u32(static_cast<std::uint32_t>(entries.size() / entries.dim(0)));
  for (double v : entries.values()) w.f32(static_cast<float>(v));
  return io::fnv1a64(w.buffer());
}

Codebook::Codebook(Tensor entries, std::optional<std::uint64_t> parent_id)
    : entries_(std::move(entries)), parent_id_(parent_id) {
  if (entries_.rank() != 2) {
    throw CodecError(CodecErrorKind::invalid_argument, "codebook must be [S, D], got " + numerics::to_string(entries_.shape()));
  }
  const auto s = entries_.dim(0);
  if (s < kMinCodebookSize || s > kMaxCodebookSize) {
    throw CodecError(CodecErrorKind::invalid_argument,
                     "codebook size " + std::to_string(s) + " outside [2, 1024]");
  }
  for (auto& v : entries_.values()) {
    if (!std::isfinite(v)) throw CodecError(CodecErrorKind::invalid_argument, "codebook entry is not finite");
    v = static_cast<double>(static_cast<float>(v));
  }
  id_ = codebook_hash(entries_);
}

std::span<const double> Codebook::entry(std::size_t k) const {
  if (k >= size()) throw CodecError(CodecErrorKind::index_out_of_range, "codeword " + std::to_string(k));
  return entries_.values().subspan(k * dim(), dim());
}

std::size_t IndexMap::lost_count() const {
  std::size_t n = 0;
  for (auto c : cells) n += (c == kLost);
  return n;
}

std::uint32_t nearest(std::span<const double> v, const Tensor& entries) {
  const std::size_t s = entries.dim(0);
  const std::size_t d = entries.dim(1);
  const double* e = entries.data();
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t arg = 0;
  for (std::size_t k = 0; k < s; ++k, e += d) {
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = v[i] - e[i];
      dist += diff * diff;
    }
    if (dist < best) {  // strict: earlier index keeps ties
      best = dist;
      arg = static_cast<std::uint32_t>(k);
    }
  }
  return arg;
}

Quantized quantize(const Tensor& z, const Codebook& cb) {
  if (z.rank() != 3 || z.dim(2) != cb.dim()) {
    throw CodecError(CodecErrorKind::dimension_mismatch,
                     "latent " + numerics::to_string(z.shape()) + " does not match codebook dim " + std::to_string(cb.dim()));
  }
  const std::size_t rows = z.dim(0), cols = z.dim(1), d = z.dim(2);
  Quantized out{IndexMap(rows, cols, cb.id()), Tensor({rows, cols, d})};
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const auto k = nearest(z.values().subspan(i * d, d), cb.entries());
    out.indices.cells[i] = k;
    const auto e = cb.entry(k);
    std::copy(e.begin(), e.end(), out.z_q.data() + i * d);
  }
  return out;
}

Tensor dequantize(const IndexMap& map, const Codebook& cb) {
  if (map.codebook_id != cb.id()) {
    throw CodecError(CodecErrorKind::codebook_mismatch, "index map was produced with a different codebook");
  }
  const std::size_t d = cb.dim();
  Tensor out({map.rows, map.cols, d});
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto k = map.cells[i];
    if (k == kLost) {
      throw CodecError(CodecErrorKind::lost_index,
                       "cell " + std::to_string(i) + " is lost; run recovery before dequantizing");
    }
    if (k >= cb.size()) {
      throw CodecError(CodecErrorKind::index_out_of_range,
                       "index " + std::to_string(k) + " >= codebook size " + std::to_string(cb.size()));
    }
    const auto e = cb.entry(k);
    std::copy(e.begin(), e.end(), out.data() + i * d);
  }
  return out;
}

unsigned bits_per_index(std::size_t codebook_size) {
  if (codebook_size < kMinCodebookSize || codebook_size > kMaxCodebookSize) {
    throw CodecError(CodecErrorKind::invalid_argument,
                     "codebook size " + std::to_string(codebook_size) + " outside [2, 1024]");
  }
  return static_cast<unsigned>(std::bit_width(codebook_size - 1));
}

std::size_t packed_size(std::size_t count, std::size_t codebook_size) {
  return (count * bits_per_index(codebook_size) + 7) / 8;
}

Bitstream pack(std::span<const std::uint32_t> indices, std::size_t codebook_size) {
  const unsigned width = bits_per_index(codebook_size);
  Bitstream out{std::vector<std::uint8_t>(packed_size(indices.size(), codebook_size), 0), width, indices.size()};
  std::size_t bit = 0;
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto v = indices[n];
    if (v == kLost) throw CodecError(CodecErrorKind::lost_index, "cannot pack a lost index at " + std::to_string(n));
    if (v >= codebook_size) {
      throw CodecError(CodecErrorKind::index_out_of_range,
                       "index " + std::to_string(v) + " >= codebook size " + std::to_string(codebook_size));
    }
    for (int b = static_cast<int>(width) - 1; b >= 0; --b, ++bit) {
      if ((v >> b) & 1u) out.bytes[bit / 8] |= static_cast<std::uint8_t>(0x80u >> (bit % 8));
    }
  }
  return out;
}

Bitstream pack(const IndexMap& map, std::size_t codebook_size) { return pack(map.cells, codebook_size); }

std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> bytes, std::size_t count,
                                          std::size_t codebook_size) {
  const unsigned width = bits_per_index(codebook_size);
  if (bytes.size() != packed_size(count, codebook_size)) {
    throw CodecError(CodecErrorKind::length_mismatch, "expected " + std::to_string(packed_size(count, codebook_size)) +
                                                          " bytes for " + std::to_string(count) + " indices, got " +
                                                          std::to_string(bytes.size()));
  }
  std::vector<std::uint32_t> out(count);
  std::size_t bit = 0;
  for (std::size_t n = 0; n < count; ++n) {
    std::uint32_t v = 0;
    for (unsigned b = 0; b < width; ++b, ++bit) v = (v << 1) | ((bytes[bit / 8] >> (7 - bit % 8)) & 1u);
    if (v >= codebook_size) {
      throw CodecError(CodecErrorKind::index_out_of_range,
                       "decoded index " + std::to_string(v) + " >= codebook size " + std::to_string(codebook_size));
    }
    out[n] = v;
  }
  return out;
}

IndexMap unpack(const Bitstream& stream, std::size_t rows, std::size_t cols, std::size_t codebook_size) {
  if (stream.index_count != rows * cols || stream.bits_per_index != bits_per_index(codebook_size)) {
    throw CodecError(CodecErrorKind::length_mismatch, "bitstream header disagrees with grid or codebook size");
  }
  IndexMap map(rows, cols);
  map.cells = unpack_indices(stream.bytes, rows * cols, codebook_size);
  return map;
}

double compression_rate(std::size_t freq, std::size_t time, std::size_t channels, std::size_t downsample,
                        std::size_t codebook_size) {
  if (downsample == 0 || freq == 0 || time == 0 || channels == 0 || freq % downsample || time % downsample) {
    throw CodecError(CodecErrorKind::invalid_argument, "F and T must be positive multiples of M");
  }
  const double original = static_cast<double>(freq * time * channels) * 4.0;
  const double compressed = static_cast<double>((freq / downsample) * (time / downsample)) *
                            static_cast<double>(bits_per_index(codebook_size)) / 8.0;
  return original / compressed;
}

double raw_bitrate(std::size_t antennas, std::size_t subcarriers, double sample_rate_hz, std::size_t values_per_point,
                   std::size_t bytes_per_value) {
  return static_cast<double>(antennas * subcarriers * values_per_point * bytes_per_value) * sample_rate_hz * 8.0;
}

}  // namespace tinysense::codec
