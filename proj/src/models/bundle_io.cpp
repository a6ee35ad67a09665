#include <cmath>

#include "tinysense/io/binary.hpp"
#include "tinysense/models/model.hpp"

namespace tinysense::models {

namespace {
constexpr std::string_view kMagic = "TSMD";
constexpr std::uint16_t kVersion = 1;

[[noreturn]] void invalid(const std::string& what) { throw io::FormatError(io::FormatErrorKind::invalid_field, what); }
}  // namespace

std::vector<std::uint8_t> encode_model(const ModelBundle& m) {
  const auto& c = m.config();
  io::ByteWriter w;
  w.tag(kMagic);
  w.u16(kVersion);
  for (auto v : {c.frame.freq, c.frame.time, c.frame.channels, c.downsample, c.embed_dim, c.codebook_size, c.joints,
                 c.width}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  for (double v : {m.beta, m.delta, m.lambda_weight, m.normalizer.mean, m.normalizer.scale}) w.f64(v);

  const auto params = m.all_parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.u16(static_cast<std::uint16_t>(p->name.size()));
    w.tag(p->name);
    w.u8(static_cast<std::uint8_t>(p->value.rank()));
    for (auto d : p->value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p->value.values()) w.f32(static_cast<float>(v));
  }

  const auto& cb = m.codebook();
  w.u32(static_cast<std::uint32_t>(cb.size()));
  w.u8(cb.parent_id() ? 1 : 0);
  w.u64(cb.parent_id().value_or(0));
  for (double v : cb.entries().values()) w.f32(static_cast<float>(v));

  w.u8(m.transformer ? 1 : 0);
  if (m.transformer) m.transformer->write(w);
  w.append_crc();
  return std::move(w).take();
}

ModelBundle decode_model(std::span<const std::uint8_t> bytes) {
  auto r = io::open_container(bytes, kMagic, kVersion);
  ModelConfig c;
  c.frame.freq = r.u32();
  c.frame.time = r.u32();
  c.frame.channels = r.u32();
  c.downsample = r.u32();
  c.embed_dim = r.u32();
  c.codebook_size = r.u32();
  c.joints = r.u32();
  c.width = r.u32();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    invalid(e.what());
  }
  if (c.frame.elements() > (std::size_t{1} << 24) || c.width > 512 || c.embed_dim > 1024 || c.joints > 1024) {
    invalid("model dimensions implausibly large");
  }

  auto m = ModelBundle::init(c, 0);
  m.beta = r.f64();
  m.delta = r.f64();
  m.lambda_weight = r.f64();
  m.normalizer.mean = r.f64();
  m.normalizer.scale = r.f64();
  for (double v : {m.beta, m.delta, m.lambda_weight, m.normalizer.mean, m.normalizer.scale}) {
    if (!std::isfinite(v)) invalid("non-finite hyperparameter");
  }
  if (m.beta < 0 || m.delta < 0 || m.lambda_weight < 0 || !(m.normalizer.scale > 0)) invalid("hyperparameter out of range");

  const std::size_t count = r.u32();
  auto targets = m.generator_parameters();
  const auto dis = m.discriminator_parameters();
  // all_parameters() order: encoder, decoder, estimator, discriminator, codebook.
  std::vector<Parameter*> ordered(targets.begin(), targets.end() - 1);
  ordered.insert(ordered.end(), dis.begin(), dis.end());
  ordered.push_back(targets.back());
  if (count != ordered.size()) invalid("parameter count does not match the architecture");
  for (auto* p : ordered) {
    const std::size_t len = r.u16();
    const auto name = r.bytes(len);
    if (std::string(name.begin(), name.end()) != p->name) invalid("unexpected parameter '" + std::string(name.begin(), name.end()) + "'");
    const std::size_t rank = r.u8();
    numerics::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != p->value.shape()) invalid("parameter '" + p->name + "' has shape " + numerics::to_string(shape));
    for (auto& v : p->value.values()) v = r.f32();
  }

  const std::size_t s = r.u32();
  const bool has_parent = r.u8() != 0;
  const std::uint64_t parent = r.u64();
  if (s < codec::kMinCodebookSize || s > codec::kMaxCodebookSize) invalid("active codebook size out of range");
  Tensor entries({s, c.embed_dim});
  for (auto& v : entries.values()) v = r.f32();
  try {
    m.set_codebook(codec::Codebook(std::move(entries), has_parent ? std::optional(parent) : std::nullopt));
  } catch (const std::exception& e) {
    invalid(e.what());
  }

  if (r.u8() != 0) m.transformer = recovery::IndexTransformer::read(r);
  if (r.remaining() != 0) invalid("trailing bytes after model body");
  return m;
}

void save_model(const ModelBundle& m, const std::filesystem::path& path) { io::write_file(path, encode_model(m)); }

ModelBundle load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

}  // namespace tinysense::models
