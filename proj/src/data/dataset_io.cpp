#include "tinysense/data/csi.hpp"
#include "tinysense/io/binary.hpp"

namespace tinysense::data {

namespace {
constexpr std::string_view kMagic = "TSDS";
constexpr std::uint16_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  if (ds.frames.size() != ds.labels.size()) throw std::invalid_argument("dataset frames/labels length mismatch");
  if (ds.train_size > ds.frames.size()) throw std::invalid_argument("train split larger than dataset");
  io::ByteWriter w;
  w.tag(kMagic);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(ds.frames.size()));
  w.u32(static_cast<std::uint32_t>(ds.shape.freq));
  w.u32(static_cast<std::uint32_t>(ds.shape.time));
  w.u32(static_cast<std::uint32_t>(ds.shape.channels));
  w.u32(static_cast<std::uint32_t>(ds.joints));
  w.u32(static_cast<std::uint32_t>(ds.train_size));
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const auto& f = ds.frames[i];
    if (f.shape() != ds.shape) throw std::invalid_argument("frame shape differs from dataset shape");
    if (ds.labels[i].joints.size() != ds.joints) throw std::invalid_argument("label joint count differs");
    w.u32(f.frame_id);
    w.u32(f.activity);
    w.f32(static_cast<float>(f.sample_rate_hz));
    for (double v : f.amplitude.values()) w.f32(static_cast<float>(v));
    for (const auto& j : ds.labels[i].joints) {
      w.f32(static_cast<float>(j.x));
      w.f32(static_cast<float>(j.y));
    }
  }
  w.append_crc();
  return std::move(w).take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  auto r = io::open_container(bytes, kMagic, kVersion);
  Dataset ds;
  const std::size_t count = r.u32();
  ds.shape.freq = r.u32();
  ds.shape.time = r.u32();
  ds.shape.channels = r.u32();
  ds.joints = r.u32();
  ds.train_size = r.u32();
  if (ds.shape.elements() == 0 || ds.joints == 0) {
    throw io::FormatError(io::FormatErrorKind::invalid_field, "zero dataset extent");
  }
  if (ds.train_size > count) throw io::FormatError(io::FormatErrorKind::invalid_field, "train split exceeds count");
  const std::size_t per_frame = 12 + 4 * ds.shape.elements() + 8 * ds.joints;
  if (r.remaining() != count * per_frame) {
    throw io::FormatError(io::FormatErrorKind::truncated, "body length does not match declared frame count");
  }
  ds.frames.reserve(count);
  ds.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    CsiFrame f{numerics::Tensor({ds.shape.freq, ds.shape.time, ds.shape.channels}), 0, 0.0, 0};
    f.frame_id = r.u32();
    f.activity = r.u32();
    f.sample_rate_hz = r.f32();
    for (auto& v : f.amplitude.values()) v = r.f32();
    PoseLabel p;
    p.joints.resize(ds.joints);
    for (auto& j : p.joints) {
      j.x = r.f32();
      j.y = r.f32();
    }
    ds.frames.push_back(std::move(f));
    ds.labels.push_back(std::move(p));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  io::write_file(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

}  // namespace tinysense::data
