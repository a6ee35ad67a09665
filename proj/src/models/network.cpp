#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>

#include "tinysense/models/model.hpp"

namespace tinysense::models {

namespace nx = numerics;

namespace {

constexpr double kSlope = 0.2;
constexpr double kProbFloor = 1e-7;

ConvLayer make_conv(const std::string& name, std::size_t k, std::size_t cin, std::size_t cout, std::size_t stride,
                    std::size_t pad, bool transposed, std::mt19937_64& rng) {
  return {nx::make_parameter(name + ".w", {k, k, cin, cout}, k * k * cin, rng),
          nx::make_parameter(name + ".b", {cout}, k * k * cin, rng), stride, pad, transposed};
}

DenseLayer make_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {nx::make_parameter(name + ".w", {in, out}, in, rng), nx::make_parameter(name + ".b", {out}, in, rng)};
}

void round_tensor(Tensor& t) {
  for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

template <typename F>
void for_each_param(const ModelBundle& m, F&& f) {
  for (const auto& l : m.encoder) f(l.weight), f(l.bias);
  for (const auto& l : m.decoder) f(l.weight), f(l.bias);
  for (const auto& l : m.estimator) f(l.weight), f(l.bias);
  for (const auto& l : m.discriminator) f(l.weight), f(l.bias);
  f(m.codebook_weights);
}

}  // namespace

void ModelConfig::validate() const {
  if (downsample != 2 && downsample != 4 && downsample != 8) {
    throw std::invalid_argument("downsampling factor M must be 2, 4 or 8");
  }
  if (frame.freq == 0 || frame.time == 0 || frame.channels == 0) throw std::invalid_argument("frame extents must be >= 1");
  if (frame.freq % 8 || frame.time % 8) {
    throw std::invalid_argument("F and T must be multiples of 8 (patch discriminator) and of M");
  }
  if (embed_dim == 0 || joints == 0 || width == 0) throw std::invalid_argument("embed_dim, joints and width must be >= 1");
  if (codebook_size < codec::kMinCodebookSize || codebook_size > codec::kMaxCodebookSize) {
    throw std::invalid_argument("codebook_size must lie in [2, 1024]");
  }
}

ModelBundle ModelBundle::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t c = config.frame.channels, w = config.width, d = config.embed_dim;
  const auto layers = static_cast<std::size_t>(std::countr_zero(config.downsample));

  // Codebook first so its draw does not depend on the layer count.
  const double bound = 1.0 / static_cast<double>(config.codebook_size);
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor book({config.codebook_size, d});
  for (auto& v : book.values()) v = u(rng);

  ModelBundle m(config, codec::Codebook(book));
  m.codebook_weights = {"codebook", book};

  std::size_t cin = c;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::size_t cout = w << i;
    m.encoder.push_back(make_conv("enc." + std::to_string(i), 4, cin, cout, 2, 1, false, rng));
    cin = cout;
  }
  m.encoder.push_back(make_conv("enc.proj", 1, cin, d, 1, 0, false, rng));

  m.decoder.push_back(make_conv("dec.proj", 1, d, cin, 1, 0, false, rng));
  for (std::size_t i = layers; i-- > 0;) {
    const std::size_t cout = i > 0 ? (w << (i - 1)) : c;
    m.decoder.push_back(make_conv("dec." + std::to_string(layers - 1 - i), 4, w << i, cout, 2, 1, true, rng));
  }

  const std::size_t cells = config.grid_rows() * config.grid_cols();
  m.estimator.push_back(make_dense("est.0", d, 4, rng));
  m.estimator.push_back(make_dense("est.1", cells * 4, 32, rng));
  m.estimator.push_back(make_dense("est.2", 32, 2 * config.joints, rng));

  m.discriminator.push_back(make_conv("dis.0", 4, c, w, 2, 1, false, rng));
  m.discriminator.push_back(make_conv("dis.1", 4, w, 2 * w, 2, 1, false, rng));
  m.discriminator.push_back(make_conv("dis.2", 4, 2 * w, 1, 2, 1, false, rng));

  m.round_to_storage();
  return m;
}

void ModelBundle::set_codebook(codec::Codebook cb) {
  if (cb.dim() != config_.embed_dim) throw std::invalid_argument("codebook dimension differs from the model's D");
  active_ = std::move(cb);
  if (transformer && transformer->codebook_id != active_.id()) transformer.reset();
}

void ModelBundle::reset_codebook() { active_ = codec::Codebook(codebook_weights.value); }

void ModelBundle::resize_codebook(std::size_t size, const codec::KMeansOptions& options) {
  const codec::Codebook parent(codebook_weights.value);
  if (size == parent.size()) {
    active_ = parent;
  } else {
    active_ = codec::kmeans_resize(parent, size, options).codebook;
  }
  if (transformer && transformer->codebook_id != active_.id()) transformer.reset();
}

std::vector<Parameter*> ModelBundle::generator_parameters() {
  std::vector<Parameter*> out;
  for (auto* group : {&encoder, &decoder}) {
    for (auto& l : *group) out.insert(out.end(), {&l.weight, &l.bias});
  }
  for (auto& l : estimator) out.insert(out.end(), {&l.weight, &l.bias});
  out.push_back(&codebook_weights);
  return out;
}

std::vector<Parameter*> ModelBundle::discriminator_parameters() {
  std::vector<Parameter*> out;
  for (auto& l : discriminator) out.insert(out.end(), {&l.weight, &l.bias});
  return out;
}

std::vector<const Parameter*> ModelBundle::all_parameters() const {
  std::vector<const Parameter*> out;
  for_each_param(*this, [&](const Parameter& p) { out.push_back(&p); });
  return out;
}

void ModelBundle::round_to_storage() {
  for (auto* p : generator_parameters()) round_tensor(p->value);
  for (auto* p : discriminator_parameters()) round_tensor(p->value);
  normalizer.mean = static_cast<float>(normalizer.mean);
  normalizer.scale = static_cast<float>(normalizer.scale);
  if (transformer) transformer->round_to_storage();
}

bool operator==(const ModelBundle& a, const ModelBundle& b) {
  if (!(a.config_ == b.config_) || !(a.active_ == b.active_)) return false;
  if (a.normalizer.mean != b.normalizer.mean || a.normalizer.scale != b.normalizer.scale) return false;
  if (a.beta != b.beta || a.delta != b.delta || a.lambda_weight != b.lambda_weight) return false;
  if (a.transformer.has_value() != b.transformer.has_value()) return false;
  if (a.transformer && !(*a.transformer == *b.transformer)) return false;
  const auto pa = a.all_parameters(), pb = b.all_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->name != pb[i]->name || !(pa[i]->value == pb[i]->value)) return false;
  }
  return true;
}

// The graph only reads a bound parameter and keys its gradient by address,
// so binding through a const reference is safe.
Var Binder::operator()(const Parameter& p) const {
  return trainable ? graph.param(const_cast<Parameter&>(p)) : graph.constant(p.value);
}

Var apply(const Binder& bind, const ConvLayer& layer, Var x) {
  const Var w = bind(layer.weight);
  const Var y = layer.transposed ? nx::conv_transpose2d(x, w, layer.stride, layer.pad)
                                 : nx::conv2d(x, w, layer.stride, layer.pad);
  return y + bind(layer.bias);
}

Var apply(const Binder& bind, const DenseLayer& layer, Var x) {
  return nx::matmul(x, bind(layer.weight)) + bind(layer.bias);
}

Var encode(const Binder& bind, const ModelBundle& m, Var x) {
  const auto& shape = x.shape();
  if (shape.size() != 3 || shape[0] != m.config().frame.freq || shape[1] != m.config().frame.time ||
      shape[2] != m.config().frame.channels) {
    nx::shape_mismatch("encode", shape,
                       {m.config().frame.freq, m.config().frame.time, m.config().frame.channels});
  }
  for (std::size_t i = 0; i + 1 < m.encoder.size(); ++i) x = nx::leaky_relu(apply(bind, m.encoder[i], x), kSlope);
  return apply(bind, m.encoder.back(), x);
}

Var decode(const Binder& bind, const ModelBundle& m, Var z) {
  const auto& c = m.config();
  const nx::Shape want{c.grid_rows(), c.grid_cols(), c.embed_dim};
  if (z.shape() != want) nx::shape_mismatch("decode", z.shape(), want);
  for (std::size_t i = 0; i + 1 < m.decoder.size(); ++i) z = nx::leaky_relu(apply(bind, m.decoder[i], z), kSlope);
  return apply(bind, m.decoder.back(), z);
}

Var estimate(const Binder& bind, const ModelBundle& m, Var z) {
  const auto& c = m.config();
  const nx::Shape want{c.grid_rows(), c.grid_cols(), c.embed_dim};
  if (z.shape() != want) nx::shape_mismatch("estimate", z.shape(), want);
  const std::size_t cells = c.grid_rows() * c.grid_cols();
  Var h = nx::leaky_relu(apply(bind, m.estimator[0], nx::reshape(z, {cells, c.embed_dim})), kSlope);
  h = nx::leaky_relu(apply(bind, m.estimator[1], nx::reshape(h, {1, cells * 4})), kSlope);
  return apply(bind, m.estimator[2], h);
}

Var discriminate(const Binder& bind, const ModelBundle& m, Var x) {
  for (std::size_t i = 0; i + 1 < m.discriminator.size(); ++i) {
    x = nx::leaky_relu(apply(bind, m.discriminator[i], x), kSlope);
  }
  return nx::clamp(nx::sigmoid(apply(bind, m.discriminator.back(), x)), kProbFloor, 1.0 - kProbFloor);
}

VqLoss vq_loss(Var x, Var x_hat, Var z, Var z_q, double beta) {
  VqLoss l;
  l.rec = nx::sum(nx::square(x - x_hat));
  l.codebook = nx::sum(nx::square(nx::stop_gradient(z) - z_q));
  l.commit = nx::scale(nx::sum(nx::square(nx::stop_gradient(z_q) - z)), beta);
  l.total = l.rec + l.codebook + l.commit;
  return l;
}

GanLoss gan_losses(Var p_real, Var p_fake) {
  GanLoss l;
  const Var one_minus_fake = nx::add_scalar(nx::scale(p_fake, -1.0), 1.0);
  l.objective = nx::mean(nx::log(p_real)) + nx::mean(nx::log(one_minus_fake));
  l.disc = nx::scale(l.objective, -1.0);
  l.gen = nx::scale(nx::mean(nx::log(p_fake)), -1.0);
  return l;
}

Var keypoint_loss(Var predicted, Var target) { return nx::sum(nx::square(predicted - target)); }

double adaptive_lambda(double rec_grad_norm, double gan_grad_norm, double delta) {
  if (!(rec_grad_norm >= 0.0) || !(gan_grad_norm >= 0.0) || !(delta >= 0.0)) {
    throw std::invalid_argument("adaptive_lambda needs non-negative norms and delta");
  }
  if (rec_grad_norm == 0.0) return 0.0;
  return rec_grad_norm / (gan_grad_norm + delta);
}

Tensor normalize(const ModelBundle& m, const Tensor& amplitude) {
  Tensor out = amplitude;
  for (auto& v : out.values()) v = (v - m.normalizer.mean) / m.normalizer.scale;
  return out;
}

Tensor denormalize(const ModelBundle& m, const Tensor& normalized) {
  Tensor out = normalized;
  for (auto& v : out.values()) v = v * m.normalizer.scale + m.normalizer.mean;
  return out;
}

Tensor encode_frame(const ModelBundle& m, const Tensor& amplitude) {
  Graph g;
  g.set_grad_enabled(false);
  return encode(Binder{g, false}, m, g.constant(normalize(m, amplitude))).value();
}

codec::IndexMap compress(const ModelBundle& m, const data::CsiFrame& frame) {
  auto q = codec::quantize(encode_frame(m, frame.amplitude), m.codebook());
  q.indices.frame_id = frame.frame_id;
  return std::move(q.indices);
}

Tensor decode_latent(const ModelBundle& m, const Tensor& z_q) {
  Graph g;
  g.set_grad_enabled(false);
  return denormalize(m, decode(Binder{g, false}, m, g.constant(z_q)).value());
}

Tensor decompress(const ModelBundle& m, const codec::IndexMap& map) {
  return decode_latent(m, codec::dequantize(map, m.codebook()));
}

data::PoseLabel estimate_pose(const ModelBundle& m, const Tensor& z_q) {
  Graph g;
  g.set_grad_enabled(false);
  const Tensor out = estimate(Binder{g, false}, m, g.constant(z_q)).value();
  data::PoseLabel pose;
  for (std::size_t j = 0; j < m.config().joints; ++j) pose.joints.push_back({out[2 * j], out[2 * j + 1]});
  return pose;
}

}  // namespace tinysense::models
