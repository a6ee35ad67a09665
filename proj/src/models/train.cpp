#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tinysense/models/model.hpp"

namespace tinysense::models {

namespace nx = numerics;

namespace {

// Dead codes are only restarted while there is training time left for the
// decoder to adapt to them.
constexpr double kRestartUntilFrac = 0.8;
constexpr std::size_t kPoolRows = 2048;

struct FrameTerms {
  VqLoss vq;
  Var keypoint;
  Var x_hat;
  std::vector<std::uint32_t> indices;
  Tensor z;
};

Tensor pose_tensor(const data::PoseLabel& pose) {
  Tensor y({1, 2 * pose.joints.size()});
  for (std::size_t j = 0; j < pose.joints.size(); ++j) {
    y[2 * j] = pose.joints[j].x;
    y[2 * j + 1] = pose.joints[j].y;
  }
  return y;
}

// Forward pass of one frame through encoder, quantizer, decoder and estimator.
FrameTerms forward_frame(const Binder& bind, const ModelBundle& m, const Tensor& x_norm, const data::PoseLabel& pose,
                         double beta) {
  Graph& g = bind.graph;
  const auto& c = m.config();
  const std::size_t cells = c.grid_rows() * c.grid_cols(), d = c.embed_dim;

  const Var x = g.constant(x_norm);
  const Var z = nx::reshape(encode(bind, m, x), {cells, d});
  FrameTerms t;
  t.z = z.value();
  std::vector<std::size_t> rows(cells);
  t.indices.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    t.indices[i] = codec::nearest(t.z.values().subspan(i * d, d), m.codebook_weights.value);
    rows[i] = t.indices[i];
  }
  const Var z_q = nx::gather_rows(bind(m.codebook_weights), rows);
  const Var z_st = nx::reshape(nx::straight_through(z, z_q), {c.grid_rows(), c.grid_cols(), d});
  t.x_hat = decode(bind, m, z_st);
  t.vq = vq_loss(x, t.x_hat, z, z_q, beta);
  t.keypoint = keypoint_loss(estimate(bind, m, z_st), g.constant(pose_tensor(pose)));
  return t;
}

// Replaces every latent cell by its nearest codebook row.
Tensor snap(const Tensor& z, const Tensor& book) {
  const std::size_t d = book.dim(1);
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.size() / d; ++i) {
    const auto k = codec::nearest(z.values().subspan(i * d, d), book);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = book.at(k, j);
  }
  return out;
}

double norm_of(const nx::GradientMap& grads, const Parameter* p) {
  const auto it = grads.find(p);
  return it == grads.end() ? 0.0 : std::sqrt(it->second.squared_norm());
}

void check_finite(double v, const char* what, const ModelBundle& last_good) {
  if (!std::isfinite(v)) throw TrainingDiverged(std::string("non-finite ") + what + " loss", last_good);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0) throw std::invalid_argument("epochs and batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(beta >= 0.0) || !(lambda_weight >= 0.0) || !(lambda_max >= 0.0) || !(delta >= 0.0)) {
    throw std::invalid_argument("beta, lambda_weight, lambda_max and delta must be >= 0");
  }
  if (!(disc_warmup_frac >= 0.0 && disc_warmup_frac <= 1.0)) {
    throw std::invalid_argument("disc_warmup_frac must lie in [0, 1]");
  }
  if (!(keypoint_weight >= 0.0)) throw std::invalid_argument("keypoint_weight must be >= 0");
}

void prepare(ModelBundle& m, const data::Dataset& ds, std::uint64_t seed) {
  if (ds.train_size == 0) throw std::invalid_argument("dataset has no training frames");
  if (ds.shape != m.config().frame) throw std::invalid_argument("dataset frame shape differs from the model");

  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.train_size; ++i) {
    for (double v : ds.frames[i].amplitude.values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(sq / static_cast<double>(n) - mean * mean, 0.0);
  m.normalizer = {mean, var > 0.0 ? std::sqrt(var) : 1.0};

  // The estimator starts at the mean training pose and learns offsets from it.
  Tensor& out_bias = m.estimator.back().bias.value;
  out_bias.fill(0.0);
  for (std::size_t i = 0; i < ds.train_size; ++i) {
    const Tensor y = pose_tensor(ds.labels[i]);
    for (std::size_t j = 0; j < out_bias.size(); ++j) out_bias[j] += y[j] / static_cast<double>(ds.train_size);
  }
  m.round_to_storage();

  // Seed the codebook with encoder outputs so every entry starts in the data.
  const std::size_t d = m.config().embed_dim, k = m.config().codebook_size;
  std::vector<double> rows;
  for (std::size_t i = 0; i < ds.train_size; ++i) {
    const Tensor z = encode_frame(m, ds.frames[i].amplitude);
    rows.insert(rows.end(), z.values().begin(), z.values().end());
  }
  const std::size_t available = rows.size() / d;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(available);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::normal_distribution<double> jitter(0.0, 1e-3);
  for (std::size_t e = 0; e < k; ++e) {
    const std::size_t src = order[e % available];
    for (std::size_t j = 0; j < d; ++j) {
      m.codebook_weights.value.at(e, j) = rows[src * d + j] + (e >= available ? jitter(rng) : 0.0);
    }
  }
  m.round_to_storage();
  m.reset_codebook();
}

std::vector<LossReport> train(ModelBundle& m, const data::Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.train_size == 0) throw std::invalid_argument("dataset has no training frames");
  if (ds.shape != m.config().frame) throw std::invalid_argument("dataset frame shape differs from the model");
  if (ds.joints != m.config().joints) throw std::invalid_argument("dataset joint count differs from the model");

  const bool learning = cfg.lr > 0.0;
  std::unique_ptr<nx::Optimizer> opt_g, opt_d;
  if (learning) {
    opt_g = nx::make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum);
    opt_d = nx::make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum);
  }
  m.beta = cfg.beta;
  m.delta = cfg.delta;
  m.lambda_weight = cfg.lambda_weight;

  std::vector<Tensor> inputs;
  inputs.reserve(ds.train_size);
  for (std::size_t i = 0; i < ds.train_size; ++i) inputs.push_back(normalize(m, ds.frames[i].amplitude));

  const auto gen_params = m.generator_parameters();
  const auto dis_params = m.discriminator_parameters();
  const Parameter* last_layer = &m.decoder.back().weight;
  const std::size_t disc_start = static_cast<std::size_t>(std::floor(cfg.disc_warmup_frac * static_cast<double>(cfg.epochs)));
  const std::size_t restart_until = static_cast<std::size_t>(kRestartUntilFrac * static_cast<double>(cfg.epochs));
  const std::size_t d = m.config().embed_dim, k = m.config().codebook_size;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(ds.train_size);
  std::iota(order.begin(), order.end(), 0);
  std::vector<LossReport> log;
  std::size_t adversarial_batches = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ModelBundle last_good = m;
    std::shuffle(order.begin(), order.end(), rng);
    LossReport rep;
    std::size_t g_frames = 0, d_frames = 0, gan_steps = 0;
    std::vector<bool> used(k, false);
    std::vector<double> pool;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      const bool adversarial = epoch >= disc_start && cfg.lambda_weight > 0.0;
      // After warm-up, generator and discriminator steps alternate so that no
      // minibatch updates both.
      const bool disc_step = adversarial && (adversarial_batches++ % 2 == 1);

      if (disc_step) {
        Graph g;
        const Binder bind{g, true};
        Graph frozen;
        frozen.set_grad_enabled(false);
        Var loss = g.constant(Tensor::scalar(0.0));
        for (std::size_t b = start; b < end; ++b) {
          const auto& x = inputs[order[b]];
          const Var z = encode(Binder{frozen, false}, m, frozen.constant(x));
          const Tensor x_hat = decode(Binder{frozen, false}, m, frozen.constant(snap(z.value(), m.codebook_weights.value))).value();
          const auto gan = gan_losses(discriminate(bind, m, g.constant(x)), discriminate(bind, m, g.constant(x_hat)));
          loss = loss + gan.disc;
        }
        loss = nx::scale(loss, inv_b);
        check_finite(loss.value().item(), "discriminator", last_good);
        rep.l_gan_d += loss.value().item() * static_cast<double>(end - start);
        d_frames += end - start;
        if (learning) {
          auto grads = g.backward(loss);
          try {
            opt_d->step(dis_params, grads);
          } catch (const nx::NonFiniteGradient& e) {
            throw TrainingDiverged(e.what(), last_good);
          }
        }
        continue;
      }

      Graph g;
      const Binder bind{g, true};
      Var objective = g.constant(Tensor::scalar(0.0));
      Var gen = g.constant(Tensor::scalar(0.0));
      for (std::size_t b = start; b < end; ++b) {
        auto t = forward_frame(bind, m, inputs[order[b]], ds.labels[order[b]], cfg.beta);
        objective = objective + t.vq.total + nx::scale(t.keypoint, cfg.keypoint_weight);
        rep.l_vq += t.vq.total.value().item();
        rep.l_rec += t.vq.rec.value().item();
        rep.l_codebook += t.vq.codebook.value().item();
        rep.l_commit += t.vq.commit.value().item();
        rep.l_keypoint += t.keypoint.value().item();
        if (adversarial) {
          // Non-saturating generator term; only the fake branch matters here.
          gen = gen + nx::scale(nx::mean(nx::log(discriminate(bind, m, t.x_hat))), -1.0);
        }
        for (auto i : t.indices) used[i] = true;
        pool.insert(pool.end(), t.z.values().begin(), t.z.values().end());
      }
      g_frames += end - start;
      objective = nx::scale(objective, inv_b);
      check_finite(objective.value().item(), "generator", last_good);

      nx::GradientMap grads;
      if (learning || adversarial) grads = g.backward(objective);
      if (adversarial) {
        gen = nx::scale(gen, inv_b);
        check_finite(gen.value().item(), "adversarial", last_good);
        rep.l_gan_g += gen.value().item() * static_cast<double>(end - start);
        auto gan_grads = g.backward(gen);
        const double lambda =
            adaptive_lambda(norm_of(grads, last_layer), norm_of(gan_grads, last_layer), cfg.delta);
        rep.lambda += lambda;
        ++gan_steps;
        const double w = cfg.lambda_weight * std::min(lambda, cfg.lambda_max);
        for (auto* p : gen_params) {
          const auto it = gan_grads.find(p);
          if (it == gan_grads.end()) continue;
          auto& dst = grads.try_emplace(p, Tensor(p->value.shape())).first->second;
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * it->second[i];
        }
      }
      if (learning) {
        try {
          opt_g->step(gen_params, grads);
        } catch (const nx::NonFiniteGradient& e) {
          throw TrainingDiverged(e.what(), last_good);
        }
      }
      if (pool.size() > kPoolRows * d) pool.erase(pool.begin(), pool.end() - static_cast<std::ptrdiff_t>(kPoolRows * d));
    }

    const auto gf = static_cast<double>(std::max<std::size_t>(g_frames, 1));
    rep.l_vq /= gf;
    rep.l_rec /= gf;
    rep.l_codebook /= gf;
    rep.l_commit /= gf;
    rep.l_keypoint /= gf;
    rep.l_gan_g /= gf;
    rep.l_gan_d /= static_cast<double>(std::max<std::size_t>(d_frames, 1));
    rep.lambda /= static_cast<double>(std::max<std::size_t>(gan_steps, 1));
    rep.codes_used = static_cast<std::size_t>(std::count(used.begin(), used.end(), true));

    if (learning && cfg.dead_code_restart && epoch < restart_until && !pool.empty()) {
      const std::size_t rows = pool.size() / d;
      std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
      for (std::size_t e = 0; e < k; ++e) {
        if (used[e]) continue;
        const std::size_t src = pick(rng);
        for (std::size_t j = 0; j < d; ++j) m.codebook_weights.value.at(e, j) = pool[src * d + j];
      }
    }

    log.push_back(rep);
    if (cfg.on_epoch) cfg.on_epoch(epoch, rep);
    if (!cfg.checkpoint.empty()) save_model(m, cfg.checkpoint);
  }

  if (learning) {
    m.round_to_storage();
    m.reset_codebook();
  }
  return log;
}

ModelBundle train_new(const data::Dataset& ds, const ModelConfig& model, const TrainConfig& config,
                      std::vector<LossReport>* log) {
  auto m = ModelBundle::init(model, config.seed);
  prepare(m, ds, config.seed);
  auto reports = train(m, ds, config);
  if (log) *log = std::move(reports);
  return m;
}

}  // namespace tinysense::models
