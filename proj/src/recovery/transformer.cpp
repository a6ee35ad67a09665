#include "tinysense/recovery/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tinysense/numerics/optim.hpp"

namespace tinysense::recovery {

namespace nx = numerics;
using nx::Graph;
using nx::Var;

std::vector<bool> mask_positions(std::size_t n, const MaskSpec& spec) {
  if (!(spec.alpha >= 0.0 && spec.alpha <= 1.0)) throw std::invalid_argument("mask ratio alpha must lie in [0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(spec.alpha * static_cast<double>(n)));
  std::vector<std::size_t> all(n), chosen;
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(spec.seed);
  std::sample(all.begin(), all.end(), std::back_inserter(chosen), count, rng);
  std::vector<bool> mask(n, false);
  for (auto i : chosen) mask[i] = true;
  return mask;
}

codec::IndexMap apply_mask(const codec::IndexMap& map, const MaskSpec& spec) {
  if (map.lost_count() != 0) throw std::invalid_argument("apply_mask expects a map without lost cells");
  const auto mask = mask_positions(map.size(), spec);
  codec::IndexMap out = map;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out.cells[i] = codec::kLost;
  }
  return out;
}

void TransformerConfig::validate() const {
  if (vocab < codec::kMinCodebookSize || vocab > codec::kMaxCodebookSize) {
    throw std::invalid_argument("transformer vocabulary must lie in [2, 1024]");
  }
  if (window < 1 || window > 7) throw std::invalid_argument("window P must lie in [1, 7]");
  if (heads == 0 || width == 0 || width % heads != 0) throw std::invalid_argument("width must be a multiple of heads");
  if (blocks == 0) throw std::invalid_argument("transformer needs at least one block");
}

IndexTransformer IndexTransformer::init(const TransformerConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = c.width, dh = d / c.heads;
  IndexTransformer t(c);
  t.token_embedding = nx::make_parameter("tok", {c.vocab + 2, d}, d, rng);
  t.position_embedding = nx::make_parameter("pos", {c.tokens(), d}, d, rng);
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string p = "blk" + std::to_string(b) + ".";
    Block blk;
    blk.ln1_gain = {p + "ln1.g", Tensor::ones({d})};
    blk.ln1_bias = {p + "ln1.b", Tensor({d})};
    for (std::size_t h = 0; h < c.heads; ++h) {
      const std::string hp = p + "h" + std::to_string(h) + ".";
      blk.wq.push_back(nx::make_parameter(hp + "q", {d, dh}, d, rng));
      blk.wk.push_back(nx::make_parameter(hp + "k", {d, dh}, d, rng));
      blk.wv.push_back(nx::make_parameter(hp + "v", {d, dh}, d, rng));
      blk.wo.push_back(nx::make_parameter(hp + "o", {dh, d}, d, rng));
    }
    blk.out_bias = {p + "o.b", Tensor({d})};
    blk.ln2_gain = {p + "ln2.g", Tensor::ones({d})};
    blk.ln2_bias = {p + "ln2.b", Tensor({d})};
    blk.w1 = nx::make_parameter(p + "mlp1.w", {d, 2 * d}, d, rng);
    blk.b1 = {p + "mlp1.b", Tensor({2 * d})};
    blk.w2 = nx::make_parameter(p + "mlp2.w", {2 * d, d}, 2 * d, rng);
    blk.b2 = {p + "mlp2.b", Tensor({d})};
    t.blocks.push_back(std::move(blk));
  }
  t.final_gain = {"final.g", Tensor::ones({d})};
  t.final_bias = {"final.b", Tensor({d})};
  t.head_weight = nx::make_parameter("head.w", {d, c.vocab}, d, rng);
  t.head_bias = {"head.b", Tensor({c.vocab})};
  t.round_to_storage();
  return t;
}

std::vector<Parameter*> IndexTransformer::parameters() {
  std::vector<Parameter*> out{&token_embedding, &position_embedding};
  for (auto& b : blocks) {
    out.insert(out.end(), {&b.ln1_gain, &b.ln1_bias});
    for (auto* group : {&b.wq, &b.wk, &b.wv, &b.wo})
      for (auto& p : *group) out.push_back(&p);
    out.insert(out.end(), {&b.out_bias, &b.ln2_gain, &b.ln2_bias, &b.w1, &b.b1, &b.w2, &b.b2});
  }
  out.insert(out.end(), {&final_gain, &final_bias, &head_weight, &head_bias});
  return out;
}

std::vector<const Parameter*> IndexTransformer::parameters() const {
  auto mut = const_cast<IndexTransformer*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

void IndexTransformer::round_to_storage() {
  for (auto* p : parameters())
    for (auto& v : p->value.values()) v = static_cast<double>(static_cast<float>(v));
}

bool operator==(const IndexTransformer& a, const IndexTransformer& b) {
  if (!(a.config_ == b.config_) || a.codebook_id != b.codebook_id) return false;
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!(pa[i]->value == pb[i]->value)) return false;
  }
  return true;
}

namespace {

Var affine_norm(Var x, Var gain, Var bias) { return nx::layer_norm(x) * gain + bias; }

}  // namespace

Var IndexTransformer::forward(Graph& g, std::span<const std::uint32_t> tokens, bool trainable) const {
  const std::size_t t = config_.tokens();
  if (tokens.empty() || tokens.size() % t != 0) throw std::invalid_argument("token count is not a multiple of P*P");
  const std::size_t batch = tokens.size() / t;
  // The graph only reads bound parameters; gradients are keyed by address.
  auto bind = [&](const Parameter& p) {
    return trainable ? g.param(const_cast<Parameter&>(p)) : g.constant(p.value);
  };

  std::vector<std::size_t> tok(tokens.begin(), tokens.end()), pos(tokens.size()), centers(batch);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tok[i] >= config_.vocab + 2) throw std::invalid_argument("token outside the vocabulary");
    pos[i] = i % t;
  }
  const std::size_t center = config_.center() * config_.window + config_.center();
  for (std::size_t b = 0; b < batch; ++b) centers[b] = b * t + center;

  Var x = nx::gather_rows(bind(token_embedding), tok) + nx::gather_rows(bind(position_embedding), pos);
  for (const auto& blk : blocks) {
    const Var h = affine_norm(x, bind(blk.ln1_gain), bind(blk.ln1_bias));
    Var attn = bind(blk.out_bias);
    bool first = true;
    for (std::size_t head = 0; head < config_.heads; ++head) {
      const Var q = nx::matmul(h, bind(blk.wq[head]));
      const Var k = nx::matmul(h, bind(blk.wk[head]));
      const Var v = nx::matmul(h, bind(blk.wv[head]));
      const Var o = nx::matmul(nx::grouped_attention(q, k, v, t), bind(blk.wo[head]));
      attn = first ? o + attn : attn + o;
      first = false;
    }
    x = x + attn;
    const Var h2 = affine_norm(x, bind(blk.ln2_gain), bind(blk.ln2_bias));
    x = x + (nx::matmul(nx::relu(nx::matmul(h2, bind(blk.w1)) + bind(blk.b1)), bind(blk.w2)) + bind(blk.b2));
  }
  const Var c = affine_norm(nx::gather_rows(x, centers), bind(final_gain), bind(final_bias));
  return nx::log_softmax(nx::matmul(c, bind(head_weight)) + bind(head_bias));
}

void IndexTransformer::write(io::ByteWriter& w) const {
  w.u32(static_cast<std::uint32_t>(config_.vocab));
  w.u32(static_cast<std::uint32_t>(config_.window));
  w.u32(static_cast<std::uint32_t>(config_.width));
  w.u32(static_cast<std::uint32_t>(config_.heads));
  w.u32(static_cast<std::uint32_t>(config_.blocks));
  w.u64(codebook_id);
  for (const auto* p : parameters())
    for (double v : p->value.values()) w.f32(static_cast<float>(v));
}

IndexTransformer IndexTransformer::read(io::ByteReader& r) {
  TransformerConfig c;
  c.vocab = r.u32();
  c.window = r.u32();
  c.width = r.u32();
  c.heads = r.u32();
  c.blocks = r.u32();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(io::FormatErrorKind::invalid_field, e.what());
  }
  if (c.width > 1024 || c.blocks > 64) throw io::FormatError(io::FormatErrorKind::invalid_field, "transformer too large");
  auto t = init(c, 0);
  t.codebook_id = r.u64();
  for (auto* p : t.parameters())
    for (auto& v : p->value.values()) v = r.f32();
  return t;
}

std::vector<std::uint32_t> window_tokens(const codec::IndexMap& map, std::size_t row, std::size_t col,
                                         const TransformerConfig& c) {
  const auto mask = static_cast<std::uint32_t>(c.vocab);
  const auto pad = static_cast<std::uint32_t>(c.vocab + 1);
  std::vector<std::uint32_t> out;
  out.reserve(c.tokens());
  for (std::size_t dr = 0; dr < c.window; ++dr) {
    for (std::size_t dc = 0; dc < c.window; ++dc) {
      const auto r = static_cast<std::ptrdiff_t>(row + dr) - static_cast<std::ptrdiff_t>(c.center());
      const auto k = static_cast<std::ptrdiff_t>(col + dc) - static_cast<std::ptrdiff_t>(c.center());
      if (r < 0 || k < 0 || r >= static_cast<std::ptrdiff_t>(map.rows) || k >= static_cast<std::ptrdiff_t>(map.cols)) {
        out.push_back(pad);
        continue;
      }
      const auto v = map.at(static_cast<std::size_t>(r), static_cast<std::size_t>(k));
      if ((dr == c.center() && dc == c.center()) || v == codec::kLost) {
        out.push_back(mask);
      } else {
        if (v >= c.vocab) throw std::invalid_argument("index " + std::to_string(v) + " outside the transformer vocabulary");
        out.push_back(v);
      }
    }
  }
  return out;
}

namespace {

void check_compatible(const IndexTransformer& t, const codec::IndexMap& map) {
  if (t.config().window > map.rows || t.config().window > map.cols) {
    throw std::invalid_argument("recovery window is larger than the index grid");
  }
  if (map.codebook_id != 0 && t.codebook_id != 0 && map.codebook_id != t.codebook_id) {
    throw std::invalid_argument("index map and transformer were built for different codebooks");
  }
}

}  // namespace

Tensor predict(const IndexTransformer& t, const codec::IndexMap& map, std::size_t row, std::size_t col) {
  Graph g;
  g.set_grad_enabled(false);
  const auto tokens = window_tokens(map, row, col, t.config());
  Tensor p = t.forward(g, tokens, false).value();
  for (auto& v : p.values()) v = std::exp(v);
  return p.reshaped({t.config().vocab});
}

codec::IndexMap recover(const codec::IndexMap& lost, const IndexTransformer& t, RecoverMode mode, std::uint64_t seed) {
  codec::IndexMap out = lost;
  if (lost.lost_count() == 0) return out;
  check_compatible(t, lost);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t c = 0; c < out.cols; ++c) {
      if (out.at(r, c) != codec::kLost) continue;
      const Tensor p = predict(t, out, r, c);
      std::size_t pick = 0;
      if (mode == RecoverMode::argmax) {
        pick = static_cast<std::size_t>(std::max_element(p.values().begin(), p.values().end()) - p.values().begin());
      } else {
        double target = u(rng), acc = 0.0;
        pick = p.size() - 1;
        for (std::size_t k = 0; k < p.size(); ++k) {
          acc += p[k];
          if (target < acc) {
            pick = k;
            break;
          }
        }
      }
      out.at(r, c) = static_cast<std::uint32_t>(pick);
    }
  }
  return out;
}

namespace {

// Raster-later cells are hidden with probability `hide`; earlier cells stay.
std::vector<std::uint32_t> training_window(const codec::IndexMap& map, std::size_t row, std::size_t col,
                                           const TransformerConfig& c, double hide, std::mt19937_64& rng) {
  auto tokens = window_tokens(map, row, col, c);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto mask = static_cast<std::uint32_t>(c.vocab);
  for (std::size_t dr = 0; dr < c.window; ++dr) {
    for (std::size_t dc = 0; dc < c.window; ++dc) {
      const bool later = dr > c.center() || (dr == c.center() && dc > c.center());
      auto& tok = tokens[dr * c.window + dc];
      if (later && tok < c.vocab && u(rng) < hide) tok = mask;
    }
  }
  return tokens;
}

Var picked_nll(Graph& g, Var logp, std::span<const std::uint32_t> targets) {
  const std::size_t s = logp.shape()[1];
  Tensor onehot({targets.size(), s});
  for (std::size_t i = 0; i < targets.size(); ++i) onehot.at(i, targets[i]) = 1.0;
  return nx::scale(nx::sum(logp * g.constant(onehot)), -1.0 / static_cast<double>(targets.size()));
}

}  // namespace

IndexTransformer train_transformer(std::span<const codec::IndexMap> maps, const TransformerConfig& config,
                                   const TransformerTrainConfig& train) {
  config.validate();
  if (maps.empty()) throw std::invalid_argument("no index maps to train on");
  for (const auto& m : maps) {
    if (m.lost_count() != 0) throw std::invalid_argument("training maps must not contain lost cells");
    for (auto v : m.cells) {
      if (v >= config.vocab) throw std::invalid_argument("index map uses codes outside the transformer vocabulary");
    }
    if (m.rows != maps[0].rows || m.cols != maps[0].cols) throw std::invalid_argument("index maps differ in size");
  }
  if (train.steps == 0 || train.batch_size == 0 || !(train.lr > 0.0)) {
    throw std::invalid_argument("steps, batch_size and lr must be positive");
  }

  auto t = IndexTransformer::init(config, train.seed);
  t.codebook_id = maps[0].codebook_id;
  std::mt19937_64 rng(train.seed ^ 0x5bd1e995ull);
  std::uniform_int_distribution<std::size_t> pick_map(0, maps.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_cell(0, maps[0].size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nx::Adam opt(train.lr);
  const auto params = t.parameters();

  for (std::size_t step = 0; step < train.steps; ++step) {
    std::vector<std::uint32_t> tokens, targets;
    for (std::size_t b = 0; b < train.batch_size; ++b) {
      const auto& m = maps[pick_map(rng)];
      const std::size_t cell = pick_cell(rng);
      const double alpha = 1.0 - u(rng);  // (0, 1]
      const auto w = training_window(m, cell / m.cols, cell % m.cols, config, alpha, rng);
      tokens.insert(tokens.end(), w.begin(), w.end());
      targets.push_back(m.cells[cell]);
    }
    Graph g;
    const Var loss = picked_nll(g, t.forward(g, tokens, true), targets);
    opt.step(params, g.backward(loss));
    if (train.on_progress && (step + 1) % 100 == 0) train.on_progress(step + 1, loss.value().item());
  }
  t.round_to_storage();
  return t;
}

double heldout_nll(const IndexTransformer& t, std::span<const codec::IndexMap> maps) {
  double total = 0.0;
  std::size_t count = 0;
  std::mt19937_64 unused(0);
  for (const auto& m : maps) {
    std::vector<std::uint32_t> tokens;
    for (std::size_t r = 0; r < m.rows; ++r) {
      for (std::size_t c = 0; c < m.cols; ++c) {
        const auto w = training_window(m, r, c, t.config(), 1.0, unused);
        tokens.insert(tokens.end(), w.begin(), w.end());
      }
    }
    Graph g;
    g.set_grad_enabled(false);
    const double nll = picked_nll(g, t.forward(g, tokens, false), m.cells).value().item();
    total += nll * static_cast<double>(m.size());
    count += m.size();
  }
  if (count == 0) throw std::invalid_argument("no index maps to evaluate");
  return total / static_cast<double>(count);
}

}  // namespace tinysense::recovery
