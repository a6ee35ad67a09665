#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "tinysense/io/binary.hpp"
#include "tinysense/models/model.hpp"

using namespace tinysense;
using models::ModelBundle;
using models::ModelConfig;
using numerics::Graph;
using numerics::Parameter;
using numerics::Tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.frame = {16, 16, 2};
  c.embed_dim = 4;
  c.codebook_size = 8;
  c.width = 4;
  return c;
}

data::Dataset small_dataset(std::size_t frames = 12) {
  data::DatasetConfig dc;
  dc.frames = frames;
  dc.shape = {16, 16, 2};
  return data::generate_dataset(dc);
}

Tensor filled(numerics::Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = g(rng);
  return t;
}

// A parameter with no path to the loss has no entry; read that as zero.
double grad_at(const numerics::GradientMap& g, const Parameter& p, std::size_t i) {
  const auto it = g.find(&p);
  return it == g.end() ? 0.0 : it->second[i];
}

bool all_finite(const ModelBundle& m) {
  for (const auto* p : m.all_parameters())
    if (!p->value.all_finite()) return false;
  return true;
}

}  // namespace

TEST(ModelConfig, RejectsUnsupportedShapes) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.downsample = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.frame.freq = 20;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Network, DefaultShapes) {
  const auto m = ModelBundle::init(ModelConfig{}, 3);
  Graph g;
  g.set_grad_enabled(false);
  const models::Binder bind{g, false};
  const auto x = g.constant(Tensor({32, 64, 3}, 0.5));
  const auto z = models::encode(bind, m, x);
  EXPECT_EQ(z.shape(), (numerics::Shape{8, 16, 16}));
  EXPECT_EQ(models::decode(bind, m, z).shape(), (numerics::Shape{32, 64, 3}));
  EXPECT_EQ(models::estimate(bind, m, z).shape(), (numerics::Shape{1, 16}));
  const auto p = models::discriminate(bind, m, x);
  EXPECT_EQ(p.shape(), (numerics::Shape{4, 8, 1}));
  for (double v : p.value().values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Network, ZeroFinalLayerGivesZeroLatent) {
  auto m = ModelBundle::init(ModelConfig{}, 4);
  m.encoder.back().weight.value.fill(0.0);
  m.encoder.back().bias.value.fill(0.0);
  const Tensor z = models::encode_frame(m, Tensor({32, 64, 3}, 0.0));
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Network, InitIsDeterministic) {
  EXPECT_TRUE(ModelBundle::init(small_config(), 9) == ModelBundle::init(small_config(), 9));
  EXPECT_FALSE(ModelBundle::init(small_config(), 9) == ModelBundle::init(small_config(), 10));
}

TEST(Losses, VqLossWorkedExample) {
  Graph g;
  const auto x = g.constant(Tensor({2}, std::vector<double>{1.0, 2.0}));
  const auto xh = g.constant(Tensor({2}, 0.0));
  const auto z = g.constant(Tensor({2}, std::vector<double>{1.0, 0.0}));
  const auto zq = g.constant(Tensor({2}, 0.0));
  const auto l = models::vq_loss(x, xh, z, zq, 0.25);
  EXPECT_DOUBLE_EQ(l.rec.value().item(), 5.0);
  EXPECT_DOUBLE_EQ(l.codebook.value().item(), 1.0);
  EXPECT_DOUBLE_EQ(l.commit.value().item(), 0.25);
  EXPECT_DOUBLE_EQ(l.total.value().item(), 6.25);
}

TEST(Losses, VqLossMatchesScalarFormula) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const double beta = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    const Tensor x = filled({3, 4}, rng), xh = filled({3, 4}, rng), z = filled({5}, rng), zq = filled({5}, rng);
    double rec = 0, diff = 0;
    for (std::size_t i = 0; i < x.size(); ++i) rec += (x[i] - xh[i]) * (x[i] - xh[i]);
    for (std::size_t i = 0; i < z.size(); ++i) diff += (z[i] - zq[i]) * (z[i] - zq[i]);
    Graph g;
    const auto l = models::vq_loss(g.constant(x), g.constant(xh), g.constant(z), g.constant(zq), beta);
    EXPECT_NEAR(l.total.value().item(), rec + (1 + beta) * diff, 1e-9);
  }
}

TEST(Losses, StopGradientsRouteEachTerm) {
  Parameter z{"z", Tensor({1, 3}, std::vector<double>{0.5, -1.0, 2.0})};
  Parameter zq{"zq", Tensor({1, 3}, std::vector<double>{0.0, 1.0, 1.5})};
  const double beta = 0.25;
  Graph g;
  const auto x = g.constant(Tensor({1}, 0.0));
  const auto l = models::vq_loss(x, x, g.param(z), g.param(zq), beta);

  const auto cb = g.backward(l.codebook);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(grad_at(cb, z, i), 0.0);
    EXPECT_NEAR(grad_at(cb, zq, i), 2.0 * (zq.value[i] - z.value[i]), 1e-12);
  }
  const auto cm = g.backward(l.commit);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(grad_at(cm, zq, i), 0.0);
    EXPECT_NEAR(grad_at(cm, z, i), 2.0 * beta * (z.value[i] - zq.value[i]), 1e-12);
  }
}

TEST(Losses, StraightThroughPassesDecoderGradientToEncoder) {
  auto m = ModelBundle::init(small_config(), 2);
  const auto ds = small_dataset(4);
  Graph g;
  const models::Binder bind{g, true};
  const auto x = g.constant(models::normalize(m, ds.frames[0].amplitude));
  const auto z = models::encode(bind, m, x);
  const auto zq = g.constant(Tensor(z.shape(), 0.1));
  const auto xh = models::decode(bind, m, numerics::straight_through(z, zq));
  const auto grads = g.backward(numerics::sum(numerics::square(x - xh)));
  EXPECT_GT(grads.at(&m.encoder.front().weight).squared_norm(), 0.0);
}

TEST(Losses, GanClosedFormAtHalf) {
  Graph g;
  const auto half = g.constant(Tensor({4, 8, 1}, 0.5));
  const auto l = models::gan_losses(half, half);
  EXPECT_NEAR(l.objective.value().item(), 2.0 * std::log(0.5), 1e-9);
  EXPECT_NEAR(l.disc.value().item(), -2.0 * std::log(0.5), 1e-9);
  EXPECT_NEAR(l.gen.value().item(), std::log(2.0), 1e-9);
}

TEST(Losses, GanMatchesPerPatchAverage) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor real({2, 3, 1}), fake({2, 3, 1});
    double obj = 0, gen = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      real[i] = u(rng);
      fake[i] = u(rng);
      obj += std::log(real[i]) + std::log(1 - fake[i]);
      gen -= std::log(fake[i]);
    }
    Graph g;
    const auto l = models::gan_losses(g.constant(real), g.constant(fake));
    EXPECT_NEAR(l.objective.value().item(), obj / 6, 1e-12);
    EXPECT_NEAR(l.gen.value().item(), gen / 6, 1e-12);
  }
}

TEST(Losses, KeypointLoss) {
  Graph g;
  const auto k = models::keypoint_loss(g.constant(Tensor({1, 2}, std::vector<double>{3.0, 4.0})),
                                       g.constant(Tensor({1, 2}, 0.0)));
  EXPECT_DOUBLE_EQ(k.value().item(), 25.0);

  std::mt19937_64 rng(1);
  const Tensor a = filled({1, 16}, rng), b = filled({1, 16}, rng);
  double want = 0;
  for (std::size_t i = 0; i < 16; ++i) want += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(models::keypoint_loss(g.constant(a), g.constant(b)).value().item(), want, 1e-12);
}

TEST(Losses, AdaptiveLambda) {
  EXPECT_EQ(models::adaptive_lambda(0.0, 3.0), 0.0);
  EXPECT_EQ(models::adaptive_lambda(0.0, 0.0), 0.0);
  EXPECT_NEAR(models::adaptive_lambda(1.0, 0.0), 1e6, 1e-6);
  EXPECT_NEAR(models::adaptive_lambda(2.0, 4.0), 0.5, 1e-6);
  EXPECT_NEAR(models::adaptive_lambda(20.0, 40.0), models::adaptive_lambda(2.0, 4.0), 1e-6);
  EXPECT_THROW(models::adaptive_lambda(-1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(models::adaptive_lambda(1.0, -1.0), std::invalid_argument);
  EXPECT_EQ(ModelBundle::init(small_config(), 1).delta, 1e-6);
}

TEST(Training, PrepareSetsNormaliserFromTrainSplit) {
  const auto ds = small_dataset();
  auto m = ModelBundle::init(small_config(), 1);
  models::prepare(m, ds, 1);
  double sum = 0, sq = 0, n = 0;
  for (std::size_t i = 0; i < ds.train_size; ++i)
    for (double v : ds.frames[i].amplitude.values()) sum += v, sq += v * v, n += 1;
  const double mean = sum / n;
  EXPECT_NEAR(m.normalizer.mean, mean, 1e-6);
  EXPECT_NEAR(m.normalizer.scale, std::sqrt(sq / n - mean * mean), 1e-6);
  EXPECT_EQ(m.codebook().size(), 8u);
}

TEST(Training, ZeroLearningRateChangesNothing) {
  const auto ds = small_dataset();
  auto m = ModelBundle::init(small_config(), 1);
  models::prepare(m, ds, 1);
  const auto before = m;
  models::TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 0.0;
  const auto log = models::train(m, ds, tc);
  EXPECT_EQ(log.size(), 3u);
  EXPECT_TRUE(m == before);
}

TEST(Training, ReducesReconstructionLoss) {
  const auto ds = small_dataset(16);
  models::TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 1;
  std::vector<models::LossReport> log;
  const auto m = models::train_new(ds, small_config(), tc, &log);
  ASSERT_EQ(log.size(), 20u);
  EXPECT_LT(log.back().l_rec, 0.5 * log.front().l_rec);
  EXPECT_GT(log.back().lambda, 0.0);
  EXPECT_TRUE(all_finite(m));
}

TEST(Training, DivergenceKeepsLastGoodModel) {
  const auto ds = small_dataset();
  models::TrainConfig tc;
  tc.epochs = 5;
  tc.lr = 1e6;
  tc.optimizer = numerics::OptimizerKind::sgd;
  auto m = ModelBundle::init(small_config(), 1);
  models::prepare(m, ds, 1);
  try {
    models::train(m, ds, tc);
    FAIL() << "training at lr 1e6 did not diverge";
  } catch (const models::TrainingDiverged& e) {
    EXPECT_TRUE(all_finite(e.last_good()));
  }
}

TEST(Training, RejectsBadConfig) {
  models::TrainConfig tc;
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
  tc = {};
  tc.momentum = 1.0;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
  tc = {};
  tc.lr = -1;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
}

TEST(Inference, CompressDecompressShapes) {
  const auto ds = small_dataset(4);
  auto m = ModelBundle::init(small_config(), 1);
  models::prepare(m, ds, 1);
  const auto map = models::compress(m, ds.frames[1]);
  EXPECT_EQ(map.rows, 4u);
  EXPECT_EQ(map.cols, 4u);
  EXPECT_EQ(map.frame_id, ds.frames[1].frame_id);
  EXPECT_EQ(map.codebook_id, m.codebook().id());
  EXPECT_TRUE(map == models::compress(m, ds.frames[1]));
  EXPECT_EQ(models::decompress(m, map).shape(), (numerics::Shape{16, 16, 2}));
  EXPECT_EQ(models::estimate_pose(m, codec::dequantize(map, m.codebook())).joints.size(), 8u);
}

TEST(Inference, ResizeCodebookKeepsParentAndDropsStaleTransformer) {
  const auto ds = small_dataset(4);
  auto m = ModelBundle::init(small_config(), 1);
  models::prepare(m, ds, 1);
  const auto parent = m.codebook().id();
  recovery::TransformerConfig tc;
  tc.vocab = 8;
  tc.width = 8;
  tc.heads = 2;
  tc.blocks = 1;
  m.transformer = recovery::IndexTransformer::init(tc, 1);
  m.transformer->codebook_id = parent;
  m.resize_codebook(4);
  EXPECT_EQ(m.codebook().size(), 4u);
  EXPECT_EQ(m.codebook().parent_id(), parent);
  EXPECT_FALSE(m.transformer.has_value());
  for (auto v : models::compress(m, ds.frames[0]).cells) EXPECT_LT(v, 4u);
}

TEST(BundleIo, RoundTripIsExact) {
  const auto ds = small_dataset(4);
  auto m = ModelBundle::init(small_config(), 1);
  models::prepare(m, ds, 1);
  recovery::TransformerConfig tc;
  tc.vocab = 8;
  tc.width = 8;
  tc.heads = 2;
  tc.blocks = 1;
  m.transformer = recovery::IndexTransformer::init(tc, 2);
  m.transformer->codebook_id = m.codebook().id();
  m.round_to_storage();

  const auto back = models::decode_model(models::encode_model(m));
  EXPECT_TRUE(back == m);
  EXPECT_TRUE(models::encode_model(back) == models::encode_model(m));

  m.resize_codebook(4);
  const auto path = std::filesystem::temp_directory_path() / "tinysense_model_test.tsmd";
  models::save_model(m, path);
  const auto loaded = models::load_model(path);
  EXPECT_TRUE(loaded == m);
  EXPECT_EQ(loaded.codebook().size(), 4u);
  EXPECT_EQ(models::decompress(loaded, models::compress(loaded, ds.frames[0])),
            models::decompress(m, models::compress(m, ds.frames[0])));
  std::filesystem::remove(path);
}

TEST(BundleIo, CorruptFilesRaiseDistinctKinds) {
  const auto bytes = models::encode_model(ModelBundle::init(small_config(), 1));
  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      models::decode_model(b);
    } catch (const io::FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "decode accepted a damaged file";
    return io::FormatErrorKind::invalid_field;
  };
  auto magic = bytes;
  magic[1] = 'X';
  EXPECT_EQ(kind_of(magic), io::FormatErrorKind::bad_magic);
  auto version = bytes;
  version[4] = 7;
  EXPECT_EQ(kind_of(version), io::FormatErrorKind::version_mismatch);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_EQ(kind_of(flipped), io::FormatErrorKind::crc_mismatch);
  EXPECT_EQ(kind_of({'T', 'S', 'M'}), io::FormatErrorKind::truncated);
  EXPECT_THROW(models::load_model("/nonexistent/m.tsmd"), io::IoError);
}
