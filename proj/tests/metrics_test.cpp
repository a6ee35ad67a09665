#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "tinysense/io/binary.hpp"
#include "tinysense/metrics/metrics.hpp"

using namespace tinysense;
using data::PoseLabel;
using numerics::Tensor;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t n = 24) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t({n});
  for (auto& v : t.values()) v = g(rng);
  return t;
}

PoseLabel random_pose(std::mt19937_64& rng, std::size_t joints = 8) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PoseLabel p;
  for (std::size_t j = 0; j < joints; ++j) p.joints.push_back({u(rng), u(rng)});
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Nmse, ClosedForms) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng);
  EXPECT_EQ(metrics::nmse_db(x, x), metrics::kNmseFloorDb);
  EXPECT_NEAR(metrics::nmse_db(x, Tensor(x.shape(), 0.0)), 0.0, 1e-12);
  EXPECT_THROW(metrics::nmse_db(Tensor({3}, 0.0), Tensor({3}, 1.0)), std::invalid_argument);
  EXPECT_THROW(metrics::nmse_db(x, Tensor({3}, 1.0)), std::invalid_argument);
}

TEST(Nmse, MatchesDirectSummation) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor(rng), y = random_tensor(rng);
    long double e = 0, p = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      e += static_cast<long double>(x[i] - y[i]) * (x[i] - y[i]);
      p += static_cast<long double>(x[i]) * x[i];
    }
    EXPECT_NEAR(metrics::nmse_db(x, y), static_cast<double>(10.0L * std::log10(e / p)), 1e-9);
  }
}

TEST(Nmse, ScaleInvariant) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(rng), y = random_tensor(rng);
  for (double c : {-3.0, 0.01, 250.0}) {
    Tensor xs = x, ys = y;
    for (auto& v : xs.values()) v *= c;
    for (auto& v : ys.values()) v *= c;
    EXPECT_NEAR(metrics::nmse_db(xs, ys), metrics::nmse_db(x, y), 1e-9);
  }
}

TEST(Pose, PerfectPrediction) {
  std::mt19937_64 rng(4);
  const auto y = random_pose(rng);
  for (double a : {0.0, 5.0, 20.0}) EXPECT_EQ(metrics::pck(y, y, a), 100.0);
  EXPECT_EQ(metrics::mpjpe(y, y), 0.0);
}

TEST(Pose, ThresholdIsInclusive) {
  // Box 3 x 4, diagonal 5; 20% of it is exactly 1.
  PoseLabel y{{{0, 0}, {3, 4}, {1, 1}, {2, 2}}};
  PoseLabel p = y;
  p.joints[2].x += 1.0;
  EXPECT_EQ(metrics::pck(p, y, 20.0), 100.0);
  p.joints[2].x += 1e-9;
  EXPECT_EQ(metrics::pck(p, y, 20.0), 75.0);
}

TEST(Pose, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto y = random_pose(rng), p = random_pose(rng);
    double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9;
    for (const auto& j : y.joints) {
      lo_x = std::min(lo_x, j.x), hi_x = std::max(hi_x, j.x);
      lo_y = std::min(lo_y, j.y), hi_y = std::max(hi_y, j.y);
    }
    const double diag = std::sqrt((hi_x - lo_x) * (hi_x - lo_x) + (hi_y - lo_y) * (hi_y - lo_y));
    double sum = 0;
    int hits = 0;
    for (std::size_t j = 0; j < y.joints.size(); ++j) {
      const double dx = p.joints[j].x - y.joints[j].x, dy = p.joints[j].y - y.joints[j].y;
      const double e = std::sqrt(dx * dx + dy * dy);
      sum += e;
      hits += e <= 0.5 * diag;
    }
    EXPECT_NEAR(metrics::mpjpe(p, y), sum / 8, 1e-12);
    EXPECT_DOUBLE_EQ(metrics::pck(p, y, 50.0), 100.0 * hits / 8);
  }
}

TEST(Pose, Errors) {
  PoseLabel same{{{1, 1}, {1, 1}}};
  EXPECT_THROW(metrics::pck(same, same, 10.0), std::invalid_argument);
  std::mt19937_64 rng(6);
  EXPECT_THROW(metrics::mpjpe(random_pose(rng, 3), random_pose(rng, 4)), std::invalid_argument);
}

TEST(Pose, PckFallsWithNoise) {
  std::mt19937_64 rng(7);
  std::vector<PoseLabel> truth;
  for (int i = 0; i < 200; ++i) truth.push_back(random_pose(rng));
  double last = 101.0;
  for (double sigma : {0.0, 0.05, 0.2, 0.8}) {
    std::normal_distribution<double> g(0.0, sigma > 0 ? sigma : 1.0);
    double total = 0;
    for (const auto& y : truth) {
      auto p = y;
      if (sigma > 0)
        for (auto& j : p.joints) j.x += g(rng), j.y += g(rng);
      total += metrics::pck(p, y, 10.0);
    }
    EXPECT_LE(total / 200, last);
    last = total / 200;
  }
}

TEST(Report, TextAndCsv) {
  metrics::EvalReport r;
  r.nmse_db = -20.5;
  r.pck = {{5.0, 40.0}, {20.0, 87.5}};
  r.mpjpe = 0.125;
  r.eta = 96.0;
  r.frames_evaluated = 64;
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(r.to_text(), "frames_evaluated=64\nnmse_db=-20.5\npck@5=40\npck@20=87.5\nmpjpe=0.125\neta=96\n");
  EXPECT_EQ(r.to_csv(), "frames_evaluated,nmse_db,pck@5,pck@20,mpjpe,eta\n64,-20.5,40,87.5,0.125,96\n");
  r.frames_evaluated = 0;
  EXPECT_THROW(r.validate(), std::invalid_argument);
}

TEST(Report, EvaluateSmallModel) {
  data::DatasetConfig dc;
  dc.frames = 6;
  dc.shape = {16, 16, 2};
  const auto ds = data::generate_dataset(dc);
  models::ModelConfig mc;
  mc.frame = dc.shape;
  mc.embed_dim = 4;
  mc.codebook_size = 8;
  mc.width = 4;
  auto m = models::ModelBundle::init(mc, 1);
  models::prepare(m, ds, 1);
  const double th[] = {20.0};
  const auto r = metrics::evaluate(m, ds, 0, ds.size(), th);
  EXPECT_EQ(r.frames_evaluated, 6u);
  EXPECT_TRUE(std::isfinite(r.nmse_db));
  EXPECT_NO_THROW(r.validate());
  EXPECT_DOUBLE_EQ(r.eta, 16.0 * 16 * 2 * 4 / (4 * 4 * 3 / 8.0));
  EXPECT_THROW(metrics::evaluate(m, ds, 3, 3, th), std::invalid_argument);
}

TEST(Embeddings, SchemaAndDeterminism) {
  data::DatasetConfig dc;
  dc.frames = 3;
  dc.shape = {16, 16, 2};
  const auto ds = data::generate_dataset(dc);
  models::ModelConfig mc;
  mc.frame = dc.shape;
  mc.embed_dim = 4;
  mc.codebook_size = 8;
  mc.width = 4;
  const auto m = models::ModelBundle::init(mc, 1);
  const auto dir = std::filesystem::temp_directory_path();
  metrics::dump_embeddings(ds, m, dir / "ts_emb_a.csv");
  metrics::dump_embeddings(ds, m, dir / "ts_emb_b.csv");
  const auto a = slurp(dir / "ts_emb_a.csv");
  EXPECT_EQ(a, slurp(dir / "ts_emb_b.csv"));
  std::istringstream lines(a);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5);
    ++rows;
  }
  EXPECT_EQ(rows, 4u);
  EXPECT_EQ(a.substr(0, a.find('\n')), "frame_id,label,z0,z1,z2,z3");
  std::filesystem::remove(dir / "ts_emb_a.csv");
  std::filesystem::remove(dir / "ts_emb_b.csv");
  EXPECT_THROW(metrics::dump_embeddings(ds, m, "/nonexistent/dir/e.csv"), io::IoError);
}
