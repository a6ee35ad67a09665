#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>

#include "tinysense/data/csi.hpp"
#include "tinysense/io/binary.hpp"

using namespace tinysense;
using data::FrameShape;
using data::MultipathScene;
using data::PathComponent;

namespace {

MultipathScene static_scene(std::vector<PathComponent> paths) {
  MultipathScene s;
  s.paths = std::move(paths);
  return s;
}

// Independent evaluation of the same channel model with std::polar.
double oracle_gain(const MultipathScene& s, std::size_t f, double t, std::size_t c) {
  const double w = 2.0 * std::numbers::pi;
  const double m0 = s.motion.center[0] + s.motion.swing[0] * std::sin(w * s.motion.freq_hz[0] * t + s.motion.phase[0]);
  const double m1 = s.motion.center[1] + s.motion.swing[1] * std::sin(w * s.motion.freq_hz[1] * t + s.motion.phase[1]);
  std::complex<double> h{0.0, 0.0};
  for (const auto& p : s.paths) {
    double a = p.amplitude * (1.0 + p.amplitude_sensitivity[0] * m0 + p.amplitude_sensitivity[1] * m1);
    double tau = p.delay_s + p.delay_sensitivity_s[0] * m0 + p.delay_sensitivity_s[1] * m1;
    a = a < 0 ? 0 : a;
    tau = tau < 0 ? 0 : tau;
    const double steer = std::numbers::pi * static_cast<double>(c) * std::sin(p.arrival_angle);
    h += std::polar(a, p.phase + steer - w * static_cast<double>(f) * s.subcarrier_spacing_hz * tau);
  }
  return std::abs(h);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("tinysense_data_" + name);
}

}  // namespace

TEST(SynthFrame, SingleStaticPathIsFlat) {
  auto scene = static_scene({{1.0, 0.0, 0.0, 0.0, {0, 0}, {0, 0}}});
  auto [frame, pose] = data::synth_frame(scene, {8, 16, 3}, 1);
  for (double v : frame.amplitude.values()) EXPECT_NEAR(v, 1.0, 1e-15);
  EXPECT_EQ(pose.joints.size(), data::kJointCount);
}

TEST(SynthFrame, DestructiveInterferenceCancels) {
  // Second path delayed so that subcarrier 3 sees a half-turn offset.
  const double df = 312.5e3;
  const double tau = 1.0 / (2.0 * 3.0 * df);
  auto scene = static_scene({{0.7, 0.0, 0.0, 0.0, {0, 0}, {0, 0}}, {0.7, 0.0, tau, 0.0, {0, 0}, {0, 0}}});
  auto [frame, pose] = data::synth_frame(scene, {6, 4, 2}, 1);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_NEAR(frame.amplitude.at(3, t, c), 0.0, 1e-12);
      EXPECT_NEAR(frame.amplitude.at(0, t, c), 1.4, 1e-12);
    }
  }
}

TEST(SynthFrame, MatchesDirectSummation) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    MultipathScene s;
    double delay = 0.0;
    for (int l = 0; l < 3; ++l) {
      delay += 40e-9 * u(rng);
      s.paths.push_back({0.2 + u(rng), 6.28 * u(rng), delay, u(rng) - 0.5,
                         {10e-9 * (u(rng) - 0.5), 10e-9 * (u(rng) - 0.5)},
                         {0.3 * (u(rng) - 0.5), 0.3 * (u(rng) - 0.5)}});
    }
    s.motion = {{u(rng) - 0.5, u(rng) - 0.5}, {0.3, 0.2}, {1.0 + u(rng), 2.0 * u(rng)}, {u(rng), u(rng)}};
    s.start_time_s = 3.0 * u(rng);
    const FrameShape shape{8, 12, 3};
    auto [frame, pose] = data::synth_frame(s, shape, 5);
    for (std::size_t f = 0; f < shape.freq; ++f)
      for (std::size_t t = 0; t < shape.time; ++t)
        for (std::size_t c = 0; c < shape.channels; ++c) {
          const double time = s.start_time_s + static_cast<double>(t) / s.sample_rate_hz;
          ASSERT_NEAR(frame.amplitude.at(f, t, c), oracle_gain(s, f, time, c), 1e-12);
        }
  }
}

TEST(SynthFrame, DeterministicInSceneAndSeed) {
  auto scene = data::make_room(3);
  scene.noise_std = 0.05;
  scene.motion = {{0.1, -0.2}, {0.3, 0.3}, {1.0, 0.7}, {0.0, 1.0}};
  auto a = data::synth_frame(scene, {8, 8, 3}, 42);
  auto b = data::synth_frame(scene, {8, 8, 3}, 42);
  auto c = data::synth_frame(scene, {8, 8, 3}, 43);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_FALSE(a.first == c.first);
  EXPECT_EQ(a.second, c.second);  // seed only drives noise
  EXPECT_TRUE(a.first.amplitude.all_finite());
}

TEST(SynthFrame, RejectsInvalidScenes) {
  EXPECT_THROW(data::synth_frame(MultipathScene{}, {4, 4, 1}, 0), std::invalid_argument);
  auto neg = static_scene({{-1.0, 0.0, 0.0, 0.0, {0, 0}, {0, 0}}});
  EXPECT_THROW(data::synth_frame(neg, {4, 4, 1}, 0), std::invalid_argument);
  auto unsorted = static_scene({{1.0, 0.0, 2e-9, 0.0, {0, 0}, {0, 0}}, {1.0, 0.0, 1e-9, 0.0, {0, 0}, {0, 0}}});
  EXPECT_THROW(data::synth_frame(unsorted, {4, 4, 1}, 0), std::invalid_argument);
  auto phase = static_scene({{1.0, 7.0, 0.0, 0.0, {0, 0}, {0, 0}}});
  EXPECT_THROW(data::synth_frame(phase, {4, 4, 1}, 0), std::invalid_argument);
  auto ok = static_scene({{1.0, 0.0, 0.0, 0.0, {0, 0}, {0, 0}}});
  EXPECT_THROW(data::synth_frame(ok, {0, 4, 1}, 0), std::invalid_argument);
}

TEST(SynthFrame, MotionTrajectoryIsContinuous) {
  data::MotionTrajectory m{{0.1, 0.2}, {0.5, 0.4}, {2.0, 3.0}, {0.3, 0.1}};
  for (double t = 0.0; t < 2.0; t += 0.01) {
    const auto a = m.at(t);
    const auto b = m.at(t + 1e-6);
    EXPECT_LT(std::abs(a[0] - b[0]), 1e-4);
    EXPECT_LT(std::abs(a[1] - b[1]), 1e-4);
  }
}

TEST(Dataset, SplitAndLabelsAreConsistent) {
  data::DatasetConfig cfg;
  cfg.frames = 40;
  cfg.shape = {8, 16, 3};
  auto ds = data::generate_dataset(cfg);
  EXPECT_EQ(ds.frames.size(), ds.labels.size());
  EXPECT_EQ(ds.train_size, 30u);
  EXPECT_EQ(ds.test_size(), 10u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.frames[i].frame_id, i);
    for (const auto& j : ds.labels[i].joints) {
      EXPECT_GE(j.x, 0.0);
      EXPECT_LE(j.x, 1.0);
      EXPECT_GE(j.y, 0.0);
      EXPECT_LE(j.y, 1.0);
    }
  }
  EXPECT_EQ(ds, data::generate_dataset(cfg));
}

TEST(DatasetIo, SingleFrameResavesIdentically) {
  data::DatasetConfig cfg;
  cfg.frames = 1;
  cfg.test_fraction = 0.0;
  cfg.shape = {4, 8, 3};
  auto ds = data::generate_dataset(cfg);
  const auto path = temp_path("one.tsds");
  data::save_dataset(ds, path);
  const auto first = io::read_file(path);
  data::save_dataset(data::load_dataset(path), path);
  EXPECT_EQ(io::read_file(path), first);
  std::filesystem::remove(path);
}

TEST(DatasetIo, HundredFramesRoundTripFieldByField) {
  data::DatasetConfig cfg;
  cfg.frames = 100;
  cfg.shape = {8, 8, 3};
  cfg.seed = 1234;
  auto ds = data::generate_dataset(cfg);
  const auto path = temp_path("hundred.tsds");
  data::save_dataset(ds, path);
  auto back = data::load_dataset(path);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.shape, ds.shape);
  EXPECT_EQ(back.train_size, ds.train_size);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.frames[i], ds.frames[i]) << "frame " << i;
    EXPECT_EQ(back.labels[i], ds.labels[i]) << "label " << i;
  }
  std::filesystem::remove(path);
}

TEST(DatasetIo, CorruptFilesRaiseDistinctKinds) {
  data::DatasetConfig cfg;
  cfg.frames = 3;
  cfg.shape = {4, 4, 1};
  const auto bytes = data::encode_dataset(data::generate_dataset(cfg));
  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      data::decode_dataset(b);
    } catch (const io::FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "decode accepted a damaged file";
    return io::FormatErrorKind::invalid_field;
  };

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), io::FormatErrorKind::bad_magic);

  auto version = bytes;
  version[4] = 9;
  EXPECT_EQ(kind_of(version), io::FormatErrorKind::version_mismatch);

  auto flipped = bytes;
  flipped[40] ^= 0x10;
  EXPECT_EQ(kind_of(flipped), io::FormatErrorKind::crc_mismatch);

  auto cut = bytes;
  cut.resize(cut.size() / 2);
  const auto k = kind_of(cut);
  EXPECT_TRUE(k == io::FormatErrorKind::crc_mismatch || k == io::FormatErrorKind::truncated);

  EXPECT_EQ(kind_of({'T', 'S'}), io::FormatErrorKind::truncated);
}

TEST(DatasetIo, MissingFileIsIoError) {
  EXPECT_THROW(data::load_dataset("/nonexistent/dir/x.tsds"), io::IoError);
}

// Sanity: raw CSI carries linear information about the joints.
TEST(Dataset, LinearRegressorBeatsMeanPose) {
  data::DatasetConfig cfg;
  cfg.frames = 256;
  auto ds = data::generate_dataset(cfg);
  const auto n_in = ds.shape.elements();
  const auto n_out = 2 * ds.joints;
  auto features = [&](std::size_t begin, std::size_t end) {
    Eigen::MatrixXd x(end - begin, n_in + 1);
    for (std::size_t i = begin; i < end; ++i) {
      const auto v = ds.frames[i].amplitude.values();
      for (std::size_t k = 0; k < n_in; ++k) x(i - begin, k) = v[k];
      x(i - begin, n_in) = 1.0;
    }
    return x;
  };
  auto targets = [&](std::size_t begin, std::size_t end) {
    Eigen::MatrixXd y(end - begin, n_out);
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < ds.joints; ++j) {
        y(i - begin, 2 * j) = ds.labels[i].joints[j].x;
        y(i - begin, 2 * j + 1) = ds.labels[i].joints[j].y;
      }
    return y;
  };
  const Eigen::MatrixXd xtr = features(0, ds.train_size), ytr = targets(0, ds.train_size);
  const Eigen::MatrixXd xte = features(ds.train_size, ds.size()), yte = targets(ds.train_size, ds.size());

  // Ridge regression in dual form: W = X^T (X X^T + r I)^{-1} Y.
  const double ridge = 1e-2 * (xtr * xtr.transpose()).trace() / static_cast<double>(xtr.rows());
  const Eigen::MatrixXd gram = xtr * xtr.transpose() + ridge * Eigen::MatrixXd::Identity(xtr.rows(), xtr.rows());
  const Eigen::MatrixXd w = xtr.transpose() * gram.ldlt().solve(ytr);
  const Eigen::MatrixXd pred = xte * w;
  const Eigen::RowVectorXd mean = ytr.colwise().mean();

  auto mpjpe = [&](auto&& predict_row) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < yte.rows(); ++i) {
      const Eigen::RowVectorXd p = predict_row(i);
      for (std::size_t j = 0; j < ds.joints; ++j) {
        total += std::hypot(p(2 * j) - yte(i, 2 * j), p(2 * j + 1) - yte(i, 2 * j + 1));
      }
    }
    return total / static_cast<double>(yte.rows() * ds.joints);
  };
  const double linear = mpjpe([&](Eigen::Index i) { return Eigen::RowVectorXd(pred.row(i)); });
  const double baseline = mpjpe([&](Eigen::Index) { return mean; });
  EXPECT_LT(linear, baseline) << "linear " << linear << " mean " << baseline;
}
