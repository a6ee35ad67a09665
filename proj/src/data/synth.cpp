#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "tinysense/data/csi.hpp"

namespace tinysense::data {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Neutral skeleton: head, neck, shoulders, hands, feet.
constexpr std::array<Joint, kJointCount> kRestPose{{
    {0.50, 0.15}, {0.50, 0.30}, {0.40, 0.32}, {0.60, 0.32},
    {0.33, 0.55}, {0.67, 0.55}, {0.44, 0.90}, {0.56, 0.90},
}};

// How strongly each joint follows the two motion axes.
constexpr std::array<std::array<double, 4>, kJointCount> kJointMix{{
    {0.4, 0.1, 0.0, 0.3},  {0.3, 0.1, 0.0, 0.2},  {0.5, -0.3, 0.2, 0.4}, {0.5, 0.3, -0.2, 0.4},
    {1.0, -0.6, 0.8, 0.5}, {0.9, 0.7, -0.7, 0.6}, {0.2, 0.4, 0.1, -0.3}, {0.2, -0.4, -0.1, -0.3},
}};
}  // namespace

std::array<double, 2> MotionTrajectory::at(double t) const {
  return {center[0] + swing[0] * std::sin(kTwoPi * freq_hz[0] * t + phase[0]),
          center[1] + swing[1] * std::sin(kTwoPi * freq_hz[1] * t + phase[1])};
}

void MultipathScene::validate() const {
  if (paths.empty()) throw std::invalid_argument("scene needs at least one path");
  double prev = -1.0;
  for (const auto& p : paths) {
    if (!(p.amplitude >= 0.0)) throw std::invalid_argument("path amplitude must be >= 0");
    if (!(p.phase >= 0.0 && p.phase < kTwoPi)) throw std::invalid_argument("path phase must lie in [0, 2*pi)");
    if (!(p.delay_s >= 0.0)) throw std::invalid_argument("path delay must be >= 0");
    if (p.delay_s < prev) throw std::invalid_argument("path delays must be sorted ascending");
    prev = p.delay_s;
  }
  if (!(sample_rate_hz > 0.0) || !(subcarrier_spacing_hz > 0.0)) {
    throw std::invalid_argument("sample rate and subcarrier spacing must be positive");
  }
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
}

double channel_gain(const MultipathScene& scene, std::size_t subcarrier, double t, std::size_t channel) {
  const auto m = scene.motion.at(t);
  const double f_hz = static_cast<double>(subcarrier) * scene.subcarrier_spacing_hz;
  double re = 0.0, im = 0.0;
  for (const auto& p : scene.paths) {
    const double a =
        std::max(0.0, p.amplitude * (1.0 + p.amplitude_sensitivity[0] * m[0] + p.amplitude_sensitivity[1] * m[1]));
    const double tau = std::max(0.0, p.delay_s + p.delay_sensitivity_s[0] * m[0] + p.delay_sensitivity_s[1] * m[1]);
    const double theta = p.phase + std::numbers::pi * static_cast<double>(channel) * std::sin(p.arrival_angle) -
                         kTwoPi * f_hz * tau;
    re += a * std::cos(theta);
    im += a * std::sin(theta);
  }
  return std::hypot(re, im);
}

PoseLabel pose_from_motion(const std::array<double, 2>& m) {
  PoseLabel pose;
  pose.joints.reserve(kJointCount);
  for (std::size_t j = 0; j < kJointCount; ++j) {
    const auto& w = kJointMix[j];
    const double bend = std::sin(std::numbers::pi * m[0] + 0.7 * static_cast<double>(j));
    const double x = kRestPose[j].x + 0.12 * (w[0] * m[0] + w[1] * m[1]) + 0.02 * bend;
    const double y = kRestPose[j].y + 0.10 * (w[2] * m[0] + w[3] * m[1]) + 0.02 * bend * bend;
    pose.joints.push_back({std::clamp(x, 0.0, 1.0), std::clamp(y, 0.0, 1.0)});
  }
  return pose;
}

std::pair<CsiFrame, PoseLabel> synth_frame(const MultipathScene& scene, FrameShape shape, std::uint64_t seed,
                                           std::uint32_t frame_id) {
  scene.validate();
  if (shape.freq == 0 || shape.time == 0 || shape.channels == 0) {
    throw std::invalid_argument("frame extents must be >= 1");
  }
  CsiFrame frame{numerics::Tensor({shape.freq, shape.time, shape.channels}), frame_id, scene.sample_rate_hz,
                 scene.activity};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t f = 0; f < shape.freq; ++f) {
    for (std::size_t k = 0; k < shape.time; ++k) {
      const double t = scene.start_time_s + static_cast<double>(k) / scene.sample_rate_hz;
      for (std::size_t c = 0; c < shape.channels; ++c) {
        double v = channel_gain(scene, f, t, c);
        if (scene.noise_std > 0.0) v += scene.noise_std * noise(rng);
        frame.amplitude.at(f, k, c) = v;
      }
    }
  }
  const double t_mid = scene.start_time_s + 0.5 * static_cast<double>(shape.time - 1) / scene.sample_rate_hz;
  return {std::move(frame), pose_from_motion(scene.motion.at(t_mid))};
}

MultipathScene make_room(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  MultipathScene scene;
  scene.paths.push_back({1.0, uni(0, kTwoPi), 15e-9, uni(-0.6, 0.6), {0, 0}, {0, 0}});
  for (int i = 0; i < 3; ++i) {
    scene.paths.push_back({uni(0.25, 0.5), uni(0, kTwoPi), uni(30e-9, 150e-9), uni(-1.2, 1.2), {0, 0}, {0, 0}});
  }
  for (int i = 0; i < 2; ++i) {
    const double dir = uni(0, kTwoPi);
    const double reach = uni(20e-9, 35e-9);
    scene.paths.push_back({uni(0.35, 0.5), uni(0, kTwoPi), uni(45e-9, 90e-9), uni(-1.2, 1.2),
                           {reach * std::cos(dir), reach * std::sin(dir)},
                           {0.25 * std::cos(dir + 1.0), 0.25 * std::sin(dir + 1.0)}});
  }
  std::sort(scene.paths.begin(), scene.paths.end(),
            [](const PathComponent& a, const PathComponent& b) { return a.delay_s < b.delay_s; });
  return scene;
}

double round_to_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_to_storage(numerics::Tensor& t) {
  for (auto& v : t.values()) v = round_to_storage(v);
}

Dataset generate_dataset(const DatasetConfig& config) {
  if (config.frames == 0) throw std::invalid_argument("dataset needs at least one frame");
  if (!(config.test_fraction >= 0.0 && config.test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must lie in [0, 1)");
  }
  if (config.activities == 0) throw std::invalid_argument("activities must be >= 1");

  const MultipathScene room = make_room(config.seed);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  Dataset ds;
  ds.shape = config.shape;
  ds.frames.reserve(config.frames);
  ds.labels.reserve(config.frames);
  for (std::size_t i = 0; i < config.frames; ++i) {
    MultipathScene scene = room;
    scene.noise_std = config.noise_std;
    scene.activity = static_cast<std::uint32_t>(i % config.activities);
    const double k = static_cast<double>(scene.activity);
    for (int a = 0; a < 2; ++a) {
      scene.motion.center[a] = uni(-0.8, 0.8);
      scene.motion.swing[a] = uni(0.05, 0.2 + 0.1 * k);
      scene.motion.freq_hz[a] = uni(0.3 + 0.5 * k, 0.6 + 0.5 * k);
      scene.motion.phase[a] = uni(0, kTwoPi);
    }
    scene.start_time_s = uni(0.0, 10.0);
    auto [frame, pose] = synth_frame(scene, config.shape, rng(), static_cast<std::uint32_t>(i));
    round_to_storage(frame.amplitude);
    frame.sample_rate_hz = round_to_storage(frame.sample_rate_hz);
    for (auto& j : pose.joints) {
      j.x = round_to_storage(j.x);
      j.y = round_to_storage(j.y);
    }
    ds.frames.push_back(std::move(frame));
    ds.labels.push_back(std::move(pose));
  }
  const auto test = static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(config.frames)));
  ds.train_size = config.frames - test;
  return ds;
}

}  // namespace tinysense::data
