#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "tinysense/numerics/tensor.hpp"

namespace tinysense::data {

/// Extents of a CSI frame: subcarriers x time steps x antenna channels.
struct FrameShape {
  std::size_t freq = 32;
  std::size_t time = 64;
  std::size_t channels = 3;

  std::size_t elements() const noexcept { return freq * time * channels; }
  friend bool operator==(const FrameShape&, const FrameShape&) = default;
};

/// Amplitude-only CSI window, tensor layout [F, T, C].
struct CsiFrame {
  numerics::Tensor amplitude;
  std::uint32_t frame_id = 0;
  double sample_rate_hz = 500.0;
  std::uint32_t activity = 0;

  FrameShape shape() const { return {amplitude.dim(0), amplitude.dim(1), amplitude.dim(2)}; }
  friend bool operator==(const CsiFrame&, const CsiFrame&) = default;
};

struct Joint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Joint&, const Joint&) = default;
};

/// 2-D keypoints in normalised scene units.
struct PoseLabel {
  std::vector<Joint> joints;
  friend bool operator==(const PoseLabel&, const PoseLabel&) = default;
};

inline constexpr std::size_t kJointCount = 8;

/// Smooth 2-D motion latent m(t) = center + swing * sin(2*pi*freq*t + phase).
struct MotionTrajectory {
  std::array<double, 2> center{0.0, 0.0};
  std::array<double, 2> swing{0.0, 0.0};
  std::array<double, 2> freq_hz{0.0, 0.0};
  std::array<double, 2> phase{0.0, 0.0};

  std::array<double, 2> at(double t) const;
};

/// One propagation path. The motion latent perturbs delay and amplitude
/// linearly through the sensitivity vectors; zero sensitivity means static.
struct PathComponent {
  double amplitude = 1.0;
  double phase = 0.0;       // radians, [0, 2*pi)
  double delay_s = 0.0;     // seconds
  double arrival_angle = 0; // radians; sets the per-antenna phase progression
  std::array<double, 2> delay_sensitivity_s{0.0, 0.0};
  std::array<double, 2> amplitude_sensitivity{0.0, 0.0};
};

struct MultipathScene {
  std::vector<PathComponent> paths;
  MotionTrajectory motion;
  double subcarrier_spacing_hz = 312.5e3;
  double sample_rate_hz = 500.0;
  double start_time_s = 0.0;
  double noise_std = 0.0;
  std::uint32_t activity = 0;

  /// Throws std::invalid_argument when the scene breaks its invariants
  /// (no paths, negative amplitude/delay, phase outside [0, 2*pi), unsorted delays).
  void validate() const;
};

/// Noise-free channel gain |sum_l a_l(t) exp(j(phi_l + psi_{l,c} - 2*pi*f*df*tau_l(t)))|
/// with psi_{l,c} = pi * c * sin(theta_l) (half-wavelength array).
double channel_gain(const MultipathScene& scene, std::size_t subcarrier, double t, std::size_t channel);

/// Joint positions as a fixed smooth function of the motion latent.
PoseLabel pose_from_motion(const std::array<double, 2>& m);

/// Samples one frame of amplitudes plus the pose at the frame's midpoint.
/// `seed` only drives the additive measurement noise.
std::pair<CsiFrame, PoseLabel> synth_frame(const MultipathScene& scene, FrameShape shape, std::uint64_t seed,
                                           std::uint32_t frame_id = 0);

struct Dataset {
  FrameShape shape;
  std::size_t joints = kJointCount;
  std::vector<CsiFrame> frames;
  std::vector<PoseLabel> labels;
  std::size_t train_size = 0;  // frames [0, train_size) train, the rest test

  std::size_t size() const noexcept { return frames.size(); }
  std::size_t test_size() const noexcept { return frames.size() - train_size; }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetConfig {
  std::size_t frames = 256;
  FrameShape shape{};
  double test_fraction = 0.25;
  std::size_t activities = 4;
  double noise_std = 0.01;
  std::uint64_t seed = 7;
};

/// Builds a room (static paths + two motion-coupled body paths) and samples
/// frames under varying motion. Amplitudes and joints are rounded to float32
/// so the dataset survives the on-disk format exactly.
Dataset generate_dataset(const DatasetConfig& config);

/// The room used by generate_dataset with a given seed (motion left at rest).
MultipathScene make_room(std::uint64_t seed);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

/// Rounds every value to the nearest float32.
void round_to_storage(numerics::Tensor& t);
double round_to_storage(double v);

}  // namespace tinysense::data
