#include "tinysense/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "tinysense/io/binary.hpp"

namespace tinysense::metrics {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void check_joints(const data::PoseLabel& a, const data::PoseLabel& b) {
  if (a.joints.size() != b.joints.size() || a.joints.empty()) {
    throw std::invalid_argument("poses must have the same, non-zero number of joints");
  }
}

}  // namespace

double nmse_db(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape()) throw std::invalid_argument("nmse_db: shapes differ");
  double err = 0.0, power = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - x_hat[i];
    err += d * d;
    power += x[i] * x[i];
  }
  if (!(power > 0.0)) throw std::invalid_argument("nmse_db: reference has zero norm");
  if (err == 0.0) return kNmseFloorDb;
  return std::max(10.0 * std::log10(err / power), kNmseFloorDb);
}

double pck(const data::PoseLabel& predicted, const data::PoseLabel& truth, double a) {
  check_joints(predicted, truth);
  if (!(a >= 0.0)) throw std::invalid_argument("pck threshold must be >= 0");
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  for (const auto& j : truth.joints) {
    x0 = std::min(x0, j.x);
    x1 = std::max(x1, j.x);
    y0 = std::min(y0, j.y);
    y1 = std::max(y1, j.y);
  }
  const double diagonal = std::hypot(x1 - x0, y1 - y0);
  if (!(diagonal > 0.0)) throw std::invalid_argument("pck: ground-truth joints are coincident");
  const double limit = a / 100.0 * diagonal;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.joints.size(); ++i) {
    const double e = std::hypot(predicted.joints[i].x - truth.joints[i].x, predicted.joints[i].y - truth.joints[i].y);
    if (e <= limit) ++hit;
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(truth.joints.size());
}

double mpjpe(const data::PoseLabel& predicted, const data::PoseLabel& truth) {
  check_joints(predicted, truth);
  double total = 0.0;
  for (std::size_t i = 0; i < truth.joints.size(); ++i) {
    total += std::hypot(predicted.joints[i].x - truth.joints[i].x, predicted.joints[i].y - truth.joints[i].y);
  }
  return total / static_cast<double>(truth.joints.size());
}

void EvalReport::validate() const {
  if (frames_evaluated == 0) throw std::invalid_argument("report covers no frames");
  for (const auto& [a, v] : pck) {
    if (!(v >= 0.0 && v <= 100.0)) throw std::invalid_argument("pck@" + num(a) + " outside [0, 100]");
  }
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "frames_evaluated=" << frames_evaluated << '\n';
  out << "nmse_db=" << num(nmse_db) << '\n';
  for (const auto& [a, v] : pck) out << "pck@" << num(a) << '=' << num(v) << '\n';
  out << "mpjpe=" << num(mpjpe) << '\n';
  out << "eta=" << num(eta) << '\n';
  return out.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream head, row;
  head << "frames_evaluated,nmse_db";
  row << frames_evaluated << ',' << num(nmse_db);
  for (const auto& [a, v] : pck) {
    head << ",pck@" << num(a);
    row << ',' << num(v);
  }
  head << ",mpjpe,eta\n";
  row << ',' << num(mpjpe) << ',' << num(eta) << '\n';
  return head.str() + row.str();
}

EvalReport evaluate(const models::ModelBundle& m, const data::Dataset& ds, std::size_t begin, std::size_t end,
                    std::span<const double> pck_thresholds) {
  return evaluate(m, ds, begin, end, pck_thresholds, nullptr);
}

EvalReport evaluate(const models::ModelBundle& m, const data::Dataset& ds, std::size_t begin, std::size_t end,
                    std::span<const double> pck_thresholds, const Channel& channel) {
  if (begin >= end || end > ds.size()) throw std::invalid_argument("evaluate: empty or out-of-range frame span");
  const auto& c = m.config();
  EvalReport r;
  double ratio = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& frame = ds.frames[i];
    auto map = models::compress(m, frame);
    if (channel) map = channel(map);
    const Tensor z_q = codec::dequantize(map, m.codebook());
    ratio += std::pow(10.0, nmse_db(frame.amplitude, models::decode_latent(m, z_q)) / 10.0);
    const auto pose = models::estimate_pose(m, z_q);
    r.mpjpe += mpjpe(pose, ds.labels[i]);
    for (double a : pck_thresholds) r.pck[a] += pck(pose, ds.labels[i], a);
  }
  const auto n = static_cast<double>(end - begin);
  r.frames_evaluated = end - begin;
  r.nmse_db = std::max(10.0 * std::log10(ratio / n), kNmseFloorDb);
  r.mpjpe /= n;
  for (auto& [a, v] : r.pck) v /= n;
  r.eta = codec::compression_rate(c.frame.freq, c.frame.time, c.frame.channels, c.downsample, m.codebook().size());
  return r;
}

void dump_embeddings(const data::Dataset& ds, const models::ModelBundle& m, const std::filesystem::path& path) {
  const std::size_t d = m.config().embed_dim;
  std::ostringstream out;
  out << "frame_id,label";
  for (std::size_t j = 0; j < d; ++j) out << ",z" << j;
  out << '\n';
  for (const auto& frame : ds.frames) {
    const Tensor z = models::encode_frame(m, frame.amplitude);
    const std::size_t cells = z.size() / d;
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < cells; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += z[i * d + j];
    out << frame.frame_id << ',' << frame.activity;
    for (double v : mean) out << ',' << num(v / static_cast<double>(cells));
    out << '\n';
  }
  const std::string s = out.str();
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace tinysense::metrics
