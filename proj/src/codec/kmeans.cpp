#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "tinysense/codec/codec.hpp"

namespace tinysense::codec {

using numerics::Tensor;

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

const double* row(const Tensor& t, std::size_t i) { return t.data() + i * t.dim(1); }
double* row(Tensor& t, std::size_t i) { return t.data() + i * t.dim(1); }

struct Run {
  Tensor centroids;
  std::vector<double> history;
  std::size_t iterations = 0;
};

Run lloyd(const Tensor& points, Tensor centroids, const KMeansOptions& opt) {
  const std::size_t n = points.dim(0), d = points.dim(1), s = centroids.dim(0);
  std::vector<std::uint32_t> assign(n, std::numeric_limits<std::uint32_t>::max());
  Run run;
  run.history.push_back(kmeans_cost(points, centroids));
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    std::size_t changed = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = nearest(points.values().subspan(i * d, d), centroids);
      changed += (k != assign[i]);
      assign[i] = k;
    }
    if (changed == 0) break;

    Tensor sums({s, d});
    std::vector<std::size_t> counts(s, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums.at(assign[i], j) += points.at(i, j);
    }
    for (std::size_t k = 0; k < s; ++k) {
      if (counts[k] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) centroids.at(k, j) = sums.at(k, j) / static_cast<double>(counts[k]);
    }
    // Empty clusters take the farthest member of the currently largest cluster.
    for (std::size_t k = 0; k < s; ++k) {
      if (counts[k] != 0) continue;
      const auto largest = static_cast<std::uint32_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (assign[i] != largest) continue;
        const double dd = sq_dist(row(points, i), row(centroids, largest), d);
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      std::copy_n(row(points, far), d, row(centroids, k));
      assign[far] = static_cast<std::uint32_t>(k);
      --counts[largest];
      counts[k] = 1;
    }

    run.iterations = it + 1;
    const double cost = kmeans_cost(points, centroids);
    const double prev = run.history.back();
    run.history.push_back(cost);
    if (prev - cost < opt.tol) break;
  }
  run.centroids = std::move(centroids);
  return run;
}

// Every size-s subset of {0..n-1} in lexicographic order, or nullopt when
// there are more than cap of them.
std::optional<std::vector<std::vector<std::size_t>>> subsets(std::size_t n, std::size_t s, std::size_t cap) {
  double count = 1.0;
  for (std::size_t i = 0; i < s; ++i) count = count * static_cast<double>(n - i) / static_cast<double>(i + 1);
  if (count > static_cast<double>(cap)) return std::nullopt;
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur(s);
  std::iota(cur.begin(), cur.end(), 0);
  while (true) {
    out.push_back(cur);
    std::size_t i = s;
    while (i > 0 && cur[i - 1] == n - s + i - 1) --i;
    if (i == 0) break;
    ++cur[i - 1];
    for (std::size_t j = i; j < s; ++j) cur[j] = cur[j - 1] + 1;
  }
  return out;
}

constexpr std::size_t kExhaustiveInitCap = 4096;

}  // namespace

double kmeans_cost(const Tensor& points, const Tensor& centroids) {
  const std::size_t d = points.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < points.dim(0); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.dim(0); ++k) {
      best = std::min(best, sq_dist(row(points, i), row(centroids, k), d));
    }
    total += best;
  }
  return total;
}

KMeansResult kmeans_resize(const Codebook& parent, std::size_t target_size, const KMeansOptions& options) {
  const std::size_t k_parent = parent.size(), d = parent.dim();
  if (target_size < kMinCodebookSize) {
    throw CodecError(CodecErrorKind::invalid_argument, "resized codebook needs at least 2 entries");
  }
  if (target_size >= k_parent) {
    throw CodecError(CodecErrorKind::invalid_argument,
                     "target size " + std::to_string(target_size) + " must be below the parent's " +
                         std::to_string(k_parent) + " entries; use the parent directly");
  }
  if (options.max_iters == 0 || options.restarts == 0) {
    throw CodecError(CodecErrorKind::invalid_argument, "max_iters and restarts must be >= 1");
  }

  const Tensor& points = parent.entries();
  std::vector<std::vector<std::size_t>> inits;
  if (const auto all = subsets(k_parent, target_size, kExhaustiveInitCap)) {
    // few enough seed sets to try them all; restarts no longer matter
    inits = std::move(*all);
  } else {
    std::mt19937_64 rng(options.seed);
    std::vector<std::size_t> idx(k_parent);
    std::iota(idx.begin(), idx.end(), 0);
    std::set<std::vector<std::size_t>> tried;
    for (std::size_t r = 0; r < options.restarts; ++r) {
      std::vector<std::size_t> pick;
      for (int attempt = 0; attempt < 16; ++attempt) {
        pick.clear();
        std::sample(idx.begin(), idx.end(), std::back_inserter(pick), target_size, rng);
        if (tried.insert(pick).second) break;
      }
      inits.push_back(std::move(pick));
    }
  }

  Run best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const auto& pick : inits) {
    Tensor init({target_size, d});
    for (std::size_t k = 0; k < target_size; ++k) std::copy_n(row(points, pick[k]), d, row(init, k));
    Run run = lloyd(points, std::move(init), options);
    if (run.history.back() < best_cost) {
      best_cost = run.history.back();
      best = std::move(run);
    }
  }
  return {Codebook(std::move(best.centroids), parent.id()), std::move(best.history), best.iterations};
}

}  // namespace tinysense::codec
