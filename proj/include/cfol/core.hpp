#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfol {

// Reproducible randomness. The engine (mt19937_64) is fully specified by the
// standard, so identical seeds give identical streams on every platform as
// long as all value mappings below avoid std::*_distribution (which are
// implementation defined).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform in {0, ..., n-1}
  std::size_t uniform_int(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  // standard normal via Box-Muller
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Independent stream derived from (seed, index); stable regardless of how
  // far this stream has advanced.
  SeededRng substream(std::uint64_t index) const {
    return SeededRng(mix(seed_ ^ mix(index + 0x9e3779b97f4a7c15ULL)));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

struct LabeledDataset {
  Eigen::MatrixXd features;  // N x d
  std::vector<int> labels;   // values in [0, k)
  int k = 0;

  Eigen::Index num_examples() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  void validate() const {
    if (num_examples() < 1 || dim() < 1 || k < 2)
      throw std::invalid_argument("LabeledDataset: need N >= 1, d >= 1, k >= 2");
    if (static_cast<Eigen::Index>(labels.size()) != num_examples())
      throw std::invalid_argument("LabeledDataset: label count mismatch");
    for (int y : labels)
      if (y < 0 || y >= k)
        throw std::invalid_argument("LabeledDataset: label out of range");
  }
};

class EmptyClassError : public std::runtime_error {
 public:
  explicit EmptyClassError(int y)
      : std::runtime_error("class " + std::to_string(y) + " has no examples"),
        class_id(y) {}
  int class_id;
};

// Index sets per class; every class must be inhabited.
struct ClassPartition {
  std::vector<std::vector<int>> per_class_indices;

  int num_classes() const { return static_cast<int>(per_class_indices.size()); }
  int total() const {
    int n = 0;
    for (const auto& c : per_class_indices) n += static_cast<int>(c.size());
    return n;
  }
};

inline ClassPartition partition_by_class(const LabeledDataset& ds) {
  ds.validate();
  ClassPartition part;
  part.per_class_indices.resize(ds.k);
  for (int i = 0; i < ds.num_examples(); ++i)
    part.per_class_indices[ds.labels[i]].push_back(i);
  for (int y = 0; y < ds.k; ++y)
    if (part.per_class_indices[y].empty()) throw EmptyClassError(y);
  return part;
}

inline constexpr double kSimplexTolerance = 1e-9;

// Probability vector over m items.
class SimplexDistribution {
 public:
  explicit SimplexDistribution(std::vector<double> weights)
      : weights_(std::move(weights)) {
    if (weights_.empty())
      throw std::invalid_argument("SimplexDistribution: empty weights");
    double sum = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0))
        throw std::invalid_argument("SimplexDistribution: negative weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > kSimplexTolerance)
      throw std::invalid_argument("SimplexDistribution: weights sum to " +
                                  std::to_string(sum));
  }

  static SimplexDistribution uniform(std::size_t m) {
    return SimplexDistribution(std::vector<double>(m, 1.0 / static_cast<double>(m)));
  }

  double operator[](std::size_t i) const { return weights_[i]; }
  std::size_t size() const { return weights_.size(); }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<double> weights_;
};

// Inverse-CDF draw; the final bucket absorbs any rounding slack.
inline std::size_t sample_index(const SimplexDistribution& dist, SeededRng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < dist.size(); ++i) {
    acc += dist[i];
    if (u < acc) return i;
  }
  return dist.size() - 1;
}

inline int sample_example(const ClassPartition& part, int y, SeededRng& rng) {
  if (y < 0 || y >= part.num_classes())
    throw std::out_of_range("sample_example: class id out of range");
  const auto& idx = part.per_class_indices[y];
  return idx[rng.uniform_int(idx.size())];
}

class ZeroTotalError : public std::runtime_error {
 public:
  explicit ZeroTotalError(int y)
      : std::runtime_error("class " + std::to_string(y) + " has zero total"),
        class_id(y) {}
  int class_id;
};

struct MetricsReport {
  std::vector<double> per_class_accuracy;
  double average = 0.0;
  double worst_class = 0.0;
  double tail = 0.0;  // mean of the ceil(tail_fraction * k) smallest
  bool robust = false;
};

inline MetricsReport compute_metrics(const std::vector<long>& per_class_correct,
                                     const std::vector<long>& per_class_total,
                                     double tail_fraction = 0.2) {
  if (per_class_correct.size() != per_class_total.size() ||
      per_class_total.empty())
    throw std::invalid_argument("compute_metrics: length mismatch");
  const std::size_t k = per_class_total.size();
  MetricsReport rep;
  rep.per_class_accuracy.resize(k);
  for (std::size_t y = 0; y < k; ++y) {
    if (per_class_total[y] <= 0) throw ZeroTotalError(static_cast<int>(y));
    rep.per_class_accuracy[y] = static_cast<double>(per_class_correct[y]) /
                                static_cast<double>(per_class_total[y]);
  }
  rep.average =
      std::accumulate(rep.per_class_accuracy.begin(),
                      rep.per_class_accuracy.end(), 0.0) /
      static_cast<double>(k);
  // stable order by (accuracy, class id)
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rep.per_class_accuracy[a] < rep.per_class_accuracy[b];
  });
  rep.worst_class = rep.per_class_accuracy[order[0]];
  const std::size_t tail_count = static_cast<std::size_t>(
      std::ceil(tail_fraction * static_cast<double>(k)));
  double tail_sum = 0.0;
  for (std::size_t j = 0; j < tail_count; ++j)
    tail_sum += rep.per_class_accuracy[order[j]];
  rep.tail = tail_sum / static_cast<double>(tail_count);
  return rep;
}

}  // namespace cfol
