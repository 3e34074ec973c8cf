#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>

#include "cfol/core.hpp"
#include "cfol/learner.hpp"

namespace cfol {

class ConfigDisabledError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct AttackConfig {
  bool enabled = true;
  double epsilon = 0.0;
  int steps = 1;
  double step_size = 0.0;
  bool random_start = true;  // zero-start used for deterministic oracle checks
  std::optional<std::pair<double, double>> clamp_box;  // e.g. [0,1] for pixels

  void validate() const {
    if (epsilon < 0.0) throw std::invalid_argument("AttackConfig: epsilon < 0");
    if (enabled && steps < 1)
      throw std::invalid_argument("AttackConfig: steps must be >= 1");
    if (enabled && epsilon > 0.0 && !(step_size > 0.0))
      throw std::invalid_argument("AttackConfig: step_size must be > 0");
  }
};

struct Perturbation {
  Eigen::VectorXd delta;
};

namespace detail {

inline double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline void project(Eigen::VectorXd& delta, const Eigen::VectorXd& x,
                    const AttackConfig& cfg) {
  for (Eigen::Index j = 0; j < delta.size(); ++j) {
    delta[j] = std::clamp(delta[j], -cfg.epsilon, cfg.epsilon);
    if (cfg.clamp_box) {
      const double lo = cfg.clamp_box->first - x[j];
      const double hi = cfg.clamp_box->second - x[j];
      delta[j] = std::clamp(delta[j], lo, hi);
    }
  }
}

}  // namespace detail

// Multi-step l_inf PGD with uniform random start inside the epsilon ball.
inline Perturbation pgd_attack(const ModelParams& model,
                               const Eigen::VectorXd& x, int y,
                               const AttackConfig& cfg, SeededRng& rng) {
  cfg.validate();
  if (!cfg.enabled) throw ConfigDisabledError("pgd_attack: attack disabled");
  Perturbation pert;
  pert.delta = Eigen::VectorXd::Zero(x.size());
  if (cfg.epsilon == 0.0) return pert;
  if (cfg.random_start) {
    for (Eigen::Index j = 0; j < x.size(); ++j)
      pert.delta[j] = cfg.epsilon * (2.0 * rng.uniform() - 1.0);
    detail::project(pert.delta, x, cfg);
  }
  for (int s = 0; s < cfg.steps; ++s) {
    const Eigen::VectorXd grad = input_gradient(model, x + pert.delta, y);
    for (Eigen::Index j = 0; j < x.size(); ++j)
      pert.delta[j] += cfg.step_size * detail::sign_or_zero(grad[j]);
    detail::project(pert.delta, x, cfg);
  }
  return pert;
}

// One-step special case: delta = epsilon * sign(grad at x), clamped.
inline Perturbation fgsm_attack(const ModelParams& model,
                                const Eigen::VectorXd& x, int y,
                                const AttackConfig& cfg) {
  cfg.validate();
  if (!cfg.enabled) throw ConfigDisabledError("fgsm_attack: attack disabled");
  Perturbation pert;
  pert.delta = Eigen::VectorXd::Zero(x.size());
  if (cfg.epsilon == 0.0) return pert;
  const Eigen::VectorXd grad = input_gradient(model, x, y);
  for (Eigen::Index j = 0; j < x.size(); ++j)
    pert.delta[j] = cfg.epsilon * detail::sign_or_zero(grad[j]);
  detail::project(pert.delta, x, cfg);
  return pert;
}

class NotLinearError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class DimensionTooLargeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Exact worst-case cross-entropy over the epsilon box for a linear model.
// The objective is convex in delta so the max sits at a sign vertex; small d
// keeps the 2^d enumeration exact.
inline double linear_worstcase(const ModelParams& model,
                               const Eigen::VectorXd& x, int y,
                               double epsilon) {
  if (model.arch != Architecture::linear)
    throw NotLinearError("linear_worstcase: linear models only");
  const int d = model.d;
  if (d > 20) throw DimensionTooLargeError("linear_worstcase: d must be <= 20");
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd delta(d);
  for (std::uint64_t mask = 0; mask < (1ULL << d); ++mask) {
    for (int j = 0; j < d; ++j)
      delta[j] = (mask >> j) & 1 ? epsilon : -epsilon;
    best = std::max(best, cross_entropy(forward_logits(model, x + delta), y));
  }
  return best;
}

}  // namespace cfol
