#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "cfol/core.hpp"

namespace cfol {

struct CVaRLevel {
  double alpha;

  explicit CVaRLevel(double a) : alpha(a) {
    if (!(a > 0.0 && a <= 1.0))
      throw std::invalid_argument("CVaRLevel: alpha must be in (0,1]");
  }
};

struct CVaRSolution {
  std::vector<double> weights;  // simplex point, each <= 1/(alpha m)
  double value = 0.0;           // weighted loss under those weights
  double lambda = 0.0;          // dual variable, set by the dual path only
};

// Best response under the cap ||p||_inf <= 1/(alpha m): greedily assign the
// cap to the largest losses in descending order, residual to the last touched
// index. Ties broken by smaller index (stable sort).
inline CVaRSolution cvar_best_response(const std::vector<double>& losses,
                                       CVaRLevel level) {
  const std::size_t m = losses.size();
  if (m == 0) throw std::invalid_argument("cvar_best_response: empty losses");
  const double cap = 1.0 / (level.alpha * static_cast<double>(m));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  CVaRSolution sol;
  sol.weights.assign(m, 0.0);
  double remaining = 1.0;
  for (std::size_t j = 0; j < m && remaining > 0.0; ++j) {
    const double take = std::min(cap, remaining);
    sol.weights[order[j]] = take;
    remaining -= take;
  }
  sol.value = 0.0;
  for (std::size_t i = 0; i < m; ++i) sol.value += sol.weights[i] * losses[i];
  return sol;
}

// Dual form inf_lambda { lambda + (1/(alpha m)) sum (l - lambda)_+ }. The
// objective is piecewise linear with breakpoints at the losses, so the exact
// minimizer is found by scanning the sorted breakpoints. When the minimizer is
// a whole interval, the upper breakpoint is reported: it is the (1-alpha)
// upper quantile, the smallest loss that still gets positive primal weight.
inline CVaRSolution cvar_dual_value(const std::vector<double>& losses,
                                    CVaRLevel level) {
  const std::size_t m = losses.size();
  if (m == 0) throw std::invalid_argument("cvar_dual_value: empty losses");
  const double inv_am = 1.0 / (level.alpha * static_cast<double>(m));
  std::vector<double> sorted(losses);
  std::sort(sorted.begin(), sorted.end());
  // suffix sums make each breakpoint evaluation O(1)
  std::vector<double> suffix(m + 1, 0.0);
  for (std::size_t i = m; i > 0; --i) suffix[i - 1] = suffix[i] + sorted[i - 1];
  double best_value = std::numeric_limits<double>::infinity();
  double best_lambda = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double lambda = sorted[i];
    const double above = suffix[i] - static_cast<double>(m - i) * lambda;
    const double obj = lambda + inv_am * above;
    if (obj <= best_value) {
      best_value = obj;
      best_lambda = lambda;
    }
  }
  CVaRSolution primal = cvar_best_response(losses, level);
  primal.value = best_value;
  primal.lambda = best_lambda;
  return primal;
}

// CVaR over class labels: same computation with m = k on per-class losses.
inline CVaRSolution lcvar_class_weights(const std::vector<double>& class_losses,
                                        CVaRLevel level) {
  if (class_losses.size() < 2)
    throw std::invalid_argument("lcvar_class_weights: need k >= 2");
  return cvar_best_response(class_losses, level);
}

// The CVaR level whose cap constraint matches the Exp3 floor p_i >= gamma/m.
inline CVaRLevel alpha_from_gamma(double gamma, std::size_t m) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("alpha_from_gamma: gamma must be in (0,1)");
  if (m < 2) throw std::invalid_argument("alpha_from_gamma: need m >= 2");
  return CVaRLevel(1.0 / ((1.0 - gamma) * static_cast<double>(m) + gamma));
}

// Upper bound implied by the floor: ||p||_inf <= 1 - (m-1) gamma / m. The
// numerator is formed first so the result is a single rounding of the exact
// rational (m - (m-1) gamma) / m.
inline double mixing_cap(double gamma, std::size_t m) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("mixing_cap: gamma must be in [0,1]");
  if (m < 2) throw std::invalid_argument("mixing_cap: need m >= 2");
  return (static_cast<double>(m) - static_cast<double>(m - 1) * gamma) /
         static_cast<double>(m);
}

}  // namespace cfol
