#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cfol/core.hpp"

namespace cfol {

// Importance-weighted loss estimate: at most one nonzero entry.
struct LossEstimateVector {
  std::vector<double> values;
};

// Exp3 / Hedge player over m arms. The player maximizes cumulative reward
// (the model's loss), so weights grow with observed losses and q concentrates
// on the hardest arms. Keeps the raw cumulative weights w (never renormalized,
// so recorded traces stay exact), the softmax distribution q and the uniformly
// mixed sampling distribution p = gamma/m + (1-gamma) q.
class AdversaryState {
 public:
  AdversaryState(std::size_t m, double eta, double gamma)
      : m_(m), eta_(eta), gamma_(gamma), w_(m, 0.0), q_(m, 1.0 / double(m)),
        p_(m, 1.0 / double(m)) {
    if (m < 2) throw std::invalid_argument("AdversaryState: need m >= 2");
    if (!(eta > 0.0)) throw std::invalid_argument("AdversaryState: eta must be > 0");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("AdversaryState: gamma must be in (0,1)");
  }

  std::size_t arms() const { return m_; }
  double eta() const { return eta_; }
  double gamma() const { return gamma_; }
  const std::vector<double>& w() const { return w_; }
  const std::vector<double>& q() const { return q_; }
  const std::vector<double>& p() const { return p_; }

  SimplexDistribution sampling_distribution() const {
    return SimplexDistribution(p_);
  }

  LossEstimateVector build_estimator(std::size_t arm, double observed_loss) const {
    check_arm(arm);
    check_loss(observed_loss);
    LossEstimateVector est;
    est.values.assign(m_, 0.0);
    est.values[arm] = observed_loss / p_[arm];
    return est;
  }

  void exp3_update(const LossEstimateVector& estimate) {
    if (estimate.values.size() != m_)
      throw std::invalid_argument("exp3_update: estimate size mismatch");
    for (std::size_t i = 0; i < m_; ++i) w_[i] += eta_ * estimate.values[i];
    recompute();
  }

  void hedge_full_info_update(const std::vector<double>& loss_vector) {
    if (loss_vector.size() != m_)
      throw std::invalid_argument("hedge_full_info_update: size mismatch");
    for (double l : loss_vector) check_loss(l);
    for (std::size_t i = 0; i < m_; ++i) w_[i] += eta_ * loss_vector[i];
    recompute();
  }

  // Factor m * p[arm] that makes a uniformly drawn gradient unbiased for the
  // p-sampled one.
  double reweight_factor(std::size_t arm) const {
    check_arm(arm);
    return static_cast<double>(m_) * p_[arm];
  }

 private:
  void check_arm(std::size_t arm) const {
    if (arm >= m_) throw std::out_of_range("adversary: arm out of range");
  }
  static void check_loss(double loss) {
    if (!(loss >= 0.0 && loss <= 1.0))
      throw std::invalid_argument("adversary: loss must be in [0,1]");
  }

  // softmax with max subtraction, then uniform mixing
  void recompute() {
    double wmax = w_[0];
    for (double v : w_) wmax = std::max(wmax, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      q_[i] = std::exp(w_[i] - wmax);
      sum += q_[i];
    }
    const double floor = gamma_ / static_cast<double>(m_);
    for (std::size_t i = 0; i < m_; ++i) {
      q_[i] /= sum;
      p_[i] = floor + (1.0 - gamma_) * q_[i];
    }
  }

  std::size_t m_;
  double eta_;
  double gamma_;
  std::vector<double> w_;
  std::vector<double> q_;
  std::vector<double> p_;
};

inline AdversaryState init_adversary(std::size_t m, double eta, double gamma) {
  return AdversaryState(m, eta, gamma);
}

// Estimator for the uniformly-sampled reweighted variant: entry = loss * m.
inline LossEstimateVector reweighted_estimator(std::size_t arm,
                                               double observed_loss,
                                               std::size_t m) {
  if (arm >= m) throw std::out_of_range("reweighted_estimator: arm out of range");
  if (!(observed_loss >= 0.0 && observed_loss <= 1.0))
    throw std::invalid_argument("reweighted_estimator: loss must be in [0,1]");
  LossEstimateVector est;
  est.values.assign(m, 0.0);
  est.values[arm] = observed_loss * static_cast<double>(m);
  return est;
}

class MistakeBoundTooSmallError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// sqrt(log k / (4 k C)); valid only above the C >= k log k floor, which also
// guarantees eta <= 1/(2k).
inline double theoretical_eta(std::size_t k, double C) {
  if (k < 2) throw std::invalid_argument("theoretical_eta: need k >= 2");
  const double kd = static_cast<double>(k);
  if (C < kd * std::log(kd))
    throw MistakeBoundTooSmallError("theoretical_eta: C below k log k");
  return std::sqrt(std::log(kd) / (4.0 * kd * C));
}

}  // namespace cfol
