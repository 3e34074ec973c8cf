#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cfol/adversary.hpp"
#include "cfol/attack.hpp"
#include "cfol/core.hpp"
#include "cfol/cvar.hpp"
#include "cfol/learner.hpp"

namespace cfol {

enum class Method { erm, cfol, cfol_reweighted, fol, lcvar };
enum class EarlyStopMetric { average_robust, worst_class_robust };
enum class AdversaryLossKind { zero_one, clipped_cross_entropy };

inline Method method_from_string(const std::string& s) {
  if (s == "erm") return Method::erm;
  if (s == "cfol") return Method::cfol;
  if (s == "cfol_reweighted") return Method::cfol_reweighted;
  if (s == "fol") return Method::fol;
  if (s == "lcvar") return Method::lcvar;
  throw std::invalid_argument("unknown method: " + s);
}

inline std::string method_to_string(Method m) {
  switch (m) {
    case Method::erm: return "erm";
    case Method::cfol: return "cfol";
    case Method::cfol_reweighted: return "cfol_reweighted";
    case Method::fol: return "fol";
    case Method::lcvar: return "lcvar";
  }
  return "?";
}

struct RunConfig {
  Method method = Method::erm;
  double eta = 0.1;              // adversary step-size (cfol/fol families)
  double gamma = 0.5;            // uniform mixing
  double alpha = 0.8;            // CVaR level (lcvar)
  AdversaryLossKind adversary_loss = AdversaryLossKind::zero_one;

  Architecture arch = Architecture::linear;
  int hidden = 16;

  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> lr_decay_epochs = {100, 150};
  double lr_decay_factor = 0.1;

  AttackConfig train_attack;
  AttackConfig eval_attack;

  int epochs = 10;
  int batch_size = 128;
  EarlyStopMetric early_stop_metric = EarlyStopMetric::average_robust;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
  long snapshot_every = 0;  // 0 -> ceil(T/200)
  int ensemble_n = 50;
  double failure_delta = 0.05;
  double tail_fraction = 0.2;

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("RunConfig: epochs < 0");
    if (batch_size < 1) throw std::invalid_argument("RunConfig: batch_size < 1");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
      throw std::invalid_argument("RunConfig: holdout_fraction must be in [0,1)");
    if (!(failure_delta > 0.0 && failure_delta < 1.0))
      throw std::invalid_argument("RunConfig: failure_delta must be in (0,1)");
    const bool bandit = method == Method::cfol ||
                        method == Method::cfol_reweighted || method == Method::fol;
    if (bandit) {
      if (!(eta > 0.0)) throw std::invalid_argument("RunConfig: eta must be > 0");
      if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("RunConfig: gamma must be in (0,1)");
    }
    if (method == Method::lcvar && !(alpha > 0.0 && alpha <= 1.0))
      throw std::invalid_argument("RunConfig: alpha must be in (0,1]");
    train_attack.validate();
    eval_attack.validate();
  }
};

// One record per bandit step, taken against the pre-update state.
struct RegretStep {
  long step;
  std::size_t arm;
  double loss;
  double p_arm;
  double q_dot_estimate;
};

struct RegretTrace {
  std::vector<RegretStep> steps;
  std::vector<double> cumulative_arm_estimates;  // per-arm sums of <e_u, L~>
  double cumulative_observed_loss = 0.0;
  double cumulative_q_dot = 0.0;

  void reset(std::size_t arms) {
    steps.clear();
    cumulative_arm_estimates.assign(arms, 0.0);
    cumulative_observed_loss = 0.0;
    cumulative_q_dot = 0.0;
  }

  // arm sampled from the state's p, estimator entry = loss / p[arm]
  void record(const AdversaryState& state, std::size_t arm, double loss) {
    record_entry(arm, loss, state.p()[arm], loss / state.p()[arm],
                 state.q()[arm]);
  }

  void record_entry(std::size_t arm, double loss, double p_arm, double est,
                    double q_arm) {
    const double qdot = q_arm * est;
    steps.push_back({static_cast<long>(steps.size()), arm, loss, p_arm, qdot});
    cumulative_arm_estimates[arm] += est;
    cumulative_observed_loss += loss;
    cumulative_q_dot += qdot;
  }
};

struct RegretReport {
  bool precondition_ok = false;  // eta <= gamma / m
  double rhs = 0.0;
  std::vector<double> lhs_per_arm;
  bool pass = false;
};

inline RegretReport regret_check(const RegretTrace& trace, double eta,
                                 double gamma, std::size_t m) {
  RegretReport rep;
  rep.precondition_ok = eta <= gamma / static_cast<double>(m);
  rep.rhs = std::log(static_cast<double>(m)) / eta +
            (eta * static_cast<double>(m) / ((1.0 - gamma) * gamma)) *
                trace.cumulative_observed_loss;
  rep.lhs_per_arm.resize(m);
  bool all_ok = true;
  for (std::size_t u = 0; u < m; ++u) {
    rep.lhs_per_arm[u] = trace.cumulative_arm_estimates[u] - trace.cumulative_q_dot;
    if (rep.lhs_per_arm[u] > rep.rhs + 1e-9) all_ok = false;
  }
  // no pass/fail claim when the lemma's step-size requirement is violated
  rep.pass = rep.precondition_ok && all_ok;
  return rep;
}

struct SnapshotStore {
  std::vector<std::pair<long, ModelParams>> snapshots;  // strictly increasing steps

  void add(long step, const ModelParams& model) {
    if (!snapshots.empty() && snapshots.back().first >= step)
      throw std::invalid_argument("SnapshotStore: steps must increase");
    snapshots.emplace_back(step, model);
  }
  bool empty() const { return snapshots.empty(); }
  std::size_t size() const { return snapshots.size(); }
};

struct EpochReports {
  MetricsReport train_clean, train_robust, holdout_clean, holdout_robust;
};

struct TrainResult {
  ModelParams final_model;
  ModelParams early_stopped_model;
  int early_stop_epoch = 0;
  std::vector<EpochReports> epoch_reports;
  std::vector<std::pair<long, std::vector<double>>> adversary_history;
  RegretTrace regret;
  SnapshotStore snapshots;
  long total_steps = 0;
  double realized_cumulative_loss = 0.0;  // bounded adversary losses summed over steps
};

// Clean metrics by argmax, robust metrics by re-attacking every example. Each
// example gets its own rng substream so results do not depend on evaluation
// order or thread count.
inline std::pair<MetricsReport, MetricsReport> evaluate(
    const ModelParams& model, const LabeledDataset& ds,
    const AttackConfig& attack, SeededRng& rng, double tail_fraction = 0.2) {
  std::vector<long> clean_correct(ds.k, 0), robust_correct(ds.k, 0), total(ds.k, 0);
  const bool attacking = attack.enabled && attack.epsilon > 0.0;
  for (int i = 0; i < ds.num_examples(); ++i) {
    const Eigen::VectorXd x = ds.features.row(i).transpose();
    const int y = ds.labels[i];
    total[y] += 1;
    const bool clean_ok = zero_one_loss(forward_logits(model, x), y) == 0.0;
    if (clean_ok) clean_correct[y] += 1;
    if (attacking) {
      SeededRng sub = rng.substream(static_cast<std::uint64_t>(i));
      const Perturbation pert = pgd_attack(model, x, y, attack, sub);
      if (zero_one_loss(forward_logits(model, x + pert.delta), y) == 0.0)
        robust_correct[y] += 1;
    } else if (clean_ok) {
      robust_correct[y] += 1;
    }
  }
  MetricsReport clean = compute_metrics(clean_correct, total, tail_fraction);
  MetricsReport robust = compute_metrics(robust_correct, total, tail_fraction);
  robust.robust = true;
  return {clean, robust};
}

inline int select_early_stop(const std::vector<EpochReports>& reports,
                             EarlyStopMetric metric) {
  if (reports.empty()) throw std::invalid_argument("select_early_stop: no epochs");
  int best = 0;
  double best_value = -1.0;
  for (int e = 0; e < static_cast<int>(reports.size()); ++e) {
    const MetricsReport& r = reports[e].holdout_robust;
    const double v = metric == EarlyStopMetric::average_robust ? r.average
                                                               : r.worst_class;
    if (v > best_value) {
      best_value = v;
      best = e;
    }
  }
  return best;
}

class InvalidArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// RHS of the ensemble convergence bound, exactly as a function of
// (C, k, T, n, delta).
inline double theorem_bound(double C, std::size_t k, long T, long n,
                            double delta) {
  if (C <= 0.0 || k < 2 || T < 1 || n < 1)
    throw InvalidArgumentError("theorem_bound: arguments must be positive");
  if (!(delta > 0.0 && delta < 1.0))
    throw InvalidArgumentError("theorem_bound: delta must be in (0,1)");
  const double kd = static_cast<double>(k);
  if (C < kd * std::log(kd))
    throw InvalidArgumentError("theorem_bound: C below k log k");
  const double Td = static_cast<double>(T);
  const double nd = static_cast<double>(n);
  const double lg = std::log(2.0 * kd / delta);
  return 6.0 * C / Td + std::sqrt(4.0 * kd * lg) / std::sqrt(Td) +
         (1.0 + 2.0 * kd) * lg / (3.0 * Td) + std::sqrt(2.0 * lg) / std::sqrt(nd) +
         2.0 * lg / (3.0 * nd);
}

class EmptyStoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// max over classes of the per-class robust zero-one risk averaged over n
// snapshots drawn iid uniform from the store.
inline double ensemble_worstclass_loss(const SnapshotStore& store, int n,
                                       const LabeledDataset& ds,
                                       const AttackConfig& attack,
                                       SeededRng& rng,
                                       double tail_fraction = 0.2) {
  if (store.empty()) throw EmptyStoreError("ensemble_worstclass_loss: empty store");
  if (n < 1) throw std::invalid_argument("ensemble_worstclass_loss: n < 1");
  std::vector<double> class_risk_sum(ds.k, 0.0);
  for (int j = 0; j < n; ++j) {
    const std::size_t pick = rng.uniform_int(store.size());
    const ModelParams& model = store.snapshots[pick].second;
    SeededRng eval_rng = rng.substream(0xE5A1ULL + static_cast<std::uint64_t>(j));
    auto [clean, robust] = evaluate(model, ds, attack, eval_rng, tail_fraction);
    for (int y = 0; y < ds.k; ++y)
      class_risk_sum[y] += 1.0 - robust.per_class_accuracy[y];
  }
  double worst = 0.0;
  for (int y = 0; y < ds.k; ++y)
    worst = std::max(worst, class_risk_sum[y] / static_cast<double>(n));
  return worst;
}

namespace detail {

// Deterministic stratified split; every class keeps at least one training
// example.
inline void split_holdout(const LabeledDataset& ds, double fraction,
                          SeededRng& rng, std::vector<int>& train_idx,
                          std::vector<int>& holdout_idx) {
  train_idx.clear();
  holdout_idx.clear();
  const ClassPartition part = partition_by_class(ds);
  for (int y = 0; y < ds.k; ++y) {
    std::vector<int> idx = part.per_class_indices[y];
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    std::size_t take = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(idx.size())));
    // small classes still contribute one holdout example so evaluation covers
    // every class; classes of size one stay entirely in training
    if (take == 0 && idx.size() >= 2) take = 1;
    take = std::min(take, idx.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < take ? holdout_idx : train_idx).push_back(idx[i]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(holdout_idx.begin(), holdout_idx.end());
}

inline LabeledDataset subset(const LabeledDataset& ds,
                             const std::vector<int>& idx) {
  LabeledDataset out;
  out.k = ds.k;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), ds.dim());
  out.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(idx[i]);
    out.labels[i] = ds.labels[idx[i]];
  }
  return out;
}

inline double bounded_adversary_loss(AdversaryLossKind kind,
                                     const Eigen::VectorXd& logits, int y) {
  if (kind == AdversaryLossKind::zero_one) return zero_one_loss(logits, y);
  return std::min(cross_entropy(logits, y), 1.0);
}

}  // namespace detail

// The full training loop of every method. One epoch is ceil(N/B) steps of
// batch size exactly B for all methods, so gradient and attack budgets match.
inline TrainResult train(const RunConfig& config, const LabeledDataset& dataset) {
  config.validate();
  dataset.validate();

  SeededRng master(config.seed);
  SeededRng split_rng = master.substream(1);
  SeededRng loop_rng = master.substream(2);

  std::vector<int> train_idx, holdout_idx;
  if (config.holdout_fraction > 0.0) {
    detail::split_holdout(dataset, config.holdout_fraction, split_rng, train_idx,
                          holdout_idx);
  } else {
    train_idx.resize(dataset.num_examples());
    std::iota(train_idx.begin(), train_idx.end(), 0);
    holdout_idx = train_idx;
  }
  const LabeledDataset train_ds = detail::subset(dataset, train_idx);
  const LabeledDataset holdout_ds = detail::subset(dataset, holdout_idx);
  const ClassPartition part = partition_by_class(train_ds);

  const long N = train_ds.num_examples();
  const long B = config.batch_size;
  const long steps_per_epoch = (N + B - 1) / B;
  const long T = std::max<long>(1, config.epochs * steps_per_epoch);
  const long cadence = config.snapshot_every > 0
                           ? config.snapshot_every
                           : std::max<long>(1, (T + 199) / 200);

  TrainResult result;
  SeededRng init_rng = master.substream(3);
  ModelParams model = ModelParams::init_random(
      config.arch, static_cast<int>(train_ds.dim()), train_ds.k, config.hidden,
      init_rng);

  OptimizerState opt;
  opt.learning_rate = config.learning_rate;
  opt.momentum = config.momentum;
  opt.weight_decay = config.weight_decay;
  for (int epoch : config.lr_decay_epochs)
    opt.decay_schedule.emplace_back(static_cast<long>(epoch) * steps_per_epoch,
                                    config.lr_decay_factor);
  opt.validate();

  const bool bandit = config.method == Method::cfol ||
                      config.method == Method::cfol_reweighted ||
                      config.method == Method::fol;
  const std::size_t arms = config.method == Method::fol
                               ? static_cast<std::size_t>(N)
                               : static_cast<std::size_t>(train_ds.k);
  std::optional<AdversaryState> adversary;
  if (bandit) {
    adversary.emplace(arms, config.eta, config.gamma);
    result.regret.reset(arms);
  }

  const bool attacking =
      config.train_attack.enabled && config.train_attack.epsilon > 0.0;

  auto attacked_input = [&](const Eigen::VectorXd& x, int y) {
    if (!attacking) return x;
    const Perturbation pert = pgd_attack(model, x, y, config.train_attack, loop_rng);
    return Eigen::VectorXd(x + pert.delta);
  };

  std::vector<int> permutation(static_cast<std::size_t>(N));
  std::iota(permutation.begin(), permutation.end(), 0);
  long perm_cursor = 0;
  auto reshuffle = [&]() {
    for (std::size_t i = permutation.size(); i > 1; --i)
      std::swap(permutation[i - 1], permutation[loop_rng.uniform_int(i)]);
    perm_cursor = 0;
  };

  auto record_epoch_metrics = [&](int epoch) {
    EpochReports rep;
    SeededRng eval_rng = master.substream(1000 + static_cast<std::uint64_t>(epoch));
    auto train_pair = evaluate(model, train_ds, config.eval_attack,
                               eval_rng, config.tail_fraction);
    SeededRng hold_rng = master.substream(2000 + static_cast<std::uint64_t>(epoch));
    auto hold_pair = evaluate(model, holdout_ds, config.eval_attack,
                              hold_rng, config.tail_fraction);
    rep.train_clean = train_pair.first;
    rep.train_robust = train_pair.second;
    rep.holdout_clean = hold_pair.first;
    rep.holdout_robust = hold_pair.second;
    result.epoch_reports.push_back(std::move(rep));
  };

  if (config.epochs == 0) {
    record_epoch_metrics(0);
    result.final_model = model;
    result.early_stopped_model = model;
    result.early_stop_epoch = 0;
    result.snapshots.add(0, model);
    return result;
  }

  ModelParams best_model = model;
  double best_metric = -1.0;
  int best_epoch = 0;
  long step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.method == Method::erm || config.method == Method::lcvar)
      reshuffle();
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      GradientBuffer batch_grad = GradientBuffer::zero_like(model);
      struct Observation {
        std::size_t arm;
        double loss;
      };
      std::vector<Observation> observations;

      switch (config.method) {
        case Method::erm:
        case Method::lcvar: {
          struct Item {
            int row;
            Eigen::VectorXd x_adv;
            double surrogate;  // clipped CE, used by lcvar
          };
          std::vector<Item> batch;
          batch.reserve(static_cast<std::size_t>(B));
          for (long b = 0; b < B; ++b) {
            // wraps around when B does not divide N so every batch has size B
            const int row = permutation[perm_cursor % N];
            ++perm_cursor;
            const Eigen::VectorXd x = train_ds.features.row(row).transpose();
            Item item;
            item.row = row;
            item.x_adv = attacked_input(x, train_ds.labels[row]);
            item.surrogate = std::min(
                cross_entropy(forward_logits(model, item.x_adv),
                              train_ds.labels[row]),
                1.0);
            batch.push_back(std::move(item));
          }
          std::vector<double> example_weight(batch.size(),
                                             1.0 / static_cast<double>(B));
          if (config.method == Method::lcvar) {
            // per-class batch-average surrogate losses over classes present
            std::vector<double> class_sum(train_ds.k, 0.0);
            std::vector<int> class_count(train_ds.k, 0);
            for (const Item& item : batch) {
              class_sum[train_ds.labels[item.row]] += item.surrogate;
              class_count[train_ds.labels[item.row]] += 1;
            }
            std::vector<int> present;
            std::vector<double> present_losses;
            for (int y = 0; y < train_ds.k; ++y)
              if (class_count[y] > 0) {
                present.push_back(y);
                present_losses.push_back(class_sum[y] / class_count[y]);
              }
            std::vector<double> class_weight(train_ds.k, 0.0);
            if (present.size() >= 2) {
              const CVaRSolution sol = lcvar_class_weights(
                  present_losses, CVaRLevel(config.alpha));
              for (std::size_t j = 0; j < present.size(); ++j)
                class_weight[present[j]] =
                    static_cast<double>(present.size()) * sol.weights[j];
            } else {
              class_weight[present[0]] = 1.0;
            }
            for (std::size_t b = 0; b < batch.size(); ++b)
              example_weight[b] =
                  class_weight[train_ds.labels[batch[b].row]] /
                  static_cast<double>(B);
          }
          for (std::size_t b = 0; b < batch.size(); ++b) {
            const GradientBuffer g =
                backward(model, batch[b].x_adv, train_ds.labels[batch[b].row],
                         example_weight[b]);
            batch_grad.add_scaled(g, 1.0);
          }
          break;
        }
        case Method::cfol:
        case Method::fol: {
          const SimplexDistribution p = adversary->sampling_distribution();
          for (long b = 0; b < B; ++b) {
            const std::size_t arm = sample_index(p, loop_rng);
            int row;
            int y;
            if (config.method == Method::cfol) {
              y = static_cast<int>(arm);
              row = sample_example(part, y, loop_rng);
            } else {
              row = static_cast<int>(arm);
              y = train_ds.labels[row];
            }
            const Eigen::VectorXd x = train_ds.features.row(row).transpose();
            const Eigen::VectorXd x_adv = attacked_input(x, y);
            const double loss = detail::bounded_adversary_loss(
                config.adversary_loss, forward_logits(model, x_adv), y);
            batch_grad.add_scaled(backward(model, x_adv, y, 1.0),
                                  1.0 / static_cast<double>(B));
            observations.push_back({arm, loss});
          }
          break;
        }
        case Method::cfol_reweighted: {
          for (long b = 0; b < B; ++b) {
            const std::size_t arm = loop_rng.uniform_int(arms);
            const int y = static_cast<int>(arm);
            const int row = sample_example(part, y, loop_rng);
            const Eigen::VectorXd x = train_ds.features.row(row).transpose();
            const Eigen::VectorXd x_adv = attacked_input(x, y);
            const double loss = detail::bounded_adversary_loss(
                config.adversary_loss, forward_logits(model, x_adv), y);
            const double factor = adversary->reweight_factor(arm);
            batch_grad.add_scaled(backward(model, x_adv, y, factor),
                                  1.0 / static_cast<double>(B));
            observations.push_back({arm, loss});
          }
          break;
        }
      }

      sgd_step(model, batch_grad, opt, step);

      // adversary updates run after the model step, one per draw, in draw order
      if (bandit) {
        for (const auto& obs : observations) {
          result.realized_cumulative_loss += obs.loss;
          if (config.method == Method::cfol_reweighted) {
            const LossEstimateVector est =
                reweighted_estimator(obs.arm, obs.loss, arms);
            // arms are drawn uniformly here, so the trace stores the
            // uniform-sampling estimator rather than the Exp3 one
            result.regret.record_entry(obs.arm, obs.loss,
                                       1.0 / static_cast<double>(arms),
                                       est.values[obs.arm],
                                       adversary->q()[obs.arm]);
            adversary->exp3_update(est);
          } else {
            result.regret.record(*adversary, obs.arm, obs.loss);
            adversary->exp3_update(adversary->build_estimator(obs.arm, obs.loss));
          }
        }
      }

      if ((step + 1) % cadence == 0 || step + 1 == T) {
        result.snapshots.add(step + 1, model);
        if (bandit)
          result.adversary_history.emplace_back(step + 1, adversary->p());
      }
    }

    record_epoch_metrics(epoch);
    const MetricsReport& hr = result.epoch_reports.back().holdout_robust;
    const double metric = config.early_stop_metric == EarlyStopMetric::average_robust
                              ? hr.average
                              : hr.worst_class;
    if (metric > best_metric) {
      best_metric = metric;
      best_model = model;
      best_epoch = epoch;
    }
  }

  result.final_model = model;
  result.early_stopped_model = best_model;
  result.early_stop_epoch = best_epoch;
  result.total_steps = T;
  return result;
}

}  // namespace cfol
