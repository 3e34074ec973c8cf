#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfol/data.hpp"
#include "cfol/harness.hpp"

namespace cfol {

enum class DatasetSource { synthetic, csv, idx };

// Everything a run needs: the RunConfig plus where the data comes from and
// where results go.
struct ExperimentSpec {
  RunConfig run;
  DatasetSource source = DatasetSource::synthetic;
  SyntheticSpec synthetic;
  std::string csv_path;
  std::string idx_images_path;
  std::string idx_labels_path;
  int idx_limit_per_class = 0;
  std::string out_dir;
  bool emit_regret_trace = true;
  bool emit_adversary_history = true;
};

namespace detail {

inline void warn_ignored(const std::string& field, const std::string& method) {
  std::cerr << "warning: config field '" << field << "' is ignored for method '"
            << method << "'\n";
}

inline AttackConfig parse_attack(const nlohmann::json& j) {
  AttackConfig cfg;
  cfg.enabled = j.value("enabled", true);
  cfg.epsilon = j.value("epsilon", 0.0);
  cfg.steps = j.value("steps", 1);
  cfg.step_size = j.value("step_size", 0.0);
  cfg.random_start = j.value("random_start", true);
  if (j.contains("clamp")) {
    const auto& c = j.at("clamp");
    cfg.clamp_box = std::make_pair(c.at(0).get<double>(), c.at(1).get<double>());
  }
  cfg.validate();
  return cfg;
}

inline SyntheticSpec parse_synthetic(const nlohmann::json& j) {
  SyntheticSpec spec;
  spec.k = j.at("k").get<int>();
  spec.d = j.at("d").get<int>();
  spec.per_class_counts = j.at("per_class_counts").get<std::vector<int>>();
  spec.means = j.at("means").get<std::vector<std::vector<double>>>();
  spec.std_dev = j.at("std").get<double>();
  spec.hard_class = j.value("hard_class", -1);
  spec.overlap_target = j.value("overlap_target", -1);
  spec.overlap_lambda = j.value("overlap_lambda", 0.0);
  spec.validate();
  return spec;
}

}  // namespace detail

inline ExperimentSpec parse_experiment(const nlohmann::json& j) {
  ExperimentSpec spec;
  RunConfig& run = spec.run;

  const std::string method = j.value("method", "erm");
  run.method = method_from_string(method);
  run.seed = j.value("seed", std::uint64_t{0});
  spec.out_dir = j.value("out", "");

  const bool bandit = run.method == Method::cfol ||
                      run.method == Method::cfol_reweighted ||
                      run.method == Method::fol;
  if (j.contains("adversary")) {
    if (!bandit) detail::warn_ignored("adversary", method);
    const auto& adv = j.at("adversary");
    run.eta = adv.value("eta", run.eta);
    run.gamma = adv.value("gamma", run.gamma);
    const std::string loss = adv.value("loss", "zero_one");
    if (loss == "zero_one") {
      run.adversary_loss = AdversaryLossKind::zero_one;
    } else if (loss == "clipped_cross_entropy") {
      run.adversary_loss = AdversaryLossKind::clipped_cross_entropy;
    } else {
      throw std::invalid_argument("config: unknown adversary loss " + loss);
    }
  } else if (bandit) {
    throw std::invalid_argument("config: method " + method +
                                " requires an 'adversary' section");
  }
  if (j.contains("cvar")) {
    if (run.method != Method::lcvar) detail::warn_ignored("cvar", method);
    run.alpha = j.at("cvar").value("alpha", run.alpha);
  } else if (run.method == Method::lcvar) {
    throw std::invalid_argument("config: method lcvar requires a 'cvar' section");
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    const std::string arch = m.value("arch", "linear");
    if (arch == "linear") {
      run.arch = Architecture::linear;
    } else if (arch == "mlp") {
      run.arch = Architecture::mlp;
    } else {
      throw std::invalid_argument("config: unknown architecture " + arch);
    }
    run.hidden = m.value("hidden", run.hidden);
  }

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    run.learning_rate = o.value("learning_rate", run.learning_rate);
    run.momentum = o.value("momentum", run.momentum);
    run.weight_decay = o.value("weight_decay", run.weight_decay);
    run.lr_decay_epochs =
        o.value("lr_decay_epochs", run.lr_decay_epochs);
    run.lr_decay_factor = o.value("lr_decay_factor", run.lr_decay_factor);
  }

  if (j.contains("train_attack"))
    run.train_attack = detail::parse_attack(j.at("train_attack"));
  if (j.contains("eval_attack"))
    run.eval_attack = detail::parse_attack(j.at("eval_attack"));

  if (j.contains("training")) {
    const auto& t = j.at("training");
    run.epochs = t.value("epochs", run.epochs);
    run.batch_size = t.value("batch_size", run.batch_size);
    run.holdout_fraction = t.value("holdout_fraction", run.holdout_fraction);
    run.snapshot_every = t.value("snapshot_every", run.snapshot_every);
    run.ensemble_n = t.value("ensemble_n", run.ensemble_n);
    run.failure_delta = t.value("failure_delta", run.failure_delta);
    run.tail_fraction = t.value("tail_fraction", run.tail_fraction);
    const std::string es = t.value("early_stop_metric", "average_robust");
    if (es == "average_robust") {
      run.early_stop_metric = EarlyStopMetric::average_robust;
    } else if (es == "worst_class_robust") {
      run.early_stop_metric = EarlyStopMetric::worst_class_robust;
    } else {
      throw std::invalid_argument("config: unknown early_stop_metric " + es);
    }
  }

  const auto& ds = j.at("dataset");
  const std::string type = ds.at("type").get<std::string>();
  if (type == "synthetic") {
    spec.source = DatasetSource::synthetic;
    spec.synthetic = detail::parse_synthetic(ds);
  } else if (type == "csv") {
    spec.source = DatasetSource::csv;
    spec.csv_path = ds.at("path").get<std::string>();
  } else if (type == "idx") {
    spec.source = DatasetSource::idx;
    spec.idx_images_path = ds.at("images").get<std::string>();
    spec.idx_labels_path = ds.at("labels").get<std::string>();
    spec.idx_limit_per_class = ds.value("limit_per_class", 0);
  } else {
    throw std::invalid_argument("config: unknown dataset type " + type);
  }

  spec.emit_regret_trace = j.value("emit_regret_trace", true);
  spec.emit_adversary_history = j.value("emit_adversary_history", true);

  run.validate();
  return spec;
}

inline ExperimentSpec load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return parse_experiment(j);
}

inline LabeledDataset load_dataset(const ExperimentSpec& spec) {
  switch (spec.source) {
    case DatasetSource::synthetic: {
      // dataset generation gets its own stream so training draws are unaffected
      SeededRng rng = SeededRng(spec.run.seed).substream(0xDA7AULL);
      return generate_synthetic(spec.synthetic, rng);
    }
    case DatasetSource::csv:
      return load_csv(spec.csv_path);
    case DatasetSource::idx:
      return load_idx(spec.idx_images_path, spec.idx_labels_path,
                      spec.idx_limit_per_class);
  }
  throw std::logic_error("load_dataset: unreachable");
}

// --- result emission -----------------------------------------------------

namespace detail {

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  return {{"per_class_accuracy", r.per_class_accuracy},
          {"average", r.average},
          {"worst_class", r.worst_class},
          {"tail_20pct", r.tail},
          {"robust", r.robust}};
}

}  // namespace detail

inline void write_run_outputs(const ExperimentSpec& spec,
                              const TrainResult& result,
                              const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  nlohmann::json metrics;
  metrics["method"] = method_to_string(spec.run.method);
  metrics["seed"] = spec.run.seed;
  metrics["early_stop_epoch"] = result.early_stop_epoch;
  metrics["total_steps"] = result.total_steps;
  metrics["realized_cumulative_loss"] = result.realized_cumulative_loss;
  metrics["epochs"] = nlohmann::json::array();
  for (const EpochReports& rep : result.epoch_reports) {
    metrics["epochs"].push_back(
        {{"train_clean", detail::metrics_to_json(rep.train_clean)},
         {"train_robust", detail::metrics_to_json(rep.train_robust)},
         {"holdout_clean", detail::metrics_to_json(rep.holdout_clean)},
         {"holdout_robust", detail::metrics_to_json(rep.holdout_robust)}});
  }
  std::ofstream(out_dir + "/metrics.json") << metrics.dump(2) << "\n";

  {
    const EpochReports& final_rep =
        result.epoch_reports[static_cast<std::size_t>(result.early_stop_epoch)];
    std::ofstream csv(out_dir + "/per_class.csv");
    csv << "class,clean_accuracy,robust_accuracy\n";
    for (std::size_t y = 0; y < final_rep.holdout_clean.per_class_accuracy.size();
         ++y)
      csv << y << ","
          << format_double(final_rep.holdout_clean.per_class_accuracy[y]) << ","
          << format_double(final_rep.holdout_robust.per_class_accuracy[y])
          << "\n";
  }

  if (spec.emit_adversary_history && !result.adversary_history.empty()) {
    std::ofstream csv(out_dir + "/adversary_history.csv");
    csv << "step";
    for (std::size_t i = 0; i < result.adversary_history.front().second.size();
         ++i)
      csv << ",p" << i;
    csv << "\n";
    for (const auto& [step, p] : result.adversary_history) {
      csv << step;
      for (double v : p) csv << "," << format_double(v);
      csv << "\n";
    }
  }

  if (spec.emit_regret_trace && !result.regret.steps.empty()) {
    std::ofstream csv(out_dir + "/regret.csv");
    csv << "step,arm,loss,p_arm,q_dot_estimate\n";
    for (const RegretStep& s : result.regret.steps)
      csv << s.step << "," << s.arm << "," << format_double(s.loss) << ","
          << format_double(s.p_arm) << "," << format_double(s.q_dot_estimate)
          << "\n";
  }

  save_checkpoint(result.final_model, out_dir + "/checkpoint_final.txt");
  save_checkpoint(result.early_stopped_model,
                  out_dir + "/checkpoint_early_stop.txt");

  nlohmann::json run_info;
  run_info["method"] = method_to_string(spec.run.method);
  run_info["eta"] = spec.run.eta;
  run_info["gamma"] = spec.run.gamma;
  run_info["alpha"] = spec.run.alpha;
  run_info["seed"] = spec.run.seed;
  run_info["arms"] = result.regret.cumulative_arm_estimates.size();
  std::ofstream(out_dir + "/run_info.json") << run_info.dump(2) << "\n";
}

// Rebuild a RegretTrace from an emitted regret.csv; the single nonzero
// estimator entry makes the per-arm sums reconstructible from the columns.
inline RegretTrace load_regret_csv(const std::string& path, std::size_t arms) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_regret_csv: cannot open " + path);
  RegretTrace trace;
  trace.reset(arms);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5)
      throw std::runtime_error("load_regret_csv: malformed row");
    const std::size_t arm = std::stoul(cells[1]);
    const double loss = std::stod(cells[2]);
    const double p_arm = std::stod(cells[3]);
    const double qdot = std::stod(cells[4]);
    const double est = loss / p_arm;
    trace.record_entry(arm, loss, p_arm, est,
                       est > 0.0 ? qdot / est : 0.0);
  }
  return trace;
}

}  // namespace cfol
