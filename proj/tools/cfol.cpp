#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfol/config.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<double> gamma;
  std::optional<double> eta;
  std::optional<double> alpha;
  std::optional<int> epochs;
};

void apply_overrides(cfol::ExperimentSpec& spec, const Overrides& o) {
  if (o.seed) spec.run.seed = *o.seed;
  if (o.method) spec.run.method = cfol::method_from_string(*o.method);
  if (o.gamma) spec.run.gamma = *o.gamma;
  if (o.eta) spec.run.eta = *o.eta;
  if (o.alpha) spec.run.alpha = *o.alpha;
  if (o.epochs) spec.run.epochs = *o.epochs;
  spec.run.validate();
}

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--method", o.method,
                  "Override the method (erm|cfol|cfol_reweighted|fol|lcvar)");
  cmd->add_option("--gamma", o.gamma, "Override the mixing parameter");
  cmd->add_option("--eta", o.eta, "Override the adversary step-size");
  cmd->add_option("--alpha", o.alpha, "Override the CVaR level");
  cmd->add_option("--epochs", o.epochs, "Override the epoch count");
}

int run_train(const std::string& config_path, const Overrides& overrides,
              const std::string& out_flag) {
  cfol::ExperimentSpec spec = cfol::load_experiment(config_path);
  apply_overrides(spec, overrides);
  if (!out_flag.empty()) spec.out_dir = out_flag;
  if (spec.out_dir.empty())
    throw std::invalid_argument("no output directory (set 'out' or --out)");
  const cfol::LabeledDataset dataset = cfol::load_dataset(spec);
  const cfol::TrainResult result = cfol::train(spec.run, dataset);
  cfol::write_run_outputs(spec, result, spec.out_dir);
  const auto& rep =
      result.epoch_reports[static_cast<std::size_t>(result.early_stop_epoch)];
  std::cout << "early stop epoch: " << result.early_stop_epoch << "\n"
            << "holdout robust average: " << rep.holdout_robust.average << "\n"
            << "holdout robust worst class: " << rep.holdout_robust.worst_class
            << "\n"
            << "outputs written to " << spec.out_dir << "\n";
  return 0;
}

int run_evaluate(const std::string& config_path, const std::string& checkpoint,
                 const Overrides& overrides) {
  cfol::ExperimentSpec spec = cfol::load_experiment(config_path);
  apply_overrides(spec, overrides);
  const cfol::LabeledDataset dataset = cfol::load_dataset(spec);
  const cfol::ModelParams model = cfol::load_checkpoint(checkpoint);
  cfol::SeededRng rng(spec.run.seed);
  auto [clean, robust] = cfol::evaluate(model, dataset, spec.run.eval_attack,
                                        rng, spec.run.tail_fraction);
  nlohmann::json out;
  out["clean"] = {{"average", clean.average},
                  {"worst_class", clean.worst_class},
                  {"tail_20pct", clean.tail},
                  {"per_class_accuracy", clean.per_class_accuracy}};
  out["robust"] = {{"average", robust.average},
                   {"worst_class", robust.worst_class},
                   {"tail_20pct", robust.tail},
                   {"per_class_accuracy", robust.per_class_accuracy}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_sweep(const std::string& config_path, const Overrides& overrides,
              const std::string& out_flag, std::vector<double> gamma_grid) {
  if (gamma_grid.empty()) gamma_grid = {0.5, 0.7, 0.9};
  cfol::ExperimentSpec base = cfol::load_experiment(config_path);
  apply_overrides(base, overrides);
  if (!out_flag.empty()) base.out_dir = out_flag;
  if (base.out_dir.empty())
    throw std::invalid_argument("no output directory (set 'out' or --out)");
  for (double gamma : gamma_grid) {
    cfol::ExperimentSpec spec = base;
    spec.run.gamma = gamma;
    spec.run.validate();
    std::ostringstream dir;
    dir << base.out_dir << "/gamma_" << gamma;
    const cfol::LabeledDataset dataset = cfol::load_dataset(spec);
    const cfol::TrainResult result = cfol::train(spec.run, dataset);
    cfol::write_run_outputs(spec, result, dir.str());
    const auto& rep =
        result.epoch_reports[static_cast<std::size_t>(result.early_stop_epoch)];
    std::cout << "gamma=" << gamma
              << " robust avg=" << rep.holdout_robust.average
              << " worst=" << rep.holdout_robust.worst_class << "\n";
  }
  return 0;
}

int run_regret_check(const std::string& run_dir) {
  std::ifstream info_in(run_dir + "/run_info.json");
  if (!info_in)
    throw std::runtime_error("cannot open " + run_dir + "/run_info.json");
  nlohmann::json info;
  info_in >> info;
  const std::size_t arms = info.at("arms").get<std::size_t>();
  const double eta = info.at("eta").get<double>();
  const double gamma = info.at("gamma").get<double>();
  if (arms == 0)
    throw std::runtime_error("run has no adversary trace to check");
  const cfol::RegretTrace trace =
      cfol::load_regret_csv(run_dir + "/regret.csv", arms);
  const cfol::RegretReport report = cfol::regret_check(trace, eta, gamma, arms);
  if (!report.precondition_ok) {
    std::cout << "precondition violated: eta > gamma/m, no regret claim made\n";
    return 0;
  }
  double worst_lhs = report.lhs_per_arm.empty() ? 0.0 : report.lhs_per_arm[0];
  for (double v : report.lhs_per_arm) worst_lhs = std::max(worst_lhs, v);
  std::cout << "regret bound rhs: " << report.rhs << "\n"
            << "worst comparator lhs: " << worst_lhs << "\n"
            << (report.pass ? "PASS" : "FAIL") << "\n";
  return report.pass ? 0 : 1;
}

// Two-phase bound monitor: a pilot run measures the realized cumulative loss,
// the final run uses the matching theoretical step-size, and the bound is
// evaluated with the final run's realized loss (floored at k log k).
int run_bound_check(const std::string& config_path, const Overrides& overrides) {
  cfol::ExperimentSpec spec = cfol::load_experiment(config_path);
  apply_overrides(spec, overrides);
  spec.run.gamma = 0.5;
  const cfol::LabeledDataset dataset = cfol::load_dataset(spec);
  const std::size_t k = static_cast<std::size_t>(dataset.k);
  const double floor_c = k * std::log(static_cast<double>(k));

  cfol::TrainResult pilot = cfol::train(spec.run, dataset);
  const double c_pilot = std::max(floor_c, pilot.realized_cumulative_loss);
  spec.run.eta = cfol::theoretical_eta(k, c_pilot);

  cfol::TrainResult final_run = cfol::train(spec.run, dataset);
  const double c_hat = std::max(floor_c, final_run.realized_cumulative_loss);
  const double bound =
      cfol::theorem_bound(c_hat, k, final_run.total_steps, spec.run.ensemble_n,
                          spec.run.failure_delta);
  cfol::SeededRng rng = cfol::SeededRng(spec.run.seed).substream(0xB0DULL);
  const double risk = cfol::ensemble_worstclass_loss(
      final_run.snapshots, spec.run.ensemble_n, dataset, spec.run.eval_attack,
      rng, spec.run.tail_fraction);
  nlohmann::json out;
  out["eta"] = spec.run.eta;
  out["realized_c"] = c_hat;
  out["T"] = final_run.total_steps;
  out["n"] = spec.run.ensemble_n;
  out["delta"] = spec.run.failure_delta;
  out["bound"] = bound;
  out["ensemble_worstclass_risk"] = risk;
  out["within_bound"] = risk <= bound;
  std::cout << out.dump(2) << "\n";
  return risk <= bound ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-focused online learning for adversarial training"};
  app.require_subcommand(1);

  std::string config_path, out_flag, checkpoint_path, run_dir;
  std::vector<double> gamma_grid;
  Overrides overrides;

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config_path, "JSON experiment config")
      ->required();
  train_cmd->add_option("--out", out_flag, "Output directory");
  add_override_flags(train_cmd, overrides);

  CLI::App* eval_cmd =
      app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--config", config_path, "JSON experiment config")
      ->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Model checkpoint")
      ->required();
  add_override_flags(eval_cmd, overrides);

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "Train across a gamma grid");
  sweep_cmd->add_option("--config", config_path, "JSON experiment config")
      ->required();
  sweep_cmd->add_option("--out", out_flag, "Output directory");
  sweep_cmd->add_option("--gamma-grid", gamma_grid, "Gamma values to sweep");
  add_override_flags(sweep_cmd, overrides);

  CLI::App* regret_cmd = app.add_subcommand(
      "regret-check", "Check the adversary regret bound on a stored trace");
  regret_cmd->add_option("--run", run_dir, "Run output directory")->required();

  CLI::App* bound_cmd = app.add_subcommand(
      "bound-check", "Run the ensemble convergence bound monitor");
  bound_cmd->add_option("--config", config_path, "JSON experiment config")
      ->required();
  add_override_flags(bound_cmd, overrides);

  CLI::App* version_cmd = app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (version_cmd->parsed()) {
      std::cout << kVersion << "\n";
      return 0;
    }
    if (train_cmd->parsed()) return run_train(config_path, overrides, out_flag);
    if (eval_cmd->parsed())
      return run_evaluate(config_path, checkpoint_path, overrides);
    if (sweep_cmd->parsed())
      return run_sweep(config_path, overrides, out_flag, gamma_grid);
    if (regret_cmd->parsed()) return run_regret_check(run_dir);
    if (bound_cmd->parsed()) return run_bound_check(config_path, overrides);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
