// asurv: simulate surveillance cohorts, fit tailored biopsy rules, and
// evaluate them with interval-censoring-aware estimators.
//
// Exit codes: 0 success, 2 usage/parse error, 3 degenerate estimation,
// 4 optimizer did not converge.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "asurv/asurv.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDegenerate = 3;
constexpr int kExitNoConvergence = 4;

struct KernelFlags {
  std::string kernel = "epanechnikov";
  std::string bandwidth_mode = "scaled";
  std::optional<double> h;
  std::optional<double> htilde;

  void attach(CLI::App* cmd) {
    cmd->add_option("--kernel", kernel, "Kernel family")
        ->check(CLI::IsMember({"epanechnikov", "biweight"}));
    cmd->add_option("--bandwidth-mode", bandwidth_mode,
                    "scaled: n^{-1/5}, n^{-1/6} times the biopsy-time spread; raw: literal rates")
        ->check(CLI::IsMember({"scaled", "raw"}));
    cmd->add_option("--h", h, "Explicit univariate bandwidth (months)");
    cmd->add_option("--htilde", htilde, "Explicit bivariate bandwidth (months)");
  }

  asurv::KernelSpec spec() const {
    asurv::KernelSpec s;
    s.family = kernel == "biweight" ? asurv::KernelFamily::biweight
                                    : asurv::KernelFamily::epanechnikov;
    return s;
  }

  asurv::Bandwidths resolve(const asurv::Dataset& data) const {
    std::vector<double> times;
    for (const auto& rec : data)
      for (const auto& b : rec.biopsies)
        if (b.time > 0.0) times.push_back(b.time);
    const double scale = bandwidth_mode == "raw" ? 1.0 : asurv::biopsy_time_scale(times);
    asurv::Bandwidths bw = asurv::default_bandwidths(data.size(), scale);
    if (h) bw.h = *h;
    if (htilde) bw.htilde = *htilde;
    return bw;
  }
};

std::string csv_cell(const std::optional<double>& v) { return asurv::format_optional(v); }

int run_simulate(const std::string& out_path, asurv::ScenarioConfig cfg, bool write_full) {
  const auto data = asurv::simulate_dataset(cfg);
  asurv::Dataset to_write = data.observed;
  if (write_full) {
    // keep the observed schema but with every scheduled biopsy visible
    to_write.clear();
    for (const auto& full : data.full) to_write.push_back(asurv::observe(full, true));
  }
  asurv::write_dataset_jsonl(out_path, to_write);
  nlohmann::json manifest;
  manifest["command"] = "simulate";
  manifest["scenario"] = cfg.scenario;
  manifest["n"] = cfg.n;
  manifest["tgap"] = cfg.t_gap;
  manifest["seed"] = cfg.seed;
  manifest["no_censoring"] = cfg.no_censoring;
  manifest["miss_prob"] = cfg.miss_prob;
  manifest["panel"] = cfg.panel;
  manifest["baseline_hazard"] =
      cfg.baseline == asurv::BaselineHazard::paper_verbatim ? "paper-verbatim" : "weibull";
  manifest["measurement_times"] = cfg.measurement_times;
  manifest["outputs"] = {out_path};
  asurv::write_manifest(out_path + ".manifest.json", manifest);
  std::cout << "wrote " << to_write.size() << " subjects to " << out_path << "\n";
  return 0;
}

int run_fit(const std::string& data_path, const std::string& out_path, const std::string& method,
            asurv::FitConfig cfg, const KernelFlags& kflags, std::uint64_t seed) {
  const auto data = asurv::read_dataset_jsonl(data_path);
  const auto bw = kflags.resolve(data);
  cfg.h = bw.h;
  cfg.htilde = bw.htilde;
  cfg.kernel = kflags.spec();
  const asurv::FitOutput fit = method == "osf-r" ? asurv::fit_osf_r(data, cfg)
                                                 : asurv::fit_rule(data, cfg);
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";

  asurv::RuleFile rf;
  rf.rule = fit.rule;
  rf.landmarks = fit.landmarks_used;
  rf.tau = cfg.tau;
  rf.xi = fit.xi_used;
  rf.meta["method"] = method;
  rf.meta["lambda"] = fit.lambda;
  rf.meta["objective"] = fit.objective;
  rf.meta["iterations"] = fit.iterations;
  rf.meta["dataset"] = data_path;
  asurv::write_rule(out_path, rf);

  const auto value = asurv::estimate_value(asurv::make_decider(fit.rule), data,
                                           fit.landmarks_used, fit.xi_used, cfg.tau, bw,
                                           cfg.kernel);
  std::cout << "lambda: " << asurv::format_double(fit.lambda) << "\n";
  for (std::size_t j = 0; j < fit.landmarks_used.size(); ++j)
    std::cout << "xi(" << asurv::format_double(fit.landmarks_used[j])
              << "): " << asurv::format_double(fit.xi_used[j]) << "\n";
  std::cout << "training value: " << asurv::format_double(value.value) << "\n";
  std::cout << "rule written to " << out_path << "\n";

  nlohmann::json manifest;
  manifest["command"] = "fit";
  manifest["method"] = method;
  manifest["dataset"] = data_path;
  manifest["lambda"] = fit.lambda;
  manifest["landmarks"] = fit.landmarks_used;
  manifest["xi"] = fit.xi_used;
  manifest["seed"] = seed;
  manifest["h"] = bw.h;
  manifest["htilde"] = bw.htilde;
  manifest["outputs"] = {out_path};
  asurv::write_manifest(out_path + ".manifest.json", manifest);
  return 0;
}

int run_evaluate(const std::string& rule_path, const std::string& data_path,
                 const std::string& out_path, const std::string& evaluator,
                 std::optional<double> r_opt, std::vector<double> xi_flag,
                 const KernelFlags& kflags, int bootstrap_b, std::uint64_t seed) {
  const auto rf = asurv::read_rule(rule_path);
  const auto data = asurv::read_dataset_jsonl(data_path);
  const auto& landmarks = rf.landmarks;
  const double tau = rf.tau;
  const auto bw = kflags.resolve(data);
  const auto kernel = kflags.spec();

  if (evaluator == "oracle")
    for (const auto& rec : data)
      if (!rec.truth)
        throw asurv::ParseError("oracle evaluation requires truth blocks in the dataset");

  // xi per landmark: explicit flag, else from r, else from the rule file
  std::vector<double> xi;
  if (!xi_flag.empty()) {
    if (xi_flag.size() == 1) xi.assign(landmarks.size(), xi_flag[0]);
    else if (xi_flag.size() == landmarks.size()) xi = xi_flag;
    else throw asurv::ParseError("--xi must have length 1 or match the rule's landmarks");
  } else if (r_opt) {
    if (evaluator == "oracle") {
      xi = asurv::oracle_xi(data, landmarks, tau, *r_opt);
    } else {
      for (double s : landmarks) {
        const double rho = asurv::estimate_prevalence(data, s, tau, bw.htilde, kernel).value;
        xi.push_back(asurv::xi_from_ratio(rho, *r_opt));
      }
    }
  } else {
    xi = rf.xi;
  }

  const asurv::DecisionFn rule = asurv::make_decider(rf.rule);
  std::vector<std::string> notes;
  auto rows = asurv::detail::evaluate_rows(evaluator, rule, data, landmarks, tau, xi, bw, kernel,
                                           notes);
  for (const auto& n : notes) std::cerr << "warning: " << n << "\n";
  bool any_value = false;
  for (const auto& row : rows)
    if (row.landmark && row.value) any_value = true;
  if (!any_value) throw asurv::DegenerateWindow("evaluate: estimator degenerate at all landmarks");

  struct Ci {
    std::optional<double> tpr_lo, tpr_hi, tnr_lo, tnr_hi, value_lo, value_hi;
  };
  std::vector<Ci> cis(rows.size());
  if (bootstrap_b > 0) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i].landmark || !rows[i].value) continue;
      const double s = *rows[i].landmark;
      const double xi_j = *rows[i].xi;
      auto stat = [&](const char* which) {
        return [&, which, s, xi_j](const asurv::Dataset& d) {
          std::vector<std::string> scratch;
          auto rr = asurv::detail::evaluate_rows(evaluator, rule, d, {s}, tau, {xi_j}, bw, kernel,
                                                 scratch);
          const auto& lr = rr.front();
          if (!lr.tpr || !lr.tnr) throw asurv::DegenerateWindow("bootstrap resample degenerate");
          if (std::string(which) == "tpr") return *lr.tpr;
          if (std::string(which) == "tnr") return *lr.tnr;
          return *lr.value;
        };
      };
      const auto tpr_ci = asurv::bootstrap_ci(stat("tpr"), data, bootstrap_b, asurv::Rng::mix(seed, 3 * i));
      const auto tnr_ci = asurv::bootstrap_ci(stat("tnr"), data, bootstrap_b, asurv::Rng::mix(seed, 3 * i + 1));
      const auto val_ci = asurv::bootstrap_ci(stat("value"), data, bootstrap_b, asurv::Rng::mix(seed, 3 * i + 2));
      cis[i] = Ci{tpr_ci.lower, tpr_ci.upper, tnr_ci.lower, tnr_ci.upper, val_ci.lower, val_ci.upper};
    }
  }

  std::ofstream out(out_path);
  if (!out) throw asurv::ParseError("cannot open output file: " + out_path);
  out << "method,landmark,tau,tpr,tnr,rho,xi,value,ess";
  if (bootstrap_b > 0) out << ",tpr_lo,tpr_hi,tnr_lo,tnr_hi,value_lo,value_hi";
  out << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    out << evaluator << ',' << (row.landmark ? asurv::format_double(*row.landmark) : "avg") << ','
        << asurv::format_double(tau) << ',' << csv_cell(row.tpr) << ',' << csv_cell(row.tnr)
        << ',' << csv_cell(row.rho) << ',' << csv_cell(row.xi) << ',' << csv_cell(row.value)
        << ',' << csv_cell(row.ess);
    if (bootstrap_b > 0)
      out << ',' << csv_cell(cis[i].tpr_lo) << ',' << csv_cell(cis[i].tpr_hi) << ','
          << csv_cell(cis[i].tnr_lo) << ',' << csv_cell(cis[i].tnr_hi) << ','
          << csv_cell(cis[i].value_lo) << ',' << csv_cell(cis[i].value_hi);
    out << '\n';
  }
  out.close();
  std::cout << "report written to " << out_path << "\n";

  nlohmann::json manifest;
  manifest["command"] = "evaluate";
  manifest["rule"] = rule_path;
  manifest["dataset"] = data_path;
  manifest["evaluator"] = evaluator;
  manifest["bootstrap"] = bootstrap_b;
  manifest["seed"] = seed;
  manifest["h"] = bw.h;
  manifest["htilde"] = bw.htilde;
  manifest["outputs"] = {out_path};
  asurv::write_manifest(out_path + ".manifest.json", manifest);
  return 0;
}

int run_compare(const std::string& config_path, const std::string& out_dir, int threads) {
  std::ifstream in(config_path);
  if (!in) throw asurv::ParseError("cannot open config file: " + config_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw asurv::ParseError(std::string("config file: ") + e.what());
  }
  asurv::ExperimentConfig cfg = asurv::experiment_config_from_json(j);
  if (threads > 0) cfg.threads = threads;
  auto result = asurv::run_experiment(cfg);
  asurv::write_experiment(out_dir, result);
  for (const auto& f : result.failures) std::cerr << "note: " << f << "\n";
  std::cout << "wrote " << result.metrics.size() << " metric rows to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tailored active-surveillance rules under interval censoring"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic surveillance cohort");
  asurv::ScenarioConfig sim_cfg;
  std::string sim_out;
  std::string sim_baseline = "weibull";
  bool sim_full = false;
  sim->add_option("--scenario", sim_cfg.scenario, "Scenario 1 or 2")->check(CLI::IsMember({1, 2}));
  sim->add_option("--n", sim_cfg.n, "Cohort size")->required();
  sim->add_option("--tgap", sim_cfg.t_gap, "Minimum biopsy gap in months")->required();
  sim->add_option("--seed", sim_cfg.seed, "Master seed");
  sim->add_option("--out", sim_out, "Output JSONL path")->required();
  sim->add_flag("--no-censoring", sim_cfg.no_censoring, "Disable loss to follow-up");
  sim->add_option("--miss-prob", sim_cfg.miss_prob, "Per-biopsy miss probability")
      ->check(CLI::Range(0.0, 1.0));
  sim->add_flag("--panel", sim_cfg.panel, "Keep biopsies after a positive (no dropout)");
  sim->add_flag("--full", sim_full, "Write the complete schedule instead of the observed record");
  sim->add_option("--baseline", sim_baseline, "Scenario-1 baseline hazard")
      ->check(CLI::IsMember({"weibull", "paper-verbatim"}));
  sim->add_option("--landmarks", sim_cfg.measurement_times,
                  "Covariate measurement times (months)")
      ->delimiter(',');

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a tailored rule by weighted surrogate minimization");
  std::string fit_data, fit_out = "rule.json", fit_method = "osf-i";
  asurv::FitConfig fit_cfg;
  double fit_r = 0.0;
  std::vector<double> fit_xi;
  std::uint64_t fit_seed = 1;
  KernelFlags fit_kernel;
  fit->add_option("dataset", fit_data, "Dataset JSONL path")->required();
  fit->add_option("--method", fit_method, "osf-i (interval) or osf-r (right-censoring baseline)")
      ->check(CLI::IsMember({"osf-i", "osf-r"}));
  auto* fit_r_opt = fit->add_option("--r", fit_r, "Cost-benefit ratio for estimated xi");
  auto* fit_xi_opt =
      fit->add_option("--xi", fit_xi, "Explicit xi per landmark (or one value)")->delimiter(',');
  fit->add_option("--landmarks", fit_cfg.landmarks, "Decision landmarks (months)")->delimiter(',');
  fit->add_option("--tau", fit_cfg.tau, "Decision horizon (months)");
  fit->add_option("--lambda", fit_cfg.lambda_grid, "Ridge grid for cross-validation")
      ->delimiter(',');
  fit->add_option("--folds", fit_cfg.folds, "Cross-validation folds")->check(CLI::Range(2, 100));
  fit->add_option("--seed", fit_seed, "Seed recorded in the manifest");
  fit->add_option("--out", fit_out, "Rule JSON output path");
  fit_kernel.attach(fit);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Estimate TPR/TNR/value of a saved rule");
  std::string ev_rule, ev_data, ev_out = "report.csv", ev_evaluator = "kr-i";
  double ev_r = 0.0;
  std::vector<double> ev_xi;
  int ev_bootstrap = 0;
  std::uint64_t ev_seed = 1;
  KernelFlags ev_kernel;
  ev->add_option("rule", ev_rule, "Rule JSON path")->required();
  ev->add_option("dataset", ev_data, "Dataset JSONL path")->required();
  ev->add_option("--evaluator", ev_evaluator, "Estimator to apply")
      ->check(CLI::IsMember({"kr-i", "kr-cs", "ipcw", "oracle"}));
  auto* ev_r_opt = ev->add_option("--r", ev_r, "Cost-benefit ratio for xi");
  auto* ev_xi_opt = ev->add_option("--xi", ev_xi, "Explicit xi per landmark")->delimiter(',');
  ev->add_option("--bootstrap", ev_bootstrap, "Bootstrap replicates for percentile intervals");
  ev->add_option("--seed", ev_seed, "Bootstrap seed");
  ev->add_option("--out", ev_out, "Report CSV output path");
  ev_kernel.attach(ev);

  // compare
  auto* cmp = app.add_subcommand("compare", "Run a replicated simulation experiment");
  std::string cmp_config, cmp_out = "experiment";
  int cmp_threads = 0;
  cmp->add_option("--config", cmp_config, "Experiment config JSON")->required();
  cmp->add_option("--out", cmp_out, "Output directory")->required();
  cmp->add_option("--threads", cmp_threads, "Worker threads (0 = hardware)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (sim->parsed()) {
      sim_cfg.baseline = sim_baseline == "paper-verbatim" ? asurv::BaselineHazard::paper_verbatim
                                                          : asurv::BaselineHazard::weibull;
      return run_simulate(sim_out, sim_cfg, sim_full);
    }
    if (fit->parsed()) {
      if ((fit_r_opt->count() > 0) == (fit_xi_opt->count() > 0)) {
        std::cerr << "error: exactly one of --r or --xi is required\n";
        return kExitUsage;
      }
      if (fit_r_opt->count() > 0) fit_cfg.r = fit_r;
      else fit_cfg.xi = fit_xi;
      return run_fit(fit_data, fit_out, fit_method, fit_cfg, fit_kernel, fit_seed);
    }
    if (ev->parsed()) {
      if (ev_r_opt->count() > 0 && ev_xi_opt->count() > 0) {
        std::cerr << "error: --r and --xi are mutually exclusive\n";
        return kExitUsage;
      }
      std::optional<double> r_opt;
      if (ev_r_opt->count() > 0) r_opt = ev_r;
      return run_evaluate(ev_rule, ev_data, ev_out, ev_evaluator, r_opt, ev_xi, ev_kernel,
                          ev_bootstrap, ev_seed);
    }
    if (cmp->parsed()) return run_compare(cmp_config, cmp_out, cmp_threads);
  } catch (const asurv::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const asurv::NoConvergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNoConvergence;
  } catch (const asurv::InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const asurv::Error& e) {
    // degenerate estimation: DegenerateWindow, ZeroPrevalence, GZero, ...
    std::cerr << "error: " << e.what() << "\n";
    return kExitDegenerate;
  }
  return 0;
}
