#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "asurv/estimators.hpp"
#include "asurv/io.hpp"
#include "asurv/policy.hpp"
#include "asurv/rng.hpp"
#include "asurv/simulate.hpp"

namespace asurv {

// One line of an evaluation report; landmark absent means the landmark
// average. Missing metrics stay empty in the CSV.
struct ReportRow {
  std::string method;
  std::optional<double> landmark;
  double tau = 0.0;
  std::optional<double> tpr, tnr, rho, xi, value, ess;
  std::optional<double> tpr_lo, tpr_hi, tnr_lo, tnr_hi, value_lo, value_hi;
};

struct EvaluationReport {
  std::vector<ReportRow> rows;
  int skipped = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline const Truth& require_truth(const SubjectRecord& rec) {
  if (!rec.truth) throw InvalidInput("oracle evaluation requires truth blocks");
  return *rec.truth;
}

}  // namespace detail

// True TPR/TNR/value of a rule from the recorded event times: TPR over
// subjects with T in (s, s+tau], TNR over subjects with T > s+tau. Landmarks
// with an empty stratum are skipped with a warning.
inline EvaluationReport oracle_metrics(const DecisionFn& rule, const Dataset& data,
                                       const std::vector<double>& landmarks, double tau,
                                       const std::vector<double>& xi) {
  if (data.empty()) throw EmptyData("oracle_metrics: empty dataset");
  if (xi.size() != landmarks.size())
    throw LengthMismatch("oracle_metrics: xi and landmarks must align");
  EvaluationReport report;
  double acc_tpr = 0.0, acc_tnr = 0.0, acc_value = 0.0;
  int used = 0;
  for (std::size_t j = 0; j < landmarks.size(); ++j) {
    const double s = landmarks[j];
    int cases = 0, case_hits = 0, controls = 0, control_hits = 0, at_risk = 0;
    for (const auto& rec : data) {
      const double t = detail::require_truth(rec).event_time;
      if (t > s) ++at_risk;
      if (t > s && t <= s + tau) {
        ++cases;
        if (rule(rec, s) == +1) ++case_hits;
      } else if (t > s + tau) {
        ++controls;
        if (rule(rec, s) == -1) ++control_hits;
      }
    }
    ReportRow row;
    row.method = "oracle";
    row.landmark = s;
    row.tau = tau;
    row.xi = xi[j];
    if (cases == 0 || controls == 0) {
      report.warnings.push_back("landmark " + std::to_string(s) +
                                " skipped: empty case or control stratum");
      ++report.skipped;
      report.rows.push_back(row);
      continue;
    }
    row.tpr = static_cast<double>(case_hits) / cases;
    row.tnr = static_cast<double>(control_hits) / controls;
    row.rho = static_cast<double>(cases) / at_risk;
    row.value = *row.tpr + xi[j] * *row.tnr;
    row.ess = cases + controls;
    acc_tpr += *row.tpr;
    acc_tnr += *row.tnr;
    acc_value += *row.value;
    ++used;
    report.rows.push_back(row);
  }
  if (used == 0) throw EmptyStratum("oracle_metrics: every landmark stratum is empty");
  ReportRow avg;
  avg.method = "oracle";
  avg.tau = tau;
  avg.tpr = acc_tpr / used;
  avg.tnr = acc_tnr / used;
  avg.value = acc_value / used;
  report.rows.push_back(avg);
  return report;
}

// Cost-benefit xi at each landmark from the true conditional prevalence.
// Empty case strata fall back to the upper clip bound.
inline std::vector<double> oracle_xi(const Dataset& data, const std::vector<double>& landmarks,
                                     double tau, double r, const XiBounds& bounds = {}) {
  std::vector<double> xi;
  for (double s : landmarks) {
    int cases = 0, at_risk = 0;
    for (const auto& rec : data) {
      const double t = detail::require_truth(rec).event_time;
      if (t > s) ++at_risk;
      if (t > s && t <= s + tau) ++cases;
    }
    if (at_risk == 0 || cases == 0) {
      xi.push_back(bounds.hi);
      continue;
    }
    xi.push_back(xi_from_ratio(static_cast<double>(cases) / at_risk, r, bounds));
  }
  return xi;
}

using Statistic = std::function<double(const Dataset&)>;

struct BootstrapCi {
  double lower = 0.0;
  double upper = 0.0;
  int failures = 0;
};

// Percentile interval from B subject-level resamples (nearest-rank quantiles).
// Resamples that fail to produce the statistic are counted; more than 10%
// failures aborts.
inline BootstrapCi bootstrap_ci(const Statistic& stat, const Dataset& data, int b_reps,
                                std::uint64_t seed, double level = 0.95) {
  if (b_reps < 2) throw InvalidInput("bootstrap_ci: need B >= 2");
  if (data.empty()) throw EmptyData("bootstrap_ci: empty dataset");
  std::vector<double> values;
  values.reserve(b_reps);
  int failures = 0;
  const std::size_t n = data.size();
  for (int b = 0; b < b_reps; ++b) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(b)));
    Dataset resample;
    resample.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto idx = static_cast<std::size_t>(rng.u01() * static_cast<double>(n));
      if (idx >= n) idx = n - 1;
      resample.push_back(data[idx]);
    }
    try {
      values.push_back(stat(resample));
    } catch (const Error&) {
      ++failures;
    }
  }
  if (failures * 10 > b_reps)
    throw StatisticFailure("bootstrap_ci: " + std::to_string(failures) + " of " +
                           std::to_string(b_reps) + " resamples failed");
  std::sort(values.begin(), values.end());
  const auto m = static_cast<double>(values.size());
  const double alpha = 1.0 - level;
  auto rank = [m](double p) {
    auto idx = static_cast<long>(std::ceil(p * m)) - 1;
    return static_cast<std::size_t>(std::clamp<long>(idx, 0, static_cast<long>(m) - 1));
  };
  return BootstrapCi{values[rank(alpha / 2)], values[rank(1.0 - alpha / 2)], failures};
}

// Run `count` tasks over a small worker pool; exceptions other than the
// per-task handled kind propagate to the caller.
inline void parallel_for(std::size_t count, int threads,
                         const std::function<void(std::size_t)>& body) {
  if (threads <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    threads = hw == 0 ? 1 : static_cast<int>(hw);
  }
  threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads),
                                                   count == 0 ? 1 : count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

enum class ExperimentMode { eval_bias, policy_value };

// Batch experiment description; JSON-loadable for the compare subcommand.
struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::policy_value;
  int scenario = 1;
  std::size_t n_train = 500;
  std::size_t n_test = 1000;
  double t_gap = 24.0;
  std::vector<double> r_values{2.0, 4.0, 6.0, 8.0};
  std::vector<std::string> methods{"osf-i", "osf-r"};
  std::vector<std::string> evaluators{"oracle"};
  int replications = 100;
  std::uint64_t seed = 1;
  std::vector<double> landmarks{12.0, 24.0, 36.0, 48.0};
  double tau = 12.0;
  std::vector<double> lambda_grid{0.01, 0.1, 1.0};
  int folds = 3;
  KernelSpec kernel;
  std::optional<double> h, htilde;
  bool no_censoring = false;
  BaselineHazard baseline = BaselineHazard::weibull;
  // eval-bias mode: size of each evaluation cohort and the reference rule,
  // fit once with OSF-R as in the source protocol
  std::size_t n_eval = 500;
  double rule_r = 3.0;
  double rule_tgap = 24.0;
  std::size_t rule_n = 500;
  double eval_r = 3.0;
  int threads = 0;  // 0 = hardware concurrency
};

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["mode"] = c.mode == ExperimentMode::eval_bias ? "eval-bias" : "policy-value";
  j["scenario"] = c.scenario;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["tgap"] = c.t_gap;
  j["r_values"] = c.r_values;
  j["methods"] = c.methods;
  j["evaluators"] = c.evaluators;
  j["replications"] = c.replications;
  j["seed"] = c.seed;
  j["landmarks"] = c.landmarks;
  j["tau"] = c.tau;
  j["lambda_grid"] = c.lambda_grid;
  j["folds"] = c.folds;
  j["kernel"] = c.kernel.family == KernelFamily::biweight ? "biweight" : "epanechnikov";
  if (c.h) j["h"] = *c.h;
  if (c.htilde) j["htilde"] = *c.htilde;
  j["no_censoring"] = c.no_censoring;
  j["baseline_hazard"] = c.baseline == BaselineHazard::paper_verbatim ? "paper-verbatim" : "weibull";
  j["n_eval"] = c.n_eval;
  j["rule_r"] = c.rule_r;
  j["rule_tgap"] = c.rule_tgap;
  j["rule_n"] = c.rule_n;
  j["eval_r"] = c.eval_r;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("mode")) {
      const auto m = j.at("mode").get<std::string>();
      if (m == "eval-bias")
        c.mode = ExperimentMode::eval_bias;
      else if (m == "policy-value")
        c.mode = ExperimentMode::policy_value;
      else
        throw ParseError("unknown experiment mode: " + m);
    }
    if (j.contains("scenario")) c.scenario = j.at("scenario").get<int>();
    if (j.contains("n_train")) c.n_train = j.at("n_train").get<std::size_t>();
    if (j.contains("n_test")) c.n_test = j.at("n_test").get<std::size_t>();
    if (j.contains("tgap")) c.t_gap = j.at("tgap").get<double>();
    if (j.contains("r_values")) c.r_values = j.at("r_values").get<std::vector<double>>();
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("evaluators")) c.evaluators = j.at("evaluators").get<std::vector<std::string>>();
    if (j.contains("replications")) c.replications = j.at("replications").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("landmarks")) c.landmarks = j.at("landmarks").get<std::vector<double>>();
    if (j.contains("tau")) c.tau = j.at("tau").get<double>();
    if (j.contains("lambda_grid")) c.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    if (j.contains("folds")) c.folds = j.at("folds").get<int>();
    if (j.contains("kernel")) {
      const auto k = j.at("kernel").get<std::string>();
      if (k == "biweight")
        c.kernel.family = KernelFamily::biweight;
      else if (k == "epanechnikov")
        c.kernel.family = KernelFamily::epanechnikov;
      else
        throw ParseError("unknown kernel: " + k);
    }
    if (j.contains("h") && !j.at("h").is_null()) c.h = j.at("h").get<double>();
    if (j.contains("htilde") && !j.at("htilde").is_null()) c.htilde = j.at("htilde").get<double>();
    if (j.contains("no_censoring")) c.no_censoring = j.at("no_censoring").get<bool>();
    if (j.contains("baseline_hazard")) {
      const auto b = j.at("baseline_hazard").get<std::string>();
      if (b == "paper-verbatim")
        c.baseline = BaselineHazard::paper_verbatim;
      else if (b == "weibull")
        c.baseline = BaselineHazard::weibull;
      else
        throw ParseError("unknown baseline_hazard: " + b);
    }
    if (j.contains("n_eval")) c.n_eval = j.at("n_eval").get<std::size_t>();
    if (j.contains("rule_r")) c.rule_r = j.at("rule_r").get<double>();
    if (j.contains("rule_tgap")) c.rule_tgap = j.at("rule_tgap").get<double>();
    if (j.contains("rule_n")) c.rule_n = j.at("rule_n").get<std::size_t>();
    if (j.contains("eval_r")) c.eval_r = j.at("eval_r").get<double>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
  return c;
}

struct MetricsRow {
  int rep = 0;
  double r = 0.0;
  std::string method;
  std::string evaluator;
  std::optional<double> landmark;  // absent = landmark average
  double tau = 0.0;
  std::optional<double> tpr, tnr, rho, xi, value, ess;
};

struct SummaryRow {
  double r = 0.0;
  std::string method;
  std::string evaluator;
  std::string landmark;  // number or "avg"
  std::string metric;
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
};

struct ExperimentResult {
  std::vector<MetricsRow> metrics;
  std::vector<SummaryRow> summary;
  std::vector<std::string> failures;
  nlohmann::json manifest;
};

namespace detail {

// Bandwidths for a simulated design: the scaled n^{-1/5}, n^{-1/6} rules,
// with the pair bandwidth floored at (T_gap + tau)/2 so the bivariate window
// spans gaps in [T_gap, T_gap + 2 tau], the narrowest brackets the schedule
// can produce. Without the floor every pair window is empty once
// T_gap > tau + 2*htilde.
inline Bandwidths experiment_bandwidths(const Dataset& data, double t_gap, double tau,
                                        const std::optional<double>& h_override,
                                        const std::optional<double>& htilde_override) {
  std::vector<double> times;
  for (const auto& rec : data)
    for (const auto& b : rec.biopsies)
      if (b.time > 0.0) times.push_back(b.time);
  Bandwidths bw{1.0, 1.0};
  if (times.size() >= 2) bw = default_bandwidths(data.size(), biopsy_time_scale(times));
  bw.htilde = std::max(bw.htilde, 0.5 * (t_gap + tau));
  if (h_override) bw.h = *h_override;
  if (htilde_override) bw.htilde = *htilde_override;
  return bw;
}

inline ScenarioConfig make_scenario(const ExperimentConfig& cfg, std::size_t n, double t_gap,
                                    std::uint64_t seed) {
  ScenarioConfig sc;
  sc.scenario = cfg.scenario;
  sc.n = n;
  sc.t_gap = t_gap;
  sc.seed = seed;
  sc.no_censoring = cfg.no_censoring;
  sc.baseline = cfg.baseline;
  sc.measurement_times = cfg.landmarks;
  return sc;
}

// Metric rows for one evaluator applied to one dataset under a fixed xi
// vector; always emits one row per landmark plus the average row so the
// output shape is stable. Unavailable estimates stay empty.
inline std::vector<MetricsRow> evaluate_rows(const std::string& evaluator, const DecisionFn& rule,
                                             const Dataset& data,
                                             const std::vector<double>& landmarks, double tau,
                                             const std::vector<double>& xi, const Bandwidths& bw,
                                             const KernelSpec& kernel,
                                             std::vector<std::string>& failures) {
  std::vector<MetricsRow> rows;
  double acc_tpr = 0.0, acc_tnr = 0.0, acc_value = 0.0;
  int used = 0;
  auto note = [&](double s, const char* what) {
    failures.push_back(evaluator + " landmark " + format_double(s) + ": " + what);
  };
  if (evaluator == "oracle") {
    const auto report = oracle_metrics(rule, data, landmarks, tau, xi);
    for (const auto& rr : report.rows) {
      MetricsRow row;
      row.evaluator = evaluator;
      row.landmark = rr.landmark;
      row.tau = tau;
      row.tpr = rr.tpr;
      row.tnr = rr.tnr;
      row.rho = rr.rho;
      row.xi = rr.xi;
      row.value = rr.value;
      row.ess = rr.ess;
      rows.push_back(row);
    }
    for (const auto& w : report.warnings) failures.push_back("oracle: " + w);
    return rows;
  }
  for (std::size_t j = 0; j < landmarks.size(); ++j) {
    const double s = landmarks[j];
    MetricsRow row;
    row.evaluator = evaluator;
    row.landmark = s;
    row.tau = tau;
    row.xi = xi[j];
    try {
      if (evaluator == "kr-i") {
        const auto tpr = estimate_tpr(rule, data, s, tau, bw.htilde, kernel);
        const auto tnr = estimate_tnr(rule, data, s, tau, bw.h, kernel);
        row.tpr = tpr.value;
        row.tnr = tnr.value;
        row.ess = tpr.ess;
        try {
          row.rho = estimate_prevalence(data, s, tau, bw.htilde, kernel).value;
        } catch (const DegenerateWindow&) {
        }
      } else if (evaluator == "kr-cs") {
        row.tpr = krcs_tpr(rule, data, s, tau, bw.h, kernel);
        row.tnr = estimate_tnr(rule, data, s, tau, bw.h, kernel).value;
      } else if (evaluator == "ipcw") {
        const auto est = ipcw_tpr_tnr(rule, data, s, tau);
        row.tpr = est.tpr;
        row.tnr = est.tnr;
      } else {
        throw InvalidInput("unknown evaluator: " + evaluator);
      }
      row.value = *row.tpr + xi[j] * *row.tnr;
      acc_tpr += *row.tpr;
      acc_tnr += *row.tnr;
      acc_value += *row.value;
      ++used;
    } catch (const DegenerateWindow& e) {
      note(s, e.what());
    } catch (const GZero& e) {
      note(s, e.what());
    }
    rows.push_back(row);
  }
  MetricsRow avg;
  avg.evaluator = evaluator;
  avg.tau = tau;
  if (used > 0) {
    avg.tpr = acc_tpr / used;
    avg.tnr = acc_tnr / used;
    avg.value = acc_value / used;
  }
  rows.push_back(avg);
  return rows;
}

struct Accumulator {
  double sum = 0.0, sumsq = 0.0;
  int n = 0;
  void add(double v) {
    sum += v;
    sumsq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / n : 0.0; }
  double sd() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = (sumsq - n * m * m) / (n - 1);
    return var > 0.0 ? std::sqrt(var) : 0.0;
  }
};

inline std::string landmark_label(const std::optional<double>& l) {
  return l ? format_double(*l) : "avg";
}

}  // namespace detail

// Reproduces the simulation studies: either the estimator-bias design
// (a fixed reference rule evaluated by each estimator against the oracle on
// fresh cohorts) or the policy-value design (each method refit per
// replication and scored on a shared test cohort). Replications run in
// parallel; outputs are ordered by replication index and do not depend on
// the thread count.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.replications < 1) throw InvalidInput("run_experiment: replications must be >= 1");
  ExperimentResult result;
  const std::vector<double>& landmarks = cfg.landmarks;
  const double tau = cfg.tau;

  struct RepOutput {
    std::vector<MetricsRow> rows;
    std::vector<std::string> failures;
  };
  std::vector<RepOutput> reps(static_cast<std::size_t>(cfg.replications));

  if (cfg.mode == ExperimentMode::eval_bias) {
    // Reference rule fit once with OSF-R, as in the source evaluation design.
    const auto rule_data =
        simulate_dataset(detail::make_scenario(cfg, cfg.rule_n, cfg.rule_tgap,
                                               Rng::mix(cfg.seed, 900001)));
    FitConfig fit_cfg;
    fit_cfg.landmarks = landmarks;
    fit_cfg.tau = tau;
    fit_cfg.r = cfg.rule_r;
    fit_cfg.lambda_grid = cfg.lambda_grid;
    fit_cfg.folds = cfg.folds;
    fit_cfg.kernel = cfg.kernel;
    const auto ref = fit_osf_r(rule_data.observed, fit_cfg);
    const DecisionFn rule = make_decider(ref.rule);

    parallel_for(reps.size(), cfg.threads, [&](std::size_t rep) {
      auto& out = reps[rep];
      const auto test = simulate_dataset(detail::make_scenario(
          cfg, cfg.n_eval, cfg.t_gap, Rng::mix(cfg.seed, 920000 + rep)));
      const auto xi = oracle_xi(test.observed, landmarks, tau, cfg.eval_r);
      const auto bw =
          detail::experiment_bandwidths(test.observed, cfg.t_gap, tau, cfg.h, cfg.htilde);
      for (const auto& evaluator : cfg.evaluators) {
        auto rows = detail::evaluate_rows(evaluator, rule, test.observed, landmarks, tau, xi, bw,
                                          cfg.kernel, out.failures);
        for (auto& row : rows) {
          row.rep = static_cast<int>(rep);
          row.r = cfg.eval_r;
          row.method = "fixed";
          out.rows.push_back(std::move(row));
        }
      }
    });
  } else {
    const auto test = simulate_dataset(
        detail::make_scenario(cfg, cfg.n_test, cfg.t_gap, Rng::mix(cfg.seed, 910001)));
    std::vector<std::vector<double>> xi_by_r;
    for (double r : cfg.r_values)
      xi_by_r.push_back(oracle_xi(test.observed, landmarks, tau, r));
    const auto test_bw =
        detail::experiment_bandwidths(test.observed, cfg.t_gap, tau, cfg.h, cfg.htilde);

    parallel_for(reps.size(), cfg.threads, [&](std::size_t rep) {
      auto& out = reps[rep];
      const auto train = simulate_dataset(detail::make_scenario(
          cfg, cfg.n_train, cfg.t_gap, Rng::mix(cfg.seed, 930000 + rep)));
      const auto train_bw =
          detail::experiment_bandwidths(train.observed, cfg.t_gap, tau, cfg.h, cfg.htilde);
      for (std::size_t ri = 0; ri < cfg.r_values.size(); ++ri) {
        const double r = cfg.r_values[ri];
        for (const auto& method : cfg.methods) {
          FitConfig fit_cfg;
          fit_cfg.landmarks = landmarks;
          fit_cfg.tau = tau;
          fit_cfg.r = r;
          fit_cfg.lambda_grid = cfg.lambda_grid;
          fit_cfg.folds = cfg.folds;
          fit_cfg.kernel = cfg.kernel;
          fit_cfg.h = train_bw.h;
          fit_cfg.htilde = train_bw.htilde;
          try {
            const FitOutput fit = method == "osf-r" ? fit_osf_r(train.observed, fit_cfg)
                                                    : fit_rule(train.observed, fit_cfg);
            const DecisionFn rule = make_decider(fit.rule);
            for (const auto& evaluator : cfg.evaluators) {
              auto rows = detail::evaluate_rows(evaluator, rule, test.observed, landmarks, tau,
                                                xi_by_r[ri], test_bw, cfg.kernel, out.failures);
              for (auto& row : rows) {
                row.rep = static_cast<int>(rep);
                row.r = r;
                row.method = method;
                out.rows.push_back(std::move(row));
              }
            }
          } catch (const Error& e) {
            out.failures.push_back("rep " + std::to_string(rep) + " r=" + format_double(r) +
                                   " " + method + ": " + e.what());
          }
        }
      }
    });
  }

  for (auto& rep : reps) {
    for (auto& row : rep.rows) result.metrics.push_back(std::move(row));
    for (auto& f : rep.failures) result.failures.push_back(std::move(f));
  }

  // summaries: mean/sd by (r, method, evaluator, landmark) for each metric,
  // plus absolute errors against the oracle rows of the same replication
  std::map<std::string, detail::Accumulator> acc;
  std::map<std::string, std::tuple<double, std::string, std::string, std::string, std::string>> meta;
  auto key_of = [](double r, const std::string& method, const std::string& evaluator,
                   const std::string& landmark, const std::string& metric) {
    return format_double(r) + "|" + method + "|" + evaluator + "|" + landmark + "|" + metric;
  };
  auto add_metric = [&](double r, const std::string& method, const std::string& evaluator,
                        const std::string& landmark, const std::string& metric, double v) {
    const auto key = key_of(r, method, evaluator, landmark, metric);
    acc[key].add(v);
    meta.emplace(key, std::make_tuple(r, method, evaluator, landmark, metric));
  };
  // oracle lookup per (rep, r, method, landmark-label)
  std::map<std::string, const MetricsRow*> oracle_rows;
  for (const auto& row : result.metrics)
    if (row.evaluator == "oracle")
      oracle_rows[std::to_string(row.rep) + "|" + format_double(row.r) + "|" + row.method + "|" +
                  detail::landmark_label(row.landmark)] = &row;
  for (const auto& row : result.metrics) {
    const std::string lm = detail::landmark_label(row.landmark);
    if (row.tpr) add_metric(row.r, row.method, row.evaluator, lm, "tpr", *row.tpr);
    if (row.tnr) add_metric(row.r, row.method, row.evaluator, lm, "tnr", *row.tnr);
    if (row.value) add_metric(row.r, row.method, row.evaluator, lm, "value", *row.value);
    if (row.evaluator != "oracle") {
      auto it = oracle_rows.find(std::to_string(row.rep) + "|" + format_double(row.r) + "|" +
                                 row.method + "|" + lm);
      if (it != oracle_rows.end()) {
        const auto& orc = *it->second;
        if (row.tpr && orc.tpr)
          add_metric(row.r, row.method, row.evaluator, lm, "abs_err_tpr",
                     std::abs(*row.tpr - *orc.tpr));
        if (row.tnr && orc.tnr)
          add_metric(row.r, row.method, row.evaluator, lm, "abs_err_tnr",
                     std::abs(*row.tnr - *orc.tnr));
        if (row.value && orc.value)
          add_metric(row.r, row.method, row.evaluator, lm, "abs_err_value",
                     std::abs(*row.value - *orc.value));
      }
    }
  }
  for (const auto& [key, a] : acc) {
    const auto& [r, method, evaluator, landmark, metric] = meta.at(key);
    result.summary.push_back(SummaryRow{r, method, evaluator, landmark, metric, a.mean(), a.sd(),
                                        a.n});
  }

  result.manifest["config"] = experiment_config_to_json(cfg);
  result.manifest["failures"] = result.failures;
  result.manifest["metric_rows"] = result.metrics.size();
  return result;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open output file: " + path);
  out << "rep,r,method,evaluator,landmark,tau,tpr,tnr,rho,xi,value,ess\n";
  for (const auto& row : rows) {
    out << row.rep << ',' << format_double(row.r) << ',' << row.method << ',' << row.evaluator
        << ',' << detail::landmark_label(row.landmark) << ',' << format_double(row.tau) << ','
        << format_optional(row.tpr) << ',' << format_optional(row.tnr) << ','
        << format_optional(row.rho) << ',' << format_optional(row.xi) << ','
        << format_optional(row.value) << ',' << format_optional(row.ess) << '\n';
  }
}

inline void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open output file: " + path);
  out << "r,method,evaluator,landmark,metric,mean,sd,n\n";
  for (const auto& row : rows) {
    out << format_double(row.r) << ',' << row.method << ',' << row.evaluator << ','
        << row.landmark << ',' << row.metric << ',' << format_double(row.mean) << ','
        << format_double(row.sd) << ',' << row.n << '\n';
  }
}

inline void write_experiment(const std::string& dir, const ExperimentResult& result) {
  std::filesystem::create_directories(dir);
  write_metrics_csv(dir + "/metrics.csv", result.metrics);
  write_summary_csv(dir + "/summary.csv", result.summary);
  write_manifest(dir + "/manifest.json", result.manifest);
}

}  // namespace asurv
