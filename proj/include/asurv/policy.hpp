#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "asurv/data.hpp"
#include "asurv/errors.hpp"
#include "asurv/estimators.hpp"
#include "asurv/kernel.hpp"

namespace asurv {

// Linear decision rule on standardized features; decide = sign(score) with
// sign(0) = +1 so ties trigger a biopsy.
struct LinearRule {
  double intercept = 0.0;
  std::vector<double> coef;
  std::vector<double> feat_mean;  // empty = identity standardization
  std::vector<double> feat_sd;

  double score(const std::vector<double>& z) const {
    if (z.size() != coef.size()) throw LengthMismatch("LinearRule: feature dimension mismatch");
    double s = intercept;
    for (std::size_t k = 0; k < coef.size(); ++k) {
      const double m = feat_mean.empty() ? 0.0 : feat_mean[k];
      const double sd = feat_sd.empty() ? 1.0 : feat_sd[k];
      s += coef[k] * (z[k] - m) / sd;
    }
    return s;
  }

  int decide(const std::vector<double>& z) const { return score(z) >= 0.0 ? +1 : -1; }
};

inline DecisionFn make_decider(LinearRule rule) {
  return [rule = std::move(rule)](const SubjectRecord& rec, double s) {
    return rule.decide(features_at(rec, s));
  };
}

struct FitConfig {
  std::vector<double> landmarks{12.0, 24.0, 36.0, 48.0};
  double tau = 12.0;
  std::optional<double> r;        // cost-benefit ratio; xi estimated per landmark
  std::vector<double> xi;         // explicit weights, length J or 1 (broadcast)
  std::vector<double> lambda_grid{0.01, 0.1, 1.0};
  int folds = 3;
  int max_iter = 20000;
  double grad_tol = 1e-8;
  KernelSpec kernel;
  std::optional<double> h;        // bandwidth overrides; scaled rule otherwise
  std::optional<double> htilde;
  XiBounds xi_bounds;
  bool trace = false;
};

// W_+ = [W1 - xi*W-1]_+ and W_- = [W1 - xi*W-1]_-, elementwise.
inline std::pair<std::vector<double>, std::vector<double>> surrogate_weights(
    const WeightVector& w1, const WeightVector& wm1, double xi) {
  if (w1.w.size() != wm1.w.size())
    throw LengthMismatch("surrogate_weights: weight vectors must align");
  std::vector<double> wp(w1.w.size()), wm(w1.w.size());
  for (std::size_t i = 0; i < w1.w.size(); ++i) {
    const double diff = w1.w[i] - xi * wm1.w[i];
    wp[i] = diff > 0.0 ? diff : 0.0;
    wm[i] = diff < 0.0 ? -diff : 0.0;
  }
  return {std::move(wp), std::move(wm)};
}

// Logistic surrogate phi(u) = log(1 + exp(-u)), evaluated stably.
inline double logistic_loss(double u) {
  return u >= 0.0 ? std::log1p(std::exp(-u)) : -u + std::log1p(std::exp(u));
}

// phi'(u) = -1 / (1 + exp(u))
inline double logistic_loss_deriv(double u) { return -1.0 / (1.0 + std::exp(u)); }

namespace detail {

// Sparse training rows for one landmark: subjects with nonzero surrogate
// weight and available features. E_n keeps dividing by the full cohort size.
struct LandmarkBlock {
  double landmark = 0.0;
  double xi = 1.0;
  std::vector<std::vector<double>> x;  // standardized features
  std::vector<double> wp, wm;
};

struct TrainingTables {
  std::vector<LandmarkBlock> blocks;
  std::size_t n_subjects = 0;
  std::size_t dim = 0;
  std::vector<double> feat_mean, feat_sd;
};

struct Params {
  double intercept = 0.0;
  std::vector<double> coef;
};

inline double surrogate_loss(const Params& p, const TrainingTables& tables, double lambda) {
  const double inv_nj =
      1.0 / (static_cast<double>(tables.n_subjects) * static_cast<double>(tables.blocks.size()));
  double acc = 0.0;
  for (const auto& block : tables.blocks) {
    for (std::size_t i = 0; i < block.x.size(); ++i) {
      double f = p.intercept;
      for (std::size_t k = 0; k < p.coef.size(); ++k) f += p.coef[k] * block.x[i][k];
      acc += block.wp[i] * logistic_loss(f) + block.wm[i] * logistic_loss(-f);
    }
  }
  double ridge = 0.0;
  for (double c : p.coef) ridge += c * c;
  return acc * inv_nj + lambda * ridge;
}

inline Params surrogate_gradient(const Params& p, const TrainingTables& tables, double lambda) {
  const double inv_nj =
      1.0 / (static_cast<double>(tables.n_subjects) * static_cast<double>(tables.blocks.size()));
  Params g;
  g.coef.assign(p.coef.size(), 0.0);
  for (const auto& block : tables.blocks) {
    for (std::size_t i = 0; i < block.x.size(); ++i) {
      double f = p.intercept;
      for (std::size_t k = 0; k < p.coef.size(); ++k) f += p.coef[k] * block.x[i][k];
      const double s = block.wp[i] * logistic_loss_deriv(f) - block.wm[i] * logistic_loss_deriv(-f);
      g.intercept += s;
      for (std::size_t k = 0; k < p.coef.size(); ++k) g.coef[k] += s * block.x[i][k];
    }
  }
  g.intercept *= inv_nj;
  for (std::size_t k = 0; k < g.coef.size(); ++k) g.coef[k] = g.coef[k] * inv_nj + 2.0 * lambda * p.coef[k];
  return g;
}

struct SolveResult {
  Params params;
  double objective = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;  // accepted objective values when requested
};

// Gradient descent with backtracking line search from zero initialization.
// The objective is convex, so the stationary point found is the global
// minimum; the accepted iterates are monotone by the Armijo condition.
inline SolveResult minimize_surrogate(const TrainingTables& tables, double lambda, int max_iter,
                                      double grad_tol, bool trace = false) {
  SolveResult res;
  res.params.coef.assign(tables.dim, 0.0);
  double obj = surrogate_loss(res.params, tables, lambda);
  if (trace) res.trace.push_back(obj);
  double step = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    const Params g = surrogate_gradient(res.params, tables, lambda);
    double gnorm = std::abs(g.intercept);
    double gsq = g.intercept * g.intercept;
    for (double v : g.coef) {
      gnorm = std::max(gnorm, std::abs(v));
      gsq += v * v;
    }
    res.grad_norm = gnorm;
    res.iterations = it;
    if (gnorm <= grad_tol) {
      res.converged = true;
      res.objective = obj;
      return res;
    }
    step = std::min(step * 2.0, 1e6);
    Params cand;
    double cand_obj = obj;
    bool accepted = false;
    while (step > 1e-18) {
      cand.intercept = res.params.intercept - step * g.intercept;
      cand.coef.resize(g.coef.size());
      for (std::size_t k = 0; k < g.coef.size(); ++k)
        cand.coef[k] = res.params.coef[k] - step * g.coef[k];
      cand_obj = surrogate_loss(cand, tables, lambda);
      if (cand_obj <= obj - 1e-4 * step * gsq) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // Step size underflow: the objective is flat to machine precision.
      res.converged = gnorm <= std::max(grad_tol, 1e-6);
      res.objective = obj;
      return res;
    }
    res.params = std::move(cand);
    obj = cand_obj;
    if (trace) res.trace.push_back(obj);
  }
  res.objective = obj;
  res.converged = res.grad_norm <= grad_tol;
  return res;
}

}  // namespace detail

enum class FitMethod { osf_i, osf_r };

struct FitOutput {
  LinearRule rule;
  double lambda = 0.0;
  std::vector<double> landmarks_used;
  std::vector<double> xi_used;
  double objective = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
  std::vector<double> trace;
  std::vector<std::string> warnings;
};

namespace detail {

inline Bandwidths resolve_bandwidths(const Dataset& data, const FitConfig& cfg) {
  std::vector<double> times;
  for (const auto& rec : data)
    for (const auto& b : rec.biopsies)
      if (b.time > 0.0) times.push_back(b.time);
  Bandwidths bw{1.0, 1.0};
  if (times.size() >= 2) bw = default_bandwidths(data.size(), biopsy_time_scale(times));
  if (cfg.h) bw.h = *cfg.h;
  if (cfg.htilde) bw.htilde = *cfg.htilde;
  return bw;
}

// Per-landmark weight pair (W1 at s, W-1 at s+tau) and the xi used.
struct LandmarkWeights {
  double landmark = 0.0;
  double xi = 1.0;
  std::vector<double> w1, wm1;
};

// KR-I weights for OSF-I; xi from the pair-mass prevalence when r is given.
inline std::vector<LandmarkWeights> osf_i_weights(const Dataset& data, const FitConfig& cfg,
                                                  const Bandwidths& bw,
                                                  std::vector<std::string>& warnings) {
  std::vector<LandmarkWeights> out;
  for (std::size_t j = 0; j < cfg.landmarks.size(); ++j) {
    const double s = cfg.landmarks[j];
    try {
      LandmarkWeights lw;
      lw.landmark = s;
      lw.w1 = tpr_weights(data, s, cfg.tau, bw.htilde, cfg.kernel).w;
      lw.wm1 = tnr_weights(data, s, cfg.tau, bw.h, cfg.kernel).w;
      if (cfg.r) {
        const double rho = estimate_prevalence(data, s, cfg.tau, bw.htilde, cfg.kernel).value;
        lw.xi = xi_from_ratio(rho, *cfg.r, cfg.xi_bounds);
      } else {
        lw.xi = cfg.xi.size() == 1 ? cfg.xi[0] : cfg.xi.at(j);
      }
      out.push_back(std::move(lw));
    } catch (const DegenerateWindow& e) {
      warnings.push_back("landmark " + std::to_string(s) + " skipped: " + e.what());
    } catch (const ZeroPrevalence& e) {
      warnings.push_back("landmark " + std::to_string(s) + " skipped: " + e.what());
    }
  }
  return out;
}

// Kaplan-Meier estimate of the surrogate event time T* (first positive
// biopsy), used by the right-censoring baseline for its prevalence.
inline StepFunction km_surrogate_event(const Dataset& data) {
  if (data.empty()) throw EmptyData("km_surrogate_event: empty dataset");
  std::map<double, std::pair<int, int>> counts;
  for (const auto& rec : data) {
    const FollowUp f = follow_up(rec);
    auto& c = counts[f.end];
    if (f.event) c.first += 1;
    c.second += 1;
  }
  std::vector<double> times, values;
  double surv = 1.0;
  int at_risk = static_cast<int>(data.size());
  for (const auto& [t, c] : counts) {
    if (c.first > 0) {
      surv *= 1.0 - static_cast<double>(c.first) / static_cast<double>(at_risk);
      times.push_back(t);
      values.push_back(surv);
    }
    at_risk -= c.second;
  }
  return StepFunction(std::move(times), std::move(values));
}

// IPCW analogues of the KR-I weights for OSF-R. The event indicator
// 1{s < T* <= s+tau} / G(T*-) replaces the pair kernel and the at-risk
// indicator 1{V > s+tau} replaces the negative-biopsy kernel; both are
// normalized to sample mean 1 to stay on the same scale. When r is given,
// xi comes from the Kaplan-Meier prevalence of T*.
inline std::vector<LandmarkWeights> osf_r_weights(const Dataset& data, const FitConfig& cfg,
                                                  std::vector<std::string>& warnings) {
  const StepFunction g = km_censoring(data);
  const StepFunction surv = km_surrogate_event(data);
  const std::size_t n = data.size();
  std::vector<FollowUp> fu(n);
  for (std::size_t i = 0; i < n; ++i) fu[i] = follow_up(data[i]);
  std::vector<LandmarkWeights> out;
  for (std::size_t j = 0; j < cfg.landmarks.size(); ++j) {
    const double s = cfg.landmarks[j];
    LandmarkWeights lw;
    lw.landmark = s;
    lw.w1.assign(n, 0.0);
    lw.wm1.assign(n, 0.0);
    double sum1 = 0.0, summ1 = 0.0;
    bool gzero = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (fu[i].event && fu[i].end > s && fu[i].end <= s + cfg.tau) {
        const double gs = g.at_left(fu[i].end);
        if (gs <= 0.0) {
          gzero = true;
          break;
        }
        lw.w1[i] = 1.0 / gs;
        sum1 += lw.w1[i];
      }
      if (fu[i].end > s + cfg.tau) {
        lw.wm1[i] = 1.0;
        summ1 += 1.0;
      }
    }
    if (gzero) throw GZero("fit_osf_r: G(T*-) = 0 inside landmark " + std::to_string(s));
    if (sum1 <= 0.0 || summ1 <= 0.0) {
      warnings.push_back("landmark " + std::to_string(s) +
                         " skipped: no surrogate events or no follow-up beyond s+tau");
      continue;
    }
    for (auto& v : lw.w1) v *= static_cast<double>(n) / sum1;
    for (auto& v : lw.wm1) v *= static_cast<double>(n) / summ1;
    if (cfg.r) {
      const double s_at = surv.at(s), s_hor = surv.at(s + cfg.tau);
      if (s_at <= 0.0) {
        warnings.push_back("landmark " + std::to_string(s) + " skipped: S*(s) = 0");
        continue;
      }
      const double rho = 1.0 - s_hor / s_at;
      try {
        lw.xi = xi_from_ratio(rho, *cfg.r, cfg.xi_bounds);
      } catch (const ZeroPrevalence&) {
        warnings.push_back("landmark " + std::to_string(s) + " skipped: zero KM prevalence");
        continue;
      }
    } else {
      lw.xi = cfg.xi.size() == 1 ? cfg.xi[0] : cfg.xi.at(j);
    }
    out.push_back(std::move(lw));
  }
  return out;
}

inline std::vector<LandmarkWeights> method_weights(FitMethod method, const Dataset& data,
                                                   const FitConfig& cfg, const Bandwidths& bw,
                                                   std::vector<std::string>& warnings) {
  return method == FitMethod::osf_i ? osf_i_weights(data, cfg, bw, warnings)
                                    : osf_r_weights(data, cfg, warnings);
}

inline TrainingTables build_tables(const Dataset& data,
                                   const std::vector<LandmarkWeights>& weights,
                                   std::vector<std::string>& warnings) {
  TrainingTables tables;
  tables.n_subjects = data.size();
  // raw feature rows with nonzero surrogate weight
  struct RawRow {
    std::size_t block;
    std::vector<double> x;
    double wp, wm;
  };
  std::vector<RawRow> rows;
  for (std::size_t b = 0; b < weights.size(); ++b) {
    const auto& lw = weights[b];
    LandmarkBlock block;
    block.landmark = lw.landmark;
    block.xi = lw.xi;
    tables.blocks.push_back(std::move(block));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double diff = lw.w1[i] - lw.xi * lw.wm1[i];
      if (diff == 0.0) continue;
      if (!has_features_at(data[i], lw.landmark)) {
        warnings.push_back("subject " + std::to_string(data[i].id) +
                           " lacks features at landmark " + std::to_string(lw.landmark));
        continue;
      }
      RawRow row;
      row.block = b;
      row.x = features_at(data[i], lw.landmark);
      row.wp = diff > 0.0 ? diff : 0.0;
      row.wm = diff < 0.0 ? -diff : 0.0;
      rows.push_back(std::move(row));
    }
  }
  if (rows.empty()) throw DegenerateWindow("fit: no usable training rows at any landmark");
  tables.dim = rows.front().x.size();
  tables.feat_mean.assign(tables.dim, 0.0);
  tables.feat_sd.assign(tables.dim, 1.0);
  for (const auto& row : rows)
    for (std::size_t k = 0; k < tables.dim; ++k) tables.feat_mean[k] += row.x[k];
  for (double& m : tables.feat_mean) m /= static_cast<double>(rows.size());
  std::vector<double> ss(tables.dim, 0.0);
  for (const auto& row : rows)
    for (std::size_t k = 0; k < tables.dim; ++k) {
      const double d = row.x[k] - tables.feat_mean[k];
      ss[k] += d * d;
    }
  for (std::size_t k = 0; k < tables.dim; ++k) {
    const double sd = rows.size() > 1 ? std::sqrt(ss[k] / static_cast<double>(rows.size() - 1)) : 0.0;
    tables.feat_sd[k] = sd > 0.0 ? sd : 1.0;
  }
  for (auto& row : rows) {
    std::vector<double> z(tables.dim);
    for (std::size_t k = 0; k < tables.dim; ++k)
      z[k] = (row.x[k] - tables.feat_mean[k]) / tables.feat_sd[k];
    auto& block = tables.blocks[row.block];
    block.x.push_back(std::move(z));
    block.wp.push_back(row.wp);
    block.wm.push_back(row.wm);
  }
  // drop landmarks that ended with no rows
  std::vector<LandmarkBlock> kept;
  for (auto& block : tables.blocks)
    if (!block.x.empty()) kept.push_back(std::move(block));
  tables.blocks = std::move(kept);
  return tables;
}

}  // namespace detail

// K-fold cross-validation over subjects; the score is the estimated weighted
// benefit of the refitted rule on the held-out fold. Ties prefer larger
// lambda. xi values are the ones prepared on the full training data.
inline double cross_validate(const Dataset& data, const FitConfig& cfg,
                             FitMethod method = FitMethod::osf_i) {
  if (cfg.lambda_grid.empty()) throw InvalidInput("cross_validate: empty lambda grid");
  if (cfg.folds < 2) throw InvalidInput("cross_validate: folds must be >= 2");
  if (cfg.lambda_grid.size() == 1) return cfg.lambda_grid.front();

  std::vector<std::string> warnings;
  const Bandwidths bw = detail::resolve_bandwidths(data, cfg);
  const auto full_weights = detail::method_weights(method, data, cfg, bw, warnings);
  if (full_weights.empty()) throw DegenerateWindow("cross_validate: no usable landmarks");
  std::vector<double> xi_full;
  std::vector<double> landmarks_full;
  for (const auto& lw : full_weights) {
    landmarks_full.push_back(lw.landmark);
    xi_full.push_back(lw.xi);
  }
  FitConfig fold_cfg = cfg;
  fold_cfg.r.reset();  // reuse full-data xi inside folds
  fold_cfg.landmarks = landmarks_full;
  fold_cfg.xi = xi_full;

  const int k_folds = cfg.folds;
  std::vector<double> grid = cfg.lambda_grid;
  std::sort(grid.begin(), grid.end());
  double best_lambda = grid.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    double acc = 0.0;
    int used = 0;
    for (int fold = 0; fold < k_folds; ++fold) {
      Dataset train, val;
      for (std::size_t i = 0; i < data.size(); ++i)
        (static_cast<int>(i % k_folds) == fold ? val : train).push_back(data[i]);
      if (train.empty() || val.empty()) continue;
      try {
        std::vector<std::string> fold_warnings;
        const auto w = detail::method_weights(method, train, fold_cfg, bw, fold_warnings);
        if (w.empty()) continue;
        auto tables = detail::build_tables(train, w, fold_warnings);
        const auto solved =
            detail::minimize_surrogate(tables, lambda, cfg.max_iter, cfg.grad_tol);
        LinearRule rule{solved.params.intercept, solved.params.coef, tables.feat_mean,
                        tables.feat_sd};
        const auto value = estimate_value(make_decider(rule), val, landmarks_full, xi_full,
                                          cfg.tau, bw, cfg.kernel);
        acc += value.value;
        ++used;
      } catch (const DegenerateWindow&) {
      } catch (const GZero&) {
      }
    }
    if (used == 0) continue;
    const double score = acc / used;
    if (score >= best_score) {  // >= prefers larger lambda on ties
      best_score = score;
      best_lambda = lambda;
    }
  }
  return best_lambda;
}

namespace detail {

inline FitOutput fit_impl(const Dataset& data, const FitConfig& cfg, FitMethod method) {
  if (data.empty()) throw EmptyData("fit: empty dataset");
  if (cfg.r.has_value() == !cfg.xi.empty())
    throw InvalidInput("fit: exactly one of r or xi must be given");
  if (!cfg.xi.empty() && cfg.xi.size() != 1 && cfg.xi.size() != cfg.landmarks.size())
    throw LengthMismatch("fit: xi must have length 1 or match the landmarks");

  FitOutput out;
  const Bandwidths bw = detail::resolve_bandwidths(data, cfg);
  const auto weights = detail::method_weights(method, data, cfg, bw, out.warnings);
  if (weights.empty()) throw DegenerateWindow("fit: every landmark is degenerate");
  auto tables = detail::build_tables(data, weights, out.warnings);

  double lambda = cfg.lambda_grid.empty() ? 0.0 : cfg.lambda_grid.front();
  if (cfg.lambda_grid.size() > 1) lambda = cross_validate(data, cfg, method);

  const auto solved =
      detail::minimize_surrogate(tables, lambda, cfg.max_iter, cfg.grad_tol, cfg.trace);
  if (!solved.converged)
    throw NoConvergence("fit: gradient norm " + std::to_string(solved.grad_norm) + " after " +
                        std::to_string(solved.iterations) + " iterations");
  out.rule = LinearRule{solved.params.intercept, solved.params.coef, tables.feat_mean,
                        tables.feat_sd};
  out.lambda = lambda;
  for (const auto& lw : weights) {
    out.landmarks_used.push_back(lw.landmark);
    out.xi_used.push_back(lw.xi);
  }
  out.objective = solved.objective;
  out.iterations = solved.iterations;
  out.grad_norm = solved.grad_norm;
  out.trace = solved.trace;
  return out;
}

}  // namespace detail

// OSF-I: weighted surrogate minimization with the interval-censoring weights.
inline FitOutput fit_rule(const Dataset& data, const FitConfig& cfg) {
  return detail::fit_impl(data, cfg, FitMethod::osf_i);
}

// OSF-R: same surrogate optimization with IPCW weights built from the
// right-censored surrogate event time T*.
inline FitOutput fit_osf_r(const Dataset& data, const FitConfig& cfg) {
  return detail::fit_impl(data, cfg, FitMethod::osf_r);
}

}  // namespace asurv
