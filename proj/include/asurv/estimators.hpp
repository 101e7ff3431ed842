#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asurv/data.hpp"
#include "asurv/errors.hpp"
#include "asurv/kernel.hpp"

namespace asurv {

// Decision of a (possibly trivial) rule for one subject at landmark s.
// Returns +1 (do the biopsy at s + tau) or -1 (skip it).
using DecisionFn = std::function<int(const SubjectRecord&, double)>;

inline DecisionFn constant_rule(int a) {
  return [a](const SubjectRecord&, double) { return a; };
}

enum class WeightKind { positive_pair, negative_biopsy };

// Per-subject nonnegative weights, self-normalized to sample mean 1.
struct WeightVector {
  std::vector<double> w;
  double landmark = 0.0;
  double tau = 0.0;
  WeightKind kind = WeightKind::negative_biopsy;
  double mass = 0.0;  // sum of raw kernel values; a kernel-weighted data count
};

struct MetricEstimate {
  double value = 0.0;
  double landmark = 0.0;
  std::string method;
  double ess = 0.0;
};

// W_{-1,s+tau}: kernel mass of observed negative biopsies near s + tau,
// one number per subject, normalized by the sample mean over all subjects.
inline WeightVector tnr_weights(const Dataset& data, double s, double tau, double h,
                                const KernelSpec& spec = {}) {
  if (data.empty()) throw EmptyData("tnr_weights: empty dataset");
  const double t = s + tau;
  WeightVector out;
  out.w.resize(data.size(), 0.0);
  out.landmark = s;
  out.tau = tau;
  out.kind = WeightKind::negative_biopsy;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double num = 0.0;
    for (const auto& b : data[i].biopsies)
      if (b.result == 0) num += kernel_1d(spec, (b.time - t) / h);
    out.w[i] = num;
    total += num;
  }
  if (total <= 0.0)
    throw DegenerateWindow("tnr_weights: no negative-biopsy mass near t=" + std::to_string(t));
  out.mass = total;
  const double mean = total / static_cast<double>(data.size());
  for (double& v : out.w) v /= mean;
  return out;
}

// W_{1,s}: bivariate kernel mass of adjacent negative-positive pairs near
// (s, s + tau), normalized by the sample mean over all subjects.
inline WeightVector tpr_weights(const Dataset& data, double s, double tau, double htilde,
                                const KernelSpec& spec = {}) {
  if (data.empty()) throw EmptyData("tpr_weights: empty dataset");
  WeightVector out;
  out.w.resize(data.size(), 0.0);
  out.landmark = s;
  out.tau = tau;
  out.kind = WeightKind::positive_pair;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double num = 0.0;
    for (const auto& p : adjacent_pairs(data[i]))
      if (p.delta_curr == 1)
        num += kernel_2d(spec, (p.t_curr - s - tau) / htilde, (p.t_prev - s) / htilde);
    out.w[i] = num;
    total += num;
  }
  if (total <= 0.0)
    throw DegenerateWindow("tpr_weights: no negative-positive pair mass near (s, s+tau)=(" +
                           std::to_string(s) + ", " + std::to_string(s + tau) + ")");
  out.mass = total;
  const double mean = total / static_cast<double>(data.size());
  for (double& v : out.w) v /= mean;
  return out;
}

// E_n[1{d = a} W]; weights have mean 1 so the result is a proportion.
inline double weighted_decision_fraction(const DecisionFn& rule, const Dataset& data,
                                         const WeightVector& wv, int a) {
  if (wv.w.size() != data.size()) throw LengthMismatch("weight vector does not match dataset");
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (wv.w[i] == 0.0) continue;
    if (rule(data[i], wv.landmark) == a) acc += wv.w[i];
  }
  return acc / static_cast<double>(data.size());
}

inline MetricEstimate estimate_tnr(const DecisionFn& rule, const Dataset& data, double s,
                                   double tau, double h, const KernelSpec& spec = {}) {
  const WeightVector wv = tnr_weights(data, s, tau, h, spec);
  return MetricEstimate{weighted_decision_fraction(rule, data, wv, -1), s, "kr-i", wv.mass};
}

inline MetricEstimate estimate_tpr(const DecisionFn& rule, const Dataset& data, double s,
                                   double tau, double htilde, const KernelSpec& spec = {}) {
  const WeightVector wv = tpr_weights(data, s, tau, htilde, spec);
  return MetricEstimate{weighted_decision_fraction(rule, data, wv, +1), s, "kr-i", wv.mass};
}

// rho(s; tau) = P{s < T <= s + tau | T > s}, reconstructed as the ratio of
// negative-positive pair mass to all-pair mass near (s, s + tau). Conditional
// on a pair observed at those times with first member negative, the second
// result is positive exactly when T landed inside the bracket, so the ratio
// targets the conditional prevalence without the visit intensities.
inline MetricEstimate estimate_prevalence(const Dataset& data, double s, double tau,
                                          double htilde, const KernelSpec& spec = {}) {
  if (data.empty()) throw EmptyData("estimate_prevalence: empty dataset");
  double pos = 0.0, all = 0.0;
  for (const auto& rec : data) {
    for (const auto& p : adjacent_pairs(rec)) {
      const double k = kernel_2d(spec, (p.t_curr - s - tau) / htilde, (p.t_prev - s) / htilde);
      all += k;
      if (p.delta_curr == 1) pos += k;
    }
  }
  if (all <= 0.0)
    throw DegenerateWindow("estimate_prevalence: no pair mass near (s, s+tau)=(" +
                           std::to_string(s) + ", " + std::to_string(s + tau) + ")");
  return MetricEstimate{pos / all, s, "kr-i", all};
}

struct XiBounds {
  double lo = 0.05;
  double hi = 20.0;
};

// xi(s) = (1 - rho) / (rho * r), clipped into [lo, hi].
inline double xi_from_ratio(double rho, double r, const XiBounds& bounds = {}) {
  if (rho == 0.0) throw ZeroPrevalence("xi_from_ratio: rho = 0 gives an unbounded weight");
  if (!(rho > 0.0 && rho <= 1.0)) throw InvalidInput("xi_from_ratio: rho must lie in (0, 1]");
  if (!(r > 0.0)) throw InvalidInput("xi_from_ratio: r must be > 0");
  const double xi = (1.0 - rho) / (rho * r);
  return std::clamp(xi, bounds.lo, bounds.hi);
}

// Landmark-averaged weighted benefit of a rule, TPR + xi * TNR per landmark.
// Landmarks whose kernel window is empty are skipped and J reduced.
struct ValueEstimate {
  struct Row {
    double landmark = 0.0;
    double tpr = 0.0;
    double tnr = 0.0;
    double xi = 1.0;
    bool skipped = false;
  };
  double value = 0.0;
  std::vector<Row> rows;
  int skipped = 0;
};

inline ValueEstimate estimate_value(const DecisionFn& rule, const Dataset& data,
                                    const std::vector<double>& landmarks,
                                    const std::vector<double>& xi, double tau,
                                    const Bandwidths& bw, const KernelSpec& spec = {}) {
  if (xi.size() != landmarks.size())
    throw LengthMismatch("estimate_value: xi and landmarks must align");
  ValueEstimate out;
  double acc = 0.0;
  int used = 0;
  for (std::size_t j = 0; j < landmarks.size(); ++j) {
    ValueEstimate::Row row;
    row.landmark = landmarks[j];
    row.xi = xi[j];
    try {
      row.tpr = estimate_tpr(rule, data, landmarks[j], tau, bw.htilde, spec).value;
      row.tnr = estimate_tnr(rule, data, landmarks[j], tau, bw.h, spec).value;
      acc += row.tpr + xi[j] * row.tnr;
      ++used;
    } catch (const DegenerateWindow&) {
      row.skipped = true;
      ++out.skipped;
    }
    out.rows.push_back(row);
  }
  if (used == 0) throw DegenerateWindow("estimate_value: every landmark window is degenerate");
  out.value = acc / static_cast<double>(used);
  return out;
}

// Right-continuous survival step function, S(t) = prod_{t_i <= t} (1 - d_i/n_i).
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(std::vector<double> times, std::vector<double> values)
      : times_(std::move(times)), values_(std::move(values)) {}

  double at(double t) const {
    std::size_t idx = std::upper_bound(times_.begin(), times_.end(), t) - times_.begin();
    return idx == 0 ? 1.0 : values_[idx - 1];
  }

  // Left limit S(t-).
  double at_left(double t) const {
    std::size_t idx = std::lower_bound(times_.begin(), times_.end(), t) - times_.begin();
    return idx == 0 ? 1.0 : values_[idx - 1];
  }

  const std::vector<double>& jump_times() const { return times_; }

 private:
  std::vector<double> times_;
  std::vector<double> values_;
};

// Follow-up summary used by the right-censoring baselines: T* is the first
// positive biopsy time when one was observed, otherwise follow-up ends at the
// last observed biopsy.
struct FollowUp {
  double end = 0.0;
  bool event = false;  // true when a positive biopsy was observed
};

inline FollowUp follow_up(const SubjectRecord& rec) {
  FollowUp f;
  for (const auto& b : rec.biopsies) {
    f.end = b.time;
    if (b.result == 1) {
      f.event = true;
      break;
    }
  }
  return f;
}

// Kaplan-Meier estimate of the censoring-time survival G(t). Ends of
// follow-up without a positive biopsy are censoring events; subjects whose
// follow-up ends with a positive are censored for the censoring process.
inline StepFunction km_censoring(const Dataset& data) {
  if (data.empty()) throw EmptyData("km_censoring: empty dataset");
  std::map<double, std::pair<int, int>> counts;  // time -> (censoring events, total ends)
  for (const auto& rec : data) {
    const FollowUp f = follow_up(rec);
    auto& c = counts[f.end];
    if (!f.event) c.first += 1;
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

struct IpcwEstimate {
  double tpr = 0.0;
  double tnr = 0.0;
};

// IPCW baseline treating the first positive biopsy time T* as a
// right-censored event time. Event weights use the left limit G(T*-).
inline IpcwEstimate ipcw_tpr_tnr(const DecisionFn& rule, const Dataset& data, double s,
                                 double tau) {
  const StepFunction g = km_censoring(data);
  double tpr_num = 0.0, tpr_den = 0.0;
  int tnr_num = 0, tnr_den = 0;
  const double g_horizon = g.at(s + tau);
  for (const auto& rec : data) {
    const FollowUp f = follow_up(rec);
    if (f.event && f.end > s && f.end <= s + tau) {
      const double gs = g.at_left(f.end);
      if (gs <= 0.0) throw GZero("ipcw_tpr_tnr: G(T*-) = 0 at t=" + std::to_string(f.end));
      const double w = 1.0 / gs;
      tpr_den += w;
      if (rule(rec, s) == +1) tpr_num += w;
    }
    if (f.end > s + tau) {
      tnr_den += 1;
      if (rule(rec, s) == -1) tnr_num += 1;
    }
  }
  if (tpr_den <= 0.0)
    throw DegenerateWindow("ipcw_tpr_tnr: no observed surrogate events in (s, s+tau]");
  if (tnr_den == 0) throw DegenerateWindow("ipcw_tpr_tnr: no follow-up beyond s+tau");
  if (g_horizon <= 0.0) throw GZero("ipcw_tpr_tnr: G(s+tau) = 0");
  return IpcwEstimate{tpr_num / tpr_den, static_cast<double>(tnr_num) / tnr_den};
}

// Panel-status kernel baseline from current-status methodology; valid under
// completely random dropout, biased under immediate dropout. Smooths the
// observed status fraction over visit times and reads the TPR off the
// increment of the d = +1 subdistribution between s and s + tau.
inline double krcs_tpr(const DecisionFn& rule, const Dataset& data, double s, double tau,
                       double h, const KernelSpec& spec = {}) {
  if (data.empty()) throw EmptyData("krcs_tpr: empty dataset");
  auto curve = [&](double t) {
    double num_pos = 0.0, num_all = 0.0, den = 0.0;
    for (const auto& rec : data) {
      double pos = 0.0, mass = 0.0;
      for (const auto& b : rec.biopsies) {
        const double k = kernel_1d(spec, (b.time - t) / h);
        mass += k;
        if (b.result == 1) pos += k;
      }
      if (mass == 0.0) continue;
      den += mass;
      num_all += pos;
      if (pos > 0.0 && rule(rec, s) == +1) num_pos += pos;
    }
    if (den <= 0.0) throw DegenerateWindow("krcs_tpr: no biopsy mass near t=" + std::to_string(t));
    return std::pair<double, double>{num_pos / den, num_all / den};
  };
  const auto [h1_lo, hall_lo] = curve(s);
  const auto [h1_hi, hall_hi] = curve(s + tau);
  const double den_inc = hall_hi - hall_lo;
  if (den_inc <= 1e-12)
    throw DegenerateWindow("krcs_tpr: non-increasing status curve between s and s+tau");
  return std::clamp((h1_hi - h1_lo) / den_inc, 0.0, 1.0);
}

}  // namespace asurv
