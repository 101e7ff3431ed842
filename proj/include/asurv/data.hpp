#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "asurv/errors.hpp"

namespace asurv {

// Latent linear-in-log-time covariate processes W_l(t) = a0_l + a1_l*log(t/nu),
// observed with independent Gaussian measurement noise.
struct CovariateTrajectory {
  std::vector<double> a0;
  std::vector<double> a1;
  double noise_sd = 0.0;
  double nu = 30.0;  // months

  std::size_t dim() const { return a0.size(); }

  double latent(std::size_t l, double t) const {
    if (!(t > 0.0)) throw InvalidInput("CovariateTrajectory: latent value undefined for t <= 0");
    return a0[l] + a1[l] * std::log(t / nu);
  }
};

struct Measurement {
  double time = 0.0;
  std::vector<double> x;
};

struct Truth {
  double event_time = 0.0;   // T, months
  double censor_time = 0.0;  // C, months (may be +inf for uncensored designs)
};

// One subject's complete latent record: true event/censoring times, the full
// scheduled biopsy sequence, and per-biopsy miss indicators.
struct FullSubject {
  int id = 0;
  CovariateTrajectory trajectory;
  double event_time = 0.0;
  double censor_time = 0.0;
  std::vector<double> biopsy_times;  // strictly increasing, all > 0; baseline 0 implicit
  std::vector<int> miss_flags;       // delta_k: 1 = biopsy performed, aligned with biopsy_times
  std::vector<Measurement> measurements;

  int progressed_by(std::size_t k) const { return event_time <= biopsy_times[k] ? 1 : 0; }  // Delta_k
  int uncensored_at(std::size_t k) const { return censor_time > biopsy_times[k] ? 1 : 0; }  // zeta_k
};

struct Biopsy {
  double time = 0.0;
  int result = 0;  // Delta in {0, 1}
};

// Observed record after censoring, missed visits, and immediate dropout.
// Invariants: baseline (0, 0) is always first, times strictly increase, and
// at most one positive result which, if present, is last.
struct SubjectRecord {
  int id = 0;
  std::vector<Biopsy> biopsies;  // baseline included
  std::vector<Measurement> measurements;
  std::optional<Truth> truth;    // simulated data only; never read by estimators
};

using Dataset = std::vector<SubjectRecord>;

// Consecutive observed biopsies whose first member is negative. The pair
// brackets the event time when delta_curr = 1.
struct AdjacentPair {
  double t_prev = 0.0;
  double t_curr = 0.0;
  int delta_curr = 0;  // delta_prev is 0 by construction
};

// Apply the observability condition: biopsy k is seen iff zeta_k*delta_k = 1
// and no earlier performed biopsy was positive. A positive result ends the
// record (immediate dropout). With panel = true the dropout truncation is
// disabled, which models the complete panel-status design used by the
// KR-CS baseline's assumptions; only synthetic stress tests use it.
inline SubjectRecord observe(const FullSubject& subject, bool panel = false) {
  SubjectRecord rec;
  rec.id = subject.id;
  rec.biopsies.push_back(Biopsy{0.0, 0});
  for (std::size_t k = 0; k < subject.biopsy_times.size(); ++k) {
    if (subject.miss_flags[k] == 0) continue;
    if (subject.uncensored_at(k) == 0) continue;
    const int result = subject.progressed_by(k);
    rec.biopsies.push_back(Biopsy{subject.biopsy_times[k], result});
    if (result == 1 && !panel) break;
  }
  rec.measurements = subject.measurements;
  rec.truth = Truth{subject.event_time, subject.censor_time};
  return rec;
}

// All consecutive observed pairs whose first member is negative, anchored at
// the baseline. A baseline-only record yields no pairs.
inline std::vector<AdjacentPair> adjacent_pairs(const SubjectRecord& rec) {
  std::vector<AdjacentPair> pairs;
  for (std::size_t k = 1; k < rec.biopsies.size(); ++k) {
    if (rec.biopsies[k - 1].result != 0) break;
    pairs.push_back(AdjacentPair{rec.biopsies[k - 1].time, rec.biopsies[k].time, rec.biopsies[k].result});
  }
  return pairs;
}

// Feature vector for a decision at time t: most recent covariate measurement
// at or before t, plus log(t) so a stabilized rule can vary with the landmark.
inline std::vector<double> features_at(const SubjectRecord& rec, double t) {
  const Measurement* latest = nullptr;
  for (const auto& m : rec.measurements) {
    if (m.time <= t && (latest == nullptr || m.time > latest->time)) latest = &m;
  }
  if (latest == nullptr)
    throw NoMeasurement("features_at: no covariate measurement at or before t=" + std::to_string(t));
  std::vector<double> z = latest->x;
  z.push_back(std::log(t));
  return z;
}

inline bool has_features_at(const SubjectRecord& rec, double t) {
  for (const auto& m : rec.measurements)
    if (m.time <= t) return true;
  return false;
}

}  // namespace asurv
