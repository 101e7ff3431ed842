#pragma once

#include <stdexcept>
#include <string>

namespace asurv {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input file or JSON/CSV schema could not be parsed.
struct ParseError : Error {
  using Error::Error;
};

// A kernel window contains no data mass (all numerators zero).
struct DegenerateWindow : Error {
  using Error::Error;
};

// No covariate measurement at or before the requested time.
struct NoMeasurement : Error {
  using Error::Error;
};

// Sample size too small for a bandwidth rule.
struct InvalidN : Error {
  using Error::Error;
};

// Estimated prevalence is zero, so the TNR weight is unbounded.
struct ZeroPrevalence : Error {
  using Error::Error;
};

// Kaplan-Meier censoring survival is zero at a required time.
struct GZero : Error {
  using Error::Error;
};

struct EmptyData : Error {
  using Error::Error;
};

struct LengthMismatch : Error {
  using Error::Error;
};

// Optimizer did not reach the gradient tolerance within max iterations.
struct NoConvergence : Error {
  using Error::Error;
};

// Biopsy schedule generation cannot produce a first visit (3*T_gap < 12).
struct InvalidGap : Error {
  using Error::Error;
};

// A landmark stratum holds no cases or no controls.
struct EmptyStratum : Error {
  using Error::Error;
};

// Too many bootstrap resamples failed to produce the statistic.
struct StatisticFailure : Error {
  using Error::Error;
};

// Contract violation on a function argument.
struct InvalidInput : Error {
  using Error::Error;
};

}  // namespace asurv
