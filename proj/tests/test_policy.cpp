#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "asurv/policy.hpp"
#include "asurv/rng.hpp"
#include "asurv/simulate.hpp"

using namespace asurv;
using detail::LandmarkBlock;
using detail::Params;
using detail::TrainingTables;

namespace {

// Independent scalar recomputation of the objective, kept deliberately
// naive: plain loops, long double accumulation.
double oracle_loss(const Params& p, const TrainingTables& tables, double lambda) {
  long double acc = 0.0L;
  for (const auto& block : tables.blocks) {
    for (std::size_t i = 0; i < block.x.size(); ++i) {
      long double f = p.intercept;
      for (std::size_t k = 0; k < p.coef.size(); ++k) f += p.coef[k] * block.x[i][k];
      acc += block.wp[i] * std::log1p(std::exp(-static_cast<double>(f))) +
             block.wm[i] * std::log1p(std::exp(static_cast<double>(f)));
    }
  }
  long double ridge = 0.0L;
  for (double c : p.coef) ridge += static_cast<long double>(c) * c;
  return static_cast<double>(acc / (static_cast<long double>(tables.n_subjects) *
                                    tables.blocks.size()) +
                             lambda * ridge);
}

TrainingTables random_tables(Rng& rng, std::size_t dim, std::size_t blocks, std::size_t rows) {
  TrainingTables tables;
  tables.dim = dim;
  tables.n_subjects = rows;
  for (std::size_t b = 0; b < blocks; ++b) {
    LandmarkBlock block;
    block.landmark = 12.0 * (b + 1);
    block.xi = 1.0;
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<double> x(dim);
      for (auto& v : x) v = rng.normal();
      block.x.push_back(std::move(x));
      const double raw = rng.normal();
      block.wp.push_back(raw > 0 ? raw : 0.0);
      block.wm.push_back(raw < 0 ? -raw : 0.0);
    }
    tables.blocks.push_back(std::move(block));
  }
  return tables;
}

Params random_params(Rng& rng, std::size_t dim, double scale = 1.0) {
  Params p;
  p.intercept = scale * rng.normal();
  p.coef.resize(dim);
  for (auto& c : p.coef) c = scale * rng.normal();
  return p;
}

}  // namespace

TEST_CASE("surrogate weights split into positive and negative parts") {
  WeightVector w1, wm1;
  w1.w = {2.0, 0.3};
  wm1.w = {1.0, 1.0};
  const auto [wp, wm] = surrogate_weights(w1, wm1, 0.5);
  CHECK(wp[0] == Catch::Approx(1.5));
  CHECK(wm[0] == 0.0);
  CHECK(wp[1] == 0.0);
  CHECK(wm[1] == Catch::Approx(0.2));

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    WeightVector a, b;
    for (int i = 0; i < 8; ++i) {
      a.w.push_back(std::abs(rng.normal()));
      b.w.push_back(std::abs(rng.normal()));
    }
    const double xi = std::abs(rng.normal()) + 0.1;
    const auto [p, m] = surrogate_weights(a, b, xi);
    for (int i = 0; i < 8; ++i) {
      CHECK(p[i] - m[i] == Catch::Approx(a.w[i] - xi * b.w[i]).margin(1e-14));
      CHECK(p[i] * m[i] == 0.0);
      CHECK(p[i] >= 0.0);
      CHECK(m[i] >= 0.0);
    }
  }
  WeightVector short_vec;
  short_vec.w = {1.0};
  CHECK_THROWS_AS(surrogate_weights(w1, short_vec, 1.0), LengthMismatch);
}

TEST_CASE("surrogate loss: closed-form corners") {
  Rng rng(5);
  auto tables = random_tables(rng, 3, 2, 40);

  // all weights zero: only the ridge term remains
  auto zeroed = tables;
  for (auto& block : zeroed.blocks) {
    std::fill(block.wp.begin(), block.wp.end(), 0.0);
    std::fill(block.wm.begin(), block.wm.end(), 0.0);
  }
  Params p = random_params(rng, 3);
  double ridge = 0.0;
  for (double c : p.coef) ridge += c * c;
  CHECK(detail::surrogate_loss(p, zeroed, 0.7) == Catch::Approx(0.7 * ridge).margin(1e-15));

  // f = 0: every row contributes (wp + wm) log 2
  Params zero;
  zero.coef.assign(3, 0.0);
  double mass = 0.0;
  for (const auto& block : tables.blocks)
    for (std::size_t i = 0; i < block.x.size(); ++i) mass += block.wp[i] + block.wm[i];
  const double expect = mass * std::log(2.0) /
                        (static_cast<double>(tables.n_subjects) * tables.blocks.size());
  CHECK(detail::surrogate_loss(zero, tables, 0.0) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("surrogate loss agrees with an independent recomputation") {
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    auto tables = random_tables(rng, 4, 3, 30);
    const Params p = random_params(rng, 4);
    const double lambda = std::abs(rng.normal()) * 0.1;
    const double got = detail::surrogate_loss(p, tables, lambda);
    // reference: direct loop with the textbook log(1 + exp(-u)) at long double
    long double acc = 0.0L;
    for (const auto& block : tables.blocks)
      for (std::size_t i = 0; i < block.x.size(); ++i) {
        long double f = p.intercept;
        for (std::size_t k = 0; k < p.coef.size(); ++k) f += p.coef[k] * block.x[i][k];
        acc += block.wp[i] * std::log1p(std::exp(-(double)f)) +
               block.wm[i] * std::log1p(std::exp((double)f));
      }
    long double ridge = 0.0L;
    for (double c : p.coef) ridge += (long double)c * c;
    const double expect = (double)(acc / ((long double)tables.n_subjects * tables.blocks.size()) +
                                   lambda * ridge);
    CHECK(got == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto tables = random_tables(rng, 3, 2, 25);
    const Params p = random_params(rng, 3);
    const double lambda = 0.05;
    const auto g = detail::surrogate_gradient(p, tables, lambda);
    const double step = 1e-5;
    auto fd_check = [&](double analytic, Params lo, Params hi) {
      const double fd =
          (detail::surrogate_loss(hi, tables, lambda) - detail::surrogate_loss(lo, tables, lambda)) /
          (2.0 * step);
      CHECK(std::abs(analytic - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    };
    {
      Params lo = p, hi = p;
      lo.intercept -= step;
      hi.intercept += step;
      fd_check(g.intercept, lo, hi);
    }
    for (std::size_t k = 0; k < p.coef.size(); ++k) {
      Params lo = p, hi = p;
      lo.coef[k] -= step;
      hi.coef[k] += step;
      fd_check(g.coef[k], lo, hi);
    }
  }
}

TEST_CASE("gradient corners: symmetric weights and pure ridge") {
  Rng rng(13);
  auto tables = random_tables(rng, 2, 1, 20);
  auto& block = tables.blocks.front();
  for (std::size_t i = 0; i < block.x.size(); ++i) {
    const double w = std::abs(rng.normal());
    block.wp[i] = w;
    block.wm[i] = w;  // symmetric: phi'(0) terms cancel
  }
  Params zero;
  zero.coef.assign(2, 0.0);
  const auto g0 = detail::surrogate_gradient(zero, tables, 0.0);
  CHECK(g0.intercept == Catch::Approx(0.0).margin(1e-15));
  for (double v : g0.coef) CHECK(v == Catch::Approx(0.0).margin(1e-15));

  // zero weights, lambda > 0: gradient is exactly 2 lambda coef
  for (auto& b : tables.blocks) {
    std::fill(b.wp.begin(), b.wp.end(), 0.0);
    std::fill(b.wm.begin(), b.wm.end(), 0.0);
  }
  const Params p = random_params(rng, 2);
  const auto g = detail::surrogate_gradient(p, tables, 0.3);
  CHECK(g.intercept == 0.0);
  for (std::size_t k = 0; k < 2; ++k) CHECK(g.coef[k] == Catch::Approx(0.6 * p.coef[k]));
}

TEST_CASE("objective is convex along random segments") {
  Rng rng(17);
  auto tables = random_tables(rng, 3, 2, 30);
  for (int trial = 0; trial < 100; ++trial) {
    const Params a = random_params(rng, 3, 2.0);
    const Params b = random_params(rng, 3, 2.0);
    const double alpha = rng.u01();
    Params mid;
    mid.intercept = alpha * a.intercept + (1 - alpha) * b.intercept;
    mid.coef.resize(3);
    for (int k = 0; k < 3; ++k) mid.coef[k] = alpha * a.coef[k] + (1 - alpha) * b.coef[k];
    const double lambda = 0.02;
    CHECK(detail::surrogate_loss(mid, tables, lambda) <=
          alpha * detail::surrogate_loss(a, tables, lambda) +
              (1 - alpha) * detail::surrogate_loss(b, tables, lambda) + 1e-10);
  }
}

TEST_CASE("solver: monotone descent, sign recovery, grid-beating objective") {
  Rng rng(19);

  // one feature, positive weight mass at x > 0: the slope must come out > 0
  TrainingTables toy;
  toy.dim = 1;
  toy.n_subjects = 40;
  LandmarkBlock block;
  block.landmark = 12.0;
  block.xi = 1.0;
  for (int i = 0; i < 40; ++i) {
    const double x = rng.normal();
    block.x.push_back({x});
    block.wp.push_back(x > 0 ? 1.0 : 0.0);
    block.wm.push_back(x < 0 ? 1.0 : 0.0);
  }
  toy.blocks.push_back(block);
  const auto fit = detail::minimize_surrogate(toy, 0.05, 5000, 1e-8, true);
  CHECK(fit.converged);
  CHECK(fit.params.coef[0] > 0.0);
  for (std::size_t i = 1; i < fit.trace.size(); ++i) CHECK(fit.trace[i] <= fit.trace[i - 1]);

  // 2-feature toy against a 51^3 brute-force grid on [-3, 3]^3
  auto tables = random_tables(rng, 2, 2, 30);
  const double lambda = 0.1;
  const auto solved = detail::minimize_surrogate(tables, lambda, 20000, 1e-9);
  double grid_best = std::numeric_limits<double>::infinity();
  for (int ib = 0; ib <= 50; ++ib)
    for (int i1 = 0; i1 <= 50; ++i1)
      for (int i2 = 0; i2 <= 50; ++i2) {
        Params p;
        p.intercept = -3.0 + 6.0 * ib / 50.0;
        p.coef = {-3.0 + 6.0 * i1 / 50.0, -3.0 + 6.0 * i2 / 50.0};
        grid_best = std::min(grid_best, oracle_loss(p, tables, lambda));
      }
  CHECK(oracle_loss(solved.params, tables, lambda) <= grid_best + 1e-4);
}

TEST_CASE("surrogate decisions match the zero-one grid optimum on separable data") {
  Rng rng(23);
  TrainingTables tables;
  tables.dim = 1;
  tables.n_subjects = 60;
  LandmarkBlock block;
  block.landmark = 12.0;
  block.xi = 1.0;
  std::vector<double> xs;
  for (int i = 0; i < 60; ++i) {
    const double x = rng.uniform(-2.0, 2.0) + (i % 2 ? 1.2 : -1.2);
    xs.push_back(x);
    block.x.push_back({x});
    block.wp.push_back(x > 0.3 ? rng.uniform(0.5, 1.5) : 0.0);
    block.wm.push_back(x <= 0.3 ? rng.uniform(0.5, 1.5) : 0.0);
  }
  tables.blocks.push_back(block);
  const auto fit = detail::minimize_surrogate(tables, 1e-4, 20000, 1e-9);

  // brute-force the weighted zero-one risk over (intercept, slope)
  double best_risk = std::numeric_limits<double>::infinity();
  double best_b = 0.0, best_w = 1.0;
  for (int ib = 0; ib <= 200; ++ib)
    for (int iw = 0; iw <= 200; ++iw) {
      const double b = -3.0 + 6.0 * ib / 200.0;
      const double w = -3.0 + 6.0 * iw / 200.0;
      double risk = 0.0;
      const auto& blk = tables.blocks.front();
      for (std::size_t i = 0; i < blk.x.size(); ++i) {
        const int d = b + w * blk.x[i][0] >= 0 ? +1 : -1;
        risk += d != +1 ? blk.wp[i] : 0.0;
        risk += d != -1 ? blk.wm[i] : 0.0;
      }
      if (risk < best_risk) {
        best_risk = risk;
        best_b = b;
        best_w = w;
      }
    }
  int agree = 0;
  const auto& blk = tables.blocks.front();
  for (std::size_t i = 0; i < blk.x.size(); ++i) {
    const int d_fit = fit.params.intercept + fit.params.coef[0] * blk.x[i][0] >= 0 ? +1 : -1;
    const int d_grid = best_b + best_w * blk.x[i][0] >= 0 ? +1 : -1;
    if (d_fit == d_grid) ++agree;
  }
  CHECK(agree >= static_cast<int>(0.95 * blk.x.size()));
}

TEST_CASE("rule decisions: tie-break and scale invariance") {
  LinearRule rule;
  rule.coef = {1.0, -2.0};
  rule.intercept = 0.0;
  CHECK(rule.decide({0.0, 0.0}) == +1);  // sign(0) = +1
  Rng rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    LinearRule r;
    r.intercept = rng.normal();
    r.coef = {rng.normal(), rng.normal(), rng.normal()};
    std::vector<double> z{rng.normal(), rng.normal(), rng.normal()};
    const int before = r.decide(z);
    const double c = std::exp(rng.uniform(-3.0, 3.0));
    LinearRule scaled = r;
    scaled.intercept *= c;
    for (auto& v : scaled.coef) v *= c;
    CHECK(scaled.decide(z) == before);
  }
  // standardization folds into scoring
  LinearRule std_rule;
  std_rule.intercept = 0.1;
  std_rule.coef = {2.0};
  std_rule.feat_mean = {5.0};
  std_rule.feat_sd = {2.0};
  CHECK(std_rule.score({7.0}) == Catch::Approx(0.1 + 2.0 * 1.0));
}

TEST_CASE("fit_rule: ridge dominance, shape, determinism") {
  ScenarioConfig sc;
  sc.n = 250;
  sc.seed = 31;
  sc.t_gap = 12.0;
  const auto data = simulate_dataset(sc).observed;

  FitConfig cfg;
  cfg.landmarks = {12.0, 24.0, 36.0};
  cfg.tau = 12.0;
  cfg.r = 4.0;
  cfg.lambda_grid = {1e6};
  cfg.h = 11.0;
  cfg.htilde = 14.0;
  const auto heavy = fit_rule(data, cfg);
  double norm = 0.0;
  for (double c : heavy.rule.coef) norm += c * c;
  CHECK(std::sqrt(norm) <= 1e-3);
  CHECK(heavy.rule.coef.size() == 5);  // 4 covariates + log time

  cfg.lambda_grid = {0.05};
  const auto a = fit_rule(data, cfg);
  const auto b = fit_rule(data, cfg);
  CHECK(a.rule.intercept == b.rule.intercept);
  CHECK(a.rule.coef == b.rule.coef);
  CHECK(a.lambda == 0.05);
}

TEST_CASE("cross-validation picks from the grid deterministically") {
  ScenarioConfig sc;
  sc.n = 200;
  sc.seed = 37;
  sc.t_gap = 12.0;
  const auto data = simulate_dataset(sc).observed;

  FitConfig cfg;
  cfg.landmarks = {12.0, 24.0, 36.0};
  cfg.tau = 12.0;
  cfg.r = 4.0;
  cfg.folds = 2;
  cfg.h = 11.0;
  cfg.htilde = 14.0;

  cfg.lambda_grid = {0.25};
  CHECK(cross_validate(data, cfg) == 0.25);

  cfg.lambda_grid = {0.1, 0.1};
  CHECK(cross_validate(data, cfg) == 0.1);

  cfg.lambda_grid = {0.01, 0.1, 1.0};
  const double chosen = cross_validate(data, cfg);
  CHECK((chosen == 0.01 || chosen == 0.1 || chosen == 1.0));
  CHECK(cross_validate(data, cfg) == chosen);
}

TEST_CASE("fit configuration errors") {
  ScenarioConfig sc;
  sc.n = 60;
  sc.seed = 41;
  const auto data = simulate_dataset(sc).observed;
  FitConfig cfg;
  CHECK_THROWS_AS(fit_rule(data, cfg), InvalidInput);  // neither r nor xi
  cfg.r = 4.0;
  cfg.xi = {1.0};
  CHECK_THROWS_AS(fit_rule(data, cfg), InvalidInput);  // both
  cfg.r.reset();
  cfg.xi = {1.0, 2.0};
  CHECK_THROWS_AS(fit_rule(data, cfg), LengthMismatch);  // 2 weights, 4 landmarks
  CHECK_THROWS_AS(fit_rule(Dataset{}, cfg), EmptyData);
}

TEST_CASE("osf-r: ridge dominance and dense-data agreement with osf-i") {
  ScenarioConfig sc;
  sc.n = 400;
  sc.seed = 43;
  sc.t_gap = 1.0;
  sc.first_lo = 1.0;  // near-monthly biopsies
  sc.no_censoring = true;
  const auto train = simulate_dataset(sc).observed;

  FitConfig cfg;
  cfg.landmarks = {12.0, 24.0, 36.0};
  cfg.tau = 12.0;
  cfg.r = 4.0;
  cfg.lambda_grid = {1e6};
  cfg.h = 8.0;
  cfg.htilde = 8.0;
  const auto heavy = fit_osf_r(train, cfg);
  double norm = 0.0;
  for (double c : heavy.rule.coef) norm += c * c;
  CHECK(std::sqrt(norm) <= 1e-3);

  cfg.lambda_grid = {0.05};
  const auto osf_i = fit_rule(train, cfg);
  const auto osf_r = fit_osf_r(train, cfg);

  ScenarioConfig test_sc = sc;
  test_sc.seed = 44;
  test_sc.n = 300;
  const auto test = simulate_dataset(test_sc).observed;
  int agree = 0, total = 0;
  const auto di = make_decider(osf_i.rule);
  const auto dr = make_decider(osf_r.rule);
  for (const auto& rec : test)
    for (double s : cfg.landmarks) {
      ++total;
      if (di(rec, s) == dr(rec, s)) ++agree;
    }
  CHECK(agree >= static_cast<int>(0.9 * total));
}
