#include <catch_amalgamated.hpp>

#include <cmath>

#include "asurv/kernel.hpp"
#include "asurv/rng.hpp"

using namespace asurv;

namespace {

// Composite Simpson on [-1, 1]; independent of the kernel code paths.
double integrate(const std::function<double(double)>& f, int panels = 4000) {
  const double h = 2.0 / panels;
  double acc = f(-1.0) + f(1.0);
  for (int i = 1; i < panels; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(-1.0 + i * h);
  return acc * h / 3.0;
}

}  // namespace

TEST_CASE("epanechnikov point values") {
  KernelSpec spec;
  CHECK(kernel_1d(spec, 0.0) == Catch::Approx(0.75));
  CHECK(kernel_1d(spec, 1.0) == 0.0);
  CHECK(kernel_1d(spec, -1.0) == 0.0);
  CHECK(kernel_1d(spec, 0.5) == Catch::Approx(0.5625));
  CHECK(kernel_1d(spec, 2.3) == 0.0);
}

TEST_CASE("bivariate kernel is the exact product") {
  KernelSpec spec;
  CHECK(kernel_2d(spec, 0.0, 0.0) == Catch::Approx(0.5625));
  CHECK(kernel_2d(spec, 1.0, 0.0) == 0.0);
  CHECK(kernel_2d(spec, 0.5, 0.5) == Catch::Approx(0.31640625));
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double u = rng.uniform(-1.5, 1.5);
    const double v = rng.uniform(-1.5, 1.5);
    CHECK(kernel_2d(spec, u, v) == kernel_1d(spec, u) * kernel_1d(spec, v));
  }
}

TEST_CASE("kernels integrate to one and are symmetric") {
  for (auto family : {KernelFamily::epanechnikov, KernelFamily::biweight}) {
    for (int order : {2, 4}) {
      KernelSpec spec{family, order};
      const double mass = integrate([&](double u) { return kernel_1d(spec, u); });
      CHECK(mass == Catch::Approx(1.0).margin(1e-6));
      Rng rng(11);
      for (int i = 0; i < 100; ++i) {
        const double u = rng.uniform(0.0, 1.2);
        CHECK(kernel_1d(spec, u) == kernel_1d(spec, -u));
      }
    }
  }
}

TEST_CASE("order-2 kernels are nonnegative, order-4 kernels kill u^2") {
  for (auto family : {KernelFamily::epanechnikov, KernelFamily::biweight}) {
    KernelSpec k2{family, 2};
    Rng rng(13);
    for (int i = 0; i < 300; ++i) CHECK(kernel_1d(k2, rng.uniform(-1.2, 1.2)) >= 0.0);
    KernelSpec k4{family, 4};
    const double second = integrate([&](double u) { return u * u * kernel_1d(k4, u); });
    CHECK(second == Catch::Approx(0.0).margin(1e-6));
  }
}

TEST_CASE("default bandwidth rules") {
  const auto bw_big = default_bandwidths(100000, 1.0);
  CHECK(bw_big.h == Catch::Approx(0.1).epsilon(1e-12));
  const auto bw_64 = default_bandwidths(64, 1.0);
  CHECK(bw_64.htilde == Catch::Approx(0.5).epsilon(1e-12));
  const auto bw_500 = default_bandwidths(500, 1.0);
  CHECK(bw_500.h == Catch::Approx(0.2885399811814427).epsilon(1e-12));
  const auto scaled = default_bandwidths(500, 10.0);
  CHECK(scaled.h == Catch::Approx(2.885399811814427).epsilon(1e-12));
  CHECK_THROWS_AS(default_bandwidths(1, 1.0), InvalidN);
  CHECK_THROWS_AS(default_bandwidths(100, 0.0), InvalidN);
}

TEST_CASE("biopsy time scale is the sample standard deviation") {
  CHECK(biopsy_time_scale({2.0, 4.0, 6.0}) == Catch::Approx(2.0));
  CHECK(biopsy_time_scale({}) == 1.0);
  CHECK(biopsy_time_scale({5.0, 5.0, 5.0}) == 1.0);  // degenerate spread falls back
}
