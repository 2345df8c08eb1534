#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "sfpe/lyapunov.hpp"

using namespace sfpe;

namespace {

ProblemSpec family(const std::string& name, std::size_t d, std::map<std::string, double> params = {}) {
  ProblemConfig c;
  c.family = name;
  c.d = d;
  c.L = 1.0;
  c.params = std::move(params);
  return build(c);
}

expr::Ast lyap(const std::string& s, std::size_t d) { return expr::parse(s, expr::Role::lyapunov, d); }

}  // namespace

TEST(Polynomial, RhoFormula) {
  EXPECT_DOUBLE_EQ(LyapunovSpec::polynomial_rho(2.0, 1.0), 3.0);
  EXPECT_DOUBLE_EQ(LyapunovSpec::polynomial_rho(0.5, 1.0), 0.75);
  EXPECT_DOUBLE_EQ(LyapunovSpec::polynomial_rho(4.0, 0.5), 5.0);
  EXPECT_THROW(LyapunovSpec::polynomial(0.0, 1.0, 1), LyapunovError);
  EXPECT_THROW(LyapunovSpec::polynomial(1.0, 0.0, 1), LyapunovError);
}

TEST(Polynomial, ValuesAndDerivativesMatchFiniteDifferences) {
  for (double p : {0.5, 1.0, 2.0, 4.0}) {
    const LyapunovSpec V = polynomial_lyapunov(p, 1.0, 2);
    const LyapunovSpec fd = LyapunovSpec::elliptic(V.expression(), V.rho());
    const std::vector<double> x{0.7, -1.3};
    EXPECT_NEAR(V(0.5, x), std::exp(-V.rho() * 0.5) * std::pow(1.0 + 0.49 + 1.69, p / 2.0), 1e-14);
    const auto g = V.gradient(0.0, x), gf = fd.gradient(0.0, x);
    const auto h = V.hessian(0.0, x), hf = fd.hessian(0.0, x);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(g[i], gf[i], 1e-7 * std::max(1.0, std::abs(g[i])));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(h[i], hf[i], 1e-4 * std::max(1.0, std::abs(h[i])));
  }
}

TEST(Generator, BrownianQuadraticClosedForm) {
  // V = 1 + x^2 with rate rho: L V = e^{-rho t} (1 - rho (1 + x^2))
  const ProblemSpec p = family("brownian", 1);
  const LyapunovSpec V = LyapunovSpec::elliptic(lyap("1 + norm2", 1), 2.0);
  for (double x : {-3.0, 0.0, 0.5, 2.0}) {
    const std::vector<double> xs{x};
    EXPECT_NEAR(generator_value(p, V, 0.3, xs), std::exp(-0.6) * (1.0 - 2.0 * (1.0 + x * x)), 1e-6);
  }
}

TEST(Generator, SpaceTimeFormUsesTimeDerivative) {
  // V = e^{-3t}(1 + x^2) written in space-time form gives the same generator
  const ProblemSpec p = family("brownian", 1);
  const LyapunovSpec st = LyapunovSpec::space_time(lyap("exp(-3*t)*(1 + norm2)", 1));
  const LyapunovSpec el = LyapunovSpec::elliptic(lyap("1 + norm2", 1), 3.0);
  const std::vector<double> x{1.2};
  EXPECT_NEAR(generator_value(p, st, 0.4, x), generator_value(p, el, 0.4, x), 1e-6);
}

TEST(Generator, EllipticFormRejectsTime) {
  EXPECT_THROW(LyapunovSpec::elliptic(lyap("t + norm2", 1), 1.0), LyapunovError);
}

TEST(Generator, NonPositiveLyapunovFunctionIsAnError) {
  const ProblemSpec p = family("brownian", 1);
  const LyapunovSpec V = LyapunovSpec::space_time(lyap("x1", 1));
  const std::vector<double> x{-1.0};
  EXPECT_THROW(V(0.0, x), LyapunovError);
  EXPECT_THROW(generator_value(p, V, 0.0, x), LyapunovError);
}

TEST(CheckGenerator, PolynomialFamilyPassesOnBuiltins) {
  for (const char* name : {"brownian", "ou", "double-well", "truncated-ou"})
    for (double pp : {0.5, 1.0, 2.0, 4.0}) {
      const ProblemSpec p = family(name, 2);
      const LyapunovSpec V = polynomial_lyapunov(pp, *p.growth_constant, 2);
      const GeneratorCheck c = check_generator(p, V, 3000, 1, {{0.0, 0.0}, {1.0, 1.0}});
      EXPECT_FALSE(c.violation) << name << " p=" << pp << " value " << c.violating_value;
      EXPECT_EQ(c.points, 3000u + 6u);
    }
}

TEST(CheckGenerator, RateTooSmallIsReported) {
  // rho = 0 with V = 1 + x^2 and unit noise: L V = 1 > 0 everywhere
  const ProblemSpec p = family("brownian", 1);
  const LyapunovSpec V = LyapunovSpec::elliptic(lyap("1 + norm2", 1), 0.0);
  const GeneratorCheck c = check_generator(p, V, 100, 2);
  EXPECT_TRUE(c.violation);
  EXPECT_NEAR(c.violating_value, 1.0, 1e-5);
}

TEST(Supermartingale, PolynomialFunctionPasses) {
  const ProblemSpec p = family("ou", 1);
  const LyapunovSpec V = polynomial_lyapunov(2.0, *p.growth_constant, 1);
  const std::vector<double> x{0.5};
  const auto r = supermartingale_test(p, V, 0.0, x, 1.0, 50, 20000, BrownianDriver{1, 1});
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.escaped, 0u);
  EXPECT_GT(r.margin, 0.0);
}

TEST(Supermartingale, ExactExpectationForBrownianQuadratic) {
  // E[1 + (x + W_s)^2] = 1 + x^2 + s; with rho = 0 the test must fail
  const ProblemSpec p = family("brownian", 1);
  const LyapunovSpec V = LyapunovSpec::elliptic(lyap("1 + norm2", 1), 0.0);
  const std::vector<double> x{0.0};
  const auto r = supermartingale_test(p, V, 0.0, x, 1.0, 20, 50000, BrownianDriver{3, 1}, 0.0);
  EXPECT_NEAR(r.mean, 2.0, 4.0 * r.standard_error);
  EXPECT_FALSE(r.pass);
}

TEST(Supermartingale, ThreadCountDoesNotChangeTheResult) {
  const ProblemSpec p = family("double-well", 2);
  const LyapunovSpec V = polynomial_lyapunov(1.0, *p.growth_constant, 2);
  const std::vector<double> x{0.2, -0.4};
  const auto a = supermartingale_test(p, V, 0.0, x, 1.0, 40, 3000, BrownianDriver{9, 1}, std::nullopt, 1);
  const auto b = supermartingale_test(p, V, 0.0, x, 1.0, 40, 3000, BrownianDriver{9, 1}, std::nullopt, 4);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.standard_error, b.standard_error);
}
