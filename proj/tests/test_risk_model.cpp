#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "vslfog/risk_model.hpp"

using namespace vslfog;
using Catch::Approx;

namespace {

// Fog-model means in feature order, typed out separately from the library.
constexpr double kIntercept = 0.493;
constexpr double kWeights[9] = {-0.202, -1.077, 0.000, 0.002, 0.173, -0.202, -0.009, -0.561, 0.013};

risk::RiskFeatures random_features(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  risk::RiskFeatures f;
  f.visibility = 10.0 * u(rng);
  f.ds_flag = u(rng) < 0.5 ? 1.0 : 0.0;
  f.aqu = 200.0 * u(rng);
  f.aqd = 200.0 * u(rng);
  f.dqu = 30.0 * u(rng);
  f.dvu = 15.0 * u(rng);
  f.dqd = 30.0 * u(rng);
  f.dvd = 15.0 * u(rng);
  f.dv = 40.0 * u(rng) - 20.0;
  return f;
}

risk::LogisticData synthetic(std::size_t n, double b0, double b1, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  risk::LogisticData d;
  d.cols = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = z(rng);
    const double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x)));
    d.x.push_back(x);
    d.y.push_back(u(rng) < p ? 1 : 0);
  }
  return d;
}

}  // namespace

TEST_CASE("linear predictor examples", "[risk_model]") {
  const auto c = risk::RiskCoefficients::fog_model();
  risk::RiskFeatures f;
  CHECK(risk::linear_predictor(f, c) == Approx(0.493).margin(1e-15));
  f.visibility = 1.0;
  CHECK(risk::linear_predictor(f, c) == Approx(0.291).margin(1e-12));
  f = {};
  f.ds_flag = 1.0;
  CHECK(risk::linear_predictor(f, c) == Approx(-0.584).margin(1e-12));
}

TEST_CASE("linear predictor equals a plain dot product", "[risk_model]") {
  const auto c = risk::RiskCoefficients::fog_model();
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto f = random_features(rng);
    const double x[9] = {f.visibility, f.ds_flag, f.aqu, f.aqd, f.dqu, f.dvu, f.dqd, f.dvd, f.dv};
    double oracle = kIntercept;
    for (int j = 0; j < 9; ++j) oracle += kWeights[j] * x[j];
    REQUIRE(std::abs(risk::linear_predictor(f, c) - oracle) < 1e-12);
  }
}

TEST_CASE("crash probability", "[risk_model]") {
  CHECK(risk::crash_probability(0.0) == 0.5);
  // 1 - 1e-20 rounds to 1 in double; the complement carries the tail
  CHECK(risk::crash_probability(50.0) == 1.0);
  CHECK(risk::crash_probability(-50.0) > 0.0);
  CHECK(risk::crash_probability(-50.0) < 1e-20);
  CHECK(risk::crash_probability(0.493) == Approx(1.0 / (1.0 + std::exp(-0.493))).epsilon(1e-14));
  CHECK(risk::crash_probability(0.493) == Approx(0.6208).margin(1e-4));
}

TEST_CASE("risk modes compose", "[risk_model]") {
  const auto c = risk::RiskCoefficients::fog_model();
  risk::RiskFeatures f;
  CHECK(risk::risk(f, c, risk::RiskMode::linear) == Approx(0.493));
  CHECK(risk::risk(f, c, risk::RiskMode::logistic) == Approx(0.6208).margin(1e-4));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto g = random_features(rng);
    CHECK(risk::risk(g, c, risk::RiskMode::logistic) ==
          risk::crash_probability(risk::risk(g, c, risk::RiskMode::linear)));
  }
  CHECK(risk::parse_risk_mode("logistic") == risk::RiskMode::logistic);
  CHECK_THROWS_AS(risk::parse_risk_mode("probit"), ParseError);
}

TEST_CASE("threshold is inclusive", "[risk_model]") {
  CHECK(risk::exceeds_threshold(0.25, 0.2));
  CHECK(risk::exceeds_threshold(0.2, 0.2));
  CHECK_FALSE(risk::exceeds_threshold(0.19, 0.2));
}

TEST_CASE("log posterior", "[risk_model]") {
  risk::LogisticData one;
  one.cols = 1;
  one.x = {0.0};
  one.y = {1};
  const std::vector<double> zero{0.0, 0.0};
  CHECK(risk::log_posterior(zero, one, risk::PriorSpec::flat(2)) == Approx(std::log(0.5)));

  const auto d = synthetic(10, -0.3, 0.8, 11);
  const auto flat = risk::PriorSpec::flat(2);
  const std::vector<double> a{0.1, 0.4}, b{-0.5, 1.2};
  // brute-force product of Bernoulli terms, in log space
  auto brute = [&](const std::vector<double>& beta) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.rows(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-(beta[0] + beta[1] * d.x[i])));
      s += std::log(d.y[i] == 1 ? p : 1.0 - p);
    }
    return s;
  };
  CHECK(risk::log_posterior(a, d, flat) == Approx(brute(a)).epsilon(1e-12));
  CHECK(risk::log_posterior(a, d, flat) - risk::log_posterior(b, d, flat) ==
        Approx(brute(a) - brute(b)).epsilon(1e-10));

  const auto normal = risk::PriorSpec::normal(2, 0.0, 2.0);
  const double prior_a = -0.5 * (0.1 * 0.1 + 0.4 * 0.4) / 4.0;
  CHECK(risk::log_posterior(a, d, normal) == Approx(brute(a) + prior_a).epsilon(1e-12));
}

TEST_CASE("mcmc recovers a two-coefficient truth", "[risk_model]") {
  const auto d = synthetic(2000, -1.0, 0.5, 2021);
  risk::McmcConfig cfg;
  cfg.seed = 5;
  const auto s = risk::fit_mcmc(d, risk::PriorSpec::flat(2), cfg);
  REQUIRE(s.coefficients.size() == 2);
  CHECK(std::abs(s.coefficients[0].mean + 1.0) < 0.15);
  CHECK(std::abs(s.coefficients[1].mean - 0.5) < 0.15);

  // grid-search MAP on the same data lands near the posterior mean
  double best = -1e300, b0 = 0, b1 = 0;
  for (double x0 = -1.6; x0 <= -0.4; x0 += 0.01)
    for (double x1 = 0.0; x1 <= 1.0; x1 += 0.01) {
      const std::vector<double> beta{x0, x1};
      const double lp = risk::log_posterior(beta, d, risk::PriorSpec::flat(2));
      if (lp > best) best = lp, b0 = x0, b1 = x1;
    }
  CHECK(std::abs(s.coefficients[0].mean - b0) < 0.05);
  CHECK(std::abs(s.coefficients[1].mean - b1) < 0.05);

  for (const auto& c : s.coefficients) {
    CHECK(c.q025 <= c.mean);
    CHECK(c.mean <= c.q975);
  }
  CHECK(s.acceptance_rate > 0.0);
  CHECK(s.acceptance_rate < 1.0);
  CHECK(risk::fit_mcmc(d, risk::PriorSpec::flat(2), cfg) == s);
}

TEST_CASE("mcmc intercept-only balanced data", "[risk_model]") {
  risk::LogisticData d;
  d.cols = 0;
  for (int i = 0; i < 400; ++i) d.y.push_back(i % 2);
  risk::McmcConfig cfg;
  cfg.iterations = 6000;
  cfg.burn_in = 1000;
  const auto s = risk::fit_mcmc(d, risk::PriorSpec::flat(1), cfg);
  CHECK(std::abs(s.coefficients[0].mean) < 0.1);
}

TEST_CASE("mcmc preconditions", "[risk_model]") {
  auto d = synthetic(50, 0.0, 1.0, 1);
  risk::McmcConfig cfg;
  cfg.iterations = cfg.burn_in;
  CHECK_THROWS_AS(risk::fit_mcmc(d, risk::PriorSpec::flat(2), cfg), UsageError);
  std::fill(d.y.begin(), d.y.end(), 1);
  CHECK_THROWS_AS(risk::fit_mcmc(d, risk::PriorSpec::flat(2), risk::McmcConfig{}), InfeasibleError);
}

TEST_CASE("coefficient json round trip", "[risk_model]") {
  const auto c = risk::RiskCoefficients::fog_model();
  const auto back = risk::coefficients_from_json(risk::to_json(c));
  CHECK(back.intercept == c.intercept);
  CHECK(back.weights == c.weights);
  REQUIRE(back.summary);
  CHECK((*back.summary)[8].q025 == -1.013);
  auto j = risk::to_json(c);
  j["variables"].erase(3);
  CHECK_THROWS_AS(risk::coefficients_from_json(j), ParseError);
}
