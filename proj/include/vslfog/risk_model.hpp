#pragma once

// Real-time crash risk: a logistic model over traffic, weather and geometry
// features, plus a random-walk Metropolis sampler for fitting its
// coefficients on labelled observations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vslfog/error.hpp"

namespace vslfog::risk {

inline constexpr std::size_t kFeatureCount = 9;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "Visibility", "DS", "AQU", "AQD", "DQU", "DVU", "DQD", "DVD", "DV"};

inline constexpr std::string_view kInterceptName = "(Intercept)";

/// Explanatory variables of the risk model. Counts are veh/5min, speeds mph,
/// visibility miles.
struct RiskFeatures {
  double visibility = 0.0;
  double ds_flag = 0.0;  // 1 on a diverge segment
  double aqu = 0.0;      // mean upstream count
  double aqd = 0.0;      // mean downstream count
  double dqu = 0.0;      // std-dev of upstream counts
  double dvu = 0.0;      // std-dev of upstream speed
  double dqd = 0.0;      // std-dev of downstream counts
  double dvd = 0.0;      // std-dev of downstream speed
  double dv = 0.0;       // upstream minus downstream mean speed

  std::array<double, kFeatureCount> values() const {
    return {visibility, ds_flag, aqu, aqd, dqu, dvu, dqd, dvd, dv};
  }

  static RiskFeatures from_values(const std::array<double, kFeatureCount>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
  }

  bool valid() const {
    return visibility >= 0.0 && (ds_flag == 0.0 || ds_flag == 1.0) && aqu >= 0.0 &&
           aqd >= 0.0 && dqu >= 0.0 && dvu >= 0.0 && dqd >= 0.0 && dvd >= 0.0;
  }
};

struct CoefficientSummary {
  double mean = 0.0;
  double std_dev = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;

  bool operator==(const CoefficientSummary&) const = default;
};

struct RiskCoefficients {
  double intercept = 0.0;
  std::array<double, kFeatureCount> weights{};
  // Reporting only; index 0 is the intercept.
  std::optional<std::array<CoefficientSummary, kFeatureCount + 1>> summary;

  /// Posterior means, std-devs and 95% intervals of the fog-day crash model.
  static RiskCoefficients fog_model() {
    RiskCoefficients c;
    c.intercept = 0.493;
    c.weights = {-0.202, -1.077, 0.000, 0.002, 0.173, -0.202, -0.009, -0.561, 0.013};
    c.summary = std::array<CoefficientSummary, kFeatureCount + 1>{{
        {0.493, 1.098, -1.653, 2.631},
        {-0.202, 0.067, -0.337, -0.073},
        {-1.077, 0.453, -1.976, -0.208},
        {0.000, 0.003, -0.007, 0.006},
        {0.002, 0.003, -0.004, 0.009},
        {0.173, 0.099, -0.018, 0.369},
        {-0.202, 0.148, -0.503, 0.081},
        {-0.009, 0.094, -0.196, 0.168},
        {-0.561, 0.222, -1.013, -0.156},
        {0.013, 0.031, -0.046, 0.076},
    }};
    return c;
  }
};

enum class RiskMode { linear, logistic };

inline std::string to_string(RiskMode m) { return m == RiskMode::linear ? "linear" : "logistic"; }

inline RiskMode parse_risk_mode(std::string_view s) {
  if (s == "linear") return RiskMode::linear;
  if (s == "logistic") return RiskMode::logistic;
  throw ParseError("unknown risk mode '" + std::string(s) + "' (expected linear|logistic)");
}

inline double linear_predictor(const RiskFeatures& f, const RiskCoefficients& c) {
  const auto x = f.values();
  double eta = c.intercept;
  for (std::size_t j = 0; j < kFeatureCount; ++j) eta += c.weights[j] * x[j];
  return eta;
}

inline double crash_probability(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double risk(const RiskFeatures& f, const RiskCoefficients& c,
                   RiskMode mode = RiskMode::linear) {
  const double eta = linear_predictor(f, c);
  return mode == RiskMode::linear ? eta : crash_probability(eta);
}

// Inclusive: the controller starts once the threshold is reached.
inline bool exceeds_threshold(double risk_value, double threshold) {
  return risk_value >= threshold;
}

// ---------------------------------------------------------------------------
// Bayesian fitting

struct CrashObservation {
  int y = 0;
  RiskFeatures features;
};

/// Dense logistic-regression design: `rows x cols` covariates (no intercept
/// column) and binary outcomes. Coefficient vectors have cols + 1 entries with
/// the intercept first.
struct LogisticData {
  std::size_t cols = 0;
  std::vector<double> x;  // row-major
  std::vector<int> y;

  std::size_t rows() const { return y.size(); }
  double at(std::size_t i, std::size_t j) const { return x[i * cols + j]; }

  static LogisticData from_observations(std::span<const CrashObservation> obs) {
    LogisticData d;
    d.cols = kFeatureCount;
    d.x.reserve(obs.size() * kFeatureCount);
    d.y.reserve(obs.size());
    for (const auto& o : obs) {
      const auto v = o.features.values();
      d.x.insert(d.x.end(), v.begin(), v.end());
      d.y.push_back(o.y);
    }
    return d;
  }
};

/// Independent Gaussian priors per coefficient. An infinite std-dev is a flat
/// prior.
struct PriorSpec {
  std::vector<double> mean;
  std::vector<double> sd;

  static PriorSpec normal(std::size_t n, double mu, double sigma) {
    return {std::vector<double>(n, mu), std::vector<double>(n, sigma)};
  }
  static PriorSpec flat(std::size_t n) {
    return normal(n, 0.0, std::numeric_limits<double>::infinity());
  }

  void validate(std::size_t n) const {
    if (mean.size() != n || sd.size() != n)
      throw UsageError("prior has " + std::to_string(mean.size()) + " entries, model needs " +
                       std::to_string(n));
    for (double s : sd)
      if (!(s > 0.0)) throw UsageError("prior std-dev must be positive");
  }
};

// log(1 + e^x) without overflow
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double log_prior(std::span<const double> beta, const PriorSpec& prior) {
  double lp = 0.0;
  for (std::size_t j = 0; j < beta.size(); ++j) {
    if (std::isinf(prior.sd[j])) continue;
    const double z = (beta[j] - prior.mean[j]) / prior.sd[j];
    lp -= 0.5 * z * z;
  }
  return lp;
}

/// Unnormalised log posterior: Bernoulli-logit likelihood plus Gaussian priors.
inline double log_posterior(std::span<const double> beta, const LogisticData& data,
                            const PriorSpec& prior) {
  if (data.rows() == 0) throw UsageError("log_posterior needs at least one observation");
  if (beta.size() != data.cols + 1) throw UsageError("coefficient count does not match design");
  prior.validate(beta.size());
  double ll = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    double eta = beta[0];
    for (std::size_t j = 0; j < data.cols; ++j) eta += beta[j + 1] * data.at(i, j);
    ll += data.y[i] * eta - softplus(eta);
  }
  return ll + log_prior(beta, prior);
}

inline std::vector<double> to_vector(const RiskCoefficients& c) {
  std::vector<double> b{c.intercept};
  b.insert(b.end(), c.weights.begin(), c.weights.end());
  return b;
}

inline double log_posterior(const RiskCoefficients& c, std::span<const CrashObservation> data,
                            const PriorSpec& prior) {
  const auto d = LogisticData::from_observations(data);
  const auto b = to_vector(c);
  return log_posterior(b, d, prior);
}

struct McmcConfig {
  std::size_t iterations = 20000;  // total sweeps, burn-in included
  std::size_t burn_in = 5000;
  double proposal_scale = 0.05;
  std::uint64_t seed = 1;
};

struct PosteriorSummary {
  std::vector<CoefficientSummary> coefficients;  // intercept first
  std::size_t samples = 0;
  double acceptance_rate = 0.0;
  std::vector<std::string> warnings;

  bool operator==(const PosteriorSummary&) const = default;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& v, double p) {
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<std::string> separation_warnings(const LogisticData& d) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < d.cols; ++j) {
    double min0 = std::numeric_limits<double>::infinity(), max0 = -min0;
    double min1 = min0, max1 = max0;
    for (std::size_t i = 0; i < d.rows(); ++i) {
      const double v = d.at(i, j);
      if (d.y[i] == 1) {
        min1 = std::min(min1, v);
        max1 = std::max(max1, v);
      } else {
        min0 = std::min(min0, v);
        max0 = std::max(max0, v);
      }
    }
    if (max0 < min1 || max1 < min0)
      out.push_back("covariate " + std::to_string(j) +
                    " perfectly separates outcomes; its coefficient is identified only by the prior");
  }
  return out;
}

}  // namespace detail

/// Component-wise random-walk Metropolis targeting log_posterior. Proposal
/// scales adapt per coefficient during burn-in (halved below 20% acceptance,
/// doubled above 50%) and are frozen afterwards.
inline PosteriorSummary fit_mcmc(const LogisticData& data, const PriorSpec& prior,
                                 const McmcConfig& cfg) {
  const std::size_t p = data.cols + 1;
  if (data.rows() == 0) throw UsageError("fit_mcmc needs at least one observation");
  if (cfg.iterations <= cfg.burn_in)
    throw UsageError("fit_mcmc needs iterations > burn_in (no post-burn-in samples)");
  if (!(cfg.proposal_scale > 0.0)) throw UsageError("proposal scale must be positive");
  prior.validate(p);
  for (int v : data.y)
    if (v != 0 && v != 1) throw ParseError("crash indicator must be 0 or 1");

  const auto ones = std::count(data.y.begin(), data.y.end(), 1);
  if (ones == 0 || ones == static_cast<long>(data.rows()))
    throw InfeasibleError(
        "degenerate data: every observation has the same outcome, so the intercept is "
        "separable and the likelihood has no finite maximum");

  std::vector<double> beta(p);
  for (std::size_t j = 0; j < p; ++j) beta[j] = std::isfinite(prior.mean[j]) ? prior.mean[j] : 0.0;

  const std::size_t n = data.rows();
  std::vector<double> eta(n, beta[0]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < data.cols; ++j) eta[i] += beta[j + 1] * data.at(i, j);

  auto loglik = [&](const std::vector<double>& e) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += data.y[i] * e[i] - softplus(e[i]);
    return s;
  };
  auto prior_term = [&](std::size_t j, double b) {
    if (std::isinf(prior.sd[j])) return 0.0;
    const double z = (b - prior.mean[j]) / prior.sd[j];
    return -0.5 * z * z;
  };
  auto covariate = [&](std::size_t i, std::size_t j) { return j == 0 ? 1.0 : data.at(i, j - 1); };

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> scale(p, cfg.proposal_scale);
  std::vector<std::size_t> batch_accept(p, 0);
  constexpr std::size_t kBatch = 50;

  const std::size_t kept = cfg.iterations - cfg.burn_in;
  std::vector<std::vector<double>> draws(p, std::vector<double>());
  for (auto& d : draws) d.reserve(kept);
  std::size_t accepted = 0, proposed = 0;

  double ll = loglik(eta);
  std::vector<double> eta_new(n);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const bool sampling = it >= cfg.burn_in;
    for (std::size_t j = 0; j < p; ++j) {
      const double delta = scale[j] * gauss(rng);
      for (std::size_t i = 0; i < n; ++i) eta_new[i] = eta[i] + delta * covariate(i, j);
      const double ll_new = loglik(eta_new);
      const double log_ratio =
          ll_new - ll + prior_term(j, beta[j] + delta) - prior_term(j, beta[j]);
      const bool accept = std::log(unif(rng)) < log_ratio;
      if (accept) {
        beta[j] += delta;
        eta.swap(eta_new);
        ll = ll_new;
      }
      if (sampling) {
        ++proposed;
        accepted += accept ? 1 : 0;
      } else {
        batch_accept[j] += accept ? 1 : 0;
      }
    }
    if (!sampling && (it + 1) % kBatch == 0) {
      for (std::size_t j = 0; j < p; ++j) {
        const double rate = static_cast<double>(batch_accept[j]) / kBatch;
        if (rate < 0.2) scale[j] *= 0.5;
        else if (rate > 0.5) scale[j] *= 2.0;
        batch_accept[j] = 0;
      }
    }
    if (sampling)
      for (std::size_t j = 0; j < p; ++j) draws[j].push_back(beta[j]);
  }

  PosteriorSummary out;
  out.samples = kept;
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(proposed);
  if (out.acceptance_rate < 0.01)
    throw InfeasibleError("MCMC acceptance rate " + std::to_string(out.acceptance_rate) +
                          " below 1%; proposal scale is mis-specified");
  out.warnings = detail::separation_warnings(data);
  for (auto& d : draws) {
    const double m = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    double ss = 0.0;
    for (double v : d) ss += (v - m) * (v - m);
    std::vector<double> s = d;
    std::sort(s.begin(), s.end());
    out.coefficients.push_back({m, d.size() > 1 ? std::sqrt(ss / (d.size() - 1)) : 0.0,
                                detail::quantile_sorted(s, 0.025),
                                detail::quantile_sorted(s, 0.975)});
  }
  return out;
}

inline PosteriorSummary fit_mcmc(std::span<const CrashObservation> data, const PriorSpec& prior,
                                 const McmcConfig& cfg) {
  return fit_mcmc(LogisticData::from_observations(data), prior, cfg);
}

/// Coefficients for the risk model from a ten-entry posterior summary.
inline RiskCoefficients coefficients_from(const PosteriorSummary& s) {
  if (s.coefficients.size() != kFeatureCount + 1)
    throw UsageError("posterior does not describe the full risk model");
  RiskCoefficients c;
  c.intercept = s.coefficients[0].mean;
  std::array<CoefficientSummary, kFeatureCount + 1> sum{};
  for (std::size_t j = 0; j <= kFeatureCount; ++j) {
    if (j > 0) c.weights[j - 1] = s.coefficients[j].mean;
    sum[j] = s.coefficients[j];
  }
  c.summary = sum;
  return c;
}

// ---------------------------------------------------------------------------
// JSON. Coefficient documents hold one row per term:
// {"variables": [{"Variables": "(Intercept)", "Mean": .., "Std.dev.": ..,
//  "2.5 %": .., "97.5 %": ..}, ...]}

inline nlohmann::json to_json(const RiskCoefficients& c) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t j = 0; j <= kFeatureCount; ++j) {
    nlohmann::json r;
    r["Variables"] = j == 0 ? std::string(kInterceptName) : std::string(kFeatureNames[j - 1]);
    r["Mean"] = j == 0 ? c.intercept : c.weights[j - 1];
    if (c.summary) {
      const auto& s = (*c.summary)[j];
      r["Std.dev."] = s.std_dev;
      r["2.5 %"] = s.q025;
      r["97.5 %"] = s.q975;
    }
    rows.push_back(std::move(r));
  }
  return {{"variables", rows}};
}

inline RiskCoefficients coefficients_from_json(const nlohmann::json& j) {
  if (!j.contains("variables") || !j["variables"].is_array())
    throw ParseError("coefficient document needs a 'variables' array");
  RiskCoefficients c;
  std::array<bool, kFeatureCount + 1> seen{};
  std::array<CoefficientSummary, kFeatureCount + 1> sum{};
  bool full_summary = true;
  for (const auto& r : j["variables"]) {
    if (!r.contains("Variables") || !r.contains("Mean"))
      throw ParseError("coefficient row needs 'Variables' and 'Mean'");
    const auto name = r["Variables"].get<std::string>();
    std::size_t idx = kFeatureCount + 1;
    if (name == kInterceptName) idx = 0;
    for (std::size_t k = 0; k < kFeatureCount; ++k)
      if (name == kFeatureNames[k]) idx = k + 1;
    if (idx > kFeatureCount) throw ParseError("unknown risk variable '" + name + "'");
    if (seen[idx]) throw ParseError("duplicate risk variable '" + name + "'");
    seen[idx] = true;
    const double m = r["Mean"].get<double>();
    if (idx == 0) c.intercept = m;
    else c.weights[idx - 1] = m;
    sum[idx].mean = m;
    if (r.contains("Std.dev.") && r.contains("2.5 %") && r.contains("97.5 %")) {
      sum[idx].std_dev = r["Std.dev."].get<double>();
      sum[idx].q025 = r["2.5 %"].get<double>();
      sum[idx].q975 = r["97.5 %"].get<double>();
    } else {
      full_summary = false;
    }
  }
  for (std::size_t k = 0; k <= kFeatureCount; ++k)
    if (!seen[k])
      throw ParseError("coefficient document is missing '" +
                       std::string(k == 0 ? kInterceptName : kFeatureNames[k - 1]) + "'");
  if (full_summary) c.summary = sum;
  return c;
}

inline nlohmann::json to_json(const PosteriorSummary& s) {
  nlohmann::json coeffs = nlohmann::json::array();
  for (const auto& c : s.coefficients)
    coeffs.push_back({{"mean", c.mean}, {"std_dev", c.std_dev}, {"q2.5", c.q025}, {"q97.5", c.q975}});
  return {{"coefficients", coeffs},
          {"samples", s.samples},
          {"acceptance_rate", s.acceptance_rate},
          {"warnings", s.warnings}};
}

}  // namespace vslfog::risk
