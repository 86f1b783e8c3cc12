#pragma once

// Real-coded genetic algorithm over a box: tournament selection, arithmetic
// crossover, uniform-perturbation mutation with a shrinking radius, and one
// elite carried between generations. Maximises.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "vslfog/error.hpp"

namespace vslfog::ga {

struct GAConfig {
  std::size_t population = 30;
  std::size_t generations = 50;
  double crossover_prob = 0.8;
  double mutation_prob = 0.1;
  double precision = 1e-7;  // encoding resolution of each gene
  std::size_t tournament = 3;
  std::uint64_t seed = 2021;

  void validate() const {
    if (crossover_prob < 0.0 || crossover_prob > 1.0 || mutation_prob < 0.0 || mutation_prob > 1.0)
      throw UsageError("GA probabilities must lie in [0, 1]");
    if (population < 4 || population % 2 != 0)
      throw UsageError("GA population must be even and at least 4");
    if (!(precision > 0.0)) throw UsageError("GA precision must be positive");
    if (tournament < 1) throw UsageError("tournament size must be at least 1");
  }
};

struct Box {
  std::vector<double> lower, upper;

  std::size_t dimension() const { return lower.size(); }

  void validate() const {
    if (lower.empty() || lower.size() != upper.size()) throw UsageError("malformed search box");
    for (std::size_t d = 0; d < lower.size(); ++d)
      if (!(lower[d] <= upper[d])) throw UsageError("search box has lower > upper");
  }
};

struct GenerationStats {
  std::size_t generation = 0;
  double best = 0.0;  // best value found so far
  double mean = 0.0;  // mean over the current population

  bool operator==(const GenerationStats&) const = default;
};

struct Result {
  std::vector<double> best;
  double best_value = 0.0;
  std::vector<GenerationStats> history;  // generation 0 is the initial population
  std::size_t evaluations = 0;           // distinct (snapped) points evaluated
};

using Objective = std::function<double(const std::vector<double>&)>;
using Snap = std::function<std::vector<double>(std::vector<double>)>;

namespace detail {

inline std::vector<double> encode(std::vector<double> x, const Box& box, double precision) {
  for (std::size_t d = 0; d < x.size(); ++d) {
    x[d] = std::clamp(x[d], box.lower[d], box.upper[d]);
    x[d] = box.lower[d] + std::round((x[d] - box.lower[d]) / precision) * precision;
    x[d] = std::min(x[d], box.upper[d]);
  }
  return x;
}

}  // namespace detail

/// Maximises `f` over `box`. `snap` maps an encoded individual onto the
/// points the objective accepts (identity when empty); evaluations are
/// memoised on the snapped vector. Deterministic for a given seed.
inline Result maximize(const Objective& f, const Box& box, const GAConfig& cfg,
                       const Snap& snap = {}) {
  cfg.validate();
  box.validate();
  const std::size_t dim = box.dimension();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::map<std::vector<double>, double> memo;
  auto prepare = [&](std::vector<double> x) {
    x = detail::encode(std::move(x), box, cfg.precision);
    return snap ? snap(std::move(x)) : x;
  };
  auto evaluate = [&](const std::vector<double>& x) {
    auto it = memo.find(x);
    if (it != memo.end()) return it->second;
    const double v = f(x);
    memo.emplace(x, v);
    return v;
  };

  std::vector<std::vector<double>> pop(cfg.population, std::vector<double>(dim));
  for (auto& ind : pop) {
    for (std::size_t d = 0; d < dim; ++d)
      ind[d] = box.lower[d] + unit(rng) * (box.upper[d] - box.lower[d]);
    ind = prepare(std::move(ind));
  }
  std::vector<double> fit(cfg.population);

  Result res;
  auto score = [&](std::size_t gen) {
    for (std::size_t i = 0; i < pop.size(); ++i) fit[i] = evaluate(pop[i]);
    const auto best = static_cast<std::size_t>(std::max_element(fit.begin(), fit.end()) - fit.begin());
    if (gen == 0 || fit[best] > res.best_value) {
      res.best_value = fit[best];
      res.best = pop[best];
    }
    const double mean = std::accumulate(fit.begin(), fit.end(), 0.0) / static_cast<double>(fit.size());
    res.history.push_back({gen, res.best_value, mean});
  };

  auto tournament = [&]() -> const std::vector<double>& {
    std::uniform_int_distribution<std::size_t> pick(0, pop.size() - 1);
    std::size_t winner = pick(rng);
    for (std::size_t t = 1; t < cfg.tournament; ++t) {
      const std::size_t c = pick(rng);
      if (fit[c] > fit[winner]) winner = c;
    }
    return pop[winner];
  };

  score(0);
  for (std::size_t gen = 1; gen <= cfg.generations; ++gen) {
    // Mutation radius, as a fraction of each range, decays over the run.
    const double progress = static_cast<double>(gen - 1) / static_cast<double>(cfg.generations);
    const double radius = 0.5 * (1.0 - progress) * (1.0 - progress) + 1e-4;

    std::vector<std::vector<double>> next;
    next.reserve(cfg.population);
    next.push_back(res.best);  // elitism
    while (next.size() < cfg.population) {
      auto a = tournament();
      auto b = tournament();
      if (unit(rng) < cfg.crossover_prob) {
        const double alpha = unit(rng);
        for (std::size_t d = 0; d < dim; ++d) {
          const double x = a[d], y = b[d];
          a[d] = alpha * x + (1.0 - alpha) * y;
          b[d] = (1.0 - alpha) * x + alpha * y;
        }
      }
      for (auto* child : {&a, &b}) {
        for (std::size_t d = 0; d < dim; ++d)
          if (unit(rng) < cfg.mutation_prob)
            (*child)[d] += (2.0 * unit(rng) - 1.0) * radius * (box.upper[d] - box.lower[d]);
        if (next.size() < cfg.population) next.push_back(prepare(std::move(*child)));
      }
    }
    pop = std::move(next);
    score(gen);
  }
  res.evaluations = memo.size();
  return res;
}

}  // namespace vslfog::ga
