#pragma once

// Constrained derivative-free minimisation by linear approximation in a trust
// region. Objective and constraints are modelled by linear interpolation on a
// simplex of n + 1 points; each trial step solves a small linear program in
// an infinity-norm ball, and an l-infinity penalty on constraint violation
// decides acceptance. Least-squares objectives may pass their residuals, in
// which case the residuals are modelled linearly and the step minimises the
// resulting Gauss-Newton quadratic over the same region.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "vslfog/error.hpp"

namespace vslfog::dfo {

// ---------------------------------------------------------------------------
// Dense simplex method: maximise c.x subject to A x <= b, x >= 0. Bland-style
// tie breaking; two phases when b has negative entries.

class LinearProgram {
public:
  enum class Status { optimal, infeasible, unbounded };

  LinearProgram(const std::vector<std::vector<double>>& A, const std::vector<double>& b,
                const std::vector<double>& c)
      : m_(b.size()), n_(c.size()), B_(m_), N_(n_ + 1), D_(m_ + 2, std::vector<double>(n_ + 2)) {
    for (std::size_t i = 0; i < m_; ++i)
      for (std::size_t j = 0; j < n_; ++j) D_[i][j] = A[i][j];
    for (std::size_t i = 0; i < m_; ++i) {
      B_[i] = static_cast<long>(n_ + i);
      D_[i][n_] = -1.0;
      D_[i][n_ + 1] = b[i];
    }
    for (std::size_t j = 0; j < n_; ++j) {
      N_[j] = static_cast<long>(j);
      D_[m_][j] = -c[j];
    }
    N_[n_] = -1;
    D_[m_ + 1][n_] = 1.0;
  }

  Status solve(std::vector<double>& x, double& value) {
    std::size_t r = 0;
    for (std::size_t i = 1; i < m_; ++i)
      if (D_[i][n_ + 1] < D_[r][n_ + 1]) r = i;
    if (m_ > 0 && D_[r][n_ + 1] < -kEps) {
      pivot(r, n_);
      if (!run(1) || D_[m_ + 1][n_ + 1] < -kEps) return Status::infeasible;
      for (std::size_t i = 0; i < m_; ++i)
        if (B_[i] == -1) {
          std::size_t s = 0;
          for (std::size_t j = 1; j <= n_; ++j)
            if (D_[i][j] < D_[i][s] || (D_[i][j] == D_[i][s] && N_[j] < N_[s])) s = j;
          pivot(i, s);
        }
    }
    if (!run(2)) return Status::unbounded;
    x.assign(n_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
      if (B_[i] >= 0 && static_cast<std::size_t>(B_[i]) < n_) x[static_cast<std::size_t>(B_[i])] = D_[i][n_ + 1];
    value = D_[m_][n_ + 1];
    return Status::optimal;
  }

private:
  static constexpr double kEps = 1e-11;

  void pivot(std::size_t r, std::size_t s) {
    const double inv = 1.0 / D_[r][s];
    for (std::size_t i = 0; i < m_ + 2; ++i)
      if (i != r)
        for (std::size_t j = 0; j < n_ + 2; ++j)
          if (j != s) D_[i][j] -= D_[r][j] * D_[i][s] * inv;
    for (std::size_t j = 0; j < n_ + 2; ++j)
      if (j != s) D_[r][j] *= inv;
    for (std::size_t i = 0; i < m_ + 2; ++i)
      if (i != r) D_[i][s] *= -inv;
    D_[r][s] = inv;
    std::swap(B_[r], N_[s]);
  }

  bool run(int phase) {
    const std::size_t x = phase == 1 ? m_ + 1 : m_;
    for (std::size_t guard = 0; guard < 10000; ++guard) {
      std::optional<std::size_t> s;
      for (std::size_t j = 0; j <= n_; ++j) {
        if (phase == 2 && N_[j] == -1) continue;
        if (!s || D_[x][j] < D_[x][*s] || (D_[x][j] == D_[x][*s] && N_[j] < N_[*s])) s = j;
      }
      if (D_[x][*s] > -kEps) return true;
      std::optional<std::size_t> r;
      for (std::size_t i = 0; i < m_; ++i) {
        if (D_[i][*s] < kEps) continue;
        if (!r) {
          r = i;
          continue;
        }
        const double lhs = D_[i][n_ + 1] / D_[i][*s], rhs = D_[*r][n_ + 1] / D_[*r][*s];
        if (lhs < rhs || (lhs == rhs && B_[i] < B_[*r])) r = i;
      }
      if (!r) return false;
      pivot(*r, *s);
    }
    return true;  // iteration guard; tableau is still a feasible vertex
  }

  std::size_t m_, n_;
  std::vector<long> B_, N_;
  std::vector<std::vector<double>> D_;
};

// ---------------------------------------------------------------------------

struct Evaluation {
  double f = 0.0;
  std::vector<double> c;  // feasible when every entry is >= 0
  // Optional residuals with f == sum of squares. When given, the objective
  // model is Gauss-Newton built from linear models of each residual.
  std::vector<double> r;
};

using Problem = std::function<Evaluation(const std::vector<double>&)>;

struct Options {
  double rho_begin = 0.05;
  double rho_end = 1e-4;
  std::size_t max_evaluations = 500;
  // Points whose worst constraint is at least -tolerance count as feasible.
  // Steps onto a linear constraint land on it only up to rounding.
  double feasibility_tolerance = 1e-12;
};

struct Result {
  std::vector<double> x;
  Evaluation at_x;
  std::size_t evaluations = 0;
  double final_radius = 0.0;
};

inline double violation(const std::vector<double>& c) {
  double v = 0.0;
  for (double ci : c) v = std::max(v, -ci);
  return v;
}

namespace detail {

// Solves M y = r in place (Gaussian elimination with partial pivoting).
// Returns false when M is numerically singular.
inline bool solve_linear(std::vector<std::vector<double>> M, std::vector<double>& r) {
  const std::size_t n = r.size();
  double scale = 0.0;
  for (const auto& row : M)
    for (double v : row) scale = std::max(scale, std::abs(v));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t i = col + 1; i < n; ++i)
      if (std::abs(M[i][col]) > std::abs(M[piv][col])) piv = i;
    if (std::abs(M[piv][col]) <= 1e-12 * scale) return false;
    std::swap(M[piv], M[col]);
    std::swap(r[piv], r[col]);
    for (std::size_t i = col + 1; i < n; ++i) {
      const double factor = M[i][col] / M[col][col];
      for (std::size_t j = col; j < n; ++j) M[i][j] -= factor * M[col][j];
      r[i] -= factor * r[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = r[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= M[i][j] * r[j];
    r[i] = s / M[i][i];
  }
  return true;
}

inline double abs_det(std::vector<std::vector<double>> M) {
  const std::size_t n = M.size();
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t i = col + 1; i < n; ++i)
      if (std::abs(M[i][col]) > std::abs(M[piv][col])) piv = i;
    if (M[piv][col] == 0.0) return 0.0;
    std::swap(M[piv], M[col]);
    det *= M[col][col];
    for (std::size_t i = col + 1; i < n; ++i) {
      const double factor = M[i][col] / M[col][col];
      for (std::size_t j = col; j < n; ++j) M[i][j] -= factor * M[col][j];
    }
  }
  return std::abs(det);
}

struct Point {
  std::vector<double> x;
  Evaluation e;
};

// Minimises g.d + d'Hd/2 subject to G d <= h by a primal active-set method,
// starting from the feasible point d. H must be positive definite. Stops
// early (at a feasible point no worse than the start) if the working set
// becomes degenerate or the iteration cap is hit.
inline void solve_qp(const std::vector<std::vector<double>>& H, const std::vector<double>& g,
                     const std::vector<std::vector<double>>& G, const std::vector<double>& h,
                     std::vector<double>& d) {
  const std::size_t n = d.size();
  std::vector<std::size_t> work;
  for (int iter = 0; iter < 100; ++iter) {
    const std::size_t k = n + work.size();
    std::vector<std::vector<double>> K(k, std::vector<double>(k, 0.0));
    std::vector<double> rhs(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      rhs[i] = -g[i];
      for (std::size_t j = 0; j < n; ++j) {
        K[i][j] = H[i][j];
        rhs[i] -= H[i][j] * d[j];
      }
    }
    for (std::size_t a = 0; a < work.size(); ++a)
      for (std::size_t j = 0; j < n; ++j) K[n + a][j] = K[j][n + a] = G[work[a]][j];
    if (!solve_linear(K, rhs)) return;
    double step = 0.0, size = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      step = std::max(step, std::abs(rhs[j]));
      size = std::max(size, std::abs(d[j]));
    }
    if (step <= 1e-13 * std::max(1.0, size)) {
      // Multipliers of the working constraints are -rhs[n + a].
      std::optional<std::size_t> drop;
      double most = -1e-14;
      for (std::size_t a = 0; a < work.size(); ++a)
        if (-rhs[n + a] < most) {
          most = -rhs[n + a];
          drop = a;
        }
      if (!drop) return;
      work.erase(work.begin() + static_cast<long>(*drop));
      continue;
    }
    double alpha = 1.0;
    std::optional<std::size_t> block;
    for (std::size_t i = 0; i < G.size(); ++i) {
      if (std::find(work.begin(), work.end(), i) != work.end()) continue;
      double gp = 0.0, gd = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        gp += G[i][j] * rhs[j];
        gd += G[i][j] * d[j];
      }
      if (gp <= 0.0) continue;
      const double a = std::max(0.0, h[i] - gd) / gp;
      if (a < alpha) {
        alpha = a;
        block = i;
      }
    }
    for (std::size_t j = 0; j < n; ++j) d[j] += alpha * rhs[j];
    if (block) work.push_back(*block);
  }
}

}  // namespace detail

/// Minimises f(x) subject to c(x) >= 0 starting from a feasible x0. Works in
/// coordinates scaled by |x0| so the radii are relative.
///
/// Two radii as in Powell's method: rho is the resolution, only ever halved,
/// and delta >= rho is the trust radius, which grows after good steps and
/// shrinks after poor ones. rho is halved only when a step fails with
/// delta == rho and the simplex is well shaped; a badly shaped simplex gets a
/// geometry step instead. Stops when rho falls below rho_end or the budget is
/// spent. The returned point is the best feasible point seen, so it is never
/// worse than x0.
inline Result minimize(const Problem& problem, const std::vector<double>& x0, const Options& opt = {}) {
  const std::size_t n = x0.size();
  if (n == 0) throw UsageError("nothing to optimise");
  std::vector<double> scale(n);
  for (std::size_t j = 0; j < n; ++j) scale[j] = x0[j] != 0.0 ? std::abs(x0[j]) : 1.0;
  auto unscale = [&](const std::vector<double>& z) {
    std::vector<double> x(n);
    for (std::size_t j = 0; j < n; ++j) x[j] = z[j] * scale[j];
    return x;
  };

  std::size_t evals = 0;
  auto eval = [&](const std::vector<double>& z) {
    ++evals;
    return detail::Point{z, problem(unscale(z))};
  };

  std::vector<double> z0(n);
  for (std::size_t j = 0; j < n; ++j) z0[j] = x0[j] / scale[j];
  detail::Point start = eval(z0);
  if (violation(start.e.c) > opt.feasibility_tolerance)
    throw InfeasibleError("initial point violates the constraints");
  const std::size_t m = start.e.c.size();

  detail::Point best_feasible = start;
  auto consider = [&](const detail::Point& p) {
    if (violation(p.e.c) <= opt.feasibility_tolerance && p.e.f < best_feasible.e.f) best_feasible = p;
  };

  double mu = 0.0;
  auto merit = [&](const detail::Point& p) { return p.e.f + mu * violation(p.e.c); };
  auto better = [&](const detail::Point& a, const detail::Point& b) {
    const double ma = merit(a), mb = merit(b);
    if (ma != mb) return ma < mb;
    return violation(a.e.c) < violation(b.e.c);
  };
  auto inf_norm = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d = std::max(d, std::abs(a[j] - b[j]));
    return d;
  };

  double rho = opt.rho_begin;
  double delta = rho;
  std::vector<detail::Point> simplex;
  auto rebuild = [&](const detail::Point& centre) {
    simplex.assign(1, centre);
    for (std::size_t j = 0; j < n && evals < opt.max_evaluations; ++j) {
      auto z = centre.x;
      z[j] += rho;
      simplex.push_back(eval(z));
      consider(simplex.back());
    }
  };

  rebuild(start);
  while (rho >= opt.rho_end && evals < opt.max_evaluations && simplex.size() == n + 1) {
    const auto base_it = std::min_element(simplex.begin(), simplex.end(), better);
    const std::size_t base = static_cast<std::size_t>(base_it - simplex.begin());
    const auto zb = simplex[base].x;

    // Edge matrix and its inverse; column r of the inverse is normal to the
    // face opposite vertex others[r].
    std::vector<std::vector<double>> Dm;
    std::vector<std::size_t> others;
    for (std::size_t k = 0; k <= n; ++k) {
      if (k == base) continue;
      others.push_back(k);
      std::vector<double> row(n);
      for (std::size_t j = 0; j < n; ++j) row[j] = simplex[k].x[j] - zb[j];
      Dm.push_back(std::move(row));
    }
    std::vector<std::vector<double>> inv_cols(n, std::vector<double>(n, 0.0));
    bool ok = true;
    for (std::size_t r = 0; r < n && ok; ++r) {
      inv_cols[r][r] = 1.0;
      ok = detail::solve_linear(Dm, inv_cols[r]);
    }
    if (!ok) {
      rebuild(simplex[base]);
      continue;
    }
    // Linear models: gradient = D^{-1} (values - base value).
    auto model_gradient = [&](auto value_of) {
      std::vector<double> grad(n, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        const double dv = value_of(simplex[others[r]]) - value_of(simplex[base]);
        for (std::size_t j = 0; j < n; ++j) grad[j] += inv_cols[r][j] * dv;
      }
      return grad;
    };
    auto g = model_gradient([](const detail::Point& p) { return p.e.f; });
    // Gauss-Newton model when residuals are supplied: J from the residual
    // differences, g = 2 J'r, H = 2 J'J plus a small ridge.
    const auto& rb = simplex[base].e.r;
    const bool least_squares = !rb.empty() && std::all_of(simplex.begin(), simplex.end(), [&](const detail::Point& p) {
      return p.e.r.size() == rb.size();
    });
    std::vector<std::vector<double>> H;
    if (least_squares) {
      std::vector<std::vector<double>> J(rb.size(), std::vector<double>(n, 0.0));
      for (std::size_t r = 0; r < n; ++r) {
        const auto& ro = simplex[others[r]].e.r;
        for (std::size_t q = 0; q < rb.size(); ++q) {
          const double dv = ro[q] - rb[q];
          if (dv != 0.0)
            for (std::size_t j = 0; j < n; ++j) J[q][j] += inv_cols[r][j] * dv;
        }
      }
      H.assign(n, std::vector<double>(n, 0.0));
      g.assign(n, 0.0);
      for (std::size_t q = 0; q < rb.size(); ++q)
        for (std::size_t i = 0; i < n; ++i) {
          g[i] += 2.0 * J[q][i] * rb[q];
          for (std::size_t j = 0; j < n; ++j) H[i][j] += 2.0 * J[q][i] * J[q][j];
        }
      double trace = 0.0;
      for (std::size_t i = 0; i < n; ++i) trace += H[i][i];
      const double ridge = 1e-10 * trace / static_cast<double>(n) + 1e-300;
      for (std::size_t i = 0; i < n; ++i) H[i][i] += ridge;
    }
    std::vector<std::vector<double>> A(m);
    for (std::size_t i = 0; i < m; ++i) A[i] = model_gradient([i](const detail::Point& p) { return p.e.c[i]; });
    const auto& cb = simplex[base].e.c;

    // Geometry: the vertex furthest from the base, or the one closest to its
    // opposite face.
    std::size_t worst = n;
    double worst_score = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double dist = inf_norm(simplex[others[r]].x, zb);
      double norm = 0.0;
      for (double v : inv_cols[r]) norm += v * v;
      const double height = 1.0 / std::sqrt(norm);
      double score = 0.0;
      if (dist > 2.1 * delta) score = dist / delta;
      else if (height < 0.25 * rho) score = rho / height;
      if (score > worst_score) {
        worst_score = score;
        worst = r;
      }
    }
    auto geometry_step = [&]() {
      // Move the bad vertex to the base plus rho along its face normal, on
      // the side where the objective model decreases.
      const auto& w = inv_cols[worst];
      double norm = 0.0, slope = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        norm = std::max(norm, std::abs(w[j]));
        slope += g[j] * w[j];
      }
      const double s = (slope > 0.0 ? -rho : rho) / norm;
      auto z = zb;
      for (std::size_t j = 0; j < n; ++j) z[j] += s * w[j];
      simplex[others[worst]] = eval(z);
      consider(simplex[others[worst]]);
    };
    auto reduce = [&]() {
      if (worst < n) {
        geometry_step();
        return;
      }
      rho *= 0.5;
      delta = std::max(0.5 * delta, rho);
    };

    // Step: first the least achievable linearised violation, then the best
    // linearised objective that keeps it. Variables u = d + delta >= 0, plus
    // a slack t >= 0 on every constraint.
    const std::size_t nv = n + 1;
    std::vector<std::vector<double>> lpA;
    std::vector<double> lpb;
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> row(nv, 0.0);
      double shift = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = -A[i][j];
        shift += A[i][j] * delta;
      }
      row[n] = -1.0;
      lpA.push_back(std::move(row));
      lpb.push_back(cb[i] - shift);
    }
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<double> row(nv, 0.0);
      row[j] = 1.0;
      lpA.push_back(std::move(row));
      lpb.push_back(2.0 * delta);
    }
    std::vector<double> sol;
    double val = 0.0;
    std::vector<double> c1(nv, 0.0);
    c1[n] = -1.0;  // maximise -t
    LinearProgram lp1(lpA, lpb, c1);
    if (lp1.solve(sol, val) != LinearProgram::Status::optimal) {
      reduce();
      continue;
    }
    const double t_star = std::max(0.0, sol[n]);
    std::vector<double> d(n);
    for (std::size_t j = 0; j < n; ++j) d[j] = sol[j] - delta;
    if (least_squares) {
      // Quadratic model over the same region, from the least-violation point.
      std::vector<std::vector<double>> G;
      std::vector<double> h;
      for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> row(n);
        for (std::size_t j = 0; j < n; ++j) row[j] = -A[i][j];
        G.push_back(std::move(row));
        h.push_back(cb[i] + t_star);
      }
      for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> row(n, 0.0);
        row[j] = 1.0;
        G.push_back(row);
        h.push_back(delta);
        row[j] = -1.0;
        G.push_back(std::move(row));
        h.push_back(delta);
      }
      detail::solve_qp(H, g, G, h, d);
    } else {
      auto lpA2 = lpA;
      auto lpb2 = lpb;
      std::vector<double> cap(nv, 0.0);
      cap[n] = 1.0;
      lpA2.push_back(cap);
      lpb2.push_back(t_star);
      std::vector<double> c2(nv, 0.0);
      for (std::size_t j = 0; j < n; ++j) c2[j] = -g[j];
      LinearProgram lp2(lpA2, lpb2, c2);
      std::vector<double> sol2;
      if (lp2.solve(sol2, val) == LinearProgram::Status::optimal)
        for (std::size_t j = 0; j < n; ++j) d[j] = sol2[j] - delta;
    }

    // Model change of the objective along d.
    double df = 0.0, step_len = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      df += g[j] * d[j];
      if (least_squares)
        for (std::size_t i = 0; i < n; ++i) df += 0.5 * d[i] * H[i][j] * d[j];
      step_len = std::max(step_len, std::abs(d[j]));
    }
    double lin_after = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double ci = cb[i];
      for (std::size_t j = 0; j < n; ++j) ci += A[i][j] * d[j];
      lin_after = std::max(lin_after, -ci);
    }
    const double viol_drop = violation(cb) - lin_after;
    if (viol_drop > 0.0 && df > 0.0) mu = std::max(mu, 2.0 * df / viol_drop);
    const double predicted = -df + mu * viol_drop;
    const double base_merit = merit(simplex[base]);
    if (step_len < 0.5 * rho || !(predicted > 1e-14 * std::max(1.0, std::abs(base_merit)))) {
      delta = rho;
      reduce();
      continue;
    }

    std::vector<double> zt(n);
    for (std::size_t j = 0; j < n; ++j) zt[j] = zb[j] + d[j];
    detail::Point trial = eval(zt);
    consider(trial);
    const double ratio = (merit(simplex[base]) - merit(trial)) / predicted;
    const double delta_before = delta;
    if (ratio < 0.1) delta = std::max(0.5 * delta, rho);
    else if (ratio > 0.7) delta = std::max(delta, 2.0 * step_len);
    if (delta <= 1.5 * rho) delta = rho;

    // Keep the best point; swap the trial in where it leaves the largest
    // simplex volume.
    const bool improved = better(trial, simplex[base]);
    std::optional<std::size_t> replace;
    double best_vol = -1.0;
    for (std::size_t k = 0; k <= n; ++k) {
      if (!improved && k == base) continue;
      const auto& origin = k == 0 ? trial.x : simplex[0].x;
      std::vector<std::vector<double>> M;
      for (std::size_t q = 1; q <= n; ++q) {
        const auto& p = q == k ? trial.x : simplex[q].x;
        std::vector<double> row(n);
        for (std::size_t j = 0; j < n; ++j) row[j] = p[j] - origin[j];
        M.push_back(std::move(row));
      }
      const double vol = detail::abs_det(M);
      if (vol > best_vol) {
        best_vol = vol;
        replace = k;
      }
    }
    if (replace && best_vol > 0.0) simplex[*replace] = trial;

    if (ratio < 0.1 && delta_before <= rho) reduce();
  }

  Result res;
  res.x = unscale(best_feasible.x);
  res.at_x = best_feasible.e;
  res.evaluations = evals;
  res.final_radius = rho;
  return res;
}

}  // namespace vslfog::dfo
