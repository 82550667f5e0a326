#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "twophoton/analytic.hpp"
#include "twophoton/errors.hpp"
#include "twophoton/lindblad.hpp"
#include "twophoton/parallel.hpp"
#include "twophoton/sensor.hpp"
#include "twophoton/spectrum_grid.hpp"

namespace twophoton {

// Condensate mode a fed from a pumped reservoir b. Rates in units of gamma_a.
struct CondensateParams {
  double gamma_a = 1.0;
  double gamma_b = 1.0;
  double P_b = 1.0;
  double P_ba = 10.0;

  // Net loss rate of a reservoir excitation.
  double reservoir_loss() const { return gamma_b - P_b + P_ba; }

  void validate() const {
    for (double r : {gamma_a, gamma_b, P_b, P_ba})
      if (!(r >= 0.0) || !std::isfinite(r)) throw ValidationError("condensate rates must be finite and non-negative");
    if (!(gamma_a > 0.0)) throw ValidationError("condensate decay rate must be positive");
    if (!(reservoir_loss() > 0.0))
      throw ValidationError("reservoir is unstable: gamma_b - P_b + P_ba = " + std::to_string(reservoir_loss()));
  }
};

inline LindbladModel condensate_model(const CondensateParams& p, int cap_a, int cap_b) {
  p.validate();
  FockSpace space({"a", "b"}, {cap_a, cap_b});
  std::vector<CollapseTerm> c{{Monomial::parse("a", space), p.gamma_a},
                              {Monomial::parse("b", space), p.gamma_b},
                              {Monomial::parse("bd", space), p.P_b},
                              {Monomial::parse("ad*b", space), p.P_ba}};
  return LindbladModel(std::move(space), std::move(c));
}

// N[n,m] = <ad^n a^n bd^m b^m> for n + m <= order.
class MomentTable {
 public:
  MomentTable() = default;
  explicit MomentTable(int order) : order_(order) {
    if (order < 0) throw ValidationError("moment order must be non-negative");
    for (int s = 0; s <= order; ++s)
      for (int n = s; n >= 0; --n) {
        index_[{n, s - n}] = keys_.size();
        keys_.push_back({n, s - n});
      }
    values_.assign(keys_.size(), 0.0);
  }

  int order() const { return order_; }
  std::size_t size() const { return keys_.size(); }
  const std::vector<std::pair<int, int>>& keys() const { return keys_; }

  bool contains(int n, int m) const { return n >= 0 && m >= 0 && n + m <= order_; }

  double operator()(int n, int m) const { return contains(n, m) ? values_[index_.at({n, m})] : 0.0; }
  double& at(int n, int m) {
    if (!contains(n, m)) throw ValidationError("moment outside table");
    return values_[index_.at({n, m})];
  }

  double g2_zero() const {
    const double n1 = (*this)(1, 0);
    if (!(n1 > 0.0)) throw UndefinedCorrelationError("condensate population vanishes");
    return (*this)(2, 0) / (n1 * n1);
  }

 private:
  int order_ = 0;
  std::vector<std::pair<int, int>> keys_;
  std::map<std::pair<int, int>, std::size_t> index_;
  std::vector<double> values_;
};

// Coefficients of dN[n,m]/dt as (n', m', c) triples.
inline std::array<std::tuple<int, int, double>, 5> moment_coupling(int n, int m, const CondensateParams& p) {
  const double dn = n, dm = m;
  return {{{n, m, -(dn * p.gamma_a + dm * p.reservoir_loss() + dn * dm * p.P_ba)},
           {n - 1, m + 1, dn * dn * p.P_ba},
           {n, m + 1, dn * p.P_ba},
           {n, m - 1, p.P_b * dm * dm},
           {n + 1, m, -dm * p.P_ba}}};
}

// Time derivative of every entry; moments beyond the table count as zero.
inline MomentTable moment_rhs(const MomentTable& t, const CondensateParams& p) {
  MomentTable d(t.order());
  for (const auto& [n, m] : t.keys()) {
    if (n == 0 && m == 0) continue;
    double acc = 0.0;
    for (const auto& [nn, mm, c] : moment_coupling(n, m, p))
      if (c != 0.0 && nn >= 0 && mm >= 0) acc += c * t(nn, mm);
    d.at(n, m) = acc;
  }
  return d;
}

enum class MomentClosure {
  truncate,    // moments beyond the order are zero
  mean_field,  // moments beyond the order factorise as N[1,0]^n N[0,1]^m
};

struct MomentOptions {
  MomentClosure closure = MomentClosure::mean_field;
  bool escalate = true;
  int max_order = 80;
  double tolerance = 1e-6;
  double residual_tol = 1e-10;
};

namespace detail {

inline MomentTable solve_moments_once(const CondensateParams& p, int order, MomentClosure closure,
                                      double residual_tol) {
  MomentTable t(order);
  const auto& keys = t.keys();
  const auto n = static_cast<Eigen::Index>(keys.size() - 1);
  auto row_of = [&](int a, int b) -> Eigen::Index {
    const int s = a + b;
    return Eigen::Index(s * (s + 1) / 2 + (s - a)) - 1;
  };
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  std::vector<std::tuple<Eigen::Index, int, int, double>> outside;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [a, b] = keys[std::size_t(i) + 1];
    for (const auto& [ka, kb, c] : moment_coupling(a, b, p)) {
      if (c == 0.0 || ka < 0 || kb < 0) continue;
      if (ka == 0 && kb == 0) rhs(i) -= c;
      else if (ka + kb <= order) A(i, row_of(ka, kb)) += c;
      else outside.emplace_back(i, ka, kb, c);
    }
  }
  auto solve = [&](const Eigen::MatrixXd& M, const Eigen::VectorXd& b) {
    Eigen::VectorXd x = M.partialPivLu().solve(b);
    const double res = (M * x - b).cwiseAbs().maxCoeff();
    if (!x.allFinite() || res > residual_tol * std::max(1.0, x.cwiseAbs().maxCoeff()))
      throw NumericalError("moment system residual " + std::to_string(res) + " at order " + std::to_string(order));
    return x;
  };
  Eigen::VectorXd x = solve(A, rhs);
  if (closure == MomentClosure::mean_field && !outside.empty()) {
    // Newton iteration on A x + sum c N10^ka N01^kb = rhs, started from the
    // truncated solution.
    const Eigen::Index i10 = row_of(1, 0), i01 = row_of(0, 1);
    for (int it = 0;; ++it) {
      const double n10 = x(i10), n01 = x(i01);
      Eigen::VectorXd f = A * x - rhs;
      Eigen::MatrixXd J = A;
      for (const auto& [i, ka, kb, c] : outside) {
        f(i) += c * std::pow(n10, ka) * std::pow(n01, kb);
        J(i, i10) += c * ka * std::pow(n10, ka - 1) * std::pow(n01, kb);
        J(i, i01) += c * kb * std::pow(n10, ka) * std::pow(n01, kb - 1);
      }
      const Eigen::VectorXd step = J.partialPivLu().solve(f);
      if (!step.allFinite()) throw ClosureError("mean-field closure is singular at order " + std::to_string(order));
      x -= step;
      const double rel = std::max(std::abs(step(i10)) / std::max(std::abs(x(i10)), 1e-300),
                                  std::abs(step(i01)) / std::max(std::abs(x(i01)), 1e-300));
      if (rel < 1e-13) break;
      if (it > 50) throw ClosureError("mean-field closure did not converge at order " + std::to_string(order));
    }
  }
  t.at(0, 0) = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [a, b] = keys[std::size_t(i) + 1];
    t.at(a, b) = x(i);
  }
  return t;
}

}  // namespace detail

// Stationary moments from the closed hierarchy. With escalation enabled the
// order grows by 2 until N[1,0] and N[2,0] agree with the previous solvable
// order; orders where the closure has no solution are skipped.
inline MomentTable steady_moments(const CondensateParams& p, int order, const MomentOptions& opts = {}) {
  p.validate();
  if (order < 2) throw ValidationError("moment order must be at least 2");
  if (!opts.escalate) return detail::solve_moments_once(p, order, opts.closure, opts.residual_tol);
  auto rel = [](double a, double b) {
    return a == b ? 0.0 : std::abs(a - b) / std::max(std::abs(b), 1e-300);
  };
  std::optional<MomentTable> prev;
  std::string last_error;
  for (int k = order; k <= opts.max_order; k += 2) {
    MomentTable next;
    try {
      next = detail::solve_moments_once(p, k, opts.closure, opts.residual_tol);
    } catch (const NumericalError& e) {
      last_error = e.what();
      continue;
    }
    if (prev && rel((*prev)(1, 0), next(1, 0)) <= opts.tolerance && rel((*prev)(2, 0), next(2, 0)) <= opts.tolerance)
      return next;
    prev = std::move(next);
  }
  if (!prev) throw ClosureError("moment hierarchy has no solution up to order " + std::to_string(opts.max_order) +
                                ": " + last_error);
  throw ClosureError("moment hierarchy not converged by order " + std::to_string(prev->order()) + ": N[1,0] = " +
                     format_double((*prev)(1, 0)) + ", N[2,0] = " + format_double((*prev)(2, 0)) +
                     " still moving by more than " + format_double(opts.tolerance));
}

struct CondensateState {
  LindbladModel model;
  DensityMatrix rho;
};

struct CondensateTruncation {
  int initial_cap_a = 8;
  int initial_cap_b = 4;
  AutoTruncationOptions auto_opts{};
};

// Steady state on an automatically escalated truncation.
inline CondensateState condensate_steady_state(const CondensateParams& p, const CondensateTruncation& tr = {},
                                               const SteadyStateOptions& opts = {}) {
  auto r = steady_state_auto(condensate_model(p, tr.initial_cap_a, tr.initial_cap_b), tr.auto_opts, opts);
  return {std::move(r.model), std::move(r.rho)};
}

struct ProbePoint {
  std::string name;
  double omega1 = 0.0;
  double omega2 = 0.0;
};

// Diagonal (w, w), horizontal (w, 0) and antidiagonal (-w, w) probes, with
// w the half width at half maximum of the condensate emission line.
struct CondensateProbes {
  double half_width = 0.0;
  std::array<ProbePoint, 3> points;
};

inline CondensateProbes condensate_probes(const CondensateState& state) {
  const double w = spectrum_half_width(state.model, state.rho, 0);
  return {w, {{{"diagonal", w, w}, {"horizontal", w, 0.0}, {"antidiagonal", -w, w}}}};
}

struct Condensate2psOptions {
  SensorOptions sensor{};
  CondensateTruncation truncation{};
  unsigned threads = 0;
  // The coupling check runs at the grid point closest to the origin only.
  bool check_epsilon_once = true;
};

inline SpectrumGrid condensate_2ps(const CondensateParams& p, double Gamma, const std::vector<double>& axis1,
                                   const std::vector<double>& axis2, const Condensate2psOptions& opts = {}) {
  if (!(Gamma > 0.0)) throw ValidationError("filter linewidth must be positive");
  const CondensateState state = condensate_steady_state(p, opts.truncation, opts.sensor.steady);
  SpectrumGrid g = SpectrumGrid::make(axis1, axis2, Gamma);
  g.validate();

  // With equal filters the map is symmetric, so mirrored points are computed once.
  const bool symmetric = axis1 == axis2;
  std::vector<std::pair<std::size_t, std::size_t>> tasks;
  for (std::size_t i = 0; i < axis1.size(); ++i)
    for (std::size_t j = symmetric ? i : 0; j < axis2.size(); ++j) tasks.emplace_back(i, j);

  std::size_t centre = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const double r = std::hypot(axis1[tasks[k].first], axis2[tasks[k].second]);
    if (r < best) best = r, centre = k;
  }

  const unsigned nthreads = resolve_threads(opts.threads);
  std::vector<std::unique_ptr<SensorSteadySolver>> solvers;
  SensorOptions sensor = opts.sensor;
  if (opts.check_epsilon_once) sensor.check_epsilon = false;
  for (unsigned w = 0; w < nthreads; ++w)
    solvers.push_back(std::make_unique<SensorSteadySolver>(state.model, 0, sensor));
  if (opts.check_epsilon_once && opts.sensor.check_epsilon) {
    SensorSteadySolver checker(state.model, 0, opts.sensor);
    checker.evaluate(FilterParams::equal(axis1[tasks[centre].first], axis2[tasks[centre].second], Gamma));
  }
  parallel_for(tasks.size(), nthreads, [&](unsigned worker, std::size_t k) {
    const auto [i, j] = tasks[k];
    const double v = solvers[worker]->evaluate(FilterParams::equal(axis1[i], axis2[j], Gamma)).g2;
    g.values(Eigen::Index(i), Eigen::Index(j)) = v;
    if (symmetric) g.values(Eigen::Index(j), Eigen::Index(i)) = v;
  });

  const auto& caps = state.model.space().truncations();
  g.metadata = {{"model", "condensate"},
                {"gamma_a", format_double(p.gamma_a)},
                {"gamma_b", format_double(p.gamma_b)},
                {"P_b", format_double(p.P_b)},
                {"P_ba", format_double(p.P_ba)},
                {"epsilon", format_double(opts.sensor.epsilon)},
                {"truncation", std::to_string(caps[0]) + "," + std::to_string(caps[1])}};
  g.validate();
  return g;
}

}  // namespace twophoton
