#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include "twophoton/errors.hpp"
#include "twophoton/fock.hpp"
#include "twophoton/lindblad.hpp"

namespace twophoton {

// Radiative decay and pure dephasing of a single bosonic mode, in units of
// gamma_a unless stated otherwise.
struct DecayDephaseParams {
  double gamma_a = 1.0;
  double gamma_phi = 0.0;

  void validate() const {
    if (!(gamma_a > 0.0) || !std::isfinite(gamma_a)) throw ValidationError("gamma_a must be positive");
    if (!(gamma_phi >= 0.0) || !std::isfinite(gamma_phi)) throw ValidationError("gamma_phi must be non-negative");
  }
};

// Two detection channels at frequencies omega1, omega2 (relative to the mode)
// with linewidths Gamma1, Gamma2 and sensor couplings epsilon1, epsilon2.
struct FilterParams {
  double omega1 = 0.0;
  double omega2 = 0.0;
  double Gamma1 = 0.5;
  double Gamma2 = 0.5;
  double epsilon1 = 1.0;
  double epsilon2 = 1.0;

  static FilterParams equal(double w1, double w2, double Gamma, double epsilon = 1.0) {
    return {w1, w2, Gamma, Gamma, epsilon, epsilon};
  }

  FilterParams swapped() const { return {omega2, omega1, Gamma2, Gamma1, epsilon2, epsilon1}; }

  void validate() const {
    if (!(Gamma1 > 0.0) || !(Gamma2 > 0.0)) throw ValidationError("filter linewidth must be positive");
    if (!(epsilon1 > 0.0) || !(epsilon2 > 0.0)) throw ValidationError("sensor coupling must be positive");
    if (!std::isfinite(omega1) || !std::isfinite(omega2)) throw ValidationError("filter frequency must be finite");
  }
};

// gamma = Gamma + gamma_a + gamma_phi
inline double composite_rate(double Gamma, const DecayDephaseParams& p) { return Gamma + p.gamma_a + p.gamma_phi; }

namespace detail {

inline cplx checked_inverse(cplx z, const char* factor) {
  if (std::abs(z) < 1e-12) throw SingularityError(std::string("vanishing denominator in factor ") + factor);
  return 1.0 / z;
}

// Bracketed term shared by the integrated correlation and the form factor,
// before the exchange of the two channels.
inline cplx pair_bracket(double w1, double w2, double Gamma, const DecayDephaseParams& p) {
  const double ga = p.gamma_a;
  const double g = composite_rate(Gamma, p);
  const cplx i(0.0, 1.0);
  const double g2a = g + 2.0 * ga;
  const cplx first = g2a * checked_inverse(g2a * g2a + 4.0 * w1 * w1, "(gamma+2gamma_a)^2+4w1^2");
  const cplx lead = ga * checked_inverse(g2a + 2.0 * i * w2, "gamma+2gamma_a+2iw2");
  const cplx inner1 = (g2a - i * (w1 - w2)) * checked_inverse(g2a - 2.0 * i * w1, "gamma+2gamma_a-2iw1") *
                      checked_inverse(Gamma + ga - i * (w1 - w2), "Gamma+gamma_a-i(w1-w2)");
  const cplx inner2 = (g2a + i * (w1 + w2)) * checked_inverse(g2a + 2.0 * i * w1, "gamma+2gamma_a+2iw1") *
                      checked_inverse(2.0 * g - Gamma - ga + i * (w1 + w2), "2gamma-Gamma-gamma_a+i(w1+w2)");
  return first + lead * (inner1 + inner2);
}

inline double form_factor_term(double w1, double w2, double Gamma, const DecayDephaseParams& p) {
  const double g = composite_rate(Gamma, p);
  const cplx i(0.0, 1.0);
  const cplx pre = (g * g + 4.0 * w1 * w1) * (g * g + 4.0 * w2 * w2) *
                   checked_inverse(2.0 * g * g * (g + 2.0 * i * w2), "gamma+2iw2");
  return std::real(pre * pair_bracket(w1, w2, Gamma, p));
}

}  // namespace detail

// Boson form factor F_Gamma(w1, w2) for equal filter widths: the written term
// plus its exchange w1 <-> w2.
inline double boson_form_factor(double omega1, double omega2, double Gamma, const DecayDephaseParams& p) {
  p.validate();
  if (!(Gamma > 0.0)) throw ValidationError("filter linewidth must be positive");
  return detail::form_factor_term(omega1, omega2, Gamma, p) + detail::form_factor_term(omega2, omega1, Gamma, p);
}

// Time-integrated filtered intensity of one channel for initial population n0
// (lambda -> 0 limit, equal coupling epsilon).
inline double integrated_filtered_intensity(double omega, double Gamma, double epsilon, const DecayDephaseParams& p,
                                            double n0) {
  p.validate();
  if (!(Gamma > 0.0)) throw ValidationError("filter linewidth must be positive");
  if (!(n0 >= 0.0)) throw ValidationError("initial population must be non-negative");
  const double h = 0.5 * composite_rate(Gamma, p);
  return epsilon * epsilon * (2.0 / (Gamma * p.gamma_a)) * h / (h * h + omega * omega) * n0;
}

// Time-integrated cross intensity of the two channels for an initial state
// with population n0 and zero-delay correlation g2_0.
inline double integrated_filtered_correlations(double omega1, double omega2, double Gamma, double epsilon,
                                               const DecayDephaseParams& p, double n0, double g2_0) {
  p.validate();
  if (!(Gamma > 0.0)) throw ValidationError("filter linewidth must be positive");
  const double g = composite_rate(Gamma, p);
  const cplx i(0.0, 1.0);
  auto term = [&](double w1, double w2) {
    const cplx pre = 8.0 * detail::checked_inverse(Gamma * Gamma * p.gamma_a * p.gamma_a * (g + 2.0 * i * w2),
                                                   "gamma+2iw2");
    return std::real(pre * detail::pair_bracket(w1, w2, Gamma, p));
  };
  const double e2 = epsilon * epsilon;
  return n0 * n0 * g2_0 * e2 * e2 * (term(omega1, omega2) + term(omega2, omega1));
}

namespace detail {

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (int j = 1; j <= k; ++j) r = r * double(n - k + j) / double(j);
  return r;
}

// Contribution of rho_{k, m-n+k}(0) to rho_{n,m}(t).
inline double spontaneous_weight(int n, int m, int k, double decay, double gamma_a, double gamma_phi, double t) {
  const int l = m - n + k;
  const double survive = std::exp(-gamma_a * t * double(n + m) / 2.0 - gamma_phi * double((n - m) * (n - m)) * t / 2.0);
  return std::sqrt(binomial(k, n) * binomial(l, m)) * std::pow(decay, k - n) * survive;
}

}  // namespace detail

// Exact state of a decaying and dephasing mode at time t. The infinite sum
// over initial elements is cut at the truncation of the space, which is exact
// because rho0 has no weight beyond it.
inline DensityMatrix rho_spontaneous(const DensityMatrix& rho0, const DecayDephaseParams& p, double t) {
  p.validate();
  if (!(t >= 0.0)) throw ValidationError("time must be non-negative");
  const auto& space = rho0.space();
  if (space.num_modes() != 1) throw ValidationError("rho_spontaneous expects a single-mode state");
  const int cap = space.truncation(0);
  // 1 - e^{-gamma_a t}, written to keep precision at small t
  const double decay = -std::expm1(-p.gamma_a * t);
  MatrixC out = MatrixC::Zero(cap + 1, cap + 1);
  for (int n = 0; n <= cap; ++n)
    for (int m = 0; m <= cap; ++m) {
      cplx acc = 0.0;
      for (int k = n; k <= cap; ++k) {
        const int l = m - n + k;
        if (l > cap) break;
        acc += rho0(k, l) * detail::spontaneous_weight(n, m, k, decay, p.gamma_a, p.gamma_phi, t);
      }
      out(n, m) = acc;
    }
  return {space, std::move(out)};
}

}  // namespace twophoton
