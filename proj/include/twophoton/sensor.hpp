#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <boost/math/tools/roots.hpp>

#include "twophoton/analytic.hpp"
#include "twophoton/errors.hpp"
#include "twophoton/lindblad.hpp"
#include "twophoton/moments.hpp"

namespace twophoton {

// -(M + (shift - lambda) I)^{-1} x
inline VectorC resolvent_apply(const MatrixC& M, cplx shift, double lambda, const VectorC& x) {
  if (!(lambda > 0.0)) throw ValidationError("resolvent regulator must be positive");
  const auto n = M.rows();
  MatrixC A = M;
  A.diagonal().array() += shift - lambda;
  Eigen::FullPivLU<MatrixC> lu(A);
  if (!lu.isInvertible())
    throw SingularityError("resolvent is singular at shift (" + std::to_string(shift.real()) + "," +
                           std::to_string(shift.imag()) + ")");
  VectorC y = -lu.solve(x);
  const double res = (A * y + x).norm();
  if (res > 1e-12 * std::max(1.0, x.norm()))
    throw SingularityError("resolvent residual " + std::to_string(res) + " for a matrix of size " + std::to_string(n));
  return y;
}

struct ChainValues {
  double numerator = 0.0;
  double intensity1 = 0.0;
  double intensity2 = 0.0;
};

// Time-integrated sensor intensities and cross intensity at fixed lambda.
inline ChainValues spontaneous_chain(const MomentSystem& sys, const FilterParams& f, double lambda) {
  const cplx i(0.0, 1.0);
  const MatrixC& M = sys.M;
  const MatrixC& Tp = sys.Tplus;
  const MatrixC& Tm = sys.Tminus;
  auto R = [&](cplx s, const VectorC& x) { return resolvent_apply(M, s, lambda, x); };
  const VectorC vb = R(0.0, sys.v0);

  struct Half {
    double n1, single;
    VectorC ww11_01;
  };
  // Quantities carrying the first sensor index; the second channel follows
  // from exchanging the filter parameters.
  auto half = [&](double w1, double w2, double G1, double G2, double e1, double e2) {
    const VectorC w10_00 = R(i * w1 - G1 / 2, i * e1 * (Tp * vb));
    const VectorC w01_00 = R(-i * w1 - G1 / 2, -i * e1 * (Tm * vb));
    const VectorC w00_01 = R(-i * w2 - G2 / 2, -i * e2 * (Tm * vb));
    const VectorC w11_00 = R(-G1, i * e1 * (Tp * w01_00) - i * e1 * (Tm * w10_00));
    const VectorC w10_01 = R(i * (w1 - w2) - (G1 + G2) / 2, -i * e2 * (Tm * w10_00) + i * e1 * (Tp * w00_01));
    const VectorC w01_01 = R(-i * (w1 + w2) - (G1 + G2) / 2, -i * e1 * (Tm * w00_01) - i * e2 * (Tm * w01_00));
    const VectorC w11_01 =
        R(-i * w2 - G1 - G2 / 2, -i * e2 * (Tm * w11_00) - i * e1 * (Tm * w10_01) + i * e1 * (Tp * w01_01));
    Half h;
    h.n1 = 2.0 / (G1 + lambda) * std::real((i * e1 * (Tp * w01_00))(0));
    const VectorC ww11_00 = R(0.0, w11_00);
    h.ww11_01 = R(-i * w2 - G2 / 2, -i * e2 * (Tm * ww11_00) + w11_01);
    h.single = 2.0 / (G1 + G2 + lambda) * std::real((i * e2 * (Tp * w11_01))(0));
    return h;
  };
  const Half a = half(f.omega1, f.omega2, f.Gamma1, f.Gamma2, f.epsilon1, f.epsilon2);
  const Half b = half(f.omega2, f.omega1, f.Gamma2, f.Gamma1, f.epsilon2, f.epsilon1);
  const double single = a.single + b.single;
  const double x12 = (single + 2.0 * std::real((i * f.epsilon2 * (Tp * a.ww11_01))(0))) / (f.Gamma2 + lambda);
  const double x21 = (single + 2.0 * std::real((i * f.epsilon1 * (Tp * b.ww11_01))(0))) / (f.Gamma1 + lambda);
  return {x12 + x21, a.n1, b.n1};
}

struct LambdaLadder {
  std::vector<double> lambdas{1e-2, 5e-3, 2.5e-3};
  double tolerance = 1e-3;
};

// Repeated Richardson elimination on a geometric ladder with ratio 1/2,
// assuming an error expansion in integer powers of lambda.
inline double richardson(std::span<const double> values) {
  std::vector<double> r(values.begin(), values.end());
  double factor = 2.0;
  while (r.size() > 1) {
    for (std::size_t k = 0; k + 1 < r.size(); ++k) r[k] = (factor * r[k + 1] - r[k]) / (factor - 1.0);
    r.pop_back();
    factor *= 2.0;
  }
  return r.front();
}

struct Spontaneous2ps {
  double numerator = 0.0;
  double intensity1 = 0.0;
  double intensity2 = 0.0;
  double g2 = 0.0;
  std::vector<double> ladder_g2;
};

inline Spontaneous2ps spontaneous_2ps(const MomentSystem& sys, const FilterParams& f, const LambdaLadder& ladder = {}) {
  f.validate();
  if (ladder.lambdas.size() < 2) throw ValidationError("lambda ladder needs at least two values");
  for (std::size_t k = 1; k < ladder.lambdas.size(); ++k)
    if (std::abs(ladder.lambdas[k] - 0.5 * ladder.lambdas[k - 1]) > 1e-15 * ladder.lambdas[k - 1])
      throw ValidationError("lambda ladder must halve at each step");
  std::vector<double> num, n1, n2, g2;
  for (double l : ladder.lambdas) {
    const auto c = spontaneous_chain(sys, f, l);
    num.push_back(c.numerator);
    n1.push_back(c.intensity1);
    n2.push_back(c.intensity2);
    g2.push_back(c.numerator / (c.intensity1 * c.intensity2));
  }
  Spontaneous2ps out;
  out.numerator = richardson(num);
  out.intensity1 = richardson(n1);
  out.intensity2 = richardson(n2);
  out.ladder_g2 = g2;
  if (!(std::abs(out.intensity1) > 0.0) || !(std::abs(out.intensity2) > 0.0))
    throw UndefinedCorrelationError("filtered intensity vanishes");
  // The normalised ratio is extrapolated on its own: much of the lambda
  // dependence cancels between numerator and intensities.
  out.g2 = richardson(g2);
  // Compare with the extrapolant that drops the largest lambda.
  const double coarse = richardson(std::span<const double>(g2).subspan(1));
  if (!std::isfinite(out.g2) || std::abs(out.g2 - coarse) > ladder.tolerance * std::max(1.0, std::abs(out.g2))) {
    std::ostringstream msg;
    msg << "lambda extrapolation did not converge: ladder values";
    for (double v : g2) msg << ' ' << v;
    msg << ", extrapolants " << out.g2 << " and " << coarse;
    throw NumericalError(msg.str());
  }
  return out;
}

struct SensorOptions {
  double epsilon = 0.003;
  bool check_epsilon = true;
  double epsilon_tolerance = 1e-3;
  double population_limit = 1e-4;
  SteadyStateOptions steady{};
};

inline constexpr const char* kSensor1 = "sensor1";
inline constexpr const char* kSensor2 = "sensor2";

// Two sensor modes of occupation at most 1, detuned by omega_i, damped at
// Gamma_i and coupled with strength epsilon to the observed mode.
inline LindbladModel with_sensors(const LindbladModel& model, std::size_t mode, const FilterParams& f,
                                  double epsilon) {
  const auto& base = model.space();
  if (mode >= base.num_modes()) throw ValidationError("sensor target mode out of range");
  if (base.find(kSensor1) || base.find(kSensor2)) throw ValidationError("model already contains sensor modes");
  FockSpace space = base.with_mode(kSensor1, 1).with_mode(kSensor2, 1);
  const std::size_t s1 = base.num_modes(), s2 = s1 + 1;
  auto collapse = model.collapse_terms();
  collapse.push_back({Monomial::lower(s1), f.Gamma1});
  collapse.push_back({Monomial::lower(s2), f.Gamma2});
  auto h = model.hamiltonian_terms();
  h.push_back({Monomial::number(s1), f.omega1});
  h.push_back({Monomial::number(s2), f.omega2});
  for (std::size_t s : {s1, s2}) {
    h.push_back({Monomial::raise(mode) * Monomial::lower(s), epsilon});
    h.push_back({Monomial::raise(s) * Monomial::lower(mode), epsilon});
  }
  return LindbladModel(std::move(space), std::move(collapse), std::move(h));
}

struct Steady2ps {
  double g2 = 0.0;
  double n1 = 0.0;
  double n2 = 0.0;
  double g2_half_epsilon = std::numeric_limits<double>::quiet_NaN();
};

// Reusable state for many steady-state sensor evaluations on one model; the
// symbolic factorisation is kept between calls.
class SensorSteadySolver {
 public:
  SensorSteadySolver(LindbladModel model, std::size_t mode, SensorOptions opts = {})
      : model_(std::move(model)), mode_(mode), opts_(opts), solver_(opts.steady) {}

  Steady2ps evaluate(const FilterParams& f) {
    f.validate();
    Steady2ps out = at_epsilon(f, opts_.epsilon);
    if (opts_.check_epsilon) {
      out.g2_half_epsilon = at_epsilon(f, 0.5 * opts_.epsilon).g2;
      const double rel = std::abs(out.g2_half_epsilon - out.g2) / std::abs(out.g2);
      if (!(rel <= opts_.epsilon_tolerance))
        throw LeadingOrderViolation("sensor result changes by " + std::to_string(rel) +
                                    " (relative) when the coupling is halved from " + std::to_string(opts_.epsilon));
    }
    return out;
  }

  // Steady state of the sensor-augmented model and its two sensor populations.
  DensityMatrix sensor_state(const FilterParams& f, double epsilon, LindbladModel* augmented = nullptr) {
    LindbladModel m = with_sensors(model_, mode_, f, epsilon);
    const auto l = build_liouvillian(m, population_sector(m), opts_.steady.liouvillian);
    DensityMatrix rho = steady_state_from(l, m.space(), solver_);
    if (augmented) *augmented = std::move(m);
    return rho;
  }

  const LindbladModel& model() const { return model_; }
  std::size_t mode() const { return mode_; }
  const SensorOptions& options() const { return opts_; }

 private:
  Steady2ps at_epsilon(const FilterParams& f, double epsilon) {
    LindbladModel m;
    const DensityMatrix rho = sensor_state(f, epsilon, &m);
    const auto& space = m.space();
    const std::size_t s1 = space.mode_index(kSensor1), s2 = space.mode_index(kSensor2);
    Steady2ps out;
    out.n1 = rho.expectation(Monomial::number(s1)).real();
    out.n2 = rho.expectation(Monomial::number(s2)).real();
    if (out.n1 > opts_.population_limit || out.n2 > opts_.population_limit)
      throw LeadingOrderViolation("sensor population " + std::to_string(std::max(out.n1, out.n2)) +
                                  " exceeds the weak-coupling limit " + std::to_string(opts_.population_limit));
    if (!(out.n1 > 0.0) || !(out.n2 > 0.0)) throw UndefinedCorrelationError("sensor population vanishes");
    const cplx n12 = rho.expectation(Monomial::number(s1) * Monomial::number(s2));
    out.g2 = n12.real() / (out.n1 * out.n2);
    return out;
  }

  LindbladModel model_;
  std::size_t mode_;
  SensorOptions opts_;
  SteadyStateSolver solver_;
};

inline Steady2ps steady_2ps(const LindbladModel& model, std::size_t mode, const FilterParams& f,
                            const SensorOptions& opts = {}) {
  SensorSteadySolver solver(model, mode, opts);
  return solver.evaluate(f);
}

// g2(w1, w2; tau) = <n1(0) n2(tau)> / (<n1><n2>) on the sensor-augmented
// steady state, by quantum regression.
inline std::vector<double> filtered_g2_tau(const LindbladModel& model, std::size_t mode, const FilterParams& f,
                                           std::span<const double> taus, const SensorOptions& opts = {},
                                           const EvolveOptions& evolve_opts = {}) {
  f.validate();
  SensorSteadySolver solver(model, mode, opts);
  LindbladModel m;
  const DensityMatrix rho = solver.sensor_state(f, opts.epsilon, &m);
  const auto& space = m.space();
  const std::size_t s1 = space.mode_index(kSensor1), s2 = space.mode_index(kSensor2);
  const double n1 = rho.expectation(Monomial::number(s1)).real();
  const double n2 = rho.expectation(Monomial::number(s2)).real();
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw UndefinedCorrelationError("sensor population vanishes");
  const auto c = regression_correlator(rho, m, Monomial::number(s2), Monomial::lower(s1), Monomial::raise(s1), taus,
                                       evolve_opts);
  std::vector<double> out;
  out.reserve(c.size());
  for (const auto& v : c) out.push_back(v.real() / (n1 * n2));
  return out;
}

// Stationary emission spectrum S(w) = Re Tr[a (-(L + i w))^{-1} (rho ad)],
// evaluated in the sector one excitation off the diagonal.
class EmissionSpectrum {
 public:
  EmissionSpectrum(const LindbladModel& model, const DensityMatrix& rho, std::size_t mode)
      : space_(model.space()),
        l_(build_liouvillian(model, model.conserves_excitations() ? SectorBasis::charge(model.space(), 1)
                                                                  : SectorBasis::full(model.space()))),
        lower_(Monomial::lower(mode).matrix(model.space())) {
    const MatrixC x = rho.entries() * SparseC(lower_.adjoint());
    x_ = l_.basis.gather(x);
  }

  double operator()(double omega) {
    const auto n = static_cast<Eigen::Index>(l_.size());
    SparseC id(n, n);
    id.setIdentity();
    SparseC a = l_.matrix + cplx(0.0, omega) * id;
    a.makeCompressed();
    if (!analyzed_) {
      lu_.analyzePattern(a);
      analyzed_ = true;
    }
    lu_.factorize(a);
    if (lu_.info() != Eigen::Success) throw SingularityError("spectrum resolvent is singular");
    const VectorC y = -lu_.solve(x_);
    const auto d = static_cast<Eigen::Index>(space_.dimension());
    MatrixC ym = MatrixC::Zero(d, d);
    l_.basis.scatter(y, ym);
    cplx acc = 0.0;
    for (Eigen::Index k = 0; k < lower_.outerSize(); ++k)
      for (SparseC::InnerIterator it(lower_, k); it; ++it) acc += it.value() * ym(it.col(), it.row());
    return acc.real();
  }

 private:
  FockSpace space_;
  Liouvillian l_;
  SparseC lower_;
  VectorC x_;
  Eigen::SparseLU<SparseC, Eigen::COLAMDOrdering<int>> lu_;
  bool analyzed_ = false;
};

// Positive frequency at which the spectrum falls to half its value at w = 0.
inline double spectrum_half_width(EmissionSpectrum& spectrum, double tol = 1e-10) {
  const double peak = spectrum(0.0);
  if (!(peak > 0.0)) throw NumericalError("emission spectrum is not positive at the line centre");
  auto excess = [&](double w) { return spectrum(w) - 0.5 * peak; };
  double hi = 0.05;
  while (excess(hi) > 0.0) {
    hi *= 2.0;
    if (hi > 1e6) throw NumericalError("emission spectrum does not fall to half maximum");
  }
  const double lo = hi > 0.05 ? 0.5 * hi : 0.0;
  auto [a, b] = boost::math::tools::bisect(excess, lo, hi, [tol](double x, double y) { return std::abs(x - y) < tol; });
  return 0.5 * (a + b);
}

inline double spectrum_half_width(const LindbladModel& model, const DensityMatrix& rho, std::size_t mode) {
  EmissionSpectrum s(model, rho, mode);
  return spectrum_half_width(s);
}

}  // namespace twophoton
