#include <gtest/gtest.h>

#include <cmath>

#include "twophoton/analytic.hpp"
#include "twophoton/moments.hpp"
#include "twophoton/sensor.hpp"

using namespace twophoton;

namespace {

LindbladModel decay_dephase(int cap, double ga, double gphi) {
  FockSpace s({"a"}, {cap});
  return LindbladModel(s, {{Monomial::lower(0), ga}, {Monomial::number(0), gphi}});
}

MomentSystem phase_averaged(double gphi, double n0, double g2) {
  auto sys = build_moment_system(decay_dephase(2, 1.0, gphi), 0, 2);
  return sys.with_initial(phase_averaged_moments(sys.basis, n0, g2));
}

// Incoherently pumped mode below threshold: a thermal steady state.
LindbladModel driven_thermal(int cap, double pump) {
  FockSpace s({"a"}, {cap});
  return LindbladModel(s, {{Monomial::lower(0), 1.0}, {Monomial::raise(0), pump}});
}

}  // namespace

TEST(Resolvent, ScalarCase) {
  Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(3, 3);
  M.diagonal() << -1.0, -2.0, cplx(-0.5, 0.3);
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXcd e = Eigen::VectorXcd::Zero(3);
    e(k) = 1.0;
    auto y = resolvent_apply(M, 0.0, 0.01, e);
    EXPECT_LT(std::abs(y(k) + 1.0 / (M(k, k) - 0.01)), 1e-15);
    EXPECT_EQ((y.array() != cplx(0.0)).count(), 1);
  }
}

TEST(Resolvent, SingularAndInvalidInputs) {
  Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(2, 2);
  Eigen::VectorXcd x = Eigen::VectorXcd::Ones(2);
  EXPECT_THROW(resolvent_apply(M, 0.01, 0.01, x), SingularityError);
  EXPECT_THROW(resolvent_apply(M, 0.0, 0.0, x), ValidationError);
}

TEST(Resolvent, FirstChainStepIsScalarOnDiagonalSystem) {
  // For a diagonal M the lowering step is elementwise: -x_k / (M_kk + s - lambda).
  auto sys = phase_averaged(1.0, 1.0, 2.0);
  const double w = 0.7, G = 0.5, eps = 0.1, lam = 1e-3;
  const cplx s(-G / 2, -w);
  Eigen::VectorXcd vb = resolvent_apply(sys.M, 0.0, lam, sys.v0);
  Eigen::VectorXcd x = cplx(0.0, -eps) * (sys.Tminus * vb);
  Eigen::VectorXcd y = resolvent_apply(sys.M, s, lam, x);
  for (Eigen::Index k = 0; k < x.size(); ++k) EXPECT_LT(std::abs(y(k) + x(k) / (sys.M(k, k) + s - lam)), 1e-15);
}

TEST(Richardson, EliminatesPolynomialError) {
  auto f = [](double l) { return 3.0 + 2.0 * l - 5.0 * l * l; };
  std::vector<double> v{f(0.01), f(0.005), f(0.0025)};
  EXPECT_NEAR(richardson(v), 3.0, 1e-14);
}

TEST(SpontaneousChain, IntensityMatchesClosedForm) {
  auto sys = phase_averaged(1.0, 1.3, 2.0);
  for (double w : {-1.0, 0.0, 0.4, 2.0}) {
    const auto f = FilterParams::equal(w, -w, 0.5, 0.01);
    const auto r = spontaneous_2ps(sys, f);
    const double ref = integrated_filtered_intensity(w, 0.5, 0.01, {1.0, 1.0}, 1.3);
    EXPECT_NEAR(r.intensity1 / ref, 1.0, 1e-5);
    LambdaLadder deep;
    deep.lambdas = {1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4, 3.125e-4};
    EXPECT_NEAR(spontaneous_2ps(sys, f, deep).intensity1 / ref, 1.0, 1e-9);
  }
}

TEST(SpontaneousChain, FactorisesIntoCorrelationTimesFormFactor) {
  const std::vector<double> axis{-2.0, -1.0, 0.0, 0.5, 1.5};
  const std::vector<std::pair<double, double>> states{{1.0, 2.0}, {1.0, 1.0}, {2.0, 0.5}};
  for (double gphi : {0.0, 0.5, 2.0})
    for (auto [n0, g2] : states) {
      auto sys = phase_averaged(gphi, n0, g2);
      for (double w1 : axis)
        for (double w2 : axis) {
          const auto r = spontaneous_2ps(sys, FilterParams::equal(w1, w2, 0.5, 0.1));
          const double ref = g2 * boson_form_factor(w1, w2, 0.5, {1.0, gphi});
          EXPECT_NEAR(r.g2 / ref, 1.0, 1e-6) << w1 << "," << w2 << " gphi " << gphi;
        }
    }
}

TEST(SpontaneousChain, ReferenceFormFactorValue) {
  // Frozen as the form factor reference value in test_analytic.cpp.
  const auto r = spontaneous_2ps(phase_averaged(1.0, 1.0, 1.0), FilterParams::equal(0.5, -0.5, 0.5, 0.1));
  EXPECT_NEAR(r.g2, 0.9302495151906915, 1e-7);
  const auto t = spontaneous_2ps(phase_averaged(1.0, 1.0, 2.0), FilterParams::equal(0.5, -0.5, 0.5, 0.1));
  EXPECT_NEAR(t.g2, 2.0 * 0.9302495151906915, 2e-7);
}

TEST(SpontaneousChain, NumeratorMatchesIntegratedCorrelations) {
  const double eps = 0.05;
  auto sys = phase_averaged(0.8, 1.5, 1.2);
  const auto r = spontaneous_2ps(sys, FilterParams::equal(0.3, -0.9, 0.5, eps));
  const double ref = integrated_filtered_correlations(0.3, -0.9, 0.5, eps, {1.0, 0.8}, 1.5, 1.2);
  EXPECT_NEAR(r.numerator / ref, 1.0, 1e-5);
  LambdaLadder deep;
  deep.lambdas = {1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4, 3.125e-4};
  EXPECT_NEAR(spontaneous_2ps(sys, FilterParams::equal(0.3, -0.9, 0.5, eps), deep).numerator / ref, 1.0, 1e-9);
}

TEST(SpontaneousChain, IndependentOfInitialState) {
  const auto f = FilterParams::equal(0.7, -0.2, 0.5, 0.1);
  const double a = spontaneous_2ps(phase_averaged(1.0, 1.0, 2.0), f).g2 / 2.0;
  const double b = spontaneous_2ps(phase_averaged(1.0, 3.0, 0.4), f).g2 / 0.4;
  const double c = spontaneous_2ps(phase_averaged(1.0, 0.2, 1.0), f).g2;
  EXPECT_NEAR(a / c, 1.0, 1e-6);
  EXPECT_NEAR(b / c, 1.0, 1e-6);
}

TEST(SpontaneousChain, ExchangeSymmetryWithUnequalFilters) {
  auto sys = phase_averaged(1.0, 1.0, 2.0);
  FilterParams f{0.4, -0.8, 0.5, 1.2, 0.1, 0.07};
  const auto a = spontaneous_2ps(sys, f);
  const auto b = spontaneous_2ps(sys, f.swapped());
  EXPECT_NEAR(a.g2, b.g2, 1e-10);
  EXPECT_NEAR(a.intensity1, b.intensity2, 1e-15);
}

TEST(SpontaneousChain, LadderConvergesMonotonically) {
  auto sys = phase_averaged(2.0, 1.0, 1.0);
  const auto f = FilterParams::equal(1.0, -1.0, 0.5, 0.1);
  const auto r = spontaneous_2ps(sys, f);
  ASSERT_EQ(r.ladder_g2.size(), 3u);
  const double d1 = std::abs(r.ladder_g2[1] - r.ladder_g2[0]);
  const double d2 = std::abs(r.ladder_g2[2] - r.ladder_g2[1]);
  EXPECT_LT(d2, d1);
  LambdaLadder finer;
  finer.lambdas = {1e-2, 5e-3, 2.5e-3, 1.25e-3};
  EXPECT_NEAR(spontaneous_2ps(sys, f, finer).g2, r.g2, 1e-7);
}

TEST(SpontaneousChain, RejectsBadLadder) {
  auto sys = phase_averaged(1.0, 1.0, 1.0);
  LambdaLadder bad;
  bad.lambdas = {1e-2, 3e-3};
  EXPECT_THROW(spontaneous_2ps(sys, FilterParams::equal(0, 0, 0.5), bad), ValidationError);
  LambdaLadder coarse;
  coarse.lambdas = {4.0, 2.0, 1.0};
  coarse.tolerance = 1e-12;
  EXPECT_THROW(spontaneous_2ps(sys, FilterParams::equal(0.5, -0.5, 0.5), coarse), NumericalError);
}

TEST(Steady2ps, ThermalSourceBunchesOnDiagonal) {
  auto m = driven_thermal(24, 0.5);
  SensorOptions o;
  o.epsilon = 0.004;
  const double w = 0.4;
  const auto diag = steady_2ps(m, 0, FilterParams::equal(w, w, 0.5), o);
  const auto anti = steady_2ps(m, 0, FilterParams::equal(-w, w, 0.5), o);
  EXPECT_GT(diag.g2, anti.g2);
  EXPECT_GT(diag.g2, 1.0);
  EXPECT_NEAR(diag.g2_half_epsilon / diag.g2, 1.0, 1e-3);
}

TEST(Steady2ps, ThermalLightIsGaussian) {
  // Linear thermal source: filtered fields stay Gaussian, so
  // g2 = 1 + |<s1+ s2>|^2 / (n1 n2), with the filter covariance in closed form.
  const double kappa = 0.5, G = 0.5;
  auto cov = [&](double w1, double w2) {
    const cplx z1(G / 2, w1), z2(G / 2, w2);
    return (1.0 / (std::conj(z1) + z2)) * (1.0 / (z2 + kappa / 2) + 1.0 / (std::conj(z1) + kappa / 2));
  };
  auto m = driven_thermal(24, 0.5);
  const std::vector<std::pair<double, double>> points{{-5.0, 5.0}, {0.4, -0.4}, {1.0, 2.0}, {0.3, 0.3}};
  for (auto [w1, w2] : points) {
    const auto r = steady_2ps(m, 0, FilterParams::equal(w1, w2, G));
    const double ref = 1.0 + std::norm(cov(w1, w2)) / (cov(w1, w1).real() * cov(w2, w2).real());
    EXPECT_NEAR(r.g2 / ref, 1.0, 2e-3) << w1 << "," << w2;
  }
}

TEST(Steady2ps, StrongCouplingIsRejected) {
  auto m = driven_thermal(16, 0.5);
  SensorOptions o;
  o.epsilon = 0.3;
  o.population_limit = 1.0;
  EXPECT_THROW(steady_2ps(m, 0, FilterParams::equal(0.0, 0.0, 0.5), o), LeadingOrderViolation);
  o.epsilon = 0.05;
  o.population_limit = 1e-4;
  EXPECT_THROW(steady_2ps(m, 0, FilterParams::equal(0.0, 0.0, 0.5), o), LeadingOrderViolation);
}

TEST(FilteredG2Tau, DecaysToOne) {
  auto m = driven_thermal(24, 0.5);
  std::vector<double> taus{0.0, 1.0, 5.0, 30.0};
  SensorOptions o;
  o.epsilon = 0.002;
  const auto f = FilterParams::equal(0.2, 0.2, 0.5);
  auto g = filtered_g2_tau(m, 0, f, taus, o);
  EXPECT_NEAR(g[0], steady_2ps(m, 0, f, o).g2, 1e-9);
  EXPECT_NEAR(g.back(), 1.0, 1e-3);
  EXPECT_GT(g[0], g[1]);
}

TEST(EmissionSpectrum, ThermalLineIsLorentzian) {
  // Linewidth of an incoherently pumped mode is (gamma - P) / 2 at half maximum.
  auto m = driven_thermal(30, 0.4);
  auto rho = steady_state(m);
  EXPECT_NEAR(spectrum_half_width(m, rho, 0), 0.3, 1e-8);
}
