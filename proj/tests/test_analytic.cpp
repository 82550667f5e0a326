#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "twophoton/analytic.hpp"
#include "twophoton/lindblad.hpp"
#include "twophoton/sensor.hpp"

using namespace twophoton;

namespace {

// Form factor at (0.5, -0.5), Gamma = 0.5, gamma_phi = 1; frozen from the
// resolvent chain in test_sensor.cpp.
constexpr double kVStar = 0.9302495151906915;

LindbladModel decay_dephase(int cap, double ga, double gphi) {
  FockSpace s({"a"}, {cap});
  return LindbladModel(s, {{Monomial::lower(0), ga}, {Monomial::number(0), gphi}});
}

}  // namespace

TEST(RhoSpontaneous, IdentityAtTimeZero) {
  std::mt19937_64 rng(5);
  FockSpace s({"a"}, {5});
  auto rho0 = DensityMatrix::random_mixed(s, 0, rng);
  auto r = rho_spontaneous(rho0, {1.0, 0.6}, 0.0);
  EXPECT_EQ((r.entries() - rho0.entries()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(RhoSpontaneous, SinglePhoton) {
  FockSpace s({"a"}, {3});
  auto rho0 = DensityMatrix::fock_single(s, 0, 1);
  for (double t : {0.1, 1.0, 4.0}) {
    auto r = rho_spontaneous(rho0, {1.0, 2.0}, t);
    EXPECT_NEAR(r(1, 1).real(), std::exp(-t), 1e-15);
    EXPECT_NEAR(r(0, 0).real(), 1.0 - std::exp(-t), 1e-15);
  }
}

TEST(RhoSpontaneous, MatchesMasterEquation) {
  std::mt19937_64 rng(17);
  auto m = decay_dephase(6, 1.0, 0.7);
  auto rho0 = DensityMatrix::random_mixed(m.space(), 0, rng);
  std::vector<double> ts{1.3};
  auto num = evolve(rho0, m, ts);
  auto ana = rho_spontaneous(rho0, {1.0, 0.7}, 1.3);
  EXPECT_LT((num[0].entries() - ana.entries()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(RhoSpontaneous, Semigroup) {
  std::mt19937_64 rng(23);
  FockSpace s({"a"}, {8});
  DecayDephaseParams p{1.0, 1.4};
  for (int trial = 0; trial < 3; ++trial) {
    auto rho0 = DensityMatrix::random_mixed(s, 0, rng);
    auto two = rho_spontaneous(rho_spontaneous(rho0, p, 0.4), p, 1.1);
    auto one = rho_spontaneous(rho0, p, 1.5);
    EXPECT_LT((two.entries() - one.entries()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(RhoSpontaneous, Validation) {
  FockSpace two({"a", "b"}, {1, 1});
  EXPECT_THROW(rho_spontaneous(DensityMatrix::vacuum(two), {1.0, 0.0}, 1.0), ValidationError);
  FockSpace s({"a"}, {1});
  EXPECT_THROW(rho_spontaneous(DensityMatrix::vacuum(s), {1.0, 0.0}, -1.0), ValidationError);
  EXPECT_THROW(rho_spontaneous(DensityMatrix::vacuum(s), {0.0, 0.0}, 1.0), ValidationError);
}

TEST(FormFactor, NoDephasingIsFlat) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> w(-4.0, 4.0), g(0.05, 5.0);
  for (int k = 0; k < 50; ++k) EXPECT_NEAR(boson_form_factor(w(rng), w(rng), g(rng), {1.0, 0.0}), 1.0, 1e-12);
}

TEST(FormFactor, WideFilterLimit) {
  EXPECT_LT(std::abs(boson_form_factor(0.0, 0.0, 1e6, {1.0, 1.0}) - 1.0), 1e-4);
}

TEST(FormFactor, NarrowFilterStrongDephasingLimit) {
  DecayDephaseParams p{1.0, 1e3};
  const double same = boson_form_factor(1.0, 1.0, 0.01, p);
  EXPECT_GE(same, 1.96);
  EXPECT_LE(same, 2.0);
  EXPECT_LT(std::abs(boson_form_factor(0.0, 10.0, 0.01, p) - 1.0), 0.02);
}

TEST(FormFactor, ReferenceValue) {
  EXPECT_NEAR(boson_form_factor(0.5, -0.5, 0.5, {1.0, 1.0}), kVStar, 1e-14);
  EXPECT_NEAR(boson_form_factor(0.0, 0.0, 0.5, {1.0, 1.0}), 1.0846560846560847, 1e-14);
}

TEST(FormFactor, ExchangeAndParitySymmetry) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> w(-3.0, 3.0), g(0.1, 3.0);
  for (int k = 0; k < 50; ++k) {
    const double a = w(rng), b = w(rng), G = g(rng);
    DecayDephaseParams p{1.0, g(rng)};
    EXPECT_EQ(boson_form_factor(a, b, G, p), boson_form_factor(b, a, G, p));
    EXPECT_NEAR(boson_form_factor(-a, -b, G, p), boson_form_factor(a, b, G, p), 1e-12);
  }
}

TEST(FormFactor, ApproachesOneAlongGammaLadder) {
  const std::vector<double> ladder{0.5, 0.75, 1.0, 5.0, 50.0};
  double prev = 0.0;
  for (double G : ladder) {
    const double f = boson_form_factor(-1.0, 1.0, G, {1.0, 1.0});
    EXPECT_GT(f, prev);
    prev = f;
  }
  EXPECT_LT(std::abs(prev - 1.0), 1e-4);
  EXPECT_NEAR(boson_form_factor(-1.0, 1.0, 0.5, {1.0, 1.0}), 0.79290, 5e-5);
}

TEST(FormFactor, SingularDenominatorIsReported) {
  EXPECT_THROW(detail::checked_inverse(cplx(0.0, 1e-13), "probe"), SingularityError);
  EXPECT_THROW(boson_form_factor(0.0, 0.0, 0.0, {1.0, 1.0}), ValidationError);
}

TEST(IntegratedIntensity, ClosedFormCases) {
  DecayDephaseParams p{1.0, 1.0};
  const double G = 0.5, eps = 0.01;
  const double g = composite_rate(G, p);
  EXPECT_NEAR(integrated_filtered_intensity(0.0, G, eps, p, 3.0), eps * eps * (2.0 / G) * (2.0 / g) * 3.0, 1e-18);
  EXPECT_EQ(integrated_filtered_intensity(0.7, G, eps, p, 0.0), 0.0);
}

TEST(IntegratedIntensity, MatchesTimeQuadratureOfSensorPopulation) {
  // Fock |2> so that n0 = 2 exactly; one sensor at omega = 1.
  const double G = 0.5, eps = 0.01, w = 1.0;
  auto base = decay_dephase(2, 1.0, 1.0);
  auto m = with_sensors(base, 0, FilterParams::equal(w, w, G), eps);
  auto rho0 = DensityMatrix::fock(m.space(), std::vector<int>{2, 0, 0});
  const double T = 60.0;
  const int n = 6000;
  std::vector<double> ts;
  for (int k = 0; k <= n; ++k) ts.push_back(T * k / n);
  EvolveOptions eo;
  eo.check_states = false;
  auto rs = evolve(rho0, m, ts, eo);
  const auto num1 = Monomial::number(m.space().mode_index(kSensor1)).matrix(m.space());
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double wgt = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    acc += wgt * rs[std::size_t(k)].expectation(num1).real();
  }
  acc *= (T / n) / 3.0;
  const double closed = integrated_filtered_intensity(w, G, eps, {1.0, 1.0}, 2.0);
  EXPECT_NEAR(acc / closed, 1.0, 1e-3);
}

TEST(IntegratedCorrelations, NoPairsWithoutBunching) {
  EXPECT_EQ(integrated_filtered_correlations(0.3, -0.2, 0.5, 0.01, {1.0, 1.0}, 1.0, 0.0), 0.0);
}

TEST(IntegratedCorrelations, RatioReproducesFactorisation) {
  const double eps = 0.02, G = 0.5;
  DecayDephaseParams flat{1.0, 0.0};
  const double n0 = 1.7, g2 = 1.3;
  const double r0 = integrated_filtered_correlations(0.0, 0.0, G, eps, flat, n0, g2) /
                    (integrated_filtered_intensity(0.0, G, eps, flat, n0) *
                     integrated_filtered_intensity(0.0, G, eps, flat, n0));
  EXPECT_NEAR(r0, g2, 1e-12);
  DecayDephaseParams p{1.0, 1.0};
  const double r = integrated_filtered_correlations(0.5, -0.5, G, eps, p, n0, g2) /
                   (integrated_filtered_intensity(0.5, G, eps, p, n0) * integrated_filtered_intensity(-0.5, G, eps, p, n0));
  EXPECT_NEAR(r, g2 * kVStar, 1e-12);
}
