#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "twophoton/lindblad.hpp"

using namespace twophoton;

namespace {

LindbladModel decay_dephase(int cap, double ga, double gphi) {
  FockSpace s({"a"}, {cap});
  return LindbladModel(s, {{Monomial::lower(0), ga}, {Monomial::number(0), gphi}});
}

LindbladModel small_condensate(int ca, int cb) {
  FockSpace s({"a", "b"}, {ca, cb});
  return LindbladModel(s, {{Monomial::parse("a", s), 1.0},
                           {Monomial::parse("b", s), 1.0},
                           {Monomial::parse("bd", s), 1.0},
                           {Monomial::parse("ad*b", s), 10.0}});
}

double population(const DensityMatrix& r) { return r.expectation(Monomial::number(0)).real(); }

}  // namespace

TEST(Liouvillian, TwoLevelDecayRates) {
  auto m = decay_dephase(1, 0.7, 0.0);
  auto l = build_liouvillian(m);
  const auto& b = l.basis;
  Eigen::VectorXcd x = Eigen::VectorXcd::Zero(4);
  x(Eigen::Index(*b.index(1, 1))) = 1.0;
  Eigen::VectorXcd dx = l.matrix * x;
  EXPECT_NEAR(dx(Eigen::Index(*b.index(1, 1))).real(), -0.7, 1e-15);
  EXPECT_NEAR(dx(Eigen::Index(*b.index(0, 0))).real(), 0.7, 1e-15);
}

TEST(Liouvillian, DephasingDampsCoherenceOnly) {
  auto m = decay_dephase(1, 0.0, 0.9);
  auto l = build_liouvillian(m);
  const auto& b = l.basis;
  Eigen::MatrixXcd dense(l.matrix);
  EXPECT_NEAR(std::abs(dense.col(Eigen::Index(*b.index(1, 1))).norm()), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(dense.col(Eigen::Index(*b.index(0, 0))).norm()), 0.0, 1e-15);
  const auto k = Eigen::Index(*b.index(0, 1));
  EXPECT_NEAR(dense(k, k).real(), -0.45, 1e-15);
}

TEST(Liouvillian, TraceFunctionalAnnihilatesCondensateGenerator) {
  for (auto [ca, cb] : {std::pair{2, 2}, std::pair{5, 3}}) {
    auto m = small_condensate(ca, cb);
    auto l = build_liouvillian(m);
    Eigen::RowVectorXcd t = l.basis.trace_row() * l.matrix;
    EXPECT_LT(t.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Liouvillian, SectorsMatchFullSuperoperator) {
  auto m = small_condensate(3, 2);
  auto full = build_liouvillian(m);
  Eigen::MatrixXcd fd(full.matrix);
  for (int delta : {-2, 0, 1}) {
    auto sec = build_liouvillian(m, SectorBasis::charge(m.space(), delta));
    Eigen::MatrixXcd sd(sec.matrix);
    for (std::size_t r = 0; r < sec.size(); ++r)
      for (std::size_t c = 0; c < sec.size(); ++c) {
        auto fr = *full.basis.index(sec.basis.ket(r), sec.basis.bra(r));
        auto fc = *full.basis.index(sec.basis.ket(c), sec.basis.bra(c));
        EXPECT_EQ(sd(Eigen::Index(r), Eigen::Index(c)), fd(Eigen::Index(fr), Eigen::Index(fc)));
      }
  }
}

TEST(Liouvillian, Validation) {
  FockSpace s({"a"}, {3});
  EXPECT_THROW(LindbladModel(s, {{Monomial::lower(0), -1.0}}), ValidationError);
  EXPECT_THROW(LindbladModel(s, {{Monomial::lower(3), 1.0}}), ValidationError);
  LindbladModel m(s, {{Monomial::lower(0), 1.0}});
  EXPECT_THROW(build_liouvillian(m, LiouvillianOptions{10}), CapacityError);
  // a alone is not Hermitian
  LindbladModel h(s, {{Monomial::lower(0), 1.0}}, {{Monomial::lower(0), 1.0}});
  EXPECT_THROW(build_liouvillian(h), ValidationError);
}

TEST(Evolve, SinglePhotonDecay) {
  auto m = decay_dephase(3, 1.0, 0.3);
  auto rho0 = DensityMatrix::fock_single(m.space(), 0, 1);
  std::vector<double> ts{0.0, 0.5, 1.0, 2.5, 5.0};
  auto rs = evolve(rho0, m, ts);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    EXPECT_NEAR(rs[k](1, 1).real(), std::exp(-ts[k]), 1e-8);
    EXPECT_NEAR(rs[k](0, 0).real(), 1.0 - std::exp(-ts[k]), 1e-8);
  }
}

TEST(Evolve, DenseAndSparsePathsAgree) {
  auto m = decay_dephase(12, 1.0, 0.8);
  auto rho0 = DensityMatrix::coherent(m.space(), 0, cplx(0.8, 0.6));
  std::vector<double> ts{0.3, 1.7};
  EvolveOptions dense;
  dense.dense_limit = 1u << 20;
  EvolveOptions sparse;
  sparse.dense_limit = 0;
  auto a = evolve(rho0, m, ts, dense);
  auto b = evolve(rho0, m, ts, sparse);
  for (std::size_t k = 0; k < ts.size(); ++k)
    EXPECT_LT((a[k].entries() - b[k].entries()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Evolve, CoherentPopulationDecaysExponentially) {
  auto m = decay_dephase(24, 1.0, 1.0);
  auto rho0 = DensityMatrix::coherent(m.space(), 0, 1.0);
  const double n0 = population(rho0);
  std::vector<double> ts;
  for (int k = 0; k <= 10; ++k) ts.push_back(0.5 * k);
  auto rs = evolve(rho0, m, ts);
  for (std::size_t k = 0; k < ts.size(); ++k) EXPECT_NEAR(population(rs[k]), n0 * std::exp(-ts[k]), 1e-8);
}

TEST(Evolve, InvariantsAndExponentialDecayForRandomStates) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 4; ++trial) {
    auto m = decay_dephase(6, 1.0, 0.4 * trial);
    auto rho0 = DensityMatrix::random_mixed(m.space(), 0, rng);
    const double n0 = population(rho0);
    std::vector<double> ts{0.0, 0.4, 1.1, 3.0, 5.0};
    auto rs = evolve(rho0, m, ts);
    for (std::size_t k = 0; k < ts.size(); ++k) {
      auto d = rs[k].diagnostics();
      EXPECT_LT(d.hermiticity_error, 1e-10);
      EXPECT_LT(d.trace_error, 1e-10);
      EXPECT_GT(d.min_eigenvalue, -1e-8);
      EXPECT_NEAR(population(rs[k]), n0 * std::exp(-ts[k]), 1e-8);
    }
  }
}

TEST(Evolve, SecondOrderCorrelationIsConstantInTime) {
  std::mt19937_64 rng(11);
  auto m = decay_dephase(40, 1.0, 1.0);
  const auto& s = m.space();
  std::vector<DensityMatrix> states{DensityMatrix::thermal(s, 0, 0.5), DensityMatrix::coherent(s, 0, 1.0),
                                    DensityMatrix::fock_single(s, 0, 2), DensityMatrix::random_diagonal(s, 0, rng)};
  std::vector<double> ts{0.0, 0.7, 2.0, 5.0};
  for (const auto& rho0 : states) {
    const double g0 = g2_zero(rho0, 0);
    auto rs = evolve(rho0, m, ts);
    for (const auto& r : rs) EXPECT_NEAR(g2_zero(r, 0), g0, 1e-7);
  }
  EXPECT_NEAR(g2_zero(states[0], 0), 2.0, 1e-12);
}

TEST(SteadyState, DecayOnlyIsVacuum) {
  auto m = decay_dephase(5, 1.0, 0.5);
  auto r = steady_state(m);
  EXPECT_NEAR(r(0, 0).real(), 1.0, 1e-12);
  EXPECT_LT((r.entries() - DensityMatrix::vacuum(m.space()).entries()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SteadyState, DegenerateNullSpaceIsReported) {
  auto m = decay_dephase(3, 0.0, 1.0);
  EXPECT_THROW(steady_state(m), NonUniqueSteadyStateError);
  FockSpace big({"a", "b"}, {12, 12});
  LindbladModel idle(big, {{Monomial::number(0), 1.0}});
  EXPECT_THROW(steady_state(idle), NonUniqueSteadyStateError);
}

TEST(SteadyState, SparseAndDenseAgree) {
  auto m = small_condensate(10, 4);
  SteadyStateOptions dense;
  dense.dense_limit = 100000;
  SteadyStateOptions sparse;
  sparse.dense_limit = 0;
  auto a = steady_state(m, dense);
  auto b = steady_state(m, sparse);
  EXPECT_LT((a.entries() - b.entries()).cwiseAbs().maxCoeff(), 1e-10);
  a.check_invariants();
}

TEST(SteadyState, EqualsLongTimeLimit) {
  auto m = small_condensate(6, 3);
  auto ss = steady_state(m);
  std::vector<double> ts{50.0};
  auto r = evolve(DensityMatrix::vacuum(m.space()), m, ts);
  EXPECT_LT((r[0].entries() - ss.entries()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SteadyState, SolverReusesPattern) {
  SteadyStateOptions opts;
  opts.dense_limit = 0;
  SteadyStateSolver solver(opts);
  for (double pb : {0.5, 1.0, 2.0}) {
    FockSpace s({"a", "b"}, {8, 4});
    LindbladModel m(s, {{Monomial::parse("a", s), 1.0},
                        {Monomial::parse("b", s), 1.0},
                        {Monomial::parse("bd", s), pb},
                        {Monomial::parse("ad*b", s), 10.0}});
    auto l = build_liouvillian(m, population_sector(m));
    auto r = steady_state_from(l, s, solver);
    auto ref = steady_state(m);
    EXPECT_LT((r.entries() - ref.entries()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SteadyState, AutoTruncationEscalatesUntilTailIsSmall) {
  auto m = small_condensate(4, 2);
  AutoTruncationOptions o;
  o.tail_threshold = 1e-6;
  auto r = steady_state_auto(m, o);
  EXPECT_GT(r.model.space().truncation(0), 4);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_LT(r.rho.marginal(k).back(), 1e-6);
  o.max_truncation = 6;
  EXPECT_THROW(steady_state_auto(m, o), NumericalError);
}

TEST(Regression, ThermalTwoTimeCorrelationIsTwo) {
  auto m = decay_dephase(40, 1.0, 1.0);
  auto rho = DensityMatrix::thermal(m.space(), 0, 0.5);
  std::vector<double> taus{0.0, 0.5, 1.5, 3.0, 5.0};
  auto c = regression_correlator(rho, m, Monomial::number(0), Monomial::lower(0), Monomial::raise(0), taus);
  const double n0 = population(rho);
  for (std::size_t k = 0; k < taus.size(); ++k)
    EXPECT_NEAR(c[k].real() / (n0 * n0 * std::exp(-taus[k])), 2.0, 1e-7);
  // tau = 0 is the normally ordered single-time moment
  EXPECT_NEAR(c[0].real(), rho.expectation(Monomial::parse("ad*ad*a*a", m.space())).real(), 1e-12);
}

TEST(Regression, VacuumGivesZero) {
  auto m = decay_dephase(4, 1.0, 1.0);
  auto rho = DensityMatrix::vacuum(m.space());
  std::vector<double> taus{0.0, 1.0};
  for (auto v : regression_correlator(rho, m, Monomial::number(0), Monomial::lower(0), Monomial::raise(0), taus))
    EXPECT_EQ(std::abs(v), 0.0);
}

TEST(Regression, CoherentDecayIsUncorrelated) {
  auto m = decay_dephase(30, 1.0, 0.0);
  auto rho = DensityMatrix::coherent(m.space(), 0, 1.0);
  const double n0 = population(rho);
  std::vector<double> taus{0.0, 0.3, 1.0, 2.0, 4.0};
  auto c = regression_correlator(rho, m, Monomial::number(0), Monomial::lower(0), Monomial::raise(0), taus);
  for (std::size_t k = 0; k < taus.size(); ++k)
    EXPECT_NEAR(c[k].real() / (n0 * n0 * std::exp(-taus[k])), 1.0, 1e-7);
}

TEST(G2Zero, ReferenceStates) {
  FockSpace s({"a"}, {60});
  EXPECT_NEAR(g2_zero(DensityMatrix::fock_single(s, 0, 2), 0), 0.5, 1e-15);
  EXPECT_NEAR(g2_zero(DensityMatrix::coherent(s, 0, cplx(1.2, -0.4)), 0), 1.0, 1e-12);
  EXPECT_NEAR(g2_zero(DensityMatrix::thermal(s, 0, 1.0), 0), 2.0, 1e-12);
  EXPECT_THROW(g2_zero(DensityMatrix::vacuum(s), 0), UndefinedCorrelationError);
}

TEST(SectorBasis, GatherScatterRoundTrip) {
  FockSpace s({"a", "b"}, {3, 2});
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const auto d = Eigen::Index(s.dimension());
  Eigen::MatrixXcd x(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = cplx(g(rng), g(rng));
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(d, d);
  std::size_t total = 0;
  for (int delta = -s.max_total_excitation(); delta <= s.max_total_excitation(); ++delta) {
    auto b = SectorBasis::charge(s, delta);
    total += b.size();
    b.scatter(b.gather(x), y);
  }
  EXPECT_EQ(total, s.dimension() * s.dimension());
  EXPECT_EQ((x - y).cwiseAbs().maxCoeff(), 0.0);
}
