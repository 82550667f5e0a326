#include <gtest/gtest.h>

#include <random>

#include "twophoton/lindblad.hpp"
#include "twophoton/moments.hpp"

using namespace twophoton;

namespace {

LindbladModel decay_dephase(int cap, double ga, double gphi) {
  FockSpace s({"a"}, {cap});
  return LindbladModel(s, {{Monomial::lower(0), ga}, {Monomial::number(0), gphi}});
}

Eigen::MatrixXcd poly_matrix(const NormalPoly& p, const FockSpace& s) {
  const auto d = Eigen::Index(s.dimension());
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(d, d);
  for (const auto& [k, c] : p.terms()) {
    std::vector<Factor> f;
    for (int i = 0; i < k.first; ++i) f.push_back({0, true});
    for (int i = 0; i < k.second; ++i) f.push_back({0, false});
    out += c * Eigen::MatrixXcd(Monomial(f).matrix(s));
  }
  return out;
}

}  // namespace

TEST(NormalPoly, CanonicalCommutator) {
  const NormalPoly a = NormalPoly::lower(), ad = NormalPoly::raise();
  EXPECT_EQ(a * ad - ad * a, NormalPoly::identity());
  EXPECT_EQ(a * ad, NormalPoly::term(1, 1) + NormalPoly::identity());
}

TEST(NormalPoly, ProductsMatchMatricesOnLowLevels) {
  // Truncation artefacts live near the cap; compare the block well below it.
  FockSpace s({"a"}, {14});
  std::mt19937 rng(9);
  std::uniform_int_distribution<int> deg(0, 3);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Factor> fa, fb;
    for (int i = deg(rng); i > 0; --i) fa.push_back({0, bool(deg(rng) % 2)});
    for (int i = deg(rng); i > 0; --i) fb.push_back({0, bool(deg(rng) % 2)});
    const Monomial ma(fa), mb(fb);
    const NormalPoly prod = NormalPoly::from_monomial(ma * mb, 0);
    Eigen::MatrixXcd direct = Eigen::MatrixXcd(ma.matrix(s)) * Eigen::MatrixXcd(mb.matrix(s));
    Eigen::MatrixXcd normal = poly_matrix(prod, s);
    EXPECT_LT((direct - normal).topLeftCorner(8, 8).cwiseAbs().maxCoeff(), 1e-9) << ma.to_string(s) << " " << mb.to_string(s);
  }
}

TEST(MomentSystem, DecayDephasingIsNineDiagonal) {
  auto sys = build_moment_system(decay_dephase(3, 1.0, 0.8), 0, 2);
  ASSERT_EQ(sys.size(), 9u);
  Eigen::MatrixXcd off = sys.M;
  off.diagonal().setZero();
  EXPECT_EQ(off.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(sys.M.row(0).cwiseAbs().maxCoeff(), 0.0);
  const auto& b = sys.basis;
  EXPECT_NEAR(sys.M(Eigen::Index(b.index(0, 1)), Eigen::Index(b.index(0, 1))).real(), -(1.0 + 0.8) / 2, 1e-15);
  EXPECT_NEAR(sys.M(Eigen::Index(b.index(1, 1)), Eigen::Index(b.index(1, 1))).real(), -1.0, 1e-15);
  EXPECT_NEAR(sys.M(Eigen::Index(b.index(2, 2)), Eigen::Index(b.index(2, 2))).real(), -2.0, 1e-15);
}

TEST(MomentSystem, DecayOnlyDiagonal) {
  auto sys = build_moment_system(decay_dephase(3, 1.3, 0.0), 0, 2);
  for (std::size_t i = 0; i < sys.size(); ++i) {
    const auto [mu, nu] = sys.basis.key(i);
    EXPECT_NEAR(sys.M(Eigen::Index(i), Eigen::Index(i)).real(), -(mu + nu) * 1.3 / 2, 1e-15);
  }
}

TEST(MomentSystem, BasisOrderingAndLadders) {
  auto sys = build_moment_system(decay_dephase(3, 1.0, 1.0), 0, 2);
  const auto& b = sys.basis;
  EXPECT_EQ(b.key(0), (MomentBasis::Key{0, 0}));
  EXPECT_EQ(b.key(1), (MomentBasis::Key{0, 1}));
  EXPECT_EQ(b.key(2), (MomentBasis::Key{1, 0}));
  EXPECT_EQ(b.key(3), (MomentBasis::Key{1, 1}));
  EXPECT_EQ(sys.Tplus(Eigen::Index(b.index(1, 1)), Eigen::Index(b.index(2, 1))), cplx(1.0));
  EXPECT_EQ(sys.Tminus(Eigen::Index(b.index(1, 1)), Eigen::Index(b.index(1, 2))), cplx(1.0));
  EXPECT_EQ(sys.Tplus.row(Eigen::Index(b.index(2, 0))).cwiseAbs().sum(), 0.0);
}

TEST(MomentSystem, MatchesLiouvillianExpectationDerivatives) {
  // Decay, dephasing, incoherent pump and a detuning: the hierarchy still closes.
  FockSpace s({"a"}, {30});
  LindbladModel m(s, {{Monomial::lower(0), 1.0}, {Monomial::number(0), 0.6}, {Monomial::raise(0), 0.3}},
                  {{Monomial::number(0), 0.8}});
  auto sys = build_moment_system(m, 0, 2);
  auto rho = DensityMatrix::coherent(s, 0, cplx(0.7, 0.4));
  auto l = build_liouvillian(m);
  Eigen::VectorXcd x = l.basis.gather(rho.entries());
  Eigen::VectorXcd dx = l.matrix * x;
  Eigen::MatrixXcd drho = Eigen::MatrixXcd::Zero(31, 31);
  l.basis.scatter(dx, drho);
  DensityMatrix d(s, drho);
  auto v = moment_vector(rho, 0, sys.basis);
  auto dv = moment_vector(d, 0, sys.basis);
  EXPECT_LT((sys.M * v - dv).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MomentSystem, ReportsEscapingMonomial) {
  FockSpace s({"a"}, {4});
  LindbladModel m(s, {{Monomial::parse("a*a", s), 1.0}});
  try {
    build_moment_system(m, 0, 2);
    FAIL() << "expected a closure error";
  } catch (const ClosureError& e) {
    EXPECT_NE(std::string(e.what()).find("of a*a reach ad*a*a*a"), std::string::npos) << e.what();
  }
}

TEST(MomentSystem, PhaseAveragedMoments) {
  MomentBasis b(2);
  auto v = phase_averaged_moments(b, 2.0, 0.5);
  EXPECT_EQ(v(0), cplx(1.0));
  EXPECT_EQ(v(Eigen::Index(b.index(1, 1))), cplx(2.0));
  EXPECT_EQ(v(Eigen::Index(b.index(2, 2))), cplx(2.0));
  FockSpace s({"a"}, {4});
  auto w = moment_vector(DensityMatrix::fock_single(s, 0, 2), 0, b);
  EXPECT_LT((v - w).cwiseAbs().maxCoeff(), 1e-14);
}
