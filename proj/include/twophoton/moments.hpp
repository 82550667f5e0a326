#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "twophoton/errors.hpp"
#include "twophoton/fock.hpp"
#include "twophoton/lindblad.hpp"

namespace twophoton {

// Single-mode operator in normal order: coefficients of ad^mu a^nu keyed by
// (mu, nu).
class NormalPoly {
 public:
  using Key = std::pair<int, int>;

  NormalPoly() = default;

  static NormalPoly term(int mu, int nu, cplx c = 1.0) {
    NormalPoly p;
    if (c != cplx(0.0)) p.terms_[{mu, nu}] = c;
    return p;
  }

  static NormalPoly identity() { return term(0, 0); }
  static NormalPoly lower() { return term(0, 1); }
  static NormalPoly raise() { return term(1, 0); }

  // The product of ladder factors of one mode, brought to normal order.
  static NormalPoly from_monomial(const Monomial& m, std::size_t mode) {
    NormalPoly p = identity();
    for (const auto& f : m.factors()) {
      if (f.mode != mode) throw ValidationError("moment algebra: operator acts on more than one mode");
      p = p * (f.dagger ? raise() : lower());
    }
    return p;
  }

  const std::map<Key, cplx>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }

  cplx coefficient(int mu, int nu) const {
    auto it = terms_.find({mu, nu});
    return it == terms_.end() ? cplx(0.0) : it->second;
  }

  NormalPoly adjoint() const {
    NormalPoly p;
    for (const auto& [k, c] : terms_) p.terms_[{k.second, k.first}] = std::conj(c);
    return p;
  }

  NormalPoly& operator+=(const NormalPoly& o) {
    for (const auto& [k, c] : o.terms_) accumulate(k, c);
    return *this;
  }

  NormalPoly& operator-=(const NormalPoly& o) {
    for (const auto& [k, c] : o.terms_) accumulate(k, -c);
    return *this;
  }

  friend NormalPoly operator+(NormalPoly a, const NormalPoly& b) { return a += b; }
  friend NormalPoly operator-(NormalPoly a, const NormalPoly& b) { return a -= b; }

  friend NormalPoly operator*(cplx s, NormalPoly a) {
    for (auto& [k, c] : a.terms_) c *= s;
    a.prune();
    return a;
  }

  // ad^p a^q ad^r a^s = sum_k C(q,k) C(r,k) k! ad^{p+r-k} a^{q+s-k}
  friend NormalPoly operator*(const NormalPoly& x, const NormalPoly& y) {
    NormalPoly out;
    for (const auto& [kx, cx] : x.terms_)
      for (const auto& [ky, cy] : y.terms_) {
        const int p = kx.first, q = kx.second, r = ky.first, s = ky.second;
        double w = 1.0;
        for (int k = 0; k <= std::min(q, r); ++k) {
          out.accumulate({p + r - k, q + s - k}, cx * cy * w);
          w *= double(q - k) * double(r - k) / double(k + 1);
        }
      }
    return out;
  }

  bool operator==(const NormalPoly& o) const { return terms_ == o.terms_; }

  static std::string key_name(Key k) {
    std::string s;
    for (int i = 0; i < k.first; ++i) s += s.empty() ? "ad" : "*ad";
    for (int i = 0; i < k.second; ++i) s += s.empty() ? "a" : "*a";
    return s.empty() ? "1" : s;
  }

 private:
  void accumulate(Key k, cplx c) {
    auto& v = terms_[k];
    v += c;
    if (std::abs(v) < 1e-300) terms_.erase(k);
  }

  void prune() {
    for (auto it = terms_.begin(); it != terms_.end();)
      it = std::abs(it->second) < 1e-300 ? terms_.erase(it) : std::next(it);
  }

  std::map<Key, cplx> terms_;
};

// Ordered normal-ordered monomials ad^mu a^nu: 1, a, ad, ad*a, a^2, ad^2, ...
class MomentBasis {
 public:
  using Key = NormalPoly::Key;

  MomentBasis() = default;

  explicit MomentBasis(int max_order) {
    if (max_order < 1) throw ValidationError("moment basis needs order >= 1");
    add({0, 0});
    for (int k = 1; k <= max_order; ++k) {
      for (int j = 0; j < k; ++j) {
        add({j, k});
        add({k, j});
      }
      add({k, k});
    }
  }

  std::size_t size() const { return keys_.size(); }
  const std::vector<Key>& operators() const { return keys_; }
  Key key(std::size_t i) const { return keys_.at(i); }

  std::optional<std::size_t> find(Key k) const {
    auto it = index_.find(k);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index(int mu, int nu) const {
    if (auto i = find({mu, nu})) return *i;
    throw ValidationError("moment " + NormalPoly::key_name({mu, nu}) + " not in basis");
  }

 private:
  void add(Key k) {
    index_[k] = keys_.size();
    keys_.push_back(k);
  }

  std::vector<Key> keys_;
  std::map<Key, std::size_t> index_;
};

// d<v>/dt = M <v>, with (Tplus v)_i = <ad O_i> and (Tminus v)_i = <O_i a>.
struct MomentSystem {
  MomentBasis basis;
  MatrixC M;
  MatrixC Tplus;
  MatrixC Tminus;
  VectorC v0;

  std::size_t size() const { return basis.size(); }

  MomentSystem with_initial(VectorC v) const {
    if (v.size() != static_cast<Eigen::Index>(size())) throw ValidationError("moment vector has wrong length");
    MomentSystem s = *this;
    s.v0 = std::move(v);
    return s;
  }
};

// Heisenberg-picture generator applied to a normal-ordered operator X:
// sum rate/2 (2 Od X O - Od O X - X Od O) + i[H, X].
inline NormalPoly adjoint_generator(const LindbladModel& model, std::size_t mode, const NormalPoly& x) {
  NormalPoly out;
  for (const auto& c : model.collapse_terms()) {
    if (c.rate == 0.0) continue;
    const NormalPoly o = NormalPoly::from_monomial(c.op, mode);
    const NormalPoly od = o.adjoint();
    const NormalPoly odo = od * o;
    out += cplx(0.5 * c.rate) * (cplx(2.0) * (od * x * o) - odo * x - x * odo);
  }
  NormalPoly h;
  for (const auto& t : model.hamiltonian_terms())
    if (t.coefficient != 0.0) h += cplx(t.coefficient) * NormalPoly::from_monomial(t.op, mode);
  if (!h.empty()) out += cplx(0.0, 1.0) * (h * x - x * h);
  return out;
}

inline MomentSystem build_moment_system(const LindbladModel& model, std::size_t mode, int max_order = 2) {
  if (mode >= model.space().num_modes()) throw ValidationError("moment system: mode out of range");
  MomentSystem sys;
  sys.basis = MomentBasis(max_order);
  const auto n = static_cast<Eigen::Index>(sys.basis.size());
  sys.M = MatrixC::Zero(n, n);
  sys.Tplus = MatrixC::Zero(n, n);
  sys.Tminus = MatrixC::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [mu, nu] = sys.basis.key(std::size_t(i));
    const NormalPoly d = adjoint_generator(model, mode, NormalPoly::term(mu, nu));
    for (const auto& [k, c] : d.terms()) {
      if (std::abs(c) < 1e-14) continue;
      auto j = sys.basis.find(k);
      if (!j)
        throw ClosureError("equations of motion of " + NormalPoly::key_name({mu, nu}) + " reach " +
                           NormalPoly::key_name(k) + ", outside the order-" + std::to_string(max_order) + " basis");
      sys.M(i, Eigen::Index(*j)) += c;
    }
    // Raising on the left and lowering on the right keep normal order; terms
    // beyond the basis are never read by the order-2 chain.
    if (auto j = sys.basis.find({mu + 1, nu})) sys.Tplus(i, Eigen::Index(*j)) = 1.0;
    if (auto j = sys.basis.find({mu, nu + 1})) sys.Tminus(i, Eigen::Index(*j)) = 1.0;
  }
  sys.v0 = VectorC::Zero(n);
  sys.v0(0) = 1.0;
  return sys;
}

// Expectation values <ad^mu a^nu> of one mode in a density matrix.
inline VectorC moment_vector(const DensityMatrix& rho, std::size_t mode, const MomentBasis& basis) {
  VectorC v(static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i = 0; i < basis.size(); ++i) {
    const auto [mu, nu] = basis.key(i);
    std::vector<Factor> f;
    for (int k = 0; k < mu; ++k) f.push_back({mode, true});
    for (int k = 0; k < nu; ++k) f.push_back({mode, false});
    v(Eigen::Index(i)) = rho.expectation(Monomial(std::move(f)));
  }
  return v;
}

// Phase-averaged moments fixed by population and zero-delay correlation:
// <ad a> = n0, <ad^2 a^2> = g2 n0^2, coherences zero.
inline VectorC phase_averaged_moments(const MomentBasis& basis, double n0, double g2_0) {
  VectorC v = VectorC::Zero(static_cast<Eigen::Index>(basis.size()));
  v(0) = 1.0;
  if (auto i = basis.find({1, 1})) v(Eigen::Index(*i)) = n0;
  if (auto i = basis.find({2, 2})) v(Eigen::Index(*i)) = g2_0 * n0 * n0;
  return v;
}

}  // namespace twophoton
