#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <unsupported/Eigen/MatrixFunctions>
#include <boost/numeric/odeint.hpp>

#include "twophoton/errors.hpp"
#include "twophoton/fock.hpp"

namespace twophoton {

struct HamiltonianTerm {
  Monomial op;
  double coefficient = 0.0;
};

// Contributes rate/2 * (2 O rho O^dag - O^dag O rho - rho O^dag O).
struct CollapseTerm {
  Monomial op;
  double rate = 0.0;
};

// Markovian generator on a truncated Fock space. Immutable once built; the
// with_* helpers return modified copies.
class LindbladModel {
 public:
  LindbladModel() = default;

  LindbladModel(FockSpace space, std::vector<CollapseTerm> collapse, std::vector<HamiltonianTerm> hamiltonian = {})
      : space_(std::move(space)), collapse_(std::move(collapse)), hamiltonian_(std::move(hamiltonian)) {
    for (const auto& c : collapse_) {
      if (!(c.rate >= 0.0) || !std::isfinite(c.rate))
        throw ValidationError("collapse term '" + c.op.to_string(space_) + "' has invalid rate");
      c.op.check_space(space_);
    }
    for (const auto& h : hamiltonian_) {
      if (!std::isfinite(h.coefficient)) throw ValidationError("non-finite Hamiltonian coefficient");
      h.op.check_space(space_);
    }
  }

  const FockSpace& space() const { return space_; }
  const std::vector<CollapseTerm>& collapse_terms() const { return collapse_; }
  const std::vector<HamiltonianTerm>& hamiltonian_terms() const { return hamiltonian_; }

  // Every collapse term preserves the difference of ket and bra excitation
  // numbers; Hamiltonian terms do so only when they are charge neutral.
  bool conserves_excitations() const {
    return std::all_of(hamiltonian_.begin(), hamiltonian_.end(),
                       [](const HamiltonianTerm& h) { return h.coefficient == 0.0 || h.op.charge() == 0; });
  }

  // Same terms on a space with identical leading modes (different truncation
  // or extra trailing modes).
  LindbladModel with_space(FockSpace space) const {
    if (space.num_modes() < space_.num_modes()) throw ValidationError("with_space: modes removed");
    for (std::size_t m = 0; m < space_.num_modes(); ++m)
      if (space.label(m) != space_.label(m)) throw ValidationError("with_space: mode order changed");
    return LindbladModel(std::move(space), collapse_, hamiltonian_);
  }

  LindbladModel with_collapse(CollapseTerm term) const {
    auto c = collapse_;
    c.push_back(std::move(term));
    return LindbladModel(space_, std::move(c), hamiltonian_);
  }

  LindbladModel with_hamiltonian(HamiltonianTerm term) const {
    auto h = hamiltonian_;
    h.push_back(std::move(term));
    return LindbladModel(space_, collapse_, std::move(h));
  }

  double max_rate() const {
    double r = 0.0;
    for (const auto& c : collapse_) r = std::max(r, c.rate);
    for (const auto& h : hamiltonian_) r = std::max(r, std::abs(h.coefficient));
    return r;
  }

  SparseC hamiltonian_matrix() const {
    const auto d = static_cast<Eigen::Index>(space_.dimension());
    SparseC h(d, d);
    for (const auto& term : hamiltonian_) h += cplx(term.coefficient) * term.op.matrix(space_);
    SparseC diff = h - SparseC(h.adjoint());
    if (diff.norm() > 1e-12 * (1.0 + h.norm()))
      throw ValidationError("Hamiltonian terms do not sum to a Hermitian operator");
    return h;
  }

 private:
  FockSpace space_;
  std::vector<CollapseTerm> collapse_;
  std::vector<HamiltonianTerm> hamiltonian_;
};

struct StateDiagnostics {
  double hermiticity_error = 0.0;
  double trace_error = 0.0;
  double min_eigenvalue = 0.0;
  bool eigen_checked = false;
};

class DensityMatrix {
 public:
  DensityMatrix() = default;

  DensityMatrix(FockSpace space, MatrixC entries) : space_(std::move(space)), entries_(std::move(entries)) {
    const auto d = static_cast<Eigen::Index>(space_.dimension());
    if (entries_.rows() != d || entries_.cols() != d)
      throw ValidationError("density matrix shape does not match the Fock space");
  }

  static DensityMatrix vacuum(const FockSpace& space) {
    const auto d = static_cast<Eigen::Index>(space.dimension());
    MatrixC r = MatrixC::Zero(d, d);
    r(0, 0) = 1.0;
    return {space, std::move(r)};
  }

  static DensityMatrix fock(const FockSpace& space, std::span<const int> occupations) {
    const auto d = static_cast<Eigen::Index>(space.dimension());
    MatrixC r = MatrixC::Zero(d, d);
    const auto s = static_cast<Eigen::Index>(space.state_index(occupations));
    r(s, s) = 1.0;
    return {space, std::move(r)};
  }

  // Embed a single-mode density matrix with every other mode in vacuum.
  static DensityMatrix single_mode(const FockSpace& space, std::size_t mode, const MatrixC& rho_mode) {
    const int cap = space.truncation(mode);
    if (rho_mode.rows() != cap + 1 || rho_mode.cols() != cap + 1)
      throw ValidationError("single-mode matrix does not match the mode truncation");
    const auto d = static_cast<Eigen::Index>(space.dimension());
    MatrixC r = MatrixC::Zero(d, d);
    std::vector<int> occ(space.num_modes(), 0);
    std::vector<Eigen::Index> idx(cap + 1);
    for (int n = 0; n <= cap; ++n) {
      occ[mode] = n;
      idx[n] = static_cast<Eigen::Index>(space.state_index(occ));
    }
    for (int n = 0; n <= cap; ++n)
      for (int m = 0; m <= cap; ++m) r(idx[n], idx[m]) = rho_mode(n, m);
    return {space, std::move(r)};
  }

  static DensityMatrix fock_single(const FockSpace& space, std::size_t mode, int n) {
    const int cap = space.truncation(mode);
    if (n < 0 || n > cap) throw ValidationError("Fock occupation outside truncation");
    MatrixC r = MatrixC::Zero(cap + 1, cap + 1);
    r(n, n) = 1.0;
    return single_mode(space, mode, r);
  }

  // Coherent state |alpha>, truncated and renormalised.
  static DensityMatrix coherent(const FockSpace& space, std::size_t mode, cplx alpha) {
    const int cap = space.truncation(mode);
    VectorC psi(cap + 1);
    psi(0) = 1.0;
    for (int n = 1; n <= cap; ++n) psi(n) = psi(n - 1) * alpha / std::sqrt(double(n));
    psi /= psi.norm();
    return single_mode(space, mode, psi * psi.adjoint());
  }

  // Thermal (chaotic) state with mean occupation nbar, truncated and renormalised.
  static DensityMatrix thermal(const FockSpace& space, std::size_t mode, double nbar) {
    if (!(nbar >= 0.0)) throw ValidationError("thermal occupation must be non-negative");
    const int cap = space.truncation(mode);
    MatrixC r = MatrixC::Zero(cap + 1, cap + 1);
    const double q = nbar / (1.0 + nbar);
    double p = 1.0, total = 0.0;
    for (int n = 0; n <= cap; ++n) {
      r(n, n) = p;
      total += p;
      p *= q;
    }
    r /= total;
    return single_mode(space, mode, r);
  }

  // Random full-rank mixed state on one mode (Ginibre construction).
  template <class Rng>
  static DensityMatrix random_mixed(const FockSpace& space, std::size_t mode, Rng& rng) {
    const int cap = space.truncation(mode);
    std::normal_distribution<double> g;
    MatrixC a(cap + 1, cap + 1);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = cplx(g(rng), g(rng));
    MatrixC r = a * a.adjoint();
    r /= r.trace();
    return single_mode(space, mode, r);
  }

  // Random diagonal (classical mixture of Fock states) on one mode.
  template <class Rng>
  static DensityMatrix random_diagonal(const FockSpace& space, std::size_t mode, Rng& rng) {
    const int cap = space.truncation(mode);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MatrixC r = MatrixC::Zero(cap + 1, cap + 1);
    double total = 0.0;
    for (int n = 0; n <= cap; ++n) total += (r(n, n) = u(rng)).real();
    r /= total;
    return single_mode(space, mode, r);
  }

  const FockSpace& space() const { return space_; }
  const MatrixC& entries() const { return entries_; }
  cplx operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }
  cplx trace() const { return entries_.trace(); }

  cplx expectation(const SparseC& op) const {
    cplx acc = 0.0;
    for (Eigen::Index k = 0; k < op.outerSize(); ++k)
      for (SparseC::InnerIterator it(op, k); it; ++it) acc += it.value() * entries_(it.col(), it.row());
    return acc;
  }

  cplx expectation(const Monomial& op) const { return expectation(op.matrix(space_)); }

  // Occupation probabilities of one mode.
  std::vector<double> marginal(std::size_t mode) const {
    std::vector<double> p(static_cast<std::size_t>(space_.truncation(mode)) + 1, 0.0);
    for (std::size_t s = 0; s < space_.dimension(); ++s)
      p[static_cast<std::size_t>(space_.occupation(s, mode))] += entries_(Eigen::Index(s), Eigen::Index(s)).real();
    return p;
  }

  StateDiagnostics diagnostics(std::size_t eigen_limit = 256) const {
    StateDiagnostics d;
    d.hermiticity_error = (entries_ - entries_.adjoint()).cwiseAbs().maxCoeff();
    d.trace_error = std::abs(entries_.trace() - cplx(1.0));
    if (space_.dimension() <= eigen_limit) {
      Eigen::SelfAdjointEigenSolver<MatrixC> es(0.5 * (entries_ + entries_.adjoint()), Eigen::EigenvaluesOnly);
      d.min_eigenvalue = es.eigenvalues().minCoeff();
      d.eigen_checked = true;
    }
    return d;
  }

  void check_invariants(double tol = 1e-10, double eig_floor = -1e-8, std::size_t eigen_limit = 256) const {
    const auto d = diagnostics(eigen_limit);
    if (d.hermiticity_error > tol)
      throw NumericalError("density matrix not Hermitian: error " + std::to_string(d.hermiticity_error));
    if (d.trace_error > tol) throw NumericalError("density matrix trace error " + std::to_string(d.trace_error));
    if (d.eigen_checked && d.min_eigenvalue < eig_floor)
      throw NumericalError("density matrix not positive: eigenvalue " + std::to_string(d.min_eigenvalue));
  }

 private:
  FockSpace space_;
  MatrixC entries_;
};

// Normalised zero-delay second-order correlation of one mode:
// sum n(n-1) p_n / (sum n p_n)^2.
inline double g2_zero(const DensityMatrix& rho, std::size_t mode) {
  const auto p = rho.marginal(mode);
  double num = 0.0, den = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    if (n >= 2) num += double(n) * double(n - 1) * p[n];
    den += double(n) * p[n];
  }
  if (!(den > 1e-300)) throw UndefinedCorrelationError("g2 undefined: mode population is zero");
  return num / (den * den);
}

// Index set of density-matrix elements (ket, bra). Either every element of
// the space or only those whose excitation numbers differ by `delta`.
class SectorBasis {
 public:
  static SectorBasis full(const FockSpace& space) {
    SectorBasis b;
    b.dim_ = space.dimension();
    b.full_ = true;
    b.size_ = b.dim_ * b.dim_;
    return b;
  }

  static SectorBasis charge(const FockSpace& space, int delta) {
    SectorBasis b;
    b.dim_ = space.dimension();
    b.delta_ = delta;
    const int qmax = space.max_total_excitation();
    b.charge_.resize(b.dim_);
    b.position_.resize(b.dim_);
    b.count_.assign(static_cast<std::size_t>(qmax) + 1, 0);
    for (std::size_t s = 0; s < b.dim_; ++s) {
      const int q = space.total_excitation(s);
      b.charge_[s] = q;
      b.position_[s] = b.count_[static_cast<std::size_t>(q)]++;
    }
    b.offset_.assign(static_cast<std::size_t>(qmax) + 1, 0);
    std::size_t off = 0;
    for (int q = 0; q <= qmax; ++q) {
      b.offset_[static_cast<std::size_t>(q)] = off;
      const int qb = q - delta;
      if (qb >= 0 && qb <= qmax) off += b.count_[static_cast<std::size_t>(q)] * b.count_[static_cast<std::size_t>(qb)];
    }
    b.size_ = off;
    b.kets_.resize(off);
    b.bras_.resize(off);
    for (std::size_t i = 0; i < b.dim_; ++i)
      for (std::size_t j = 0; j < b.dim_; ++j)
        if (auto k = b.index(i, j)) {
          b.kets_[*k] = static_cast<std::uint32_t>(i);
          b.bras_[*k] = static_cast<std::uint32_t>(j);
        }
    return b;
  }

  bool is_full() const { return full_; }
  int delta() const { return delta_; }
  std::size_t size() const { return size_; }
  std::size_t hilbert_dimension() const { return dim_; }

  std::optional<std::size_t> index(std::size_t ket, std::size_t bra) const {
    if (full_) return ket * dim_ + bra;
    const int q = charge_[ket];
    if (q - charge_[bra] != delta_) return std::nullopt;
    return offset_[static_cast<std::size_t>(q)] + position_[ket] * count_[static_cast<std::size_t>(charge_[bra])] +
           position_[bra];
  }

  std::size_t ket(std::size_t k) const { return full_ ? k / dim_ : kets_[k]; }
  std::size_t bra(std::size_t k) const { return full_ ? k % dim_ : bras_[k]; }

  VectorC gather(const MatrixC& x) const {
    VectorC v(static_cast<Eigen::Index>(size_));
    for (std::size_t k = 0; k < size_; ++k)
      v(Eigen::Index(k)) = x(Eigen::Index(ket(k)), Eigen::Index(bra(k)));
    return v;
  }

  void scatter(const VectorC& v, MatrixC& x) const {
    for (std::size_t k = 0; k < size_; ++k) x(Eigen::Index(ket(k)), Eigen::Index(bra(k))) = v(Eigen::Index(k));
  }

  // Row vector t with t.v = Tr(rho) for rho restricted to this sector.
  Eigen::RowVectorXcd trace_row() const {
    Eigen::RowVectorXcd t = Eigen::RowVectorXcd::Zero(static_cast<Eigen::Index>(size_));
    if (!full_ && delta_ != 0) return t;
    for (std::size_t s = 0; s < dim_; ++s)
      if (auto k = index(s, s)) t(Eigen::Index(*k)) = 1.0;
    return t;
  }

  // Charge sectors containing a nonzero element of x.
  static std::vector<int> occupied_sectors(const FockSpace& space, const MatrixC& x) {
    std::vector<int> deltas;
    const int qmax = space.max_total_excitation();
    std::vector<char> seen(static_cast<std::size_t>(2 * qmax + 1), 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        if (x(i, j) != cplx(0.0))
          seen[static_cast<std::size_t>(space.total_excitation(std::size_t(i)) -
                                        space.total_excitation(std::size_t(j)) + qmax)] = 1;
    for (int d = -qmax; d <= qmax; ++d)
      if (seen[static_cast<std::size_t>(d + qmax)]) deltas.push_back(d);
    return deltas;
  }

 private:
  bool full_ = false;
  int delta_ = 0;
  std::size_t dim_ = 0;
  std::size_t size_ = 0;
  std::vector<int> charge_;
  std::vector<std::size_t> position_, count_, offset_;
  std::vector<std::uint32_t> kets_, bras_;
};

struct LiouvillianOptions {
  std::size_t max_sector_size = 4'000'000;
};

// d/dt x = matrix * x for x the sector-restricted vectorised density matrix.
struct Liouvillian {
  SectorBasis basis;
  SparseC matrix;

  std::size_t size() const { return basis.size(); }
};

inline Liouvillian build_liouvillian(const LindbladModel& model, const SectorBasis& basis,
                                     const LiouvillianOptions& opts = {}) {
  const auto& space = model.space();
  if (basis.size() > opts.max_sector_size)
    throw CapacityError("Liouvillian sector of size " + std::to_string(basis.size()) + " exceeds the budget of " +
                        std::to_string(opts.max_sector_size));
  if (!basis.is_full() && !model.conserves_excitations())
    throw ValidationError("charge sectors require an excitation-conserving Hamiltonian");

  // K = H - i/2 sum rate O^dag O, so that drho/dt = -i K rho + i rho K^dag + sum rate O rho O^dag.
  SparseC keff = model.hamiltonian_matrix();
  std::vector<std::pair<double, SparseC>> jumps;
  for (const auto& c : model.collapse_terms()) {
    if (c.rate == 0.0) continue;
    SparseC o = c.op.matrix(space);
    keff -= cplx(0.0, 0.5 * c.rate) * SparseC(o.adjoint() * o);
    jumps.emplace_back(c.rate, std::move(o));
  }
  keff.makeCompressed();

  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(basis.size() * 8);
  const cplx mi(0.0, -1.0);
  for (std::size_t k = 0; k < basis.size(); ++k) {
    const auto i = basis.ket(k), j = basis.bra(k);
    const auto col = static_cast<int>(k);
    for (SparseC::InnerIterator it(keff, Eigen::Index(i)); it; ++it)
      if (auto r = basis.index(std::size_t(it.row()), j)) trip.emplace_back(int(*r), col, mi * it.value());
    for (SparseC::InnerIterator it(keff, Eigen::Index(j)); it; ++it)
      if (auto r = basis.index(i, std::size_t(it.row()))) trip.emplace_back(int(*r), col, -mi * std::conj(it.value()));
    for (const auto& [rate, o] : jumps)
      for (SparseC::InnerIterator a(o, Eigen::Index(i)); a; ++a)
        for (SparseC::InnerIterator b(o, Eigen::Index(j)); b; ++b)
          if (auto r = basis.index(std::size_t(a.row()), std::size_t(b.row())))
            trip.emplace_back(int(*r), col, rate * a.value() * std::conj(b.value()));
  }
  Liouvillian l{basis, SparseC(Eigen::Index(basis.size()), Eigen::Index(basis.size()))};
  l.matrix.setFromTriplets(trip.begin(), trip.end());
  l.matrix.makeCompressed();
  return l;
}

// Full superoperator on all dim^2 density-matrix elements.
inline Liouvillian build_liouvillian(const LindbladModel& model, const LiouvillianOptions& opts = {}) {
  return build_liouvillian(model, SectorBasis::full(model.space()), opts);
}

struct EvolveOptions {
  double rtol = 1e-11;
  double atol = 1e-14;
  // Sector sizes up to this use a dense scaled-and-squared matrix exponential.
  std::size_t dense_limit = 256;
  bool check_states = true;
};

// x(t) = exp(L t) x0 at each requested time (non-decreasing, >= 0).
inline std::vector<VectorC> propagate(const Liouvillian& l, const VectorC& x0, std::span<const double> times,
                                      const EvolveOptions& opts = {}) {
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] >= 0.0)) throw ValidationError("evolution times must be non-negative");
    if (k && times[k] < times[k - 1]) throw ValidationError("evolution times must be non-decreasing");
  }
  std::vector<VectorC> out;
  out.reserve(times.size());
  if (times.empty()) return out;

  if (l.size() <= opts.dense_limit) {
    const MatrixC dense = MatrixC(l.matrix);
    VectorC x = x0;
    double t = 0.0, cached_dt = -1.0;
    MatrixC step;
    for (double target : times) {
      const double dt = target - t;
      if (dt > 0.0) {
        if (dt != cached_dt) {
          step = (dense * dt).exp();
          cached_dt = dt;
        }
        x = step * x;
        t = target;
      }
      out.push_back(x);
    }
    return out;
  }

  namespace odeint = boost::numeric::odeint;
  using State = std::vector<cplx>;
  const auto n = static_cast<Eigen::Index>(l.size());
  State x(x0.data(), x0.data() + n);
  auto rhs = [&](const State& in, State& dxdt, double) {
    dxdt.resize(in.size());
    Eigen::Map<VectorC>(dxdt.data(), n).noalias() = l.matrix * Eigen::Map<const VectorC>(in.data(), n);
  };
  auto observer = [&](const State& s, double) { out.push_back(Eigen::Map<const VectorC>(s.data(), n)); };
  double scale = 1.0;
  for (Eigen::Index k = 0; k < l.matrix.nonZeros(); ++k) scale = std::max(scale, std::abs(l.matrix.valuePtr()[k]));
  const double dt0 = 1e-3 / scale;
  try {
    std::vector<double> ts(times.begin(), times.end());
    if (ts.front() > 0.0) ts.insert(ts.begin(), 0.0);
    const bool drop_first = ts.size() != times.size();
    auto stepper = odeint::make_dense_output(opts.atol, opts.rtol, odeint::runge_kutta_dopri5<State>());
    odeint::integrate_times(stepper, rhs, x, ts.begin(), ts.end(), dt0, observer,
                            odeint::max_step_checker(10'000'000));
    if (drop_first) out.erase(out.begin());
  } catch (const std::exception& e) {
    throw NumericalError(std::string("time integration failed (rtol ") + std::to_string(opts.rtol) + "): " + e.what());
  }
  return out;
}

// Evolve an arbitrary operator (not necessarily a state) under the model.
inline std::vector<MatrixC> propagate_operator(const MatrixC& x0, const LindbladModel& model,
                                               std::span<const double> times, const EvolveOptions& opts = {}) {
  const auto& space = model.space();
  std::vector<MatrixC> out(times.size(), MatrixC::Zero(x0.rows(), x0.cols()));
  auto run = [&](const SectorBasis& basis) {
    const auto l = build_liouvillian(model, basis);
    const auto xs = propagate(l, basis.gather(x0), times, opts);
    for (std::size_t k = 0; k < xs.size(); ++k) basis.scatter(xs[k], out[k]);
  };
  if (model.conserves_excitations()) {
    for (int delta : SectorBasis::occupied_sectors(space, x0)) run(SectorBasis::charge(space, delta));
  } else {
    run(SectorBasis::full(space));
  }
  return out;
}

inline std::vector<DensityMatrix> evolve(const DensityMatrix& rho0, const LindbladModel& model,
                                         std::span<const double> times, const EvolveOptions& opts = {}) {
  if (!(rho0.space() == model.space())) throw ValidationError("evolve: state and model live on different spaces");
  const auto xs = propagate_operator(rho0.entries(), model, times, opts);
  std::vector<DensityMatrix> out;
  out.reserve(xs.size());
  for (const auto& x : xs) {
    DensityMatrix r(model.space(), x);
    if (opts.check_states) r.check_invariants(1e-9);
    out.push_back(std::move(r));
  }
  return out;
}

struct SteadyStateOptions {
  // Sector sizes up to this get a dense SVD check that the null space is
  // one dimensional.
  std::size_t dense_limit = 400;
  double uniqueness_ratio = 1e3;
  double residual_tol = 1e-10;
  LiouvillianOptions liouvillian{};
};

// Sparse solver for the trace-pinned Liouvillian. Keeps the symbolic
// factorisation so repeated solves with the same sparsity pattern only
// refactorise.
class SteadyStateSolver {
 public:
  explicit SteadyStateSolver(SteadyStateOptions opts = {}) : opts_(opts) {}

  VectorC solve(const Liouvillian& l) {
    const auto n = static_cast<Eigen::Index>(l.size());
    const auto trace = l.basis.trace_row();
    if (n <= static_cast<Eigen::Index>(opts_.dense_limit)) check_unique(l);

    // Pin the first population to carry the trace condition.
    Eigen::Index pin = -1;
    for (Eigen::Index k = 0; k < n; ++k)
      if (trace(k) != cplx(0.0)) {
        pin = k;
        break;
      }
    if (pin < 0) throw ValidationError("steady state requires the population sector");

    std::vector<Eigen::Triplet<cplx>> trip;
    trip.reserve(static_cast<std::size_t>(l.matrix.nonZeros()) + static_cast<std::size_t>(n));
    for (Eigen::Index c = 0; c < l.matrix.outerSize(); ++c)
      for (SparseC::InnerIterator it(l.matrix, c); it; ++it)
        if (it.row() != pin) trip.emplace_back(int(it.row()), int(it.col()), it.value());
    for (Eigen::Index k = 0; k < n; ++k)
      if (trace(k) != cplx(0.0)) trip.emplace_back(int(pin), int(k), trace(k));
    SparseC a(n, n);
    a.setFromTriplets(trip.begin(), trip.end());
    a.makeCompressed();

    if (!analyzed_ || !same_pattern(a)) {
      lu_.analyzePattern(a);
      pattern_outer_.assign(a.outerIndexPtr(), a.outerIndexPtr() + a.outerSize() + 1);
      pattern_inner_.assign(a.innerIndexPtr(), a.innerIndexPtr() + a.nonZeros());
      analyzed_ = true;
    }
    lu_.factorize(a);
    if (lu_.info() != Eigen::Success)
      throw NonUniqueSteadyStateError("trace-pinned Liouvillian is singular: steady state is not unique");
    VectorC b = VectorC::Zero(n);
    b(pin) = 1.0;
    VectorC x = lu_.solve(b);
    VectorC r = b - a * x;
    x += lu_.solve(r);
    if (!x.allFinite()) throw NonUniqueSteadyStateError("steady-state solve produced non-finite values");
    const double res = (l.matrix * x).cwiseAbs().maxCoeff();
    if (res > opts_.residual_tol * std::max(1.0, x.cwiseAbs().maxCoeff()))
      throw NumericalError("steady-state residual " + std::to_string(res) + " above tolerance");
    return x;
  }

 private:
  // The stationary vector itself comes from the pinned LU solve, which
  // resolves small entries far better than the last right singular vector.
  void check_unique(const Liouvillian& l) const {
    const MatrixC dense(l.matrix);
    Eigen::BDCSVD<MatrixC> svd(dense);
    const auto& s = svd.singularValues();
    const auto n = s.size();
    if (n >= 2 && !(s(n - 2) > opts_.uniqueness_ratio * s(n - 1)))
      throw NonUniqueSteadyStateError("Liouvillian null space is degenerate: singular values " +
                                      std::to_string(s(n - 2)) + " and " + std::to_string(s(n - 1)));
  }

  bool same_pattern(const SparseC& a) const {
    return pattern_outer_.size() == std::size_t(a.outerSize() + 1) &&
           pattern_inner_.size() == std::size_t(a.nonZeros()) &&
           std::equal(pattern_outer_.begin(), pattern_outer_.end(), a.outerIndexPtr()) &&
           std::equal(pattern_inner_.begin(), pattern_inner_.end(), a.innerIndexPtr());
  }

  SteadyStateOptions opts_;
  Eigen::SparseLU<SparseC, Eigen::COLAMDOrdering<int>> lu_;
  bool analyzed_ = false;
  std::vector<int> pattern_outer_, pattern_inner_;
};

inline DensityMatrix steady_state_from(const Liouvillian& l, const FockSpace& space, SteadyStateSolver& solver) {
  const VectorC x = solver.solve(l);
  const auto d = static_cast<Eigen::Index>(space.dimension());
  MatrixC r = MatrixC::Zero(d, d);
  l.basis.scatter(x, r);
  r = 0.5 * (r + r.adjoint()).eval();
  r /= r.trace();
  return {space, std::move(r)};
}

inline SectorBasis population_sector(const LindbladModel& model) {
  return model.conserves_excitations() ? SectorBasis::charge(model.space(), 0) : SectorBasis::full(model.space());
}

inline DensityMatrix steady_state(const LindbladModel& model, const SteadyStateOptions& opts = {}) {
  const auto l = build_liouvillian(model, population_sector(model), opts.liouvillian);
  SteadyStateSolver solver(opts);
  return steady_state_from(l, model.space(), solver);
}

struct AutoTruncationOptions {
  double tail_threshold = 1e-6;
  int step = 2;
  int max_truncation = 160;
  // Modes eligible for escalation; empty means all.
  std::vector<std::string> modes;
};

struct TruncatedSteadyState {
  LindbladModel model;
  DensityMatrix rho;
};

// Raise per-mode caps by `step` until the top level of every eligible mode
// holds less than `tail_threshold` of the steady-state population.
inline TruncatedSteadyState steady_state_auto(const LindbladModel& model, const AutoTruncationOptions& auto_opts = {},
                                              const SteadyStateOptions& opts = {}) {
  LindbladModel current = model;
  for (;;) {
    DensityMatrix rho = steady_state(current, opts);
    const auto& space = current.space();
    FockSpace next = space;
    bool changed = false;
    for (std::size_t m = 0; m < space.num_modes(); ++m) {
      if (!auto_opts.modes.empty() &&
          std::find(auto_opts.modes.begin(), auto_opts.modes.end(), space.label(m)) == auto_opts.modes.end())
        continue;
      const auto p = rho.marginal(m);
      if (p.back() >= auto_opts.tail_threshold) {
        const int cap = space.truncation(m) + auto_opts.step;
        if (cap > auto_opts.max_truncation)
          throw NumericalError("truncation of mode '" + space.label(m) + "' exceeds " +
                               std::to_string(auto_opts.max_truncation) + " with top-level population " +
                               std::to_string(p.back()));
        next = next.with_truncation(m, cap);
        changed = true;
      }
    }
    if (!changed) return {current, std::move(rho)};
    current = current.with_space(next);
  }
}

// Tr[left . e^{L tau}(pre . rho . post)] for each tau.
inline std::vector<cplx> regression_correlator(const DensityMatrix& rho, const LindbladModel& model,
                                               const Monomial& left, const Monomial& pre, const Monomial& post,
                                               std::span<const double> taus, const EvolveOptions& opts = {}) {
  const auto& space = model.space();
  if (!(rho.space() == space)) throw ValidationError("regression_correlator: state and model spaces differ");
  const SparseC l = left.matrix(space), a = pre.matrix(space), b = post.matrix(space);
  const MatrixC x0 = a * (rho.entries() * b);
  const auto xs = propagate_operator(x0, model, taus, opts);
  std::vector<cplx> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(DensityMatrix(space, x).expectation(l));
  return out;
}

}  // namespace twophoton
