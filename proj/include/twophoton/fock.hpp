#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "twophoton/errors.hpp"

namespace twophoton {

using cplx = std::complex<double>;
using MatrixC = Eigen::MatrixXcd;
using VectorC = Eigen::VectorXcd;
using SparseC = Eigen::SparseMatrix<cplx>;

// Tensor product of truncated bosonic modes. Mode 0 is the most significant
// digit of the basis index; each mode keeps occupations 0..truncation.
class FockSpace {
 public:
  FockSpace() = default;

  FockSpace(std::vector<std::string> labels, std::vector<int> truncation)
      : labels_(std::move(labels)), truncation_(std::move(truncation)) {
    if (labels_.size() != truncation_.size())
      throw ValidationError("FockSpace: labels and truncations differ in length");
    if (labels_.empty()) throw ValidationError("FockSpace: at least one mode is required");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      const auto& l = labels_[i];
      if (l.empty() || l == "1" || l.find('*') != std::string::npos)
        throw ValidationError("FockSpace: invalid mode label '" + l + "'");
      if (truncation_[i] < 0)
        throw ValidationError("FockSpace: negative truncation for mode '" + l + "'");
      for (std::size_t j = 0; j < i; ++j)
        if (labels_[j] == l) throw ValidationError("FockSpace: duplicate mode label '" + l + "'");
    }
    strides_.assign(labels_.size(), 1);
    for (std::size_t i = labels_.size() - 1; i-- > 0;)
      strides_[i] = strides_[i + 1] * static_cast<std::size_t>(truncation_[i + 1] + 1);
    dimension_ = strides_[0] * static_cast<std::size_t>(truncation_[0] + 1);
  }

  std::size_t dimension() const { return dimension_; }
  std::size_t num_modes() const { return labels_.size(); }
  const std::string& label(std::size_t mode) const { return labels_.at(mode); }
  const std::vector<std::string>& labels() const { return labels_; }
  int truncation(std::size_t mode) const { return truncation_.at(mode); }
  const std::vector<int>& truncations() const { return truncation_; }

  std::optional<std::size_t> find(std::string_view label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i] == label) return i;
    return std::nullopt;
  }

  std::size_t mode_index(std::string_view label) const {
    if (auto m = find(label)) return *m;
    throw ValidationError("unknown mode '" + std::string(label) + "'");
  }

  int occupation(std::size_t state, std::size_t mode) const {
    return static_cast<int>((state / strides_[mode]) % static_cast<std::size_t>(truncation_[mode] + 1));
  }

  std::vector<int> occupations(std::size_t state) const {
    std::vector<int> occ(num_modes());
    for (std::size_t m = 0; m < num_modes(); ++m) occ[m] = occupation(state, m);
    return occ;
  }

  std::size_t state_index(std::span<const int> occ) const {
    if (occ.size() != num_modes()) throw ValidationError("state_index: wrong number of occupations");
    std::size_t idx = 0;
    for (std::size_t m = 0; m < num_modes(); ++m) {
      if (occ[m] < 0 || occ[m] > truncation_[m])
        throw ValidationError("state_index: occupation outside truncation");
      idx += static_cast<std::size_t>(occ[m]) * strides_[m];
    }
    return idx;
  }

  // Total number of excitations, the U(1) charge of a basis state.
  int total_excitation(std::size_t state) const {
    int q = 0;
    for (std::size_t m = 0; m < num_modes(); ++m) q += occupation(state, m);
    return q;
  }

  int max_total_excitation() const {
    int q = 0;
    for (int t : truncation_) q += t;
    return q;
  }

  FockSpace with_truncation(std::size_t mode, int cap) const {
    auto caps = truncation_;
    caps.at(mode) = cap;
    return FockSpace(labels_, caps);
  }

  FockSpace with_mode(std::string label, int cap) const {
    auto labels = labels_;
    auto caps = truncation_;
    labels.push_back(std::move(label));
    caps.push_back(cap);
    return FockSpace(std::move(labels), std::move(caps));
  }

  // Annihilation operator of one mode on the full space.
  SparseC annihilation(std::size_t mode) const {
    std::vector<Eigen::Triplet<cplx>> trip;
    trip.reserve(dimension_);
    for (std::size_t s = 0; s < dimension_; ++s) {
      const int n = occupation(s, mode);
      if (n > 0) trip.emplace_back(static_cast<int>(s - strides_[mode]), static_cast<int>(s), std::sqrt(double(n)));
    }
    SparseC op(static_cast<Eigen::Index>(dimension_), static_cast<Eigen::Index>(dimension_));
    op.setFromTriplets(trip.begin(), trip.end());
    return op;
  }

  bool operator==(const FockSpace& o) const {
    return labels_ == o.labels_ && truncation_ == o.truncation_;
  }

 private:
  std::vector<std::string> labels_;
  std::vector<int> truncation_;
  std::vector<std::size_t> strides_;
  std::size_t dimension_ = 0;
};

struct Factor {
  std::size_t mode = 0;
  bool dagger = false;
  bool operator==(const Factor&) const = default;
};

// Ordered product of single-mode ladder operators, e.g. "ad*b" = a^dagger b.
// An empty product is the identity.
class Monomial {
 public:
  Monomial() = default;
  explicit Monomial(std::vector<Factor> factors) : factors_(std::move(factors)) {}

  static Monomial identity() { return {}; }
  static Monomial lower(std::size_t mode) { return Monomial({Factor{mode, false}}); }
  static Monomial raise(std::size_t mode) { return Monomial({Factor{mode, true}}); }
  static Monomial number(std::size_t mode) { return Monomial({Factor{mode, true}, Factor{mode, false}}); }

  // Grammar: factors joined by '*'; a mode label is its annihilator, the label
  // followed by 'd' is its creator; "1" is the identity.
  static Monomial parse(std::string_view text, const FockSpace& space) {
    std::vector<Factor> out;
    std::size_t pos = 0;
    bool any = false;
    while (pos <= text.size()) {
      const auto star = text.find('*', pos);
      auto tok = text.substr(pos, star == std::string_view::npos ? std::string_view::npos : star - pos);
      while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.front()))) tok.remove_prefix(1);
      while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.back()))) tok.remove_suffix(1);
      if (tok.empty()) throw ValidationError("monomial '" + std::string(text) + "': empty factor");
      any = true;
      if (tok != "1") {
        if (auto m = space.find(tok)) {
          out.push_back({*m, false});
        } else if (tok.size() > 1 && tok.back() == 'd') {
          auto base = tok.substr(0, tok.size() - 1);
          auto md = space.find(base);
          if (!md) throw ValidationError("monomial '" + std::string(text) + "': unknown mode '" + std::string(base) + "'");
          out.push_back({*md, true});
        } else {
          throw ValidationError("monomial '" + std::string(text) + "': unknown mode '" + std::string(tok) + "'");
        }
      }
      if (star == std::string_view::npos) break;
      pos = star + 1;
    }
    if (!any) throw ValidationError("empty monomial");
    return Monomial(std::move(out));
  }

  const std::vector<Factor>& factors() const { return factors_; }
  bool is_identity() const { return factors_.empty(); }

  int charge() const {
    int q = 0;
    for (const auto& f : factors_) q += f.dagger ? 1 : -1;
    return q;
  }

  Monomial adjoint() const {
    std::vector<Factor> out(factors_.rbegin(), factors_.rend());
    for (auto& f : out) f.dagger = !f.dagger;
    return Monomial(std::move(out));
  }

  Monomial operator*(const Monomial& rhs) const {
    auto out = factors_;
    out.insert(out.end(), rhs.factors_.begin(), rhs.factors_.end());
    return Monomial(std::move(out));
  }

  std::string to_string(const FockSpace& space) const {
    if (factors_.empty()) return "1";
    std::string s;
    for (std::size_t i = 0; i < factors_.size(); ++i) {
      if (i) s += '*';
      s += space.label(factors_[i].mode);
      if (factors_[i].dagger) s += 'd';
    }
    return s;
  }

  void check_space(const FockSpace& space) const {
    for (const auto& f : factors_)
      if (f.mode >= space.num_modes()) throw ValidationError("monomial references a mode outside the space");
  }

  SparseC matrix(const FockSpace& space) const {
    check_space(space);
    const auto d = static_cast<Eigen::Index>(space.dimension());
    SparseC out(d, d);
    out.setIdentity();
    for (const auto& f : factors_) {
      SparseC a = space.annihilation(f.mode);
      if (f.dagger) a = SparseC(a.adjoint());
      out = SparseC(out * a);
    }
    out.prune(cplx(0.0));
    return out;
  }

  bool operator==(const Monomial&) const = default;

 private:
  std::vector<Factor> factors_;
};

}  // namespace twophoton
