#pragma once

// Variational families over subsets of representation dimensions.
//
// Both families carry one log-weight phi_d per dimension (w_d = exp(phi_d)).
// PoissonFamily flips an independent coin per dimension. The conditional
// Poisson family first draws a size k from a fixed size distribution and then
// a size-k subset with probability proportional to the product of its
// weights. All arithmetic is in log space.

#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "latent_probe/common.hpp"

namespace latent_probe {

enum class FamilyKind { poisson, cond_poisson, fixed_full };

inline std::string to_string(FamilyKind k) {
  switch (k) {
    case FamilyKind::poisson: return "poisson";
    case FamilyKind::cond_poisson: return "cond-poisson";
    case FamilyKind::fixed_full: return "fixed-full";
  }
  return "?";
}

inline FamilyKind parse_family_kind(const std::string& s) {
  if (s == "poisson") return FamilyKind::poisson;
  if (s == "cond-poisson" || s == "conditional-poisson") return FamilyKind::cond_poisson;
  if (s == "fixed-full") return FamilyKind::fixed_full;
  throw PreconditionError("unknown family kind '" + s + "'");
}

// ---------------------------------------------------------------------------

class PoissonFamily {
 public:
  PoissonFamily() = default;
  explicit PoissonFamily(Eigen::VectorXd phi) : phi_(std::move(phi)) {
    require(phi_.allFinite(), "PoissonFamily: non-finite log-weight");
  }

  int dim() const { return static_cast<int>(phi_.size()); }
  const Eigen::VectorXd& phi() const { return phi_; }

  /// P(d in C) = w_d / (1 + w_d).
  Eigen::VectorXd inclusion_probs() const { return phi_.unaryExpr([](double x) { return sigmoid(x); }); }

  double log_normalizer() const {
    double z = 0.0;
    for (Eigen::Index d = 0; d < phi_.size(); ++d) z += softplus(phi_[d]);
    return z;
  }

  double log_pmf(const NeuronSet& c) const {
    require(c.dim() == dim(), "PoissonFamily::log_pmf: dimension mismatch");
    double lp = -log_normalizer();
    for (int d : c.indices()) lp += phi_[d];
    return lp;
  }

  NeuronSet sample(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> out;
    for (int d = 0; d < dim(); ++d)
      if (u(rng) < sigmoid(phi_[d])) out.push_back(d);
    return NeuronSet(dim(), std::move(out));
  }

  double expected_size() const { return inclusion_probs().sum(); }

  /// log Z - sum_d p_d phi_d.
  double entropy() const {
    double h = log_normalizer();
    for (Eigen::Index d = 0; d < phi_.size(); ++d) h -= sigmoid(phi_[d]) * phi_[d];
    return h;
  }

  /// dH/dphi_d = -p_d (1 - p_d) phi_d.
  Eigen::VectorXd entropy_gradient() const {
    Eigen::VectorXd g(phi_.size());
    for (Eigen::Index d = 0; d < phi_.size(); ++d) {
      const double p = sigmoid(phi_[d]);
      g[d] = -p * (1.0 - p) * phi_[d];
    }
    return g;
  }

  /// grad_phi log q(C) = 1{d in C} - p_d.
  Eigen::VectorXd score(const NeuronSet& c) const { return c.mask() - inclusion_probs(); }

 private:
  Eigen::VectorXd phi_;
};

// ---------------------------------------------------------------------------

/// Conditional Poisson family with a fixed size distribution.
///
/// Construction runs the O(d^2) dynamic programs once:
///   prefix(j, r) = log e_r(w_1..w_j)         (normalizers, sampling)
///   suffix(j, s) = log e_s(w_{j+1}..w_d)     (inclusion probabilities)
///   expect(j, r) = E[sum_{d in C} phi_d]     over size-r subsets of 1..j
/// where e_r is the elementary symmetric polynomial. `expect` is the
/// normalized second component of the expectation semiring (p, p * log p)
/// run on the same lattice as `prefix`.
class ConditionalPoissonFamily {
 public:
  ConditionalPoissonFamily() = default;

  /// Uniform sizes over 1..d.
  explicit ConditionalPoissonFamily(Eigen::VectorXd phi) : ConditionalPoissonFamily(phi, 1, static_cast<int>(phi.size())) {}

  /// Uniform sizes over min_size..max_size.
  ConditionalPoissonFamily(Eigen::VectorXd phi, int min_size, int max_size)
      : ConditionalPoissonFamily(std::move(phi), min_size, std::vector<double>(static_cast<std::size_t>(std::max(0, max_size - min_size + 1)),
                                                                               1.0 / std::max(1, max_size - min_size + 1))) {}

  /// size_probs[i] is the probability of size min_size + i.
  ConditionalPoissonFamily(Eigen::VectorXd phi, int min_size, std::vector<double> size_probs)
      : phi_(std::move(phi)), min_size_(min_size), size_probs_(std::move(size_probs)) {
    require(phi_.allFinite(), "ConditionalPoissonFamily: non-finite log-weight");
    require(!size_probs_.empty(), "ConditionalPoissonFamily: empty size support");
    require(min_size_ >= 1 && max_size() <= dim(), "ConditionalPoissonFamily: size support must lie within 1..d");
    double total = 0.0;
    for (double p : size_probs_) {
      require(p >= 0.0, "ConditionalPoissonFamily: negative size probability");
      total += p;
    }
    require(std::abs(total - 1.0) < 1e-9, "ConditionalPoissonFamily: size probabilities must sum to 1");
    size_cdf_.resize(size_probs_.size());
    std::partial_sum(size_probs_.begin(), size_probs_.end(), size_cdf_.begin());
    run_dynamic_programs();
  }

  int dim() const { return static_cast<int>(phi_.size()); }
  int min_size() const { return min_size_; }
  int max_size() const { return min_size_ + static_cast<int>(size_probs_.size()) - 1; }
  const Eigen::VectorXd& phi() const { return phi_; }
  const std::vector<double>& size_probs() const { return size_probs_; }

  double size_prob(int k) const {
    if (k < min_size_ || k > max_size()) return 0.0;
    return size_probs_[static_cast<std::size_t>(k - min_size_)];
  }

  /// log of sum over |C| = k of prod_{d in C} w_d.
  double log_normalizer(int k) const {
    require(k >= 0 && k <= dim(), "ConditionalPoissonFamily::log_normalizer: k out of range");
    return prefix(dim(), k);
  }

  /// Returns -inf when |C| lies outside the size support.
  double log_pmf(const NeuronSet& c) const {
    require(c.dim() == dim(), "ConditionalPoissonFamily::log_pmf: dimension mismatch");
    const double ps = size_prob(c.size());
    if (ps <= 0.0) return kNegInf;
    double lp = std::log(ps) - prefix(dim(), c.size());
    for (int d : c.indices()) lp += phi_[d];
    return lp;
  }

  /// Exact draw from the size-k conditional by walking the prefix lattice
  /// backwards from dimension d.
  NeuronSet sample_with_size(int k, Rng& rng) const {
    require(k >= 0 && k <= dim(), "ConditionalPoissonFamily::sample_with_size: k out of range");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    int r = k;
    for (int j = dim(); j >= 1 && r > 0; --j) {
      if (r == j) {
        for (int i = j; i >= 1; --i) out.push_back(i - 1);
        break;
      }
      const double p_in = std::exp(phi_[j - 1] + prefix(j - 1, r - 1) - prefix(j, r));
      if (u(rng) < p_in) {
        out.push_back(j - 1);
        --r;
      }
    }
    return NeuronSet(dim(), std::move(out));
  }

  int sample_size(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x = u(rng) * size_cdf_.back();
    const auto it = std::upper_bound(size_cdf_.begin(), size_cdf_.end(), x);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(it - size_cdf_.begin()), size_cdf_.size() - 1);
    return min_size_ + static_cast<int>(i);
  }

  NeuronSet sample(Rng& rng) const { return sample_with_size(sample_size(rng), rng); }

  double expected_size() const {
    double e = 0.0;
    for (std::size_t i = 0; i < size_probs_.size(); ++i) e += size_probs_[i] * (min_size_ + static_cast<int>(i));
    return e;
  }

  /// P(d in C | |C| = k) for every d, via prefix x suffix lattice products.
  Eigen::VectorXd inclusion_probs(int k) const {
    require(k >= 0 && k <= dim(), "ConditionalPoissonFamily::inclusion_probs: k out of range");
    const int n = dim();
    Eigen::VectorXd pi = Eigen::VectorXd::Zero(n);
    if (k == 0) return pi;
    const double log_z = prefix(n, k);
    for (int j = 1; j <= n; ++j) {
      double acc = kNegInf;
      const int r_lo = std::max(0, (k - 1) - (n - j));
      const int r_hi = std::min(j - 1, k - 1);
      for (int r = r_lo; r <= r_hi; ++r) acc = log_add_exp(acc, prefix(j - 1, r) + suffix(j, k - 1 - r));
      pi[j - 1] = std::exp(acc + phi_[j - 1] - log_z);
    }
    return pi;
  }

  /// Entropy of the size-k conditional: log Z_k - E_k[sum_{d in C} phi_d].
  double conditional_entropy(int k) const {
    require(k >= 0 && k <= dim(), "ConditionalPoissonFamily::conditional_entropy: k out of range");
    return prefix(dim(), k) - expect(dim(), k);
  }

  /// H(size) + sum_k P(k) H(C | k).
  double entropy() const {
    double h = 0.0;
    for (int k = min_size_; k <= max_size(); ++k) {
      const double p = size_prob(k);
      if (p > 0.0) h += p * (conditional_entropy(k) - std::log(p));
    }
    return h;
  }

  /// Reverse-mode derivative of entropy() through the prefix/expectation
  /// lattice; O(d^2).
  Eigen::VectorXd entropy_gradient() const {
    const int n = dim();
    std::vector<double> a_bar(lattice_size(), 0.0);  // adjoint of prefix
    std::vector<double> e_bar(lattice_size(), 0.0);  // adjoint of expect
    for (int k = min_size_; k <= max_size(); ++k) {
      a_bar[at(n, k)] += size_prob(k);
      e_bar[at(n, k)] -= size_prob(k);
    }
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    for (int j = n; j >= 1; --j) {
      const double ph = phi_[j - 1];
      for (int r = std::min(j, n); r >= 1; --r) {
        const double ab = a_bar[at(j, r)];
        const double eb = e_bar[at(j, r)];
        if (ab == 0.0 && eb == 0.0) continue;
        if (r == j) {
          a_bar[at(j - 1, r - 1)] += ab;
          e_bar[at(j - 1, r - 1)] += eb;
          g[j - 1] += ab + eb;
          continue;
        }
        // prefix(j,r) = lae(x, y) with x = prefix(j-1,r), y = prefix(j-1,r-1) + phi
        // expect(j,r) = a * expect(j-1,r) + b * (expect(j-1,r-1) + phi)
        const double a = std::exp(prefix(j - 1, r) - prefix(j, r));
        const double b = 1.0 - a;
        const double delta = expect(j - 1, r) - (expect(j - 1, r - 1) + ph);
        const double x_bar = ab * a + eb * delta * a * b;
        const double y_bar = ab * b - eb * delta * a * b;
        a_bar[at(j - 1, r)] += x_bar;
        a_bar[at(j - 1, r - 1)] += y_bar;
        e_bar[at(j - 1, r)] += eb * a;
        e_bar[at(j - 1, r - 1)] += eb * b;
        g[j - 1] += y_bar + eb * b;
      }
    }
    return g;
  }

  /// grad_phi log q(C) = 1{d in C} - P(d in C | |C|).
  Eigen::VectorXd score(const NeuronSet& c) const {
    require(c.dim() == dim(), "ConditionalPoissonFamily::score: dimension mismatch");
    return c.mask() - inclusion_probs(c.size());
  }

 private:
  std::size_t lattice_size() const { return static_cast<std::size_t>(dim() + 1) * static_cast<std::size_t>(dim() + 1); }
  std::size_t at(int j, int r) const { return static_cast<std::size_t>(j) * static_cast<std::size_t>(dim() + 1) + static_cast<std::size_t>(r); }
  double prefix(int j, int r) const { return r > j ? kNegInf : prefix_[at(j, r)]; }
  double suffix(int j, int s) const { return s > dim() - j ? kNegInf : suffix_[at(j, s)]; }
  double expect(int j, int r) const { return expect_[at(j, r)]; }

  void run_dynamic_programs() {
    const int n = dim();
    prefix_.assign(lattice_size(), kNegInf);
    expect_.assign(lattice_size(), 0.0);
    suffix_.assign(lattice_size(), kNegInf);
    prefix_[at(0, 0)] = 0.0;
    for (int j = 1; j <= n; ++j) {
      const double ph = phi_[j - 1];
      prefix_[at(j, 0)] = 0.0;
      for (int r = 1; r <= j; ++r) {
        const double x = prefix(j - 1, r);
        const double y = prefix(j - 1, r - 1) + ph;
        const double z = log_add_exp(x, y);
        prefix_[at(j, r)] = z;
        if (r == j) {
          expect_[at(j, r)] = expect(j - 1, r - 1) + ph;
        } else {
          const double a = std::exp(x - z);
          expect_[at(j, r)] = a * expect(j - 1, r) + (1.0 - a) * (expect(j - 1, r - 1) + ph);
        }
      }
    }
    suffix_[at(n, 0)] = 0.0;
    for (int j = n - 1; j >= 0; --j) {
      const double ph = phi_[j];
      suffix_[at(j, 0)] = 0.0;
      for (int s = 1; s <= n - j; ++s) suffix_[at(j, s)] = log_add_exp(suffix(j + 1, s), suffix(j + 1, s - 1) + ph);
    }
  }

  Eigen::VectorXd phi_;
  int min_size_ = 1;
  std::vector<double> size_probs_;
  std::vector<double> size_cdf_;
  std::vector<double> prefix_;
  std::vector<double> suffix_;
  std::vector<double> expect_;
};

// ---------------------------------------------------------------------------

/// Point mass on the full set; the Linear baseline as a degenerate family.
class FixedFullFamily {
 public:
  FixedFullFamily() = default;
  explicit FixedFullFamily(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  double log_pmf(const NeuronSet& c) const { return c.size() == dim_ ? 0.0 : kNegInf; }
  NeuronSet sample(Rng&) const { return NeuronSet::full(dim_); }
  double expected_size() const { return dim_; }
  double entropy() const { return 0.0; }
  Eigen::VectorXd entropy_gradient() const { return Eigen::VectorXd::Zero(dim_); }
  Eigen::VectorXd score(const NeuronSet&) const { return Eigen::VectorXd::Zero(dim_); }

 private:
  int dim_ = 0;
};

using SubsetFamily = std::variant<PoissonFamily, ConditionalPoissonFamily, FixedFullFamily>;

inline SubsetFamily make_family(FamilyKind kind, const Eigen::VectorXd& phi) {
  switch (kind) {
    case FamilyKind::poisson: return PoissonFamily(phi);
    case FamilyKind::cond_poisson: return ConditionalPoissonFamily(phi);
    case FamilyKind::fixed_full: return FixedFullFamily(static_cast<int>(phi.size()));
  }
  throw PreconditionError("make_family: unknown kind");
}

inline bool is_trainable(FamilyKind kind) { return kind != FamilyKind::fixed_full; }

}  // namespace latent_probe
