#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace latent_probe {

using Rng = std::mt19937_64;

/// Violated input contract (bad arguments, out-of-range sizes).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent data (files, records, labels).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure during training or evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline void require(bool cond, const std::string& what) {
  if (!cond) throw PreconditionError(what);
}

inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_binomial(int n, int k) {
  if (k < 0 || k > n) return kNegInf;
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// A subset of representation dimensions, stored as strictly increasing
/// 0-based indices into {0, ..., dim-1}.
class NeuronSet {
 public:
  NeuronSet() = default;

  NeuronSet(int dim, std::vector<int> indices) : dim_(dim), idx_(std::move(indices)) {
    require(dim >= 0, "NeuronSet: negative dimension");
    std::sort(idx_.begin(), idx_.end());
    for (std::size_t i = 0; i < idx_.size(); ++i) {
      require(idx_[i] >= 0 && idx_[i] < dim_, "NeuronSet: index out of range");
      require(i == 0 || idx_[i] != idx_[i - 1], "NeuronSet: duplicate index");
    }
  }

  static NeuronSet full(int dim) {
    std::vector<int> all(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) all[static_cast<std::size_t>(i)] = i;
    return NeuronSet(dim, std::move(all));
  }

  static NeuronSet empty(int dim) { return NeuronSet(dim, {}); }

  /// Bit i of `bits` selects dimension i. Only for dim < 64.
  static NeuronSet from_bits(int dim, std::uint64_t bits) {
    std::vector<int> out;
    for (int i = 0; i < dim; ++i)
      if ((bits >> i) & 1u) out.push_back(i);
    return NeuronSet(dim, std::move(out));
  }

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(idx_.size()); }
  bool empty() const { return idx_.empty(); }
  const std::vector<int>& indices() const { return idx_; }

  bool contains(int i) const { return std::binary_search(idx_.begin(), idx_.end(), i); }

  NeuronSet with(int i) const {
    std::vector<int> next = idx_;
    next.push_back(i);
    return NeuronSet(dim_, std::move(next));
  }

  /// 0/1 indicator of length dim.
  Eigen::VectorXd mask() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim_);
    for (int i : idx_) m[i] = 1.0;
    return m;
  }

  friend bool operator==(const NeuronSet&, const NeuronSet&) = default;

 private:
  int dim_ = 0;
  std::vector<int> idx_;
};

}  // namespace latent_probe
