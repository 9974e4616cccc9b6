#pragma once

// Discriminative probes p(pi | C, h) evaluated on zero-masked inputs.
//
// A probe is a stack of affine layers with ReLU between them; the linear
// probe is the one-layer case. Gradients are computed by hand-written
// backpropagation and summed over a batch.

#include <concepts>
#include <string>
#include <vector>

#include "latent_probe/common.hpp"

namespace latent_probe {

enum class ProbeKind { linear, mlp1, mlp2, gaussian };

inline std::string to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::linear: return "linear";
    case ProbeKind::mlp1: return "mlp1";
    case ProbeKind::mlp2: return "mlp2";
    case ProbeKind::gaussian: return "gaussian";
  }
  return "?";
}

inline ProbeKind parse_probe_kind(const std::string& s) {
  if (s == "linear") return ProbeKind::linear;
  if (s == "mlp1" || s == "mlp-1") return ProbeKind::mlp1;
  if (s == "mlp2" || s == "mlp-2") return ProbeKind::mlp2;
  if (s == "gaussian") return ProbeKind::gaussian;
  throw PreconditionError("unknown probe kind '" + s + "'");
}

/// Anything that maps (subset, batch of representations) to per-row
/// normalized log-probabilities over the property values.
template <class P>
concept Probe = requires(const P& p, const NeuronSet& c, const Eigen::MatrixXd& x) {
  { p.log_posterior(c, x) } -> std::convertible_to<Eigen::MatrixXd>;
  { p.num_classes() } -> std::convertible_to<int>;
  { p.dim() } -> std::convertible_to<int>;
};

/// Copy of h with coordinates outside C set to exactly zero.
inline Eigen::VectorXd mask_vector(const Eigen::VectorXd& h, const NeuronSet& c) {
  require(h.size() == c.dim(), "mask_vector: dimension mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(h.size());
  for (int i : c.indices()) out[i] = h[i];
  return out;
}

/// Row-wise zero-masking of a batch.
inline Eigen::MatrixXd mask_rows(const Eigen::MatrixXd& x, const NeuronSet& c) {
  require(x.cols() == c.dim(), "mask_rows: dimension mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (int i : c.indices()) out.col(i) = x.col(i);
  return out;
}

inline Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.rows(); ++n) {
    const double m = logits.row(n).maxCoeff();
    const double lse = m + std::log((logits.row(n).array() - m).exp().sum());
    out.row(n) = logits.row(n).array() - lse;
  }
  return out;
}

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

class DiscriminativeProbe {
 public:
  DiscriminativeProbe() = default;
  DiscriminativeProbe(ProbeKind kind, std::vector<Layer> layers) : kind_(kind), layers_(std::move(layers)) { check_shapes(); }

  /// Linear probes start at zero; MLPs get uniform fan-in scaled weights.
  static DiscriminativeProbe make(ProbeKind kind, int dim, int num_classes, int hidden = 256, std::uint64_t seed = 0) {
    require(kind != ProbeKind::gaussian, "DiscriminativeProbe::make: gaussian is not discriminative");
    require(dim > 0 && num_classes >= 2 && hidden > 0, "DiscriminativeProbe::make: bad shape");
    const int n_hidden = kind == ProbeKind::linear ? 0 : kind == ProbeKind::mlp1 ? 1 : 2;
    std::vector<int> widths{dim};
    for (int i = 0; i < n_hidden; ++i) widths.push_back(hidden);
    widths.push_back(num_classes);
    Rng rng(seed);
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Layer layer{Eigen::MatrixXd::Zero(widths[l + 1], widths[l]), Eigen::VectorXd::Zero(widths[l + 1])};
      if (n_hidden > 0) {
        const double bound = std::sqrt(6.0 / widths[l]);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = u(rng) * (l + 2 == widths.size() ? 0.1 : 1.0);
      }
      layers.push_back(std::move(layer));
    }
    return DiscriminativeProbe(kind, std::move(layers));
  }

  ProbeKind kind() const { return kind_; }
  int dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  int num_classes() const { return static_cast<int>(layers_.back().weight.rows()); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  /// Same shapes, all zeros; used as gradient and optimizer-moment storage.
  DiscriminativeProbe zeros_like() const {
    DiscriminativeProbe z = *this;
    for (auto& l : z.layers_) {
      l.weight.setZero();
      l.bias.setZero();
    }
    return z;
  }

  /// Applies f(param_tensor, other_tensor) over matching tensors.
  template <class F>
  void zip(const DiscriminativeProbe& other, F&& f) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      f(layers_[l].weight, other.layers_[l].weight);
      f(layers_[l].bias, other.layers_[l].bias);
    }
  }

  template <class F>
  void for_each(F&& f) const {
    for (const auto& l : layers_) {
      f(l.weight);
      f(l.bias);
    }
  }

  Eigen::Index num_params() const {
    Eigen::Index n = 0;
    for_each([&](const auto& t) { n += t.size(); });
    return n;
  }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd v(num_params());
    Eigen::Index at = 0;
    for_each([&](const auto& t) {
      v.segment(at, t.size()) = Eigen::Map<const Eigen::VectorXd>(t.data(), t.size());
      at += t.size();
    });
    return v;
  }

  void unflatten(const Eigen::VectorXd& v) {
    require(v.size() == num_params(), "unflatten: size mismatch");
    Eigen::Index at = 0;
    for (auto& l : layers_) {
      Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) = v.segment(at, l.weight.size());
      at += l.weight.size();
      l.bias = v.segment(at, l.bias.size());
      at += l.bias.size();
    }
  }

  /// N x |Pi| normalized log-probabilities on zero-masked rows of x.
  Eigen::MatrixXd log_posterior(const NeuronSet& c, const Eigen::MatrixXd& x) const {
    return log_softmax_rows(forward(mask_rows(x, c)).back());
  }

  Eigen::VectorXd log_prob(const NeuronSet& c, const Eigen::VectorXd& h) const {
    return log_posterior(c, h.transpose()).row(0).transpose();
  }

  /// First-layer pre-activation b1 + mask(x) W1^T. Everything downstream is
  /// a function of it, so adding dim j to C just adds x_j W1[:, j]^T.
  Eigen::MatrixXd first_preactivation(const NeuronSet& c, const Eigen::MatrixXd& x) const {
    require(x.cols() == c.dim() && c.dim() == dim(), "first_preactivation: dimension mismatch");
    Eigen::MatrixXd z(x.rows(), layers_.front().weight.rows());
    z.rowwise() = layers_.front().bias.transpose();
    for (int j : c.indices()) z.noalias() += x.col(j) * layers_.front().weight.col(j).transpose();
    return z;
  }

  Eigen::MatrixXd log_posterior_from_preactivation(Eigen::MatrixXd z) const {
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      Eigen::MatrixXd next = z.cwiseMax(0.0) * layers_[l].weight.transpose();
      next.rowwise() += layers_[l].bias.transpose();
      z = std::move(next);
    }
    return log_softmax_rows(z);
  }

  /// Adds scale * sum_n grad log p(y_n | C, x_n) into `grad` and returns the
  /// per-row log p(y_n | C, x_n).
  Eigen::VectorXd accumulate_gradient(const NeuronSet& c, const Eigen::MatrixXd& x, std::span<const int> labels, double scale,
                                      DiscriminativeProbe& grad) const {
    require(static_cast<Eigen::Index>(labels.size()) == x.rows(), "accumulate_gradient: label count mismatch");
    const auto acts = forward(mask_rows(x, c));
    const Eigen::MatrixXd logp = log_softmax_rows(acts.back());
    Eigen::VectorXd out(x.rows());
    Eigen::MatrixXd delta = -logp.array().exp();  // d/dlogits of log p(y) = onehot - softmax
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      const int y = labels[static_cast<std::size_t>(n)];
      out[n] = logp(n, y);
      delta(n, y) += 1.0;
    }
    delta *= scale;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Eigen::MatrixXd& input = acts[l];
      grad.layers_[l].weight.noalias() += delta.transpose() * input;
      grad.layers_[l].bias += delta.colwise().sum().transpose();
      if (l == 0) break;
      Eigen::MatrixXd back = delta * layers_[l].weight;
      delta = back.array() * (acts[l].array() > 0.0).cast<double>();
    }
    return out;
  }

  /// Gradient of log p(label | C, h) with the same shapes as the probe.
  DiscriminativeProbe grad_log_prob(const NeuronSet& c, const Eigen::VectorXd& h, int label) const {
    DiscriminativeProbe g = zeros_like();
    const int y[1] = {label};
    accumulate_gradient(c, h.transpose(), y, 1.0, g);
    return g;
  }

 private:
  void check_shapes() const {
    require(!layers_.empty(), "DiscriminativeProbe: no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      require(layers_[l].bias.size() == layers_[l].weight.rows(), "DiscriminativeProbe: bias/weight mismatch");
      if (l > 0) require(layers_[l].weight.cols() == layers_[l - 1].weight.rows(), "DiscriminativeProbe: layer shapes do not chain");
    }
  }

  /// Activations: [input, relu(z1), ..., logits].
  std::vector<Eigen::MatrixXd> forward(Eigen::MatrixXd input) const {
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(layers_.size() + 1);
    acts.push_back(std::move(input));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd z = acts.back() * layers_[l].weight.transpose();
      z.rowwise() += layers_[l].bias.transpose();
      if (l + 1 < layers_.size()) z = z.cwiseMax(0.0);
      acts.push_back(std::move(z));
    }
    return acts;
  }

  ProbeKind kind_ = ProbeKind::linear;
  std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// ElasticNet

struct ElasticNet {
  double l1 = 1e-5;
  double l2 = 1e-5;
  bool include_bias = true;

  double penalty(const DiscriminativeProbe& p) const {
    double v = 0.0;
    for (const auto& layer : p.layers()) {
      v += l1 * layer.weight.cwiseAbs().sum() + l2 * layer.weight.squaredNorm();
      if (include_bias) v += l1 * layer.bias.cwiseAbs().sum() + l2 * layer.bias.squaredNorm();
    }
    return v;
  }

  /// Adds scale * subgradient into `grad`; sign(0) = 0.
  void accumulate_subgradient(const DiscriminativeProbe& p, double scale, DiscriminativeProbe& grad) const {
    auto sub = [&](const auto& t) { return (l1 * t.array().sign() + 2.0 * l2 * t.array()).matrix(); };
    for (std::size_t l = 0; l < p.layers().size(); ++l) {
      grad.layers()[l].weight += scale * sub(p.layers()[l].weight);
      if (include_bias) grad.layers()[l].bias += scale * sub(p.layers()[l].bias);
    }
  }
};

}  // namespace latent_probe
