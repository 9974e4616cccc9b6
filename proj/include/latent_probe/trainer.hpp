#pragma once

// Stochastic variational training of a shared-parameter probe together with
// a variational distribution over subsets.
//
// Objective per datum n (uniform prior p(C) = 2^-d):
//   E_q[ log p_theta(pi_n | C, h_n) + log p(C) ] + H(q_phi)
// theta-gradients use M Monte Carlo subsets; phi-gradients use the score
// function estimator plus the exact entropy gradient. Updates use Adam.

#include <chrono>
#include <functional>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latent_probe/dataset.hpp"
#include "latent_probe/probes.hpp"
#include "latent_probe/subset_distributions.hpp"

namespace latent_probe {

struct TrainConfig {
  int mc_samples = 5;
  double entropy_scale = 0.01;
  double l1 = 1e-5;
  double l2 = 1e-5;
  bool penalize_bias = true;
  double learning_rate = 1e-3;
  int max_epochs = 2000;
  int patience = 50;
  double holdout_fraction = 0.1;
  int batch_size = 256;
  std::uint64_t seed = 0;
  FamilyKind family = FamilyKind::cond_poisson;
  ProbeKind probe = ProbeKind::linear;
  int hidden_width = 256;
  bool loo_baseline = false;

  void check() const {
    require(mc_samples >= 1, "TrainConfig: mc_samples must be >= 1");
    require(entropy_scale >= 0.0, "TrainConfig: entropy_scale must be >= 0");
    require(l1 >= 0.0 && l2 >= 0.0, "TrainConfig: penalties must be >= 0");
    require(learning_rate >= 0.0, "TrainConfig: learning rate must be >= 0");
    require(max_epochs >= 1, "TrainConfig: max_epochs must be >= 1");
    require(patience >= 1, "TrainConfig: patience must be >= 1");
    require(holdout_fraction > 0.0 && holdout_fraction < 1.0, "TrainConfig: holdout_fraction must be in (0, 1)");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(probe != ProbeKind::gaussian, "TrainConfig: the gaussian probe is fitted, not trained");
    require(!loo_baseline || mc_samples >= 2, "TrainConfig: the leave-one-out baseline needs mc_samples >= 2");
  }

  ElasticNet penalty() const { return {l1, l2, penalize_bias}; }
};

inline double uniform_log_prior(int dim) { return -dim * std::numbers::ln2; }

inline double family_entropy(const SubsetFamily& q) {
  return std::visit([](const auto& f) { return f.entropy(); }, q);
}

inline double family_expected_size(const SubsetFamily& q) {
  return std::visit([](const auto& f) { return f.expected_size(); }, q);
}

inline NeuronSet family_sample(const SubsetFamily& q, Rng& rng) {
  return std::visit([&](const auto& f) { return f.sample(rng); }, q);
}

// ---------------------------------------------------------------------------

struct AdamMoments {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Parameters, optimizer accumulators and early-stopping bookkeeping.
struct TrainState {
  DiscriminativeProbe theta;
  Eigen::VectorXd phi;
  DiscriminativeProbe theta_m, theta_v;
  Eigen::VectorXd phi_m, phi_v;
  long step = 0;
  int epoch = 0;
  double best_objective = kNegInf;
  int epochs_since_improvement = 0;

  static TrainState init(DiscriminativeProbe theta, Eigen::VectorXd phi) {
    TrainState s;
    s.theta_m = theta.zeros_like();
    s.theta_v = theta.zeros_like();
    s.phi_m = Eigen::VectorXd::Zero(phi.size());
    s.phi_v = Eigen::VectorXd::Zero(phi.size());
    s.theta = std::move(theta);
    s.phi = std::move(phi);
    return s;
  }
};

namespace detail {

/// Gradient-ascent Adam update of one tensor.
template <class Tensor>
void adam_ascend(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, double lr, long step, const AdamMoments& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  if (lr == 0.0) return;
  param.array() += lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
}

inline bool all_finite(const DiscriminativeProbe& p) {
  bool ok = true;
  p.for_each([&](const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// (1/M) sum_m sum_n [log p(pi_n | C_m, h_n) + log p(C_m)] + N H(q).
inline double elbo_estimate(const DiscriminativeProbe& theta, const SubsetFamily& q, const Split& batch, int mc_samples, Rng& rng) {
  require(mc_samples >= 1, "elbo_estimate: mc_samples must be >= 1");
  const int d = theta.dim();
  double acc = 0.0;
  for (int m = 0; m < mc_samples; ++m) {
    const NeuronSet c = family_sample(q, rng);
    const Eigen::MatrixXd lp = theta.log_posterior(c, batch.features);
    for (int n = 0; n < batch.size(); ++n) acc += lp(n, batch.labels[static_cast<std::size_t>(n)]);
  }
  return acc / mc_samples + batch.size() * (uniform_log_prior(d) + family_entropy(q));
}

/// sum_n log sum_C p(pi_n | C, h_n) 2^-d by exhaustive enumeration.
inline double exact_marginal_loglik(const DiscriminativeProbe& theta, const Split& data) {
  const int d = theta.dim();
  require(d <= 20, "exact_marginal_loglik: dimension too large to enumerate");
  Eigen::MatrixXd terms(data.size(), std::size_t{1} << d);
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << d); ++bits) {
    const Eigen::MatrixXd lp = theta.log_posterior(NeuronSet::from_bits(d, bits), data.features);
    for (int n = 0; n < data.size(); ++n) terms(n, static_cast<Eigen::Index>(bits)) = lp(n, data.labels[static_cast<std::size_t>(n)]);
  }
  double total = 0.0;
  for (int n = 0; n < data.size(); ++n) {
    const Eigen::VectorXd row = terms.row(n).transpose();
    total += log_sum_exp(std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))) + uniform_log_prior(d);
  }
  return total;
}

/// Stochastic gradients of the batch objective (no optimizer step).
struct ObjectiveGradient {
  DiscriminativeProbe theta;
  Eigen::VectorXd phi;
  double elbo = 0.0;  // the M-sample ELBO estimate for the batch, unscaled entropy
};

/// theta: (1/M) sum_m sum_n grad log p - ElasticNet subgradient.
/// phi:   (1/M) sum_m (f_m - b_m) score(C_m) + entropy_scale * N * grad H,
///        f_m = sum_n log p(pi_n | C_m, h_n). The constant log-prior is
///        omitted from f_m; b_m is 0 or the leave-one-out mean of f.
inline ObjectiveGradient objective_gradient(const DiscriminativeProbe& theta, const Eigen::VectorXd& phi, const Split& batch, const TrainConfig& cfg,
                                            Rng& rng) {
  const int d = theta.dim();
  ObjectiveGradient out{theta.zeros_like(), Eigen::VectorXd::Zero(d), 0.0};
  const double n = batch.size();
  const std::span<const int> labels(batch.labels);

  if (cfg.family == FamilyKind::fixed_full) {
    // Point mass: every Monte Carlo sample is the full set.
    const Eigen::VectorXd lp = theta.accumulate_gradient(NeuronSet::full(d), batch.features, labels, 1.0, out.theta);
    out.elbo = lp.sum() + n * uniform_log_prior(d);
  } else {
    const SubsetFamily q = make_family(cfg.family, phi);
    const int m_total = cfg.mc_samples;
    std::vector<double> f(static_cast<std::size_t>(m_total));
    std::vector<Eigen::VectorXd> scores;
    scores.reserve(static_cast<std::size_t>(m_total));
    for (int m = 0; m < m_total; ++m) {
      const NeuronSet c = family_sample(q, rng);
      const Eigen::VectorXd lp = theta.accumulate_gradient(c, batch.features, labels, 1.0 / m_total, out.theta);
      f[static_cast<std::size_t>(m)] = lp.sum();
      scores.push_back(std::visit([&](const auto& fam) { return fam.score(c); }, q));
    }
    double f_sum = 0.0;
    for (double v : f) f_sum += v;
    for (int m = 0; m < m_total; ++m) {
      const double fm = f[static_cast<std::size_t>(m)];
      const double baseline = cfg.loo_baseline ? (f_sum - fm) / (m_total - 1) : 0.0;
      out.phi += ((fm - baseline) / m_total) * scores[static_cast<std::size_t>(m)];
    }
    const Eigen::VectorXd grad_h = std::visit([](const auto& fam) { return fam.entropy_gradient(); }, q);
    out.phi += cfg.entropy_scale * n * grad_h;
    out.elbo = f_sum / m_total + n * (uniform_log_prior(d) + family_entropy(q));
  }
  cfg.penalty().accumulate_subgradient(theta, -1.0, out.theta);

  if (!detail::all_finite(out.theta) || !out.phi.allFinite()) throw NumericError("non-finite gradient at optimizer step");
  return out;
}

/// One Adam ascent step on a minibatch. Returns the batch ELBO estimate.
inline double grad_step(TrainState& state, const Split& batch, const TrainConfig& cfg, Rng& rng, const AdamMoments& adam = {}) {
  ObjectiveGradient g = objective_gradient(state.theta, state.phi, batch, cfg, rng);
  ++state.step;
  for (std::size_t l = 0; l < state.theta.layers().size(); ++l) {
    auto& p = state.theta.layers()[l];
    const auto& gl = g.theta.layers()[l];
    auto& m = state.theta_m.layers()[l];
    auto& v = state.theta_v.layers()[l];
    detail::adam_ascend(p.weight, gl.weight, m.weight, v.weight, cfg.learning_rate, state.step, adam);
    detail::adam_ascend(p.bias, gl.bias, m.bias, v.bias, cfg.learning_rate, state.step, adam);
  }
  if (is_trainable(cfg.family)) detail::adam_ascend(state.phi, g.phi, state.phi_m, state.phi_v, cfg.learning_rate, state.step, adam);
  return g.elbo;
}

// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_elbo = 0.0;         // per datum, averaged over the epoch's batches
  double holdout_objective = 0.0;  // per datum, entropy scaled as in training
  double expected_size = 0.0;
  double wall_time = 0.0;  // seconds since training start
};

struct TrainResult {
  DiscriminativeProbe theta;
  Eigen::VectorXd phi;
  FamilyKind family = FamilyKind::cond_poisson;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_objective = kNegInf;
};

/// Per-datum holdout objective: (1/M) sum_m mean_n log p(pi_n | C_m, h_n)
/// + log p(C) + entropy_scale * H(q), with subsets drawn from `eval_seed`.
inline double holdout_objective(const DiscriminativeProbe& theta, const Eigen::VectorXd& phi, const Split& holdout, const TrainConfig& cfg,
                                std::uint64_t eval_seed) {
  const int d = theta.dim();
  if (cfg.family == FamilyKind::fixed_full) {
    const Eigen::MatrixXd lp = theta.log_posterior(NeuronSet::full(d), holdout.features);
    double s = 0.0;
    for (int n = 0; n < holdout.size(); ++n) s += lp(n, holdout.labels[static_cast<std::size_t>(n)]);
    return s / holdout.size() + uniform_log_prior(d);
  }
  const SubsetFamily q = make_family(cfg.family, phi);
  Rng rng(eval_seed);
  double s = 0.0;
  for (int m = 0; m < cfg.mc_samples; ++m) {
    const Eigen::MatrixXd lp = theta.log_posterior(family_sample(q, rng), holdout.features);
    for (int n = 0; n < holdout.size(); ++n) s += lp(n, holdout.labels[static_cast<std::size_t>(n)]);
  }
  return s / (static_cast<double>(cfg.mc_samples) * holdout.size()) + uniform_log_prior(d) + cfg.entropy_scale * family_entropy(q);
}

inline constexpr std::uint64_t kEvalSeedSalt = 0xE7A1'5EED'0000'0001ULL;
inline constexpr std::uint64_t kInitSeedSalt = 0x1417'5EED'0000'0002ULL;

/// Epochs of shuffled minibatches with early stopping on a holdout carved
/// from `train`. Returns the best checkpoint. Deterministic given cfg.seed.
inline TrainResult train(const Split& train, int dim, int num_classes, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.check();
  require(train.size() >= 2, "train: need at least two training records");
  const auto [fit, holdout] = split_holdout(train, cfg.holdout_fraction, cfg.seed);
  TrainState state = TrainState::init(DiscriminativeProbe::make(cfg.probe, dim, num_classes, cfg.hidden_width, cfg.seed ^ kInitSeedSalt),
                                      Eigen::VectorXd::Zero(dim));
  Rng rng(cfg.seed);
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  result.family = cfg.family;
  result.theta = state.theta;
  result.phi = state.phi;

  std::vector<int> order(static_cast<std::size_t>(fit.size()));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double elbo_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      const Split batch = fit.rows(std::vector<int>(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi)));
      elbo_sum += grad_step(state, batch, cfg, rng);
    }
    state.epoch = epoch;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_elbo = elbo_sum / fit.size();
    rec.holdout_objective = holdout_objective(state.theta, state.phi, holdout, cfg, cfg.seed ^ kEvalSeedSalt);
    rec.expected_size = family_expected_size(make_family(cfg.family, state.phi));
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.holdout_objective > state.best_objective) {
      state.best_objective = rec.holdout_objective;
      state.epochs_since_improvement = 0;
      result.theta = state.theta;
      result.phi = state.phi;
      result.best_epoch = epoch;
      result.best_objective = rec.holdout_objective;
    } else if (++state.epochs_since_improvement >= cfg.patience) {
      break;
    }
  }
  return result;
}

inline TrainResult train(const ProbingDataset& ds, const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  return train(ds.train, ds.dim, ds.property.num_values(), cfg, on_epoch);
}

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"train_elbo", r.train_elbo}, {"holdout_objective", r.holdout_objective}, {"expected_size", r.expected_size}, {"wall_time", r.wall_time}};
}

inline void write_training_log(std::ostream& os, const std::vector<EpochRecord>& log) {
  for (const auto& r : log) os << to_json(r).dump() << '\n';
}

}  // namespace latent_probe
