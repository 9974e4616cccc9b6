#pragma once

// Generative baseline: class-conditional Gaussians with a MAP-style shrunk
// covariance. Posteriors for a subset C use the exact marginal on C.

#include <numbers>
#include <vector>

#include "latent_probe/dataset.hpp"
#include "latent_probe/probes.hpp"

namespace latent_probe {

struct GaussianShrinkage {
  double toward_diagonal = 0.1;  // rho
  double jitter = 1e-6;          // relative to mean(diag(S))
};

class GaussianProbe {
 public:
  GaussianProbe() = default;
  GaussianProbe(Eigen::MatrixXd means, std::vector<Eigen::MatrixXd> covariances, Eigen::VectorXd log_priors)
      : means_(std::move(means)), covs_(std::move(covariances)), log_priors_(std::move(log_priors)) {
    require(static_cast<Eigen::Index>(covs_.size()) == means_.rows() && log_priors_.size() == means_.rows(), "GaussianProbe: class count mismatch");
    for (const auto& s : covs_) require(s.rows() == means_.cols() && s.cols() == means_.cols(), "GaussianProbe: covariance shape mismatch");
  }

  /// Empirical means and priors; covariance (1-rho) S + rho diag(S) + eps I.
  static GaussianProbe fit(const Split& train, int num_classes, GaussianShrinkage shrink = {}) {
    require(num_classes >= 2, "GaussianProbe::fit: need at least two classes");
    const Eigen::Index d = train.features.cols();
    std::vector<std::vector<int>> members(static_cast<std::size_t>(num_classes));
    for (int n = 0; n < train.size(); ++n) members[static_cast<std::size_t>(train.labels[static_cast<std::size_t>(n)])].push_back(n);

    Eigen::MatrixXd means(num_classes, d);
    std::vector<Eigen::MatrixXd> covs;
    Eigen::VectorXd log_priors(num_classes);
    for (int c = 0; c < num_classes; ++c) {
      const auto& rows = members[static_cast<std::size_t>(c)];
      if (rows.size() < 2) throw DataError("GaussianProbe::fit: class " + std::to_string(c) + " has fewer than 2 training examples");
      const Split sub = train.rows(rows);
      const Eigen::RowVectorXd mu = sub.features.colwise().mean();
      const Eigen::MatrixXd centered = sub.features.rowwise() - mu;
      const Eigen::MatrixXd s = centered.transpose() * centered / static_cast<double>(rows.size());
      const Eigen::VectorXd diag = s.diagonal();
      double eps = shrink.jitter * diag.mean();
      if (!(eps > 0.0)) eps = shrink.jitter;
      Eigen::MatrixXd cov = (1.0 - shrink.toward_diagonal) * s;
      cov.diagonal() += shrink.toward_diagonal * diag + Eigen::VectorXd::Constant(d, eps);
      means.row(c) = mu;
      covs.push_back(std::move(cov));
      log_priors[c] = std::log(static_cast<double>(rows.size()) / train.size());
    }
    return GaussianProbe(std::move(means), std::move(covs), std::move(log_priors));
  }

  int dim() const { return static_cast<int>(means_.cols()); }
  int num_classes() const { return static_cast<int>(means_.rows()); }
  const Eigen::MatrixXd& means() const { return means_; }
  const std::vector<Eigen::MatrixXd>& covariances() const { return covs_; }
  const Eigen::VectorXd& log_priors() const { return log_priors_; }

  /// Bayes posterior from the Gaussian marginals on coordinates C.
  Eigen::MatrixXd log_posterior(const NeuronSet& c, const Eigen::MatrixXd& x) const {
    require(!c.empty(), "GaussianProbe::log_posterior: subset must be nonempty");
    require(x.cols() == dim() && c.dim() == dim(), "GaussianProbe::log_posterior: dimension mismatch");
    const auto k = static_cast<Eigen::Index>(c.size());
    const auto& idx = c.indices();
    Eigen::MatrixXd xs(x.rows(), k);
    for (Eigen::Index j = 0; j < k; ++j) xs.col(j) = x.col(idx[static_cast<std::size_t>(j)]);

    Eigen::MatrixXd joint(x.rows(), num_classes());
    for (int cls = 0; cls < num_classes(); ++cls) {
      Eigen::MatrixXd sub(k, k);
      Eigen::RowVectorXd mu(k);
      for (Eigen::Index a = 0; a < k; ++a) {
        mu[a] = means_(cls, idx[static_cast<std::size_t>(a)]);
        for (Eigen::Index b = 0; b < k; ++b) sub(a, b) = covs_[static_cast<std::size_t>(cls)](idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
      }
      Eigen::LLT<Eigen::MatrixXd> llt(sub);
      if (llt.info() != Eigen::Success) throw NumericError("GaussianProbe: sub-covariance is not positive definite");
      const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      const Eigen::MatrixXd centered = (xs.rowwise() - mu).transpose();
      const Eigen::MatrixXd white = llt.matrixL().solve(centered);
      const Eigen::VectorXd maha = white.colwise().squaredNorm().transpose();
      joint.col(cls) = (-0.5 * (maha.array() + log_det + static_cast<double>(k) * std::log(2.0 * std::numbers::pi)) + log_priors_[cls]).matrix();
    }
    return log_softmax_rows(joint);
  }

  Eigen::VectorXd log_prob(const NeuronSet& c, const Eigen::VectorXd& h) const { return log_posterior(c, h.transpose()).row(0).transpose(); }

 private:
  Eigen::MatrixXd means_;
  std::vector<Eigen::MatrixXd> covs_;
  Eigen::VectorXd log_priors_;
};

}  // namespace latent_probe
