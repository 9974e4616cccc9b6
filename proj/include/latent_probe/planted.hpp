#pragma once

// Synthetic datasets with a known set of informative dimensions.

#include <random>
#include <vector>

#include "latent_probe/dataset.hpp"

namespace latent_probe {

struct PlantedSpec {
  int dim = 64;
  std::vector<int> informative_dims;  // 0-based
  int num_classes = 2;
  double separation = 2.0;  // distance between class means along each informative dim
  double noise_scale = 1.0;
  int n_train = 1000;
  int n_dev = 200;
  int n_test = 200;
  std::uint64_t seed = 0;

  // Optional heterogeneity of the informative dims. Empty means all ones /
  // all zeros respectively.
  std::vector<double> informative_scale;   // multiplies separation per informative dim
  std::vector<double> informative_offset;  // class-independent mean per informative dim
  double shared_noise = 0.0;               // weight of a noise factor common to all informative dims

  // Class-independent heavy-tailed nuisance dims: exp(sigma * z) for z ~ N(0, 1).
  std::vector<int> lognormal_dims;
  double lognormal_sigma = 1.5;

  void check() const {
    require(dim > 0, "PlantedSpec: dim must be positive");
    require(num_classes >= 2, "PlantedSpec: need at least two classes");
    require(separation >= 0.0, "PlantedSpec: separation must be non-negative");
    require(noise_scale > 0.0, "PlantedSpec: noise scale must be positive");
    require(n_train >= 0 && n_dev >= 0 && n_test >= 0, "PlantedSpec: negative split size");
    for (int j : informative_dims) require(j >= 0 && j < dim, "PlantedSpec: informative dim out of range");
    for (int j : lognormal_dims) require(j >= 0 && j < dim, "PlantedSpec: nuisance dim out of range");
    require(informative_scale.empty() || informative_scale.size() == informative_dims.size(), "PlantedSpec: scale size mismatch");
    require(informative_offset.empty() || informative_offset.size() == informative_dims.size(), "PlantedSpec: offset size mismatch");
  }

  double scale(std::size_t i) const { return informative_scale.empty() ? 1.0 : informative_scale[i]; }
  double offset(std::size_t i) const { return informative_offset.empty() ? 0.0 : informative_offset[i]; }
};

/// Class-conditional means of the informative dims: row c, column i is the
/// mean of informative_dims[i] under class c. With two classes the sign
/// patterns are exact opposites.
inline Eigen::MatrixXd planted_class_means(const PlantedSpec& spec) {
  spec.check();
  const auto n_inf = static_cast<Eigen::Index>(spec.informative_dims.size());
  Eigen::MatrixXd means(spec.num_classes, n_inf);
  Rng rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index i = 0; i < n_inf; ++i) {
    const double half = 0.5 * spec.separation * spec.scale(static_cast<std::size_t>(i));
    const double base = spec.offset(static_cast<std::size_t>(i));
    const double sign0 = coin(rng) ? 1.0 : -1.0;
    for (int c = 0; c < spec.num_classes; ++c) {
      double s;
      if (spec.num_classes == 2)
        s = c == 0 ? sign0 : -sign0;
      else
        s = coin(rng) ? 1.0 : -1.0;
      means(c, i) = base + s * half;
    }
  }
  return means;
}

inline ProbingDataset synthesize_planted(const PlantedSpec& spec) {
  spec.check();
  const Eigen::MatrixXd means = planted_class_means(spec);
  std::vector<int> role(static_cast<std::size_t>(spec.dim), -1);  // -1 noise, -2 nuisance, else informative slot
  for (std::size_t i = 0; i < spec.informative_dims.size(); ++i) role[static_cast<std::size_t>(spec.informative_dims[i])] = static_cast<int>(i);
  for (int j : spec.lognormal_dims) role[static_cast<std::size_t>(j)] = -2;

  ProbingDataset ds;
  ds.dim = spec.dim;
  ds.property.attribute = "Planted";
  for (int c = 0; c < spec.num_classes; ++c) ds.property.values.push_back("c" + std::to_string(c));

  Rng rng(spec.seed);
  std::uniform_int_distribution<int> label_dist(0, spec.num_classes - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Split& s, int n) {
    s.features.resize(n, spec.dim);
    s.labels.resize(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      const int y = label_dist(rng);
      s.labels[static_cast<std::size_t>(r)] = y;
      const double common = normal(rng);
      for (int j = 0; j < spec.dim; ++j) {
        const int k = role[static_cast<std::size_t>(j)];
        const double z = normal(rng);
        if (k >= 0)
          s.features(r, j) = means(y, k) + spec.noise_scale * (z + spec.shared_noise * common);
        else if (k == -2)
          s.features(r, j) = std::exp(spec.lognormal_sigma * z);
        else
          s.features(r, j) = spec.noise_scale * z;
      }
    }
  };
  fill(ds.train, spec.n_train);
  fill(ds.dev, spec.n_dev);
  fill(ds.test, spec.n_test);
  return ds;
}

}  // namespace latent_probe
