#include <gtest/gtest.h>

#include "latent_probe/subset_distributions.hpp"
#include "support/oracles.hpp"

using namespace latent_probe;

namespace {

Eigen::VectorXd random_phi(int d, Rng& rng, double scale = 1.5) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd phi(d);
  for (int i = 0; i < d; ++i) phi[i] = n(rng);
  return phi;
}

std::vector<double> empirical(int d, int draws, const std::function<NeuronSet()>& draw) {
  std::vector<double> freq(std::size_t{1} << d, 0.0);
  for (int i = 0; i < draws; ++i) {
    std::uint64_t bits = 0;
    const NeuronSet c = draw();
    for (int j : c.indices()) bits |= std::uint64_t{1} << j;
    freq[bits] += 1.0 / draws;
  }
  return freq;
}

}  // namespace

// --- Poisson ---------------------------------------------------------------

TEST(PoissonFamily, UniformCoinsGiveUniformPmf) {
  PoissonFamily fam(Eigen::VectorXd::Zero(3));
  for (std::uint64_t s = 0; s < 8; ++s) EXPECT_NEAR(fam.log_pmf(NeuronSet::from_bits(3, s)), std::log(1.0 / 8), 1e-12);
  PoissonFamily one(Eigen::VectorXd::Zero(1));
  EXPECT_NEAR(one.log_pmf(NeuronSet::full(1)), std::log(0.5), 1e-12);
}

TEST(PoissonFamily, TwoDimPmfMatchesEnumeration) {
  Eigen::VectorXd phi(2);
  phi << std::log(3.0), 0.0;
  PoissonFamily fam(phi);
  const auto pmf = oracle::poisson_pmf(phi);
  EXPECT_NEAR(pmf[1], 3.0 / 8.0, 1e-12);
  EXPECT_NEAR(std::exp(fam.log_pmf(NeuronSet(2, {0}))), 3.0 / 8.0, 1e-12);
  double total = 0.0;
  for (double p : pmf) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(PoissonFamily, NormalizationAndEntropyAgainstEnumeration) {
  Rng rng(11);
  for (int d = 1; d <= 12; ++d) {
    const Eigen::VectorXd phi = random_phi(d, rng);
    PoissonFamily fam(phi);
    const auto pmf = oracle::poisson_pmf(phi);
    double total = 0.0;
    for (std::uint64_t s = 0; s < pmf.size(); ++s) {
      const double p = std::exp(fam.log_pmf(NeuronSet::from_bits(d, s)));
      EXPECT_NEAR(p, pmf[s], 1e-12);
      total += p;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    const double h = oracle::entropy(pmf);
    EXPECT_LE(std::abs(fam.entropy() - h) / h, 1e-9) << "d=" << d;
  }
  PoissonFamily two(Eigen::VectorXd::Zero(2));
  EXPECT_NEAR(two.entropy(), 2.0 * std::log(2.0), 1e-12);
}

TEST(PoissonFamily, EntropyGradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd phi = random_phi(6, rng);
    const auto fd = oracle::finite_difference([](const Eigen::VectorXd& p) { return PoissonFamily(p).entropy(); }, phi);
    EXPECT_LT(oracle::relative_error(PoissonFamily(phi).entropy_gradient(), fd), 1e-5);
  }
}

TEST(PoissonFamily, SamplingMeanSizeAndFrequencies) {
  PoissonFamily fair(Eigen::VectorXd::Zero(10));
  Rng rng(1);
  double mean = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) mean += fair.sample(rng).size();
  mean /= n;
  EXPECT_NEAR(mean, 5.0, 0.1);
  EXPECT_DOUBLE_EQ(fair.expected_size(), 5.0);

  PoissonFamily never(Eigen::VectorXd::Constant(5, -40.0));
  for (int i = 0; i < 100; ++i) EXPECT_TRUE(never.sample(rng).empty());

  const Eigen::VectorXd phi = random_phi(8, rng);
  PoissonFamily fam(phi);
  const auto freq = empirical(8, 200000, [&] { return fam.sample(rng); });
  EXPECT_LT(oracle::total_variation(freq, oracle::poisson_pmf(phi)), 0.02);
}

TEST(PoissonFamily, ExpectedSizeLimitsAndMonteCarlo) {
  Eigen::VectorXd phi = Eigen::VectorXd::Constant(6, -40.0);
  phi[2] = 40.0;
  EXPECT_NEAR(PoissonFamily(phi).expected_size(), 1.0, 1e-12);

  Rng rng(3);
  PoissonFamily fam(random_phi(8, rng));
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double k = fam.sample(rng).size();
    s += k;
    s2 += k * k;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - fam.expected_size()), 3.0 * se);
}

TEST(PoissonFamily, ScoreFunction) {
  PoissonFamily fam(Eigen::VectorXd::Zero(2));
  const Eigen::VectorXd s = fam.score(NeuronSet(2, {0}));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], -0.5);

  Rng rng(8);
  const Eigen::VectorXd phi = random_phi(7, rng);
  PoissonFamily f(phi);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(7);
  for (std::uint64_t b = 0; b < 128; ++b) {
    const NeuronSet c = NeuronSet::from_bits(7, b);
    mean += std::exp(f.log_pmf(c)) * f.score(c);
    const auto fd = oracle::finite_difference([&](const Eigen::VectorXd& p) { return PoissonFamily(p).log_pmf(c); }, phi);
    EXPECT_LT(oracle::relative_error(f.score(c), fd, 1.0), 1e-5);
  }
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-9);
}

// --- Conditional Poisson -----------------------------------------------------

TEST(ConditionalPoisson, NormalizerSmallCases) {
  Eigen::VectorXd phi(3);
  phi << 0.0, std::log(2.0), std::log(3.0);
  ConditionalPoissonFamily fam(phi);
  EXPECT_NEAR(fam.log_normalizer(2), std::log(11.0), 1e-12);
  EXPECT_NEAR(fam.log_normalizer(2), std::log(oracle::cp_normalizer(phi, 2)), 1e-12);
  EXPECT_DOUBLE_EQ(fam.log_normalizer(0), 0.0);
  EXPECT_THROW(fam.log_normalizer(4), PreconditionError);

  ConditionalPoissonFamily ones(Eigen::VectorXd::Zero(9));
  for (int k = 0; k <= 9; ++k) EXPECT_NEAR(ones.log_normalizer(k), std::log(oracle::binomial(9, k)), 1e-12);
}

TEST(ConditionalPoisson, NormalizerMatchesEnumerationForAllK) {
  Rng rng(21);
  for (int d = 1; d <= 12; ++d) {
    const Eigen::VectorXd phi = random_phi(d, rng);
    ConditionalPoissonFamily fam(phi);
    for (int k = 0; k <= d; ++k) {
      const double ref = std::log(oracle::cp_normalizer(phi, k));
      EXPECT_LE(std::abs(fam.log_normalizer(k) - ref), 1e-9 * std::max(1.0, std::abs(ref))) << d << "," << k;
    }
  }
}

TEST(ConditionalPoisson, PmfExamples) {
  Eigen::VectorXd phi(3);
  phi << 0.0, std::log(2.0), std::log(3.0);
  ConditionalPoissonFamily fam(phi);
  EXPECT_NEAR(fam.log_pmf(NeuronSet(3, {0, 1})), std::log((1.0 / 3.0) * (2.0 / 11.0)), 1e-12);
  EXPECT_EQ(fam.log_pmf(NeuronSet::empty(3)), kNegInf);

  const int d = 6;
  ConditionalPoissonFamily eq(Eigen::VectorXd::Constant(d, 0.7));
  for (std::uint64_t b = 1; b < 64; ++b) {
    const NeuronSet c = NeuronSet::from_bits(d, b);
    EXPECT_NEAR(std::exp(eq.log_pmf(c)), (1.0 / d) / oracle::binomial(d, c.size()), 1e-12);
  }
}

TEST(ConditionalPoisson, NormalizationAndEntropyAgainstEnumeration) {
  Rng rng(4);
  for (int d = 1; d <= 12; ++d) {
    const Eigen::VectorXd phi = random_phi(d, rng);
    ConditionalPoissonFamily fam(phi);
    const auto pmf = oracle::cp_pmf(phi, oracle::uniform_sizes(d, 1, d));
    double total = 0.0;
    for (std::uint64_t s = 0; s < pmf.size(); ++s) {
      const double lp = fam.log_pmf(NeuronSet::from_bits(d, s));
      const double p = lp == kNegInf ? 0.0 : std::exp(lp);
      EXPECT_NEAR(p, pmf[s], 1e-12);
      total += p;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    const double h = oracle::entropy(pmf);
    if (h > 0) EXPECT_LE(std::abs(fam.entropy() - h) / h, 1e-9) << "d=" << d;
  }
}

TEST(ConditionalPoisson, EqualWeightEntropyClosedForm) {
  const int d = 10;
  ConditionalPoissonFamily fam(Eigen::VectorXd::Constant(d, -0.3));
  double expected = std::log(d);
  for (int k = 1; k <= d; ++k) expected += std::log(oracle::binomial(d, k)) / d;
  EXPECT_NEAR(fam.entropy(), expected, 1e-10);
}

TEST(ConditionalPoisson, EntropyGradientMatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd phi = random_phi(6, rng);
    const auto fd = oracle::finite_difference([](const Eigen::VectorXd& p) { return ConditionalPoissonFamily(p).entropy(); }, phi);
    EXPECT_LT(oracle::relative_error(ConditionalPoissonFamily(phi).entropy_gradient(), fd), 1e-5);
  }
  // Restricted size support exercises lattice cells with zero adjoint.
  const Eigen::VectorXd phi = random_phi(7, rng);
  auto h = [](const Eigen::VectorXd& p) { return ConditionalPoissonFamily(p, 2, std::vector<double>{0.2, 0.5, 0.3}).entropy(); };
  EXPECT_LT(oracle::relative_error(ConditionalPoissonFamily(phi, 2, std::vector<double>{0.2, 0.5, 0.3}).entropy_gradient(),
                                   oracle::finite_difference(h, phi)),
            1e-5);
}

TEST(ConditionalPoisson, FixedSizeSampling) {
  Rng rng(17);
  const Eigen::VectorXd phi = random_phi(8, rng);
  ConditionalPoissonFamily fam(phi, 3, 3);
  const auto freq = empirical(8, 200000, [&] { return fam.sample(rng); });
  EXPECT_LT(oracle::total_variation(freq, oracle::cp_pmf(phi, oracle::uniform_sizes(8, 3, 3))), 0.02);

  ConditionalPoissonFamily eq(Eigen::VectorXd::Zero(5));
  for (int i = 0; i < 20; ++i) EXPECT_EQ(eq.sample_with_size(5, rng), NeuronSet::full(5));

  // k = 1: index i with probability w_i / sum w.
  const Eigen::VectorXd w = phi.array().exp();
  std::vector<double> counts(8, 0.0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(fam.sample_with_size(1, rng).indices()[0])] += 1.0 / n;
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(counts[static_cast<std::size_t>(i)], w[i] / w.sum(), 0.005);
}

TEST(ConditionalPoisson, InclusionProbabilitiesSumToK) {
  Rng rng(2);
  ConditionalPoissonFamily fam(random_phi(20, rng));
  for (int k = 0; k <= 20; ++k) EXPECT_NEAR(fam.inclusion_probs(k).sum(), k, 1e-9);
}

TEST(ConditionalPoisson, ScoreFunction) {
  Rng rng(13);
  const Eigen::VectorXd phi = random_phi(6, rng);
  ConditionalPoissonFamily fam(phi);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(6);
  for (std::uint64_t b = 1; b < 64; ++b) {
    const NeuronSet c = NeuronSet::from_bits(6, b);
    mean += std::exp(fam.log_pmf(c)) * fam.score(c);
    const auto fd = oracle::finite_difference([&](const Eigen::VectorXd& p) { return ConditionalPoissonFamily(p).log_pmf(c); }, phi);
    EXPECT_LT(oracle::relative_error(fam.score(c), fd, 1.0), 1e-5);
  }
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ConditionalPoisson, FiniteUnderExtremeWeights) {
  Rng rng(1);
  Eigen::VectorXd phi(300);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 300; ++i) phi[i] = u(rng);
  ConditionalPoissonFamily fam(phi);
  EXPECT_TRUE(std::isfinite(fam.entropy()));
  EXPECT_TRUE(fam.entropy_gradient().allFinite());
  for (int k : {1, 50, 150, 300}) {
    EXPECT_TRUE(std::isfinite(fam.log_normalizer(k)));
    EXPECT_TRUE(fam.inclusion_probs(k).allFinite());
  }
  const NeuronSet c = fam.sample(rng);
  EXPECT_TRUE(std::isfinite(fam.log_pmf(c)));
  EXPECT_TRUE(fam.score(c).allFinite());
  PoissonFamily pf(phi);
  EXPECT_TRUE(std::isfinite(pf.entropy()));
  EXPECT_TRUE(std::isfinite(pf.log_pmf(c)));
}

TEST(FixedFull, DegenerateFamily) {
  FixedFullFamily f(4);
  Rng rng(0);
  EXPECT_EQ(f.sample(rng), NeuronSet::full(4));
  EXPECT_EQ(f.entropy(), 0.0);
  EXPECT_TRUE(f.score(NeuronSet::full(4)).isZero());
}
