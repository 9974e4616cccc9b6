#pragma once

// Information-theoretic probe metrics: H(P), the MI lower bound
// H(P) - avgNLL, its normalized form, accuracy, and the random-subset
// evaluation protocol.

#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <vector>

#include "latent_probe/dataset.hpp"
#include "latent_probe/parallel.hpp"
#include "latent_probe/probes.hpp"
#include "latent_probe/report.hpp"

namespace latent_probe {

struct MetricReport {
  double entropy = 0.0;  // H(P), nats
  double avg_nll = 0.0;  // nats
  double mi = 0.0;       // entropy - avg_nll
  double nmi = 0.0;      // mi / entropy
  double accuracy = 0.0;
  NeuronSet subset;
  long count = 0;
  long correct = 0;
};

/// Plug-in entropy of the empirical label distribution, in nats.
inline double property_entropy(const Split& s) {
  require(s.size() > 0, "property_entropy: empty split");
  std::map<int, long> counts;
  for (int y : s.labels) ++counts[y];
  const double n = static_cast<double>(s.size());
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

/// Builds a report from per-row log-posteriors; argmax ties go to the lowest class.
inline MetricReport report_from_log_posterior(const Eigen::MatrixXd& lp, const Split& s, const NeuronSet& c, double entropy) {
  require(lp.rows() == s.size(), "metrics: row count mismatch");
  require(entropy > 0.0, "metrics: H(P) is zero, NMI is undefined");
  MetricReport r;
  r.entropy = entropy;
  r.subset = c;
  r.count = s.size();
  double nll = 0.0;
  for (int n = 0; n < s.size(); ++n) {
    const int y = s.labels[static_cast<std::size_t>(n)];
    nll -= lp(n, y);
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < lp.cols(); ++k)
      if (lp(n, k) > lp(n, best)) best = k;
    if (best == y) ++r.correct;
  }
  r.avg_nll = nll / static_cast<double>(s.size());
  r.mi = r.entropy - r.avg_nll;
  r.nmi = r.mi / r.entropy;
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(s.size());
  return r;
}

template <Probe P>
MetricReport mi_estimate(const P& probe, const NeuronSet& c, const Split& s) {
  require(c.dim() == probe.dim() && s.features.cols() == probe.dim(), "mi_estimate: probe and split disagree on dimension");
  return report_from_log_posterior(probe.log_posterior(c, s.features), s, c, property_entropy(s));
}

/// n subsets of `size` distinct dims, drawn uniformly. The stream depends
/// only on (dim, size, seed), so competitors evaluated with the same seed
/// see the same subsets regardless of which other sizes are requested.
inline std::vector<NeuronSet> draw_random_subsets(int dim, int size, int n, std::uint64_t seed) {
  if (size < 0 || size > dim) throw PreconditionError("random subsets: size " + std::to_string(size) + " exceeds dimension " + std::to_string(dim));
  require(n >= 0, "random subsets: negative count");
  Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(size + 1)));
  std::vector<int> pool(static_cast<std::size_t>(dim));
  std::vector<NeuronSet> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    std::iota(pool.begin(), pool.end(), 0);
    // Partial Fisher-Yates.
    for (int i = 0; i < size; ++i) {
      std::uniform_int_distribution<int> pick(i, dim - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    out.emplace_back(dim, std::vector<int>(pool.begin(), pool.begin() + size));
  }
  return out;
}

struct SizeAggregate {
  int size = 0;
  double mean_nmi = 0.0;
  double std_nmi = 0.0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  int n_subsets = 0;
  std::uint64_t seed = 0;
  std::vector<MetricReport> reports;
};

inline std::pair<double, double> mean_and_sd(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) return {xs.front(), 0.0};
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

template <Probe P>
std::vector<SizeAggregate> random_subset_eval(const P& probe, const Split& s, const std::vector<int>& sizes, int n_subsets, std::uint64_t seed,
                                              int threads = 1) {
  for (int k : sizes) require(k >= 0 && k <= probe.dim(), "random_subset_eval: size " + std::to_string(k) + " exceeds dimension " + std::to_string(probe.dim()));
  const double h = property_entropy(s);
  std::vector<SizeAggregate> out;
  for (int k : sizes) {
    const auto subsets = draw_random_subsets(probe.dim(), k, n_subsets, seed);
    SizeAggregate agg{k, 0, 0, 0, 0, n_subsets, seed, {}};
    agg.reports = parallel_map<MetricReport>(n_subsets, threads, [&](int i) {
      const auto& c = subsets[static_cast<std::size_t>(i)];
      return report_from_log_posterior(probe.log_posterior(c, s.features), s, c, h);
    });
    std::vector<double> nmi, acc;
    for (const auto& r : agg.reports) {
      nmi.push_back(r.nmi);
      acc.push_back(r.accuracy);
    }
    std::tie(agg.mean_nmi, agg.std_nmi) = mean_and_sd(nmi);
    std::tie(agg.mean_acc, agg.std_acc) = mean_and_sd(acc);
    out.push_back(std::move(agg));
  }
  return out;
}

/// Fraction of paired draws where a's NMI is at least b's.
inline double win_proportion(const std::vector<MetricReport>& a, const std::vector<MetricReport>& b) {
  require(a.size() == b.size() && !a.empty(), "win_proportion: unpaired reports");
  int wins = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i].subset == b[i].subset, "win_proportion: reports were not computed on the same subsets");
    if (a[i].nmi >= b[i].nmi) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(a.size());
}

inline void write_subset_eval_csv(std::ostream& os, const std::vector<SizeAggregate>& aggs, const std::string& config_hash = {}) {
  write_report_header(os, config_hash);
  os << "size,mean_nmi,std_nmi,mean_acc,std_acc,n_subsets,seed\n";
  for (const auto& a : aggs)
    os << a.size << ',' << fmt_double(a.mean_nmi) << ',' << fmt_double(a.std_nmi) << ',' << fmt_double(a.mean_acc) << ','
       << fmt_double(a.std_acc) << ',' << a.n_subsets << ',' << a.seed << '\n';
}

}  // namespace latent_probe
