#pragma once

// Greedy subset selection: grow C one dimension at a time, each time adding
// the dimension that maximizes dev log-likelihood. The shared-parameter
// variant scores candidates with one trained probe on masked inputs; the
// upper-bound variant retrains a probe on the true sub-vectors of every
// candidate.

#include <chrono>
#include <limits>
#include <optional>
#include <ostream>
#include <type_traits>

#include <json.hpp>

#include "latent_probe/metrics.hpp"
#include "latent_probe/trainer.hpp"

namespace latent_probe {

struct SelectionResult {
  int dim = 0;
  std::string attribute;
  std::vector<int> dims;              // greedy order
  std::vector<double> dev_ll;         // sum over dev of log p at each prefix
  std::vector<MetricReport> test;     // test metrics at each prefix
  long candidate_evaluations = 0;
  bool truncated = false;
  std::string truncation_reason;

  int size() const { return static_cast<int>(dims.size()); }
};

inline double sum_label_loglik(const Eigen::MatrixXd& lp, const std::vector<int>& labels) {
  double s = 0.0;
  for (Eigen::Index n = 0; n < lp.rows(); ++n) s += lp(n, labels[static_cast<std::size_t>(n)]);
  return s;
}

/// Index of the maximum; ties go to the earliest entry.
inline std::size_t first_argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

template <Probe P>
SelectionResult greedy_select(const P& probe, const ProbingDataset& ds, int max_k, int threads = 1) {
  const int d = probe.dim();
  require(d == ds.dim, "greedy_select: probe and dataset disagree on dimension");
  require(max_k >= 0 && max_k <= d, "greedy_select: max_k must be in [0, d]");
  require(ds.dev.size() > 0 && ds.test.size() > 0, "greedy_select: needs nonempty dev and test splits");

  SelectionResult res{.dim = d, .attribute = ds.property.attribute};
  NeuronSet chosen = NeuronSet::empty(d);
  const double h_test = max_k > 0 ? property_entropy(ds.test) : 0.0;
  constexpr bool incremental = std::is_same_v<P, DiscriminativeProbe>;
  Eigen::MatrixXd dev_pre, test_pre;
  if constexpr (incremental) {
    dev_pre = probe.first_preactivation(chosen, ds.dev.features);
    test_pre = probe.first_preactivation(chosen, ds.test.features);
  }

  for (int step = 0; step < max_k; ++step) {
    std::vector<int> cand;
    for (int j = 0; j < d; ++j)
      if (!chosen.contains(j)) cand.push_back(j);
    const auto scores = parallel_map<double>(static_cast<int>(cand.size()), threads, [&](int i) {
      const int j = cand[static_cast<std::size_t>(i)];
      if constexpr (incremental) {
        Eigen::MatrixXd z = dev_pre;
        z.noalias() += ds.dev.features.col(j) * probe.layers().front().weight.col(j).transpose();
        return sum_label_loglik(probe.log_posterior_from_preactivation(std::move(z)), ds.dev.labels);
      } else {
        return sum_label_loglik(probe.log_posterior(chosen.with(j), ds.dev.features), ds.dev.labels);
      }
    });
    res.candidate_evaluations += static_cast<long>(cand.size());
    const std::size_t best = first_argmax(scores);
    const int j = cand[best];
    chosen = chosen.with(j);
    res.dims.push_back(j);
    res.dev_ll.push_back(scores[best]);
    if constexpr (incremental) {
      dev_pre.noalias() += ds.dev.features.col(j) * probe.layers().front().weight.col(j).transpose();
      test_pre.noalias() += ds.test.features.col(j) * probe.layers().front().weight.col(j).transpose();
      res.test.push_back(report_from_log_posterior(probe.log_posterior_from_preactivation(test_pre), ds.test, chosen, h_test));
    } else {
      res.test.push_back(report_from_log_posterior(probe.log_posterior(chosen, ds.test.features), ds.test, chosen, h_test));
    }
  }
  return res;
}

struct UpperBoundOptions {
  int max_epochs = 200;
  int patience = 10;
  bool full_budget = false;       // use the trainer config's own epochs/patience
  double time_budget_seconds = 0;  // 0 = unlimited
  int threads = 1;
};

/// Greedy selection where every candidate C u {j} is scored by training a
/// fresh fixed-full probe on the restricted columns.
inline SelectionResult upper_bound_greedy(const ProbingDataset& ds, int max_k, const TrainConfig& base, const UpperBoundOptions& opt = {}) {
  const int d = ds.dim;
  require(max_k >= 0 && max_k <= d, "upper_bound_greedy: max_k must be in [0, d]");
  require(ds.dev.size() > 0 && ds.test.size() > 0, "upper_bound_greedy: needs nonempty dev and test splits");
  TrainConfig cfg = base;
  cfg.family = FamilyKind::fixed_full;
  if (!opt.full_budget) {
    cfg.max_epochs = opt.max_epochs;
    cfg.patience = opt.patience;
  }
  cfg.check();
  const int k_classes = static_cast<int>(ds.property.values.size());
  const auto t0 = std::chrono::steady_clock::now();
  auto over_budget = [&] {
    if (opt.time_budget_seconds <= 0) return false;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() > opt.time_budget_seconds;
  };

  SelectionResult res{.dim = d, .attribute = ds.property.attribute};
  NeuronSet chosen = NeuronSet::empty(d);
  const double h_test = max_k > 0 ? property_entropy(ds.test) : 0.0;
  struct Scored {
    double dev_ll = kNegInf;
    DiscriminativeProbe probe;
    bool skipped = false;
  };
  for (int step = 0; step < max_k; ++step) {
    if (over_budget()) {
      res.truncated = true;
      res.truncation_reason = "time budget exhausted after " + std::to_string(step) + " steps";
      break;
    }
    std::vector<int> cand;
    for (int j = 0; j < d; ++j)
      if (!chosen.contains(j)) cand.push_back(j);
    const auto scored = parallel_map<Scored>(static_cast<int>(cand.size()), opt.threads, [&](int i) {
      if (over_budget()) return Scored{kNegInf, {}, true};
      const NeuronSet c = chosen.with(cand[static_cast<std::size_t>(i)]);
      const Split tr = ds.train.columns(c);
      const auto fit = train(tr, c.size(), k_classes, cfg);
      const Split dv = ds.dev.columns(c);
      const NeuronSet all = NeuronSet::full(c.size());
      return Scored{sum_label_loglik(fit.theta.log_posterior(all, dv.features), dv.labels), fit.theta, false};
    });
    res.candidate_evaluations += static_cast<long>(cand.size());
    if (std::any_of(scored.begin(), scored.end(), [](const Scored& s) { return s.skipped; })) {
      res.truncated = true;
      res.truncation_reason = "time budget exhausted during step " + std::to_string(step + 1);
      break;
    }
    std::vector<double> ll;
    for (const auto& s : scored) ll.push_back(s.dev_ll);
    const std::size_t best = first_argmax(ll);
    chosen = chosen.with(cand[best]);
    res.dims.push_back(cand[best]);
    res.dev_ll.push_back(ll[best]);
    const Split te = ds.test.columns(chosen);
    res.test.push_back(report_from_log_posterior(scored[best].probe.log_posterior(NeuronSet::full(chosen.size()), te.features), ds.test, chosen, h_test));
  }
  return res;
}

inline void write_selection_csv(std::ostream& os, const SelectionResult& r, const std::string& config_hash = {}) {
  write_report_header(os, config_hash);
  if (r.truncated) os << "# truncated=true reason=" << r.truncation_reason << '\n';
  os << "step,dim,dev_ll,test_mi,test_nmi,test_acc\n";
  for (int i = 0; i < r.size(); ++i) {
    const auto& t = r.test[static_cast<std::size_t>(i)];
    os << (i + 1) << ',' << r.dims[static_cast<std::size_t>(i)] << ',' << fmt_double(r.dev_ll[static_cast<std::size_t>(i)]) << ','
       << fmt_double(t.mi) << ',' << fmt_double(t.nmi) << ',' << fmt_double(t.accuracy) << '\n';
  }
}

inline nlohmann::json to_json(const SelectionResult& r, const std::string& config_hash = {}) {
  nlohmann::json steps = nlohmann::json::array();
  for (int i = 0; i < r.size(); ++i) {
    const auto& t = r.test[static_cast<std::size_t>(i)];
    steps.push_back({{"step", i + 1},
                     {"dim", r.dims[static_cast<std::size_t>(i)]},
                     {"dev_ll", r.dev_ll[static_cast<std::size_t>(i)]},
                     {"test_mi", t.mi},
                     {"test_nmi", t.nmi},
                     {"test_acc", t.accuracy}});
  }
  nlohmann::json j = {{"dim", r.dim}, {"attribute", r.attribute}, {"dims", r.dims}, {"steps", steps}, {"candidate_evaluations", r.candidate_evaluations}, {"truncated", r.truncated}};
  if (r.truncated) j["truncation_reason"] = r.truncation_reason;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j;
}

inline SelectionResult selection_from_json(const nlohmann::json& j) {
  SelectionResult r;
  r.dim = j.at("dim").get<int>();
  r.attribute = j.value("attribute", "");
  r.dims = j.at("dims").get<std::vector<int>>();
  r.truncated = j.value("truncated", false);
  r.candidate_evaluations = j.value("candidate_evaluations", 0L);
  for (const auto& s : j.value("steps", nlohmann::json::array())) {
    r.dev_ll.push_back(s.at("dev_ll").get<double>());
    MetricReport t;
    t.mi = s.at("test_mi").get<double>();
    t.nmi = s.at("test_nmi").get<double>();
    t.accuracy = s.at("test_acc").get<double>();
    r.test.push_back(t);
  }
  for (int x : r.dims) require(x >= 0 && x < r.dim, "selection: dimension index out of range");
  return r;
}

}  // namespace latent_probe
