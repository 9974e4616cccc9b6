#pragma once

// Cross-language overlap of top-k dimension sets. Each pair gets a one-sided
// hypergeometric tail p-value under the null of two independent uniform
// top-k sets; the pairs of one attribute form a single Holm-Bonferroni
// family.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "latent_probe/selection.hpp"

namespace latent_probe {

inline int topk_overlap(const std::vector<int>& a, const std::vector<int>& b, int k, int dim) {
  require(k >= 0 && k <= dim, "topk_overlap: k must be in [0, d]");
  require(static_cast<int>(a.size()) >= k && static_cast<int>(b.size()) >= k, "topk_overlap: ranking shorter than k");
  std::vector<char> in_a(static_cast<std::size_t>(dim), 0), in_b(static_cast<std::size_t>(dim), 0);
  for (int i = 0; i < k; ++i) {
    const int x = a[static_cast<std::size_t>(i)], y = b[static_cast<std::size_t>(i)];
    require(x >= 0 && x < dim && y >= 0 && y < dim, "topk_overlap: dimension index out of range");
    require(!in_a[static_cast<std::size_t>(x)] && !in_b[static_cast<std::size_t>(y)], "topk_overlap: repeated dimension in ranking");
    in_a[static_cast<std::size_t>(x)] = in_b[static_cast<std::size_t>(y)] = 1;
  }
  int n = 0;
  for (int j = 0; j < dim; ++j) n += in_a[static_cast<std::size_t>(j)] && in_b[static_cast<std::size_t>(j)];
  return n;
}

inline int topk_overlap(const SelectionResult& a, const SelectionResult& b, int k) {
  require(a.dim == b.dim, "topk_overlap: rankings come from different dimensions (" + std::to_string(a.dim) + " vs " + std::to_string(b.dim) + ")");
  return topk_overlap(a.dims, b.dims, k, a.dim);
}

/// P[X >= overlap], X ~ Hypergeometric(population d, successes k, draws k).
inline double hypergeom_tail_pvalue(int overlap, int k, int d) {
  require(0 <= overlap && overlap <= k && k <= d, "hypergeom_tail_pvalue: need 0 <= overlap <= k <= d");
  if (overlap == 0) return 1.0;
  const int lo = std::max(overlap, 2 * k - d);
  if (lo > k) return 0.0;
  std::vector<double> terms;
  for (int i = lo; i <= k; ++i) terms.push_back(log_binomial(k, i) + log_binomial(d - k, k - i) - log_binomial(d, k));
  return std::min(1.0, std::exp(log_sum_exp(terms)));
}

/// Step-down Holm procedure; flags are in input order.
inline std::vector<bool> holm_bonferroni(const std::vector<double>& p, double alpha = 0.05) {
  for (double v : p) require(v >= 0.0 && v <= 1.0, "holm_bonferroni: p-value outside [0, 1]");
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<bool> reject(p.size(), false);
  const double m = static_cast<double>(p.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (p[order[i]] > alpha / (m - static_cast<double>(i))) break;
    reject[order[i]] = true;
  }
  return reject;
}

struct OverlapMatrix {
  std::string attribute;
  std::vector<std::string> languages;
  int k = 0;
  int dim = 0;
  double alpha = 0.05;
  std::vector<std::vector<int>> overlap;
  std::vector<std::vector<double>> pvalue;
  std::vector<std::vector<bool>> significant;  // diagonal always false
};

inline OverlapMatrix build_overlap_matrix(const std::string& attribute, const std::vector<std::string>& languages,
                                          const std::vector<SelectionResult>& sel, int k = 30, double alpha = 0.05) {
  require(languages.size() == sel.size(), "build_overlap_matrix: one selection per language");
  require(sel.size() >= 2, "build_overlap_matrix: needs at least two languages");
  const int d = sel.front().dim;
  for (const auto& s : sel) require(s.dim == d, "build_overlap_matrix: selections come from different dimensions");
  const std::size_t n = sel.size();
  OverlapMatrix m{attribute, languages, k, d, alpha, {}, {}, {}};
  m.overlap.assign(n, std::vector<int>(n, 0));
  m.pvalue.assign(n, std::vector<double>(n, 0.0));
  m.significant.assign(n, std::vector<bool>(n, false));
  std::vector<double> family;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < n; ++a) {
    m.overlap[a][a] = topk_overlap(sel[a], sel[a], k);
    m.pvalue[a][a] = hypergeom_tail_pvalue(k, k, d);
    for (std::size_t b = a + 1; b < n; ++b) {
      const int o = topk_overlap(sel[a], sel[b], k);
      const double p = hypergeom_tail_pvalue(o, k, d);
      m.overlap[a][b] = m.overlap[b][a] = o;
      m.pvalue[a][b] = m.pvalue[b][a] = p;
      family.push_back(p);
      pairs.emplace_back(a, b);
    }
  }
  const auto reject = holm_bonferroni(family, alpha);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [a, b] = pairs[i];
    m.significant[a][b] = m.significant[b][a] = reject[i];
  }
  return m;
}

inline void write_overlap_csv(std::ostream& os, const OverlapMatrix& m, const std::string& config_hash = {}) {
  write_report_header(os, config_hash);
  os << "# attribute=" << m.attribute << " k=" << m.k << " d=" << m.dim << " alpha=" << fmt_double(m.alpha) << '\n';
  os << "langA,langB,overlap,pvalue,significant\n";
  for (std::size_t a = 0; a < m.languages.size(); ++a)
    for (std::size_t b = 0; b < m.languages.size(); ++b)
      os << m.languages[a] << ',' << m.languages[b] << ',' << m.overlap[a][b] << ',' << fmt_double(m.pvalue[a][b]) << ','
         << (a == b ? "na" : (m.significant[a][b] ? "true" : "false")) << '\n';
}

}  // namespace latent_probe
