#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "latent_probe/dataset.hpp"
#include "latent_probe/planted.hpp"
#include "support/bayes_oracle.hpp"

using namespace latent_probe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("lp_dataset_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

SplitFile small_file() {
  SplitFile f;
  f.dim = 4;
  f.property = {"Number", {"SG", "PL"}};
  f.tag = SplitTag::dev;
  f.data.labels = {0, 1, 1};
  f.data.features.resize(3, 4);
  f.data.features << 0.5, -1.25, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0, -3.5, 0.125, 7.0, 1e-3;
  return f;
}

ProbingDataset with_counts(const std::vector<std::string>& names, const std::vector<int>& counts) {
  ProbingDataset ds;
  ds.dim = 2;
  ds.property.attribute = "A";
  ds.property.values = names;
  std::vector<int> labels;
  for (std::size_t v = 0; v < counts.size(); ++v) labels.insert(labels.end(), static_cast<std::size_t>(counts[v]), static_cast<int>(v));
  // Spread records over the three splits round-robin.
  for (std::size_t i = 0; i < labels.size(); ++i) ds.split(static_cast<SplitTag>(i % 3)).labels.push_back(labels[i]);
  for (SplitTag t : {SplitTag::train, SplitTag::dev, SplitTag::test}) {
    auto& s = ds.split(t);
    s.features = Eigen::MatrixXd::Constant(s.size(), 2, 0.5);
    for (int n = 0; n < s.size(); ++n) s.features(n, 0) = s.labels[static_cast<std::size_t>(n)];
  }
  return ds;
}

}  // namespace

TEST(Ipds, RoundTripIsByteIdentical) {
  TempDir tmp;
  const auto a = tmp.file("a.ipds"), b = tmp.file("b.ipds");
  write_split_file(a, small_file(), FileFormat::ipds);
  const auto ds = load_dataset(a);
  EXPECT_EQ(ds.dim, 4);
  EXPECT_EQ(ds.property.values, (std::vector<std::string>{"SG", "PL"}));
  EXPECT_EQ(ds.dev.size(), 3);
  EXPECT_EQ(ds.train.size(), 0);
  EXPECT_EQ(ds.dev.features, small_file().data.features.cast<float>().cast<double>().eval());
  write_split_file(b, to_split_file(ds, SplitTag::dev), FileFormat::ipds);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(detect_format(a), FileFormat::ipds);
}

TEST(Ipds, LayoutMatchesFormatDefinition) {
  std::ostringstream os;
  detail::write_ipds(os, small_file());
  const std::string s = os.str();
  // magic, version, dim, nv, 2 names (2 + 2 bytes each), tag, count, 3 x (4 + 16)
  EXPECT_EQ(s.size(), 4u + 4 + 4 + 4 + 2 * (2 + 2) + 1 + 8 + 3 * (4 + 4 * 4));
  EXPECT_EQ(s.substr(0, 4), "IPDS");
  EXPECT_EQ(static_cast<unsigned char>(s[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(s[8]), 4);
  EXPECT_EQ(s.substr(18, 2), "SG");
  EXPECT_EQ(static_cast<unsigned char>(s[24]), 1);  // split tag dev
}

TEST(Ipds, RejectsCorruptFiles) {
  std::ostringstream os;
  detail::write_ipds(os, small_file());
  const std::string good = os.str();
  auto load = [](const std::string& bytes) {
    std::istringstream is(bytes);
    return detail::read_ipds(is);
  };
  EXPECT_THROW(load("IPDX" + good.substr(4)), DataError);
  EXPECT_THROW(load(good.substr(0, good.size() - 2)), DataError);
  EXPECT_THROW(load(good + "x"), DataError);
  std::string bad_label = good;
  bad_label[33] = 5;  // first record's label
  try {
    load(bad_label);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown label"), std::string::npos);
  }
  std::string nan = good;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + 37, &q, 4);
  EXPECT_THROW(load(nan), DataError);
}

TEST(Jsonl, ParsesHeaderAndRecords) {
  std::istringstream is(R"({"version":1,"dim":2,"attribute":"Number","values":["SG","PL"],"split":"train"}
{"label":"SG","vec":[0.1,0.2]}
)");
  const auto f = detail::read_jsonl(is);
  EXPECT_EQ(f.dim, 2);
  EXPECT_EQ(f.property.attribute, "Number");
  ASSERT_EQ(f.data.size(), 1);
  EXPECT_EQ(f.data.labels[0], 0);
  EXPECT_DOUBLE_EQ(f.data.features(0, 1), 0.2);
}

TEST(Jsonl, ErrorsNameTheProblem) {
  auto err = [](const std::string& text) {
    std::istringstream is(text);
    try {
      detail::read_jsonl(is);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string h = R"({"version":1,"dim":4,"attribute":"N","values":["SG","PL"],"split":"dev"})";
  EXPECT_NE(err(h + "\n" + R"({"label":"SG","vec":[1,2,3]})").find("record length mismatch"), std::string::npos);
  EXPECT_NE(err(h + "\n" + R"({"label":"DU","vec":[1,2,3,4]})").find("unknown label"), std::string::npos);
  EXPECT_NE(err(R"({"version":2,"dim":4,"values":["a","b"],"split":"dev"})").find("malformed header"), std::string::npos);
  EXPECT_NE(err(R"({"version":1,"dim":4,"values":["a","a"],"split":"dev"})").find("duplicate"), std::string::npos);
  EXPECT_NE(err("").find("malformed header"), std::string::npos);
}

TEST(Jsonl, RoundTripIsRecordEquivalent) {
  TempDir tmp;
  const auto a = tmp.file("a.jsonl"), b = tmp.file("b.jsonl");
  write_split_file(a, small_file(), FileFormat::jsonl);
  EXPECT_EQ(detect_format(a), FileFormat::jsonl);
  const auto f = load_split_file(a);
  EXPECT_EQ(f.data.features, small_file().data.features);
  EXPECT_EQ(f.data.labels, small_file().data.labels);
  EXPECT_EQ(f.property, small_file().property);
  write_split_file(b, f, FileFormat::jsonl);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(LoadDataset, AssemblesSplitsAndChecksConsistency) {
  TempDir tmp;
  auto f = small_file();
  for (auto [name, tag] : {std::pair{"tr", SplitTag::train}, std::pair{"dv", SplitTag::dev}, std::pair{"te", SplitTag::test}}) {
    f.tag = tag;
    write_split_file(tmp.file(name), f, FileFormat::ipds);
  }
  const auto ds = load_dataset(tmp.file("tr"), tmp.file("dv"), tmp.file("te"));
  EXPECT_EQ(ds.train.size(), 3);
  EXPECT_EQ(ds.test.size(), 3);
  f.property.values = {"SG", "DU"};
  write_split_file(tmp.file("odd"), f, FileFormat::ipds);
  EXPECT_THROW(load_dataset(tmp.file("tr"), tmp.file("dv"), tmp.file("odd")), DataError);
  EXPECT_THROW(load_dataset(tmp.file("missing")), DataError);
}

TEST(FilterRareValues, DropsAndReindexes) {
  const auto ds = with_counts({"SG", "DU", "PL"}, {100, 7, 50});
  const auto out = filter_rare_values(ds, 20);
  EXPECT_EQ(out.property.values, (std::vector<std::string>{"SG", "PL"}));
  EXPECT_EQ(value_counts(out), (std::vector<long>{100, 50}));
  for (SplitTag t : {SplitTag::train, SplitTag::dev, SplitTag::test}) {
    const auto& s = out.split(t);
    for (int n = 0; n < s.size(); ++n) {
      // column 0 holds the original label index
      const int original = static_cast<int>(s.features(n, 0));
      EXPECT_EQ(out.property.values[static_cast<std::size_t>(s.labels[static_cast<std::size_t>(n)])], ds.property.values[static_cast<std::size_t>(original)]);
    }
  }
  const auto again = filter_rare_values(out, 20);
  EXPECT_EQ(again.property, out.property);
  EXPECT_EQ(again.train.labels, out.train.labels);
  EXPECT_EQ(again.test.features, out.test.features);
}

TEST(FilterRareValues, FailsWithFewerThanTwoSurvivors) {
  EXPECT_THROW(filter_rare_values(with_counts({"SG"}, {20}), 20), DataError);
  EXPECT_THROW(filter_rare_values(with_counts({"A", "B"}, {25, 19}), 20), DataError);
  EXPECT_NO_THROW(filter_rare_values(with_counts({"A", "B"}, {20, 20}), 20));
  EXPECT_THROW(filter_rare_values(with_counts({"A", "B"}, {20, 20}), 0), PreconditionError);
}

TEST(SplitHoldout, SizesAndDeterminism) {
  Split s;
  s.labels.assign(100, 0);
  s.features.resize(100, 1);
  for (int n = 0; n < 100; ++n) s.features(n, 0) = n;
  const auto [fit, hold] = split_holdout(s, 0.1, 7);
  EXPECT_EQ(fit.size(), 90);
  EXPECT_EQ(hold.size(), 10);
  const auto [fit2, hold2] = split_holdout(s, 0.1, 7);
  EXPECT_EQ(hold.features, hold2.features);
  std::vector<double> all;
  for (const Split* p : {&fit, &hold})
    for (int n = 0; n < p->size(); ++n) all.push_back(p->features(n, 0));
  std::sort(all.begin(), all.end());
  for (int n = 0; n < 100; ++n) EXPECT_EQ(all[static_cast<std::size_t>(n)], n);

  Split five;
  five.labels.assign(5, 0);
  five.features = Eigen::MatrixXd::Zero(5, 1);
  EXPECT_EQ(split_holdout(five, 0.1, 1).second.size(), 1);
  EXPECT_THROW(split_holdout(s, 0.0, 1), PreconditionError);
  EXPECT_THROW(split_holdout(s, 1.0, 1), PreconditionError);
}

TEST(Planted, IdenticalSeedsGiveIdenticalBytes) {
  PlantedSpec spec;
  spec.dim = 16;
  spec.informative_dims = {3, 9};
  spec.seed = 42;
  std::ostringstream a, b, c;
  detail::write_ipds(a, to_split_file(synthesize_planted(spec), SplitTag::train));
  detail::write_ipds(b, to_split_file(synthesize_planted(spec), SplitTag::train));
  spec.seed = 43;
  detail::write_ipds(c, to_split_file(synthesize_planted(spec), SplitTag::train));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
}

TEST(Planted, SpecValidation) {
  PlantedSpec spec;
  spec.dim = 4;
  spec.informative_dims = {4};
  EXPECT_THROW(synthesize_planted(spec), PreconditionError);
  spec.informative_dims = {1};
  spec.noise_scale = 0.0;
  EXPECT_THROW(synthesize_planted(spec), PreconditionError);
}

TEST(Planted, NoiseDimensionCarriesNoInformation) {
  PlantedSpec spec;
  spec.dim = 8;
  spec.informative_dims = {2};
  spec.n_train = 10000;
  spec.n_dev = spec.n_test = 0;
  spec.seed = 5;
  const auto ds = synthesize_planted(spec);
  // Plug-in MI between label and a 10-bin quantile discretization.
  auto plug_in_mi = [&](int col) {
    std::vector<double> v(ds.train.features.col(col).begin(), ds.train.features.col(col).end());
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const int bins = 10;
    std::vector<std::vector<double>> joint(bins, std::vector<double>(2, 0.0));
    for (std::size_t n = 0; n < v.size(); ++n) {
      const auto rank = std::lower_bound(sorted.begin(), sorted.end(), v[n]) - sorted.begin();
      const auto b = static_cast<std::size_t>(rank * bins / static_cast<long>(v.size()));
      joint[b][static_cast<std::size_t>(ds.train.labels[n])] += 1.0 / static_cast<double>(v.size());
    }
    double mi = 0.0;
    const double py1 = static_cast<double>(std::count(ds.train.labels.begin(), ds.train.labels.end(), 1)) / static_cast<double>(v.size());
    for (const auto& row : joint) {
      const double px = row[0] + row[1];
      for (int y = 0; y < 2; ++y) {
        const double py = y ? py1 : 1.0 - py1;
        if (row[static_cast<std::size_t>(y)] > 0) mi += row[static_cast<std::size_t>(y)] * std::log(row[static_cast<std::size_t>(y)] / (px * py));
      }
    }
    return mi;
  };
  for (int j : {0, 1, 3, 7}) EXPECT_LT(plug_in_mi(j), 0.02);
  EXPECT_GT(plug_in_mi(2), 0.1);
}

TEST(BayesOracle, KnownLimits) {
  EXPECT_NEAR(oracle::bayes_nmi_two_class({0.0}, 1.0), 0.0, 1e-12);
  EXPECT_NEAR(oracle::bayes_nmi_two_class({40.0}, 1.0), 1.0, 1e-9);
  EXPECT_LT(oracle::bayes_nmi_two_class({1.0}, 1.0), oracle::bayes_nmi_two_class({2.0}, 1.0));
  // Monte Carlo cross-check of H(P | X) for one dim: labels +-1, x = y + N(0, 1).
  Rng rng(3);
  std::normal_distribution<double> z(0.0, 1.0);
  double h = 0.0;
  const int n = 400000;
  for (int i = 0; i < n; ++i) {
    const double x = 1.0 + z(rng);
    const double l = 2.0 * x;  // log N(x;1,1)/N(x;-1,1)
    h += std::log1p(std::exp(-l));
  }
  EXPECT_NEAR(oracle::bayes_conditional_entropy_two_class(4.0), h / n, 3e-3);
}
