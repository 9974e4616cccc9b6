#pragma once

// Labeled-representation datasets: in-memory layout, the IPDS binary and
// JSONL file formats, rare-value filtering and holdout splitting.

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latent_probe/common.hpp"

namespace latent_probe {

/// Attribute name plus its ordered value inventory.
struct PropertySpace {
  std::string attribute;
  std::vector<std::string> values;

  int num_values() const { return static_cast<int>(values.size()); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i] == name) return static_cast<int>(i);
    return -1;
  }

  void check_unique() const {
    for (std::size_t i = 0; i < values.size(); ++i)
      for (std::size_t j = i + 1; j < values.size(); ++j)
        if (values[i] == values[j]) throw DataError("duplicate property value '" + values[i] + "'");
  }

  friend bool operator==(const PropertySpace&, const PropertySpace&) = default;
};

struct LabeledRepresentation {
  int label = 0;
  Eigen::VectorXd vector;
};

/// One split stored column-compatible: row n of `features` is h^(n).
struct Split {
  Eigen::MatrixXd features;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  bool empty() const { return labels.empty(); }

  LabeledRepresentation record(int n) const { return {labels[static_cast<std::size_t>(n)], features.row(n).transpose()}; }

  Split rows(const std::vector<int>& which) const {
    Split out;
    out.features.resize(static_cast<Eigen::Index>(which.size()), features.cols());
    out.labels.reserve(which.size());
    for (std::size_t i = 0; i < which.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(which[i]);
      out.labels.push_back(labels[static_cast<std::size_t>(which[i])]);
    }
    return out;
  }

  /// Restriction to the given columns (true sub-vectors, not masking).
  Split columns(const NeuronSet& cols) const {
    Split out;
    out.labels = labels;
    out.features.resize(features.rows(), cols.size());
    for (int j = 0; j < cols.size(); ++j) out.features.col(j) = features.col(cols.indices()[static_cast<std::size_t>(j)]);
    return out;
  }
};

enum class SplitTag : std::uint8_t { train = 0, dev = 1, test = 2 };

inline std::string split_name(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::dev: return "dev";
    case SplitTag::test: return "test";
  }
  return "?";
}

inline SplitTag parse_split_tag(const std::string& s) {
  if (s == "train" || s == "0") return SplitTag::train;
  if (s == "dev" || s == "1") return SplitTag::dev;
  if (s == "test" || s == "2") return SplitTag::test;
  throw DataError("malformed header: unknown split '" + s + "'");
}

/// Contents of one dataset file (one split).
struct SplitFile {
  int dim = 0;
  PropertySpace property;
  SplitTag tag = SplitTag::train;
  Split data;
};

struct ProbingDataset {
  int dim = 0;
  PropertySpace property;
  Split train;
  Split dev;
  Split test;

  Split& split(SplitTag t) { return t == SplitTag::train ? train : t == SplitTag::dev ? dev : test; }
  const Split& split(SplitTag t) const { return t == SplitTag::train ? train : t == SplitTag::dev ? dev : test; }
};

/// Throws DataError describing the first invariant violation.
inline void validate_split(const Split& s, int dim, int num_values) {
  if (s.features.rows() != s.size()) throw DataError("feature/label count mismatch");
  if (s.size() > 0 && s.features.cols() != dim) throw DataError("record length mismatch");
  for (int n = 0; n < s.size(); ++n) {
    const int l = s.labels[static_cast<std::size_t>(n)];
    if (l < 0 || l >= num_values) throw DataError("unknown label index " + std::to_string(l) + " at record " + std::to_string(n));
  }
  if (!s.features.allFinite()) throw DataError("non-finite value in features");
}

inline void validate(const ProbingDataset& ds) {
  if (ds.dim <= 0) throw DataError("dimension must be positive");
  ds.property.check_unique();
  for (SplitTag t : {SplitTag::train, SplitTag::dev, SplitTag::test}) validate_split(ds.split(t), ds.dim, ds.property.num_values());
}

// ---------------------------------------------------------------------------
// File formats

enum class FileFormat { detect, ipds, jsonl };

namespace detail {

inline constexpr std::array<char, 4> kIpdsMagic = {'I', 'P', 'D', 'S'};
inline constexpr std::uint32_t kFormatVersion = 1;

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& os) : os_(os) {}
  template <class UInt>
  void put(UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void bytes(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }

 private:
  std::ostream& os_;
};

class ByteReader {
 public:
  explicit ByteReader(std::istream& is) : is_(is) {}
  template <class UInt>
  UInt get() {
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      const int c = is_.get();
      if (c == EOF) throw DataError("unexpected end of file");
      v |= static_cast<UInt>(static_cast<UInt>(static_cast<unsigned char>(c)) << (8 * i));
    }
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_string(std::size_t n) {
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw DataError("unexpected end of file");
    return s;
  }
  bool at_eof() { return is_.peek() == EOF; }

 private:
  std::istream& is_;
};

inline SplitFile read_ipds(std::istream& is) {
  ByteReader r(is);
  if (r.get_string(4) != std::string(kIpdsMagic.begin(), kIpdsMagic.end())) throw DataError("malformed header: bad magic");
  if (r.get<std::uint32_t>() != kFormatVersion) throw DataError("malformed header: unsupported version");
  SplitFile f;
  f.dim = static_cast<int>(r.get<std::uint32_t>());
  if (f.dim <= 0) throw DataError("malformed header: dim must be positive");
  const auto nv = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nv; ++i) f.property.values.push_back(r.get_string(r.get<std::uint16_t>()));
  f.property.check_unique();
  const auto tag = r.get<std::uint8_t>();
  if (tag > 2) throw DataError("malformed header: bad split tag");
  f.tag = static_cast<SplitTag>(tag);
  const auto count = r.get<std::uint64_t>();
  f.data.features.resize(static_cast<Eigen::Index>(count), f.dim);
  f.data.labels.resize(count);
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto label = r.get<std::uint32_t>();
    if (label >= nv) throw DataError("unknown label index " + std::to_string(label) + " at record " + std::to_string(n));
    f.data.labels[n] = static_cast<int>(label);
    for (int j = 0; j < f.dim; ++j) {
      const float v = r.get_f32();
      if (!std::isfinite(v)) throw DataError("non-finite value at record " + std::to_string(n));
      f.data.features(static_cast<Eigen::Index>(n), j) = v;
    }
  }
  if (!r.at_eof()) throw DataError("trailing bytes after last record");
  return f;
}

inline void write_ipds(std::ostream& os, const SplitFile& f) {
  ByteWriter w(os);
  w.bytes(kIpdsMagic.data(), kIpdsMagic.size());
  w.put(kFormatVersion);
  w.put(static_cast<std::uint32_t>(f.dim));
  w.put(static_cast<std::uint32_t>(f.property.values.size()));
  for (const auto& v : f.property.values) {
    if (v.size() > 0xFFFF) throw DataError("value name too long");
    w.put(static_cast<std::uint16_t>(v.size()));
    w.bytes(v.data(), v.size());
  }
  w.put(static_cast<std::uint8_t>(f.tag));
  w.put(static_cast<std::uint64_t>(f.data.size()));
  for (int n = 0; n < f.data.size(); ++n) {
    w.put(static_cast<std::uint32_t>(f.data.labels[static_cast<std::size_t>(n)]));
    for (int j = 0; j < f.dim; ++j) w.put_f32(static_cast<float>(f.data.features(n, j)));
  }
}

inline SplitFile read_jsonl(std::istream& is) {
  using nlohmann::json;
  std::string line;
  if (!std::getline(is, line)) throw DataError("malformed header: empty file");
  SplitFile f;
  try {
    const json h = json::parse(line);
    if (!h.is_object() || h.value("version", 0) != static_cast<int>(kFormatVersion)) throw DataError("malformed header: version");
    f.dim = h.at("dim").get<int>();
    f.property.attribute = h.value("attribute", std::string{});
    f.property.values = h.at("values").get<std::vector<std::string>>();
    const auto& s = h.at("split");
    f.tag = parse_split_tag(s.is_string() ? s.get<std::string>() : std::to_string(s.get<int>()));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed header: ") + e.what());
  }
  if (f.dim <= 0) throw DataError("malformed header: dim must be positive");
  f.property.check_unique();

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
    const auto name = rec.at("label").get<std::string>();
    const int label = f.property.index_of(name);
    if (label < 0) throw DataError("line " + std::to_string(lineno) + ": unknown label '" + name + "'");
    auto vec = rec.at("vec").get<std::vector<double>>();
    if (static_cast<int>(vec.size()) != f.dim) throw DataError("line " + std::to_string(lineno) + ": record length mismatch");
    for (double v : vec)
      if (!std::isfinite(v)) throw DataError("line " + std::to_string(lineno) + ": non-finite value");
    f.data.labels.push_back(label);
    rows.push_back(std::move(vec));
  }
  f.data.features.resize(static_cast<Eigen::Index>(rows.size()), f.dim);
  for (std::size_t n = 0; n < rows.size(); ++n)
    for (int j = 0; j < f.dim; ++j) f.data.features(static_cast<Eigen::Index>(n), j) = rows[n][static_cast<std::size_t>(j)];
  return f;
}

inline void write_jsonl(std::ostream& os, const SplitFile& f) {
  using nlohmann::json;
  json h = {{"version", kFormatVersion}, {"dim", f.dim}, {"attribute", f.property.attribute}, {"values", f.property.values}, {"split", split_name(f.tag)}};
  os << h.dump() << '\n';
  for (int n = 0; n < f.data.size(); ++n) {
    json rec = {{"label", f.property.values.at(static_cast<std::size_t>(f.data.labels[static_cast<std::size_t>(n)]))},
                {"vec", std::vector<double>(f.data.features.row(n).begin(), f.data.features.row(n).end())}};
    os << rec.dump() << '\n';
  }
}

}  // namespace detail

inline FileFormat detect_format(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() == 4 && std::memcmp(magic, detail::kIpdsMagic.data(), 4) == 0) return FileFormat::ipds;
  return FileFormat::jsonl;
}

/// Reads one split file in either canonical format.
inline SplitFile load_split_file(const std::string& path, FileFormat format = FileFormat::detect) {
  if (format == FileFormat::detect) format = detect_format(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return format == FileFormat::ipds ? detail::read_ipds(is) : detail::read_jsonl(is);
}

inline void write_split_file(const std::string& path, const SplitFile& f, FileFormat format) {
  require(format != FileFormat::detect, "write_split_file: format must be explicit");
  validate_split(f.data, f.dim, f.property.num_values());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path + "'");
  if (format == FileFormat::ipds)
    detail::write_ipds(os, f);
  else
    detail::write_jsonl(os, f);
}

/// Loads a file and places it in the split named by its header; the other
/// splits stay empty.
inline ProbingDataset load_dataset(const std::string& path, FileFormat format = FileFormat::detect) {
  SplitFile f = load_split_file(path, format);
  ProbingDataset ds;
  ds.dim = f.dim;
  ds.property = std::move(f.property);
  ds.split(f.tag) = std::move(f.data);
  return ds;
}

/// Assembles train/dev/test from three files that share dim and property space.
inline ProbingDataset load_dataset(const std::string& train_path, const std::string& dev_path, const std::string& test_path) {
  ProbingDataset ds;
  bool first = true;
  for (auto [path, tag] : {std::pair{train_path, SplitTag::train}, std::pair{dev_path, SplitTag::dev}, std::pair{test_path, SplitTag::test}}) {
    SplitFile f = load_split_file(path);
    if (first) {
      ds.dim = f.dim;
      ds.property = f.property;
      first = false;
    } else if (f.dim != ds.dim || f.property.values != ds.property.values) {
      throw DataError("'" + path + "' disagrees with the other splits on dim or value table");
    }
    if (ds.property.attribute.empty()) ds.property.attribute = f.property.attribute;
    ds.split(tag) = std::move(f.data);
  }
  return ds;
}

inline SplitFile to_split_file(const ProbingDataset& ds, SplitTag tag) { return {ds.dim, ds.property, tag, ds.split(tag)}; }

// ---------------------------------------------------------------------------
// Transformations

/// Drops values whose count summed across splits is below `min_count` and
/// reindexes labels. Throws DataError if fewer than two values survive.
inline ProbingDataset filter_rare_values(const ProbingDataset& ds, int min_count = 20) {
  require(min_count >= 1, "filter_rare_values: min_count must be >= 1");
  const int nv = ds.property.num_values();
  std::vector<long> counts(static_cast<std::size_t>(nv), 0);
  for (SplitTag t : {SplitTag::train, SplitTag::dev, SplitTag::test})
    for (int l : ds.split(t).labels) ++counts[static_cast<std::size_t>(l)];

  std::vector<int> remap(static_cast<std::size_t>(nv), -1);
  ProbingDataset out;
  out.dim = ds.dim;
  out.property.attribute = ds.property.attribute;
  for (int v = 0; v < nv; ++v) {
    if (counts[static_cast<std::size_t>(v)] >= min_count) {
      remap[static_cast<std::size_t>(v)] = out.property.num_values();
      out.property.values.push_back(ds.property.values[static_cast<std::size_t>(v)]);
    }
  }
  if (out.property.num_values() < 2)
    throw DataError("fewer than two property values occur at least " + std::to_string(min_count) + " times");

  for (SplitTag t : {SplitTag::train, SplitTag::dev, SplitTag::test}) {
    const Split& src = ds.split(t);
    std::vector<int> keep;
    for (int n = 0; n < src.size(); ++n)
      if (remap[static_cast<std::size_t>(src.labels[static_cast<std::size_t>(n)])] >= 0) keep.push_back(n);
    Split dst = src.rows(keep);
    for (int& l : dst.labels) l = remap[static_cast<std::size_t>(l)];
    out.split(t) = std::move(dst);
  }
  return out;
}

/// Deterministic shuffle-and-cut of a training split into (fit, holdout).
inline std::pair<Split, Split> split_holdout(const Split& train, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "split_holdout: fraction must be in (0, 1)");
  require(train.size() >= 2, "split_holdout: need at least two records");
  std::vector<int> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  int n_hold = static_cast<int>(std::lround(fraction * train.size()));
  n_hold = std::clamp(n_hold, 1, train.size() - 1);
  std::vector<int> hold(order.begin(), order.begin() + n_hold);
  std::vector<int> fit(order.begin() + n_hold, order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(fit.begin(), fit.end());
  return {train.rows(fit), train.rows(hold)};
}

/// Per-value record counts over all splits.
inline std::vector<long> value_counts(const ProbingDataset& ds) {
  std::vector<long> counts(static_cast<std::size_t>(ds.property.num_values()), 0);
  for (SplitTag t : {SplitTag::train, SplitTag::dev, SplitTag::test})
    for (int l : ds.split(t).labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

}  // namespace latent_probe
