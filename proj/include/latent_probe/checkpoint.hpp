#pragma once

// Single-file probe checkpoints.
//
//   "LPCK" u32 version
//   u8 probe kind, u8 family kind, u32 dim
//   u16 len + attribute, u32 num_values, num_values x (u16 len + value)
//   discriminative: u32 layers, per layer u32 out, u32 in
//   gaussian: nothing further in the header
//   payload (float32, little-endian):
//     discriminative: per layer weight (row-major), bias
//     gaussian: means (K x d row-major), K covariances (d x d), K log-priors
//   u32 phi length + phi (float32)

#include <fstream>
#include <variant>

#include "latent_probe/dataset.hpp"
#include "latent_probe/gaussian_probe.hpp"
#include "latent_probe/probes.hpp"
#include "latent_probe/subset_distributions.hpp"

namespace latent_probe {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ProbeKind kind = ProbeKind::linear;
  FamilyKind family = FamilyKind::cond_poisson;
  int dim = 0;
  PropertySpace property;
  std::variant<DiscriminativeProbe, GaussianProbe> probe;
  Eigen::VectorXd phi;  // empty for fitted baselines

  int num_classes() const {
    return std::visit([](const auto& p) { return p.num_classes(); }, probe);
  }
};

namespace detail {

inline void put_str16(ByteWriter& w, const std::string& s) {
  if (s.size() > 0xFFFF) throw DataError("checkpoint: string too long");
  w.put(static_cast<std::uint16_t>(s.size()));
  w.bytes(s.data(), s.size());
}

inline void put_matrix(ByteWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.put_f32(static_cast<float>(m(r, c)));
}

inline Eigen::MatrixXd get_matrix(ByteReader& r, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const float v = r.get_f32();
      if (!std::isfinite(v)) throw DataError("checkpoint: non-finite parameter");
      m(i, j) = v;
    }
  return m;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  detail::ByteWriter w(os);
  w.bytes("LPCK", 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(ck.kind));
  w.put(static_cast<std::uint8_t>(ck.family));
  w.put(static_cast<std::uint32_t>(ck.dim));
  detail::put_str16(w, ck.property.attribute);
  w.put(static_cast<std::uint32_t>(ck.property.values.size()));
  for (const auto& v : ck.property.values) detail::put_str16(w, v);
  if (const auto* p = std::get_if<DiscriminativeProbe>(&ck.probe)) {
    w.put(static_cast<std::uint32_t>(p->layers().size()));
    for (const auto& l : p->layers()) {
      w.put(static_cast<std::uint32_t>(l.weight.rows()));
      w.put(static_cast<std::uint32_t>(l.weight.cols()));
    }
    for (const auto& l : p->layers()) {
      detail::put_matrix(w, l.weight);
      detail::put_matrix(w, l.bias);
    }
  } else {
    const auto& g = std::get<GaussianProbe>(ck.probe);
    detail::put_matrix(w, g.means());
    for (const auto& s : g.covariances()) detail::put_matrix(w, s);
    detail::put_matrix(w, g.log_priors());
  }
  w.put(static_cast<std::uint32_t>(ck.phi.size()));
  detail::put_matrix(w, ck.phi);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  detail::ByteReader r(is);
  if (r.get_string(4) != "LPCK") throw DataError("checkpoint: bad magic");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
  Checkpoint ck;
  const auto kind = r.get<std::uint8_t>();
  const auto family = r.get<std::uint8_t>();
  if (kind > static_cast<std::uint8_t>(ProbeKind::gaussian)) throw DataError("checkpoint: bad probe kind");
  if (family > static_cast<std::uint8_t>(FamilyKind::fixed_full)) throw DataError("checkpoint: bad family kind");
  ck.kind = static_cast<ProbeKind>(kind);
  ck.family = static_cast<FamilyKind>(family);
  ck.dim = static_cast<int>(r.get<std::uint32_t>());
  ck.property.attribute = r.get_string(r.get<std::uint16_t>());
  const auto nv = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nv; ++i) ck.property.values.push_back(r.get_string(r.get<std::uint16_t>()));
  ck.property.check_unique();
  const auto k = static_cast<Eigen::Index>(nv);
  if (ck.kind == ProbeKind::gaussian) {
    Eigen::MatrixXd means = detail::get_matrix(r, k, ck.dim);
    std::vector<Eigen::MatrixXd> covs;
    for (Eigen::Index c = 0; c < k; ++c) covs.push_back(detail::get_matrix(r, ck.dim, ck.dim));
    Eigen::VectorXd priors = detail::get_matrix(r, k, 1);
    ck.probe = GaussianProbe(std::move(means), std::move(covs), std::move(priors));
  } else {
    const auto nl = r.get<std::uint32_t>();
    if (nl == 0 || nl > 16) throw DataError("checkpoint: bad layer count");
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    for (std::uint32_t l = 0; l < nl; ++l) {
      const auto out = static_cast<Eigen::Index>(r.get<std::uint32_t>());
      const auto in = static_cast<Eigen::Index>(r.get<std::uint32_t>());
      shapes.emplace_back(out, in);
    }
    std::vector<Layer> layers;
    for (const auto& [out, in] : shapes) {
      Layer l;
      l.weight = detail::get_matrix(r, out, in);
      l.bias = detail::get_matrix(r, out, 1);
      layers.push_back(std::move(l));
    }
    DiscriminativeProbe p(ck.kind, std::move(layers));
    if (p.dim() != ck.dim || p.num_classes() != static_cast<int>(nv)) throw DataError("checkpoint: layer shapes disagree with header");
    ck.probe = std::move(p);
  }
  const auto np = r.get<std::uint32_t>();
  ck.phi = detail::get_matrix(r, static_cast<Eigen::Index>(np), 1);
  if (!r.at_eof()) throw DataError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace latent_probe
