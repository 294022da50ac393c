#include "proofkit/evidence.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace proofkit {

std::vector<Voxel> synapse_sites(const std::vector<SynapseRecord>& synapses) {
  std::vector<Voxel> sites;
  for (const auto& s : synapses) {
    sites.push_back(s.tbar);
    sites.insert(sites.end(), s.psds.begin(), s.psds.end());
  }
  return sites;
}

EvidenceTensor extract_evidence(const GrayVolume& gray, const LabelVolume& labels, std::span<const Voxel> sites,
                                const MergeCandidate& cand, int64_t edge, double prox_radius_nm) {
  if (edge < 1 || edge % 2 == 0) throw Error("invalid_argument", "evidence edge must be odd");
  const Voxel c = cand.edge.rep_location;
  const int64_t h = edge / 2;
  const Voxel origin{c.x - h, c.y - h, c.z - h};
  const Dims ext{edge, edge, edge};
  const Dense<uint8_t> g = gray.region(origin, ext);
  const Dense<uint64_t> l = labels.region(origin, ext);
  EvidenceTensor t(edge, c);
  const size_t n = t.channel_size();
  const uint64_t a = cand.edge.a, b = cand.edge.b;
  for (size_t i = 0; i < n; ++i) {
    t.data[i] = static_cast<float>(g.data[i]) / 255.0f;
    t.data[n + i] = l.data[i] == a ? 1.0f : 0.0f;
    t.data[2 * n + i] = l.data[i] == b ? 1.0f : 0.0f;
  }
  const auto& vs = labels.meta().voxel_size_nm;
  int64_t reach[3];
  for (int k = 0; k < 3; ++k) reach[k] = static_cast<int64_t>(std::floor(prox_radius_nm / vs[k]));
  const double r2 = prox_radius_nm * prox_radius_nm;
  for (const Voxel& s : sites) {
    const int64_t sl[3] = {s.x - origin.x, s.y - origin.y, s.z - origin.z};
    bool near = true;
    for (int k = 0; k < 3; ++k)
      if (sl[k] < -reach[k] || sl[k] >= edge + reach[k]) near = false;
    if (!near) continue;
    for (int64_t z = std::max<int64_t>(0, sl[2] - reach[2]); z <= std::min(edge - 1, sl[2] + reach[2]); ++z)
      for (int64_t y = std::max<int64_t>(0, sl[1] - reach[1]); y <= std::min(edge - 1, sl[1] + reach[1]); ++y)
        for (int64_t x = std::max<int64_t>(0, sl[0] - reach[0]); x <= std::min(edge - 1, sl[0] + reach[0]); ++x) {
          const double dx = (x - sl[0]) * vs[0], dy = (y - sl[1]) * vs[1], dz = (z - sl[2]) * vs[2];
          if (dx * dx + dy * dy + dz * dz <= r2) t.data[t.index(3, x, y, z)] = 1.0f;
        }
  }
  return t;
}

EvidenceTensor extract_evidence(const GrayVolume& gray, const LabelVolume& labels,
                                const std::vector<SynapseRecord>& synapses, const MergeCandidate& cand, int64_t edge,
                                double prox_radius_nm) {
  const auto sites = synapse_sites(synapses);
  return extract_evidence(gray, labels, sites, cand, edge, prox_radius_nm);
}

PointSampler::PointSampler(const LabelVolume& labels, int64_t point_factor)
    : labels_(point_factor == 1 ? labels.to_dense() : downsample(labels, point_factor).to_dense()),
      factor_(point_factor) {}

SampledPoints PointSampler::sample(const MergeCandidate& cand, int64_t context_edge, int n_points,
                                   uint64_t seed) const {
  if (n_points < 0 || n_points % 2 != 0) throw Error("invalid_argument", "n_points must be even");
  if (context_edge < 1) throw Error("invalid_argument", "context_edge must be >= 1");
  const Voxel c{cand.edge.rep_location.x / factor_, cand.edge.rep_location.y / factor_,
                cand.edge.rep_location.z / factor_};
  const int64_t lo[3] = {c.x - context_edge / 2, c.y - context_edge / 2, c.z - context_edge / 2};
  std::vector<int64_t> vox_a, vox_b;
  const Dims& d = labels_.dims;
  for (int64_t z = std::max<int64_t>(0, lo[2]); z < std::min(d[2], lo[2] + context_edge); ++z)
    for (int64_t y = std::max<int64_t>(0, lo[1]); y < std::min(d[1], lo[1] + context_edge); ++y)
      for (int64_t x = std::max<int64_t>(0, lo[0]); x < std::min(d[0], lo[0] + context_edge); ++x) {
        const uint64_t l = labels_(x, y, z);
        if (l == cand.edge.a) vox_a.push_back(static_cast<int64_t>(labels_.index(x, y, z)));
        else if (l == cand.edge.b) vox_b.push_back(static_cast<int64_t>(labels_.index(x, y, z)));
      }

  Rng rng(seed);
  const size_t half = static_cast<size_t>(n_points / 2);
  auto draw = [&](std::vector<int64_t>& pool, PointSet& out) {
    out.voxels_in_context = static_cast<int64_t>(pool.size());
    if (pool.empty() || half == 0) return;
    std::vector<int64_t> chosen;
    if (pool.size() >= half) {
      // Partial Fisher-Yates.
      for (size_t i = 0; i < half; ++i) std::swap(pool[i], pool[i + static_cast<size_t>(rng.below(pool.size() - i))]);
      chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(half));
    } else {
      chosen = pool;
      while (chosen.size() < half) chosen.push_back(pool[static_cast<size_t>(rng.below(pool.size()))]);
    }
    const double off = static_cast<double>(factor_ / 2);
    for (int64_t i : chosen) {
      const int64_t x = i % d[0], y = (i / d[0]) % d[1], z = i / (d[0] * d[1]);
      out.points.push_back({static_cast<double>(x * factor_) + off, static_cast<double>(y * factor_) + off,
                            static_cast<double>(z * factor_) + off});
    }
  };
  SampledPoints out;
  out.point_factor = factor_;
  draw(vox_a, out.a);
  draw(vox_b, out.b);
  return out;
}

SampledPoints sample_points(const LabelVolume& labels, const MergeCandidate& cand, int64_t context_edge,
                            int64_t point_factor, int n_points, uint64_t seed) {
  return PointSampler(labels, point_factor).sample(cand, context_edge, n_points, seed);
}

SymEigen3 symmetric_eigen3(const std::array<std::array<double, 3>, 3>& m) {
  double a[3][3];
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a[i][j] = 0.5 * (m[i][j] + m[j][i]);
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    const double diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
    if (off <= 1e-32 * diag || off == 0.0) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  int order[3] = {0, 1, 2};
  std::sort(order, order + 3, [&](int i, int j) { return a[i][i] > a[j][j]; });
  SymEigen3 out;
  for (int i = 0; i < 3; ++i) {
    out.values[i] = a[order[i]][order[i]];
    for (int k = 0; k < 3; ++k) out.vectors[i][k] = v[k][order[i]];
  }
  return out;
}

namespace {

struct CloudStats {
  size_t n = 0;
  std::array<double, 3> centroid{};
  SymEigen3 eig{};
};

CloudStats cloud_stats(const std::vector<std::array<double, 3>>& pts) {
  CloudStats s;
  s.n = pts.size();
  if (pts.empty()) return s;
  for (const auto& p : pts)
    for (int k = 0; k < 3; ++k) s.centroid[k] += p[k];
  for (int k = 0; k < 3; ++k) s.centroid[k] /= static_cast<double>(s.n);
  std::array<std::array<double, 3>, 3> cov{};
  for (const auto& p : pts)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) cov[i][j] += (p[i] - s.centroid[i]) * (p[j] - s.centroid[j]);
  for (auto& row : cov)
    for (auto& x : row) x /= static_cast<double>(s.n);
  s.eig = symmetric_eigen3(cov);
  for (auto& l : s.eig.values) l = std::max(0.0, l);
  return s;
}

uint64_t cell_key(int64_t x, int64_t y, int64_t z) {
  return (static_cast<uint64_t>(x + (1 << 20)) << 42) | (static_cast<uint64_t>(y + (1 << 20)) << 21) |
         static_cast<uint64_t>(z + (1 << 20));
}

std::array<int64_t, 3> cell_of(const std::array<double, 3>& p, int64_t f) {
  return {static_cast<int64_t>(std::floor(p[0] / static_cast<double>(f))),
          static_cast<int64_t>(std::floor(p[1] / static_cast<double>(f))),
          static_cast<int64_t>(std::floor(p[2] / static_cast<double>(f)))};
}

}  // namespace

ShapeDescriptor shape_descriptor(const SampledPoints& pts, const MergeCandidate& cand, int64_t context_edge) {
  ShapeDescriptor d{};
  d[31] = 1.0;
  const double L = static_cast<double>(context_edge * std::max<int64_t>(1, pts.point_factor));
  auto pa = pts.a.points, pb = pts.b.points;
  // Sorting makes every floating-point sum independent of input order.
  std::sort(pa.begin(), pa.end());
  std::sort(pb.begin(), pb.end());
  const CloudStats sa = cloud_stats(pa), sb = cloud_stats(pb);
  const std::array<double, 3> center{static_cast<double>(cand.edge.rep_location.x),
                                     static_cast<double>(cand.edge.rep_location.y),
                                     static_cast<double>(cand.edge.rep_location.z)};
  auto fill_cloud = [&](const CloudStats& s, size_t eig_at, size_t elong_at, size_t off_at) {
    if (s.n == 0) return;
    for (int k = 0; k < 3; ++k) d[eig_at + k] = s.eig.values[k] / (L * L);
    const double l1 = s.eig.values[0];
    if (l1 > 0) {
      d[elong_at] = std::sqrt(s.eig.values[1] / l1);
      d[elong_at + 1] = std::sqrt(s.eig.values[2] / l1);
    }
    for (int k = 0; k < 3; ++k) d[off_at + k] = (s.centroid[k] - center[k]) / L;
  };
  fill_cloud(sa, 0, 6, 10);
  fill_cloud(sb, 3, 8, 13);
  if (sa.n > 0 && sb.n > 0) {
    double dist2 = 0;
    for (int k = 0; k < 3; ++k) dist2 += (sb.centroid[k] - sa.centroid[k]) * (sb.centroid[k] - sa.centroid[k]);
    d[16] = std::sqrt(dist2) / L;
    if (sa.eig.values[0] > 0 && sb.eig.values[0] > 0) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += sa.eig.vectors[0][k] * sb.eig.vectors[0][k];
      d[17] = std::min(1.0, std::abs(dot));
    }
    const int64_t f = std::max<int64_t>(1, pts.point_factor);
    std::unordered_set<uint64_t> cells_a, cells_b;
    for (const auto& p : pa) {
      const auto c = cell_of(p, f);
      cells_a.insert(cell_key(c[0], c[1], c[2]));
    }
    for (const auto& p : pb) {
      const auto c = cell_of(p, f);
      cells_b.insert(cell_key(c[0], c[1], c[2]));
    }
    auto touching = [&](const std::vector<std::array<double, 3>>& pts_, const std::unordered_set<uint64_t>& other) {
      size_t count = 0;
      for (const auto& p : pts_) {
        const auto c = cell_of(p, f);
        bool hit = false;
        for (int64_t dz = -1; dz <= 1 && !hit; ++dz)
          for (int64_t dy = -1; dy <= 1 && !hit; ++dy)
            for (int64_t dx = -1; dx <= 1 && !hit; ++dx)
              if (other.count(cell_key(c[0] + dx, c[1] + dy, c[2] + dz))) hit = true;
        if (hit) ++count;
      }
      return count;
    };
    d[18] = static_cast<double>(touching(pa, cells_b) + touching(pb, cells_a)) / static_cast<double>(pa.size() + pb.size());
  }
  auto occupancy = [&](const PointSet& s, const std::vector<std::array<double, 3>>& sorted) {
    if (sorted.empty()) return 0.0;
    const int64_t f = std::max<int64_t>(1, pts.point_factor);
    std::array<int64_t, 3> lo = cell_of(sorted[0], f), hi = lo;
    for (const auto& p : sorted) {
      const auto c = cell_of(p, f);
      for (int k = 0; k < 3; ++k) {
        lo[k] = std::min(lo[k], c[k]);
        hi[k] = std::max(hi[k], c[k]);
      }
    }
    const double box = static_cast<double>((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1));
    return std::min(1.0, static_cast<double>(s.voxels_in_context) / box);
  };
  d[19] = occupancy(pts.a, pa);
  d[20] = occupancy(pts.b, pb);
  const size_t total = pa.size() + pb.size();
  if (total > 0) {
    std::array<double, 8> hist{};
    for (const auto* cloud : {&pa, &pb})
      for (const auto& p : *cloud) {
        double r2 = 0;
        for (int k = 0; k < 3; ++k) r2 += (p[k] - center[k]) * (p[k] - center[k]);
        const double r = std::sqrt(r2) / (0.5 * L);
        const int bin = std::min(7, static_cast<int>(r * 8.0));
        hist[static_cast<size_t>(bin)] += 1.0;
      }
    for (size_t i = 0; i < 8; ++i) d[21 + i] = hist[i] / static_cast<double>(total);
  }
  auto distinct_count = [](std::vector<std::array<double, 3>> sorted) {
    return static_cast<double>(std::distance(sorted.begin(), std::unique(sorted.begin(), sorted.end())));
  };
  d[29] = std::log1p(distinct_count(pa));
  d[30] = std::log1p(distinct_count(pb));
  return d;
}

ConnectivityTable::ConnectivityTable(const std::vector<SynapseRecord>& synapses, const BodyState& bodies,
                                     const std::map<uint64_t, int>& fragment_types)
    : bodies_(bodies) {
  for (const auto& s : synapses) {
    const uint64_t pre = bodies.find(s.pre_fragment);
    for (uint64_t post_fragment : s.post_fragments) {
      const uint64_t post = bodies.find(post_fragment);
      if (pre == post) continue;
      auto& out = links_[pre];
      ++out.outputs[post];
      ++out.total_out;
      auto& in = links_[post];
      ++in.inputs[pre];
      ++in.total_in;
    }
  }
  // Ascending fragment order: a body takes the type of its smallest typed member.
  for (const auto& [f, t] : fragment_types) {
    if (!bodies.contains(f)) continue;
    body_type_.try_emplace(bodies.find(f), t);
  }
}

const ConnectivityTable::BodyLinks& ConnectivityTable::links(uint64_t root) const {
  static const BodyLinks empty;
  const auto it = links_.find(root);
  return it == links_.end() ? empty : it->second;
}

namespace {

struct Slot {
  int64_t a = 0, b = 0;
};

std::array<Slot, kTopPartners> top_common(const std::map<uint64_t, int64_t>& ma, const std::map<uint64_t, int64_t>& mb) {
  std::vector<std::tuple<int64_t, uint64_t, int64_t, int64_t>> common;  // (-min, key, ca, cb)
  for (const auto& [k, ca] : ma) {
    const auto it = mb.find(k);
    if (it == mb.end()) continue;
    common.emplace_back(-std::min(ca, it->second), k, ca, it->second);
  }
  std::sort(common.begin(), common.end());
  std::array<Slot, kTopPartners> out{};
  for (size_t i = 0; i < common.size() && i < static_cast<size_t>(kTopPartners); ++i)
    out[i] = {std::get<2>(common[i]), std::get<3>(common[i])};
  return out;
}

double frac(int64_t n, int64_t total) { return total > 0 ? static_cast<double>(n) / static_cast<double>(total) : 0.0; }

}  // namespace

ConnectivityFeatures ConnectivityTable::features(uint64_t a, uint64_t b) const {
  const uint64_t A = bodies_.find(a), B = bodies_.find(b);
  const BodyLinks& la = links(A);
  const BodyLinks& lb = links(B);
  ConnectivityFeatures f{};
  auto identified_count = [&](const std::map<uint64_t, int64_t>& m) {
    int64_t n = 0;
    for (const auto& [p, c] : m)
      if (bodies_.identified(p)) n += c;
    return n;
  };
  // Partners excluding the two candidate bodies themselves.
  auto without_pair = [&](const std::map<uint64_t, int64_t>& m) {
    std::map<uint64_t, int64_t> out;
    for (const auto& [p, c] : m)
      if (p != A && p != B) out.emplace(p, c);
    return out;
  };
  auto by_type = [&](const std::map<uint64_t, int64_t>& m) {
    std::map<uint64_t, int64_t> out;
    for (const auto& [p, c] : m) {
      const auto it = body_type_.find(p);
      if (it != body_type_.end()) out[static_cast<uint64_t>(it->second)] += c;
    }
    return out;
  };
  const int64_t totals[4] = {la.total_in, la.total_out, lb.total_in, lb.total_out};
  for (int i = 0; i < 4; ++i) f[static_cast<size_t>(i)] = static_cast<double>(totals[i]);
  const int64_t ident[4] = {identified_count(la.inputs), identified_count(la.outputs), identified_count(lb.inputs),
                            identified_count(lb.outputs)};
  for (int i = 0; i < 4; ++i) {
    f[4 + static_cast<size_t>(i)] = static_cast<double>(ident[i]);
    f[32 + static_cast<size_t>(i)] = frac(ident[i], totals[i]);
  }
  const auto in_a = without_pair(la.inputs), in_b = without_pair(lb.inputs);
  const auto out_a = without_pair(la.outputs), out_b = without_pair(lb.outputs);
  const std::array<std::array<Slot, kTopPartners>, 4> groups = {
      top_common(in_a, in_b), top_common(out_a, out_b), top_common(by_type(in_a), by_type(in_b)),
      top_common(by_type(out_a), by_type(out_b))};
  for (size_t g = 0; g < 4; ++g) {
    const bool input = g % 2 == 0;
    const int64_t ta = input ? la.total_in : la.total_out;
    const int64_t tb = input ? lb.total_in : lb.total_out;
    for (size_t k = 0; k < static_cast<size_t>(kTopPartners); ++k) {
      const size_t at = 8 + g * 6 + k * 2;
      f[at] = static_cast<double>(groups[g][k].a);
      f[at + 1] = static_cast<double>(groups[g][k].b);
      f[at + 28] = frac(groups[g][k].a, ta);
      f[at + 29] = frac(groups[g][k].b, tb);
    }
  }
  return f;
}

ConnectivityFeatures connectivity_features(const std::vector<SynapseRecord>& synapses, const BodyState& bodies,
                                           const std::map<uint64_t, int>& fragment_types, uint64_t a, uint64_t b) {
  return ConnectivityTable(synapses, bodies, fragment_types).features(a, b);
}

EvidenceWriter::EvidenceWriter(const std::filesystem::path& dir) : dir_(dir) {
  std::filesystem::create_directories(dir);
  bin_.open(dir / "evidence.bin", std::ios::binary | std::ios::trunc);
  idx_.open(dir / "evidence.idx", std::ios::trunc);
  if (!bin_ || !idx_) throw Error("io", "cannot open evidence store in " + dir.string());
  idx_ << "candidate_id\toffset\tedge\tcx\tcy\tcz\n";
}

void EvidenceWriter::append(const std::string& candidate_id, const EvidenceTensor& t) {
  static_assert(sizeof(float) == 4);
  const size_t bytes = t.data.size() * sizeof(float);
  if constexpr (std::endian::native == std::endian::little) {
    bin_.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(bytes));
  } else {
    std::vector<unsigned char> buf(bytes);
    for (size_t i = 0; i < t.data.size(); ++i) {
      const uint32_t u = std::bit_cast<uint32_t>(t.data[i]);
      for (int k = 0; k < 4; ++k) buf[i * 4 + static_cast<size_t>(k)] = static_cast<unsigned char>(u >> (8 * k));
    }
    bin_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(bytes));
  }
  idx_ << candidate_id << '\t' << offset_ << '\t' << t.edge << '\t' << t.center.x << '\t' << t.center.y << '\t'
       << t.center.z << '\n';
  offset_ += bytes;
  if (!bin_ || !idx_) throw Error("io", "failed writing evidence store in " + dir_.string());
}

void EvidenceWriter::close() {
  bin_.close();
  idx_.close();
}

EvidenceReader::EvidenceReader(const std::filesystem::path& dir) : bin_path_(dir / "evidence.bin") {
  std::ifstream idx(dir / "evidence.idx");
  if (!idx) throw Error("io", "missing evidence index in " + dir.string());
  std::string line;
  std::getline(idx, line);
  while (std::getline(idx, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    Entry e{};
    if (!(ss >> id >> e.offset >> e.edge >> e.center.x >> e.center.y >> e.center.z))
      throw Error("format", "bad evidence index row");
    entries_[id] = e;
  }
}

EvidenceTensor EvidenceReader::read(const std::string& candidate_id) const {
  const auto it = entries_.find(candidate_id);
  if (it == entries_.end()) throw Error("unknown_candidate", "no evidence for candidate " + candidate_id);
  EvidenceTensor t(it->second.edge, it->second.center);
  std::ifstream in(bin_path_, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(it->second.offset));
  const size_t bytes = t.data.size() * sizeof(float);
  std::vector<unsigned char> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw Error("format", "truncated evidence record for " + candidate_id);
  for (size_t i = 0; i < t.data.size(); ++i) {
    uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= static_cast<uint32_t>(buf[i * 4 + static_cast<size_t>(k)]) << (8 * k);
    t.data[i] = std::bit_cast<float>(u);
  }
  return t;
}

std::vector<std::string> EvidenceReader::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, e] : entries_) out.push_back(id);
  return out;
}

void write_features(const std::filesystem::path& path, const std::vector<CandidateFeatures>& feats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  for (const auto& f : feats) {
    nlohmann::ordered_json j;
    j["id"] = f.id;
    j["shape"] = f.shape;
    j["connectivity"] = f.connectivity;
    out << j.dump() << '\n';
  }
}

std::vector<CandidateFeatures> read_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot read " + path.string());
  std::vector<CandidateFeatures> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CandidateFeatures f;
      f.id = j.at("id").get<std::string>();
      const auto shape = j.at("shape").get<std::vector<double>>();
      const auto conn = j.at("connectivity").get<std::vector<double>>();
      if (shape.size() != kShapeDescriptorSize || conn.size() != kConnectivitySize)
        throw Error("format", "feature vector length mismatch for " + f.id);
      std::copy(shape.begin(), shape.end(), f.shape.begin());
      std::copy(conn.begin(), conn.end(), f.connectivity.begin());
      out.push_back(std::move(f));
    } catch (const nlohmann::json::exception& e) {
      throw Error("format", "bad features line in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace proofkit
