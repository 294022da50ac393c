#include "proofkit/adjacency.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace proofkit {

std::string to_string(Workflow w) { return w == Workflow::focused ? "focused" : "orphan"; }

Workflow parse_workflow(const std::string& s) {
  if (s == "focused") return Workflow::focused;
  if (s == "orphan") return Workflow::orphan;
  throw Error("invalid_argument", "unknown workflow '" + s + "'");
}

namespace {

struct PairKey {
  uint64_t a, b;
  bool operator==(const PairKey&) const = default;
};

struct PairHash {
  size_t operator()(const PairKey& k) const { return static_cast<size_t>(mix64(k.a * 0x9e3779b97f4a7c15ULL ^ k.b)); }
};

struct Accum {
  int64_t contact = 0;
  int64_t best_score = -1;
  Voxel best;
};

void offer(Accum& acc, int64_t score, const Voxel& v) {
  if (score > acc.best_score || (score == acc.best_score && v < acc.best)) {
    acc.best_score = score;
    acc.best = v;
  }
}

// Number of (a,b) face pairs lying entirely inside the 3^3 cube around v.
int64_t rep_score(const Dense<uint64_t>& d, const Voxel& v, uint64_t a, uint64_t b) {
  int64_t score = 0;
  for (int64_t z = v.z - 1; z <= v.z + 1; ++z)
    for (int64_t y = v.y - 1; y <= v.y + 1; ++y)
      for (int64_t x = v.x - 1; x <= v.x + 1; ++x) {
        if (!d.contains(x, y, z) || d(x, y, z) != a) continue;
        const int64_t n[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
        for (const auto& q : n) {
          if (std::abs(q[0] - v.x) > 1 || std::abs(q[1] - v.y) > 1 || std::abs(q[2] - v.z) > 1) continue;
          if (d.contains(q[0], q[1], q[2]) && d(q[0], q[1], q[2]) == b) ++score;
        }
      }
  return score;
}

}  // namespace

std::vector<AdjacencyEdge> compute_adjacency(const LabelVolume& v, int64_t factor, int64_t block_edge) {
  if (!valid_factor(factor)) throw Error("invalid_argument", "adjacency factor must be one of 1,2,4,8,16");
  if (block_edge < 16) throw Error("invalid_argument", "block_edge must be >= 16");
  const Dense<uint64_t> d = factor == 1 ? v.to_dense() : downsample(v, factor).to_dense();
  const Dims& dims = d.dims;
  Dims grid;
  for (int a = 0; a < 3; ++a) grid[a] = (dims[a] + block_edge - 1) / block_edge;
  const size_t nblocks = static_cast<size_t>(voxel_count(grid));

  using BlockResult = std::vector<std::pair<PairKey, Accum>>;
  std::vector<BlockResult> results(nblocks);
  parallel_for(nblocks, [&](size_t bi) {
    const int64_t bx = static_cast<int64_t>(bi) % grid[0];
    const int64_t by = (static_cast<int64_t>(bi) / grid[0]) % grid[1];
    const int64_t bz = static_cast<int64_t>(bi) / (grid[0] * grid[1]);
    const int64_t x0 = bx * block_edge, y0 = by * block_edge, z0 = bz * block_edge;
    const int64_t x1 = std::min(x0 + block_edge, dims[0]);
    const int64_t y1 = std::min(y0 + block_edge, dims[1]);
    const int64_t z1 = std::min(z0 + block_edge, dims[2]);
    std::unordered_map<PairKey, Accum, PairHash> local;
    // Each face pair is visited once: from its lower voxel inside the block
    // core toward +x/+y/+z, reaching one voxel into the block extension.
    for (int64_t z = z0; z < z1; ++z)
      for (int64_t y = y0; y < y1; ++y)
        for (int64_t x = x0; x < x1; ++x) {
          const uint64_t l = d(x, y, z);
          if (l == 0) continue;
          const int64_t nb[3][3] = {{x + 1, y, z}, {x, y + 1, z}, {x, y, z + 1}};
          for (const auto& q : nb) {
            if (!d.contains(q[0], q[1], q[2])) continue;
            const uint64_t m = d(q[0], q[1], q[2]);
            if (m == 0 || m == l) continue;
            const PairKey key{std::min(l, m), std::max(l, m)};
            auto& acc = local[key];
            ++acc.contact;
            const Voxel av = l == key.a ? Voxel{x, y, z} : Voxel{q[0], q[1], q[2]};
            offer(acc, rep_score(d, av, key.a, key.b), av);
          }
        }
    BlockResult r(local.begin(), local.end());
    std::sort(r.begin(), r.end(), [](const auto& p, const auto& q) {
      return std::tie(p.first.a, p.first.b) < std::tie(q.first.a, q.first.b);
    });
    results[bi] = std::move(r);
  });

  std::map<std::pair<uint64_t, uint64_t>, Accum> merged;
  for (const auto& r : results)
    for (const auto& [key, acc] : r) {
      auto& m = merged[{key.a, key.b}];
      m.contact += acc.contact;
      offer(m, acc.best_score, acc.best);
    }

  const Dims& full = v.dims();
  std::vector<AdjacencyEdge> edges;
  edges.reserve(merged.size());
  for (const auto& [key, acc] : merged) {
    AdjacencyEdge e;
    e.a = key.first;
    e.b = key.second;
    e.contact_voxels = acc.contact;
    e.factor = factor;
    e.rep_location = {std::min(acc.best.x * factor + factor / 2, full[0] - 1),
                      std::min(acc.best.y * factor + factor / 2, full[1] - 1),
                      std::min(acc.best.z * factor + factor / 2, full[2] - 1)};
    edges.push_back(e);
  }
  return edges;
}

std::string candidate_id(const AdjacencyEdge& e, const std::string& volume) {
  Fnv1a h;
  if (!volume.empty()) h.str(volume).u64(0);
  h.u64(e.a).u64(e.b).i64(e.rep_location.x).i64(e.rep_location.y).i64(e.rep_location.z);
  return hex64(h.value());
}

double baseline_score(int64_t contact_voxels, double kappa) {
  const double c = static_cast<double>(contact_voxels);
  return c / (c + kappa);
}

std::vector<MergeCandidate> candidates_for(const std::vector<AdjacencyEdge>& edges, const CandidateFilter& filter) {
  if (filter.workflow == Workflow::orphan && filter.bodies == nullptr)
    throw Error("invalid_argument", "orphan candidate filter requires a body state");
  std::vector<MergeCandidate> out;
  for (const auto& e : edges) {
    if (e.contact_voxels < filter.min_contact) continue;
    if (filter.workflow == Workflow::orphan) {
      const BodyState& bs = *filter.bodies;
      if (bs.same_body(e.a, e.b)) continue;
      if (bs.identified(e.a) == bs.identified(e.b)) continue;
      const int64_t w = bs.synapse_weight(bs.identified(e.a) ? e.b : e.a);
      if (w < filter.orphan_weight_min || w > filter.orphan_weight_max) continue;
    }
    MergeCandidate c;
    c.edge = e;
    c.volume = filter.volume;
    c.id = candidate_id(e, filter.volume);
    c.workflow = filter.workflow;
    c.scores["baseline"] = baseline_score(e.contact_voxels);
    out.push_back(std::move(c));
  }
  return out;
}

void write_adjacency_tsv(const std::filesystem::path& path, const std::vector<AdjacencyEdge>& edges) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << "a\tb\tcontact_voxels\trep_x\trep_y\trep_z\tfactor\n";
  for (const auto& e : edges)
    out << e.a << '\t' << e.b << '\t' << e.contact_voxels << '\t' << e.rep_location.x << '\t' << e.rep_location.y
        << '\t' << e.rep_location.z << '\t' << e.factor << '\n';
}

std::vector<AdjacencyEdge> read_adjacency_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("a\tb\t", 0) != 0) throw Error("format", "missing adjacency header in " + path.string());
  std::vector<AdjacencyEdge> edges;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    AdjacencyEdge e;
    if (!(ss >> e.a >> e.b >> e.contact_voxels >> e.rep_location.x >> e.rep_location.y >> e.rep_location.z >> e.factor))
      throw Error("format", "bad adjacency row in " + path.string());
    edges.push_back(e);
  }
  return edges;
}

std::string candidate_to_json(const MergeCandidate& c) {
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["volume"] = c.volume;
  j["a"] = c.edge.a;
  j["b"] = c.edge.b;
  j["contact_voxels"] = c.edge.contact_voxels;
  j["rep_location"] = {c.edge.rep_location.x, c.edge.rep_location.y, c.edge.rep_location.z};
  j["factor"] = c.edge.factor;
  j["workflow"] = to_string(c.workflow);
  j["scores"] = c.scores;
  return j.dump();
}

MergeCandidate candidate_from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    MergeCandidate c;
    c.id = j.at("id").get<std::string>();
    c.volume = j.value("volume", std::string());
    c.edge.a = j.at("a").get<uint64_t>();
    c.edge.b = j.at("b").get<uint64_t>();
    c.edge.contact_voxels = j.at("contact_voxels").get<int64_t>();
    const auto& r = j.at("rep_location");
    c.edge.rep_location = {r.at(0).get<int64_t>(), r.at(1).get<int64_t>(), r.at(2).get<int64_t>()};
    c.edge.factor = j.at("factor").get<int64_t>();
    c.workflow = parse_workflow(j.at("workflow").get<std::string>());
    c.scores = j.at("scores").get<std::map<std::string, double>>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error("format", std::string("bad candidate record: ") + e.what());
  }
}

void write_candidates(const std::filesystem::path& path, const std::vector<MergeCandidate>& cands) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  for (const auto& c : cands) out << candidate_to_json(c) << '\n';
}

std::vector<MergeCandidate> read_candidates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot read " + path.string());
  std::vector<MergeCandidate> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(candidate_from_json(line));
  return out;
}

}  // namespace proofkit
