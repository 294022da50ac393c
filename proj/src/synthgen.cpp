#include "proofkit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "json.hpp"
#include "proofkit/adjacency.hpp"

namespace proofkit {

void SynthConfig::validate() const {
  for (auto d : dims)
    if (d < 8) throw Error("invalid_argument", "synth dims must be >= 8");
  if (neuron_count < 1) throw Error("invalid_argument", "neuron_count must be >= 1");
  if (split_count < 0) throw Error("invalid_argument", "split_count must be >= 0");
  if (!(tube_radius_min > 0) || tube_radius_max < tube_radius_min)
    throw Error("invalid_argument", "bad tube radius range");
  if (twig_count < 0) throw Error("invalid_argument", "twig_count must be >= 0");
  if (synapse_density < 0 || noise_sigma < 0 || tube_length_vox <= 0 || twig_length_vox <= 0)
    throw Error("invalid_argument", "densities and lengths must be >= 0");
  if (p_false_membrane < 0 || p_false_membrane > 1) throw Error("invalid_argument", "p_false_membrane not in [0,1]");
  if (type_count < 1) throw Error("invalid_argument", "type_count must be >= 1");
}

namespace {

constexpr uint8_t kInterior = 185;
constexpr uint8_t kMembrane = 55;
constexpr uint8_t kExtracellular = 135;
constexpr int kPlacementRetries = 60;
constexpr double kMinNewFraction = 0.35;
constexpr int64_t kMinFragmentVoxels = 150;
constexpr int kMinFragmentSteps = 3;

struct Vec3 {
  double x, y, z;
};

Vec3 random_direction(Rng& rng) {
  for (;;) {
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
    if (n > 1e-9) return {d.x / n, d.y / n, d.z / n};
  }
}

struct Tube {
  std::vector<Vec3> centers;
  std::vector<double> radii;
};

Tube random_walk(const SynthConfig& cfg, Rng& rng, Vec3 p, double r, double length) {
  Tube t;
  Vec3 d = random_direction(rng);
  double travelled = 0;
  while (travelled < length) {
    t.centers.push_back(p);
    t.radii.push_back(r);
    const double step = std::max(1.0, 0.5 * r);
    d = {d.x + 0.25 * rng.normal(), d.y + 0.25 * rng.normal(), d.z + 0.25 * rng.normal()};
    const double n = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
    d = {d.x / n, d.y / n, d.z / n};
    Vec3 q{p.x + step * d.x, p.y + step * d.y, p.z + step * d.z};
    // Bounce off the volume faces.
    double* qa[3] = {&q.x, &q.y, &q.z};
    double* da[3] = {&d.x, &d.y, &d.z};
    for (int a = 0; a < 3; ++a) {
      const double lo = r, hi = static_cast<double>(cfg.dims[a]) - 1 - r;
      if (*qa[a] < lo || *qa[a] > hi) {
        *da[a] = -*da[a];
        *qa[a] = std::clamp(*qa[a], lo, std::max(lo, hi));
      }
    }
    p = q;
    r = std::clamp(r + 0.15 * rng.normal(), cfg.tube_radius_min, cfg.tube_radius_max);
    travelled += step;
  }
  return t;
}

Tube random_walk(const SynthConfig& cfg, Rng& rng) {
  const double rmax = cfg.tube_radius_max;
  const Vec3 p{rng.uniform(rmax, cfg.dims[0] - 1 - rmax), rng.uniform(rmax, cfg.dims[1] - 1 - rmax),
               rng.uniform(rmax, cfg.dims[2] - 1 - rmax)};
  const double r = rng.uniform(cfg.tube_radius_min, cfg.tube_radius_max);
  return random_walk(cfg, rng, p, r, cfg.tube_length_vox);
}

// Paints the tube's unowned voxels as neuron n; returns the painted indices
// and the number of voxels covered that n did not already own.
template <class Tag>
int64_t paint_tube(const Tube& tube, uint32_t n, Dense<uint32_t>& owner, Dense<Tag>& tag,
                   const std::function<Tag(size_t)>& tag_of_step, std::vector<size_t>& painted) {
  const Dims dims = owner.dims;
  int64_t touched = 0;
  for (size_t s = 0; s < tube.centers.size(); ++s) {
    const Vec3 c = tube.centers[s];
    const double r = tube.radii[s];
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(c.x - r)));
    const int64_t x1 = std::min<int64_t>(dims[0] - 1, static_cast<int64_t>(std::ceil(c.x + r)));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(c.y - r)));
    const int64_t y1 = std::min<int64_t>(dims[1] - 1, static_cast<int64_t>(std::ceil(c.y + r)));
    const int64_t z0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(c.z - r)));
    const int64_t z1 = std::min<int64_t>(dims[2] - 1, static_cast<int64_t>(std::ceil(c.z + r)));
    for (int64_t z = z0; z <= z1; ++z)
      for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
          const double dx = x - c.x, dy = y - c.y, dz = z - c.z;
          if (dx * dx + dy * dy + dz * dz > r * r) continue;
          const size_t i = owner.index(x, y, z);
          if (owner.data[i] == n) continue;
          ++touched;
          if (owner.data[i] != 0) continue;
          owner.data[i] = n;
          tag.data[i] = tag_of_step(s);
          painted.push_back(i);
        }
  }
  return touched;
}

struct Fragment {
  uint32_t neuron;
  int32_t begin;  // path step range [begin, end)
  int32_t end;
  int32_t twig = -1;
};

}  // namespace

SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Dims dims = cfg.dims;
  const int64_t nvox = voxel_count(dims);
  Dense<uint32_t> owner(dims, 0);
  Dense<int32_t> step_of(dims, -1);
  std::vector<int32_t> step_count(static_cast<size_t>(cfg.neuron_count) + 1, 0);

  // Paint neurons as tubes; the first step that covers a voxel owns it so
  // step indices increase monotonically along each tube.
  std::vector<size_t> painted;
  std::vector<Tube> trunks;
  for (uint32_t n = 1; n <= static_cast<uint32_t>(cfg.neuron_count); ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const Tube tube = random_walk(cfg, rng);
      painted.clear();
      const int64_t touched = paint_tube<int32_t>(
          tube, n, owner, step_of, [](size_t st) { return static_cast<int32_t>(st); }, painted);
      if (touched > 0 && static_cast<double>(painted.size()) >= kMinNewFraction * static_cast<double>(touched) &&
          static_cast<int64_t>(painted.size()) >= 4 * kMinFragmentVoxels) {
        placed = true;
        step_count[n] = static_cast<int32_t>(tube.centers.size());
        trunks.push_back(tube);
      } else {
        for (size_t i : painted) {
          owner.data[i] = 0;
          step_of.data[i] = -1;
        }
      }
    }
    if (!placed) throw Error("infeasible", "cannot place neuron " + std::to_string(n) + " within retry budget");
  }

  // Twigs start inside a trunk and keep only voxels nobody owns yet; one
  // that ends up too small or not face-touching its trunk is regrown.
  Dense<int32_t> twig_of(dims, -1);
  std::vector<uint32_t> twig_neuron;
  const int64_t stride[3] = {1, dims[0], dims[0] * dims[1]};
  for (int t = 0; t < cfg.twig_count; ++t) {
    bool placed = false;
    uint32_t placed_n = 0;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const uint32_t n = 1 + static_cast<uint32_t>(rng.below(static_cast<uint64_t>(cfg.neuron_count)));
      const Tube& trunk = trunks[n - 1];
      const size_t at = static_cast<size_t>(rng.below(trunk.centers.size()));
      const double r = rng.uniform(cfg.tube_radius_min, std::max(cfg.tube_radius_min, 0.75 * trunk.radii[at]));
      const Tube tube = random_walk(cfg, rng, trunk.centers[at], r, cfg.twig_length_vox);
      painted.clear();
      paint_tube<int32_t>(tube, n, owner, twig_of, [t](size_t) { return t; }, painted);
      bool touches = false;
      for (size_t i : painted) {
        const int64_t ii = static_cast<int64_t>(i);
        const int64_t c[3] = {ii % dims[0], (ii / dims[0]) % dims[1], ii / (dims[0] * dims[1])};
        for (int a = 0; a < 3 && !touches; ++a)
          for (int sg = -1; sg <= 1 && !touches; sg += 2) {
            if (c[a] + sg < 0 || c[a] + sg >= dims[a]) continue;
            const size_t j = static_cast<size_t>(ii + sg * stride[a]);
            touches = owner.data[j] == n && twig_of.data[j] < 0;
          }
        if (touches) break;
      }
      if (touches && static_cast<int64_t>(painted.size()) >= kMinFragmentVoxels) {
        placed = true;
        placed_n = n;
      } else {
        for (size_t i : painted) {
          owner.data[i] = 0;
          twig_of.data[i] = -1;
        }
      }
    }
    if (!placed) throw Error("infeasible", "cannot place twig " + std::to_string(t) + " within retry budget");
    twig_neuron.push_back(placed_n);
  }

  // Voxel counts per (neuron, step) for choosing cut positions.
  std::vector<std::vector<int64_t>> step_voxels(static_cast<size_t>(cfg.neuron_count) + 1);
  for (int n = 1; n <= cfg.neuron_count; ++n) step_voxels[n].assign(static_cast<size_t>(step_count[n]) + 1, 0);
  for (int64_t i = 0; i < nvox; ++i)
    if (owner.data[i] != 0 && twig_of.data[i] < 0) ++step_voxels[owner.data[i]][static_cast<size_t>(step_of.data[i]) + 1];
  for (int n = 1; n <= cfg.neuron_count; ++n)
    std::partial_sum(step_voxels[n].begin(), step_voxels[n].end(), step_voxels[n].begin());
  auto range_voxels = [&](const Fragment& f, int32_t b, int32_t e) {
    return step_voxels[f.neuron][static_cast<size_t>(e)] - step_voxels[f.neuron][static_cast<size_t>(b)];
  };

  std::vector<Fragment> fragments;
  for (uint32_t n = 1; n <= static_cast<uint32_t>(cfg.neuron_count); ++n) fragments.push_back({n, 0, step_count[n]});

  // Each cut splits one fragment at a path step. Cut positions favour the
  // fragment ends so most neurons keep a dominant trunk.
  for (int c = 0; c < cfg.split_count; ++c) {
    bool done = false;
    for (int attempt = 0; attempt < 200 && !done; ++attempt) {
      const size_t fi = static_cast<size_t>(rng.below(fragments.size()));
      const Fragment f = fragments[fi];
      if (f.end - f.begin < 2 * kMinFragmentSteps) continue;
      const double u = rng.uniform();
      const double frac = 0.5 * u * u;
      const bool from_start = rng.below(2) == 0;
      const int32_t span = f.end - f.begin;
      int32_t offset = kMinFragmentSteps + static_cast<int32_t>(frac * (span - 2 * kMinFragmentSteps));
      const int32_t k = from_start ? f.begin + offset : f.end - offset;
      if (range_voxels(f, f.begin, k) < kMinFragmentVoxels || range_voxels(f, k, f.end) < kMinFragmentVoxels) continue;
      fragments[fi] = {f.neuron, f.begin, k};
      fragments.push_back({f.neuron, k, f.end});
      done = true;
    }
    if (!done) throw Error("infeasible", "cannot place cut " + std::to_string(c) + " within retry budget");
  }

  for (int t = 0; t < cfg.twig_count; ++t) fragments.push_back({twig_neuron[static_cast<size_t>(t)], -1, -1, t});

  // Shuffle fragment ids so ids carry no ordering information.
  std::vector<uint64_t> ids(fragments.size());
  std::iota(ids.begin(), ids.end(), 1);
  for (size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[static_cast<size_t>(rng.below(i))]);

  // Per neuron: sorted cut boundaries with the fragment id of each range.
  std::vector<std::vector<std::pair<int32_t, uint64_t>>> ranges(static_cast<size_t>(cfg.neuron_count) + 1);
  std::vector<uint64_t> twig_ids(static_cast<size_t>(cfg.twig_count));
  GroundTruth gt;
  for (size_t i = 0; i < fragments.size(); ++i) {
    if (fragments[i].twig >= 0) twig_ids[static_cast<size_t>(fragments[i].twig)] = ids[i];
    else ranges[fragments[i].neuron].push_back({fragments[i].begin, ids[i]});
    gt.fragment_to_neuron[ids[i]] = fragments[i].neuron;
  }
  for (auto& r : ranges) std::sort(r.begin(), r.end());

  Dense<uint64_t> neuron_dense(dims, 0), fragment_dense(dims, 0);
  std::map<uint64_t, int64_t> fragment_size;
  std::vector<int64_t> neuron_size(static_cast<size_t>(cfg.neuron_count) + 1, 0);
  for (int64_t i = 0; i < nvox; ++i) {
    const uint32_t n = owner.data[i];
    if (n == 0) continue;
    uint64_t f;
    if (twig_of.data[i] >= 0) {
      f = twig_ids[static_cast<size_t>(twig_of.data[i])];
    } else {
      const auto& r = ranges[n];
      auto it = std::upper_bound(r.begin(), r.end(), std::pair<int32_t, uint64_t>{step_of.data[i], UINT64_MAX});
      f = std::prev(it)->second;
    }
    neuron_dense.data[i] = n;
    fragment_dense.data[i] = f;
    ++fragment_size[f];
    ++neuron_size[n];
  }

  // Largest fragment per neuron, ties to the smaller id.
  std::vector<std::pair<int64_t, uint64_t>> largest(static_cast<size_t>(cfg.neuron_count) + 1, {-1, 0});
  for (const auto& [f, n] : gt.fragment_to_neuron) {
    const int64_t s = fragment_size.count(f) ? fragment_size[f] : 0;
    if (s > largest[n].first) largest[n] = {s, f};
  }
  for (int n = 1; n <= cfg.neuron_count; ++n)
    if (2 * largest[n].first >= neuron_size[n]) gt.identified.insert(largest[n].second);

  // Grayscale: dark membrane on neuron voxels touching another label, and
  // speckled membrane on cut surfaces.
  Dense<uint8_t> gray(dims, 0);
  std::vector<size_t> boundary_pairs;  // flattened (p, q) with distinct neurons
  for (int64_t z = 0; z < dims[2]; ++z)
    for (int64_t y = 0; y < dims[1]; ++y)
      for (int64_t x = 0; x < dims[0]; ++x) {
        const size_t i = neuron_dense.index(x, y, z);
        const uint64_t n = neuron_dense.data[i];
        const uint64_t f = fragment_dense.data[i];
        if (n == 0) {
          gray.data[i] = kExtracellular;
          continue;
        }
        bool membrane = false, cut_surface = false;
        const int64_t c[3] = {x, y, z};
        for (int a = 0; a < 3; ++a)
          for (int s = -1; s <= 1; s += 2) {
            const int64_t v = c[a] + s;
            if (v < 0 || v >= dims[a]) continue;
            const size_t j = static_cast<size_t>(static_cast<int64_t>(i) + s * stride[a]);
            if (neuron_dense.data[j] != n) membrane = true;
            else if (fragment_dense.data[j] != f) cut_surface = true;
            if (s == 1 && neuron_dense.data[j] != 0 && neuron_dense.data[j] != n) {
              boundary_pairs.push_back(i);
              boundary_pairs.push_back(j);
            }
          }
        if (membrane) gray.data[i] = kMembrane;
        else if (cut_surface && rng.uniform() < cfg.p_false_membrane) gray.data[i] = kMembrane;
        else gray.data[i] = kInterior;
      }
  for (auto& g : gray.data) {
    const double v = std::round(static_cast<double>(g) + cfg.noise_sigma * rng.normal());
    g = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
  }

  // Synapses at sampled neuron-neuron contacts.
  const double p_syn = cfg.synapse_density / 1000.0;
  auto voxel_of = [&](size_t i) {
    const int64_t ii = static_cast<int64_t>(i);
    return Voxel{ii % dims[0], (ii / dims[0]) % dims[1], ii / (dims[0] * dims[1])};
  };
  for (size_t k = 0; k + 1 < boundary_pairs.size(); k += 2) {
    if (rng.uniform() >= p_syn) continue;
    size_t pre = boundary_pairs[k], post = boundary_pairs[k + 1];
    if (rng.below(2) == 1) std::swap(pre, post);
    SynapseRecord s;
    s.tbar = voxel_of(pre);
    s.pre_fragment = fragment_dense.data[pre];
    s.psds.push_back(voxel_of(post));
    s.post_fragments.push_back(fragment_dense.data[post]);
    const int extra = static_cast<int>(rng.below(4));
    if (extra > 0) {
      std::vector<size_t> pool;
      const uint64_t pre_neuron = neuron_dense.data[pre];
      for (int64_t dz = -3; dz <= 3; ++dz)
        for (int64_t dy = -3; dy <= 3; ++dy)
          for (int64_t dx = -3; dx <= 3; ++dx) {
            const int64_t x = s.tbar.x + dx, y = s.tbar.y + dy, z = s.tbar.z + dz;
            if (!neuron_dense.contains(x, y, z)) continue;
            const size_t j = neuron_dense.index(x, y, z);
            if (j == post || neuron_dense.data[j] == 0 || neuron_dense.data[j] == pre_neuron) continue;
            pool.push_back(j);
          }
      for (int e = 0; e < extra && !pool.empty(); ++e) {
        const size_t pick = static_cast<size_t>(rng.below(pool.size()));
        s.psds.push_back(voxel_of(pool[pick]));
        s.post_fragments.push_back(fragment_dense.data[pool[pick]]);
        pool[pick] = pool.back();
        pool.pop_back();
      }
    }
    gt.synapses.push_back(std::move(s));
  }

  // Same-neuron fragment contacts are the true merges.
  for (int64_t z = 0; z < dims[2]; ++z)
    for (int64_t y = 0; y < dims[1]; ++y)
      for (int64_t x = 0; x < dims[0]; ++x) {
        const size_t i = fragment_dense.index(x, y, z);
        const uint64_t f = fragment_dense.data[i];
        if (f == 0) continue;
        const int64_t c[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          if (c[a] + 1 >= dims[a]) continue;
          const uint64_t g = fragment_dense.data[i + static_cast<size_t>(stride[a])];
          if (g == 0 || g == f) continue;
          if (neuron_dense.data[i] == neuron_dense.data[i + static_cast<size_t>(stride[a])])
            gt.true_merge_edges.insert({std::min(f, g), std::max(f, g)});
        }
      }

  std::vector<uint64_t> neuron_ids(static_cast<size_t>(cfg.neuron_count));
  std::iota(neuron_ids.begin(), neuron_ids.end(), 1);
  for (size_t i = neuron_ids.size(); i > 1; --i) std::swap(neuron_ids[i - 1], neuron_ids[static_cast<size_t>(rng.below(i))]);
  for (size_t i = 0; i < neuron_ids.size(); ++i) gt.neuron_types[neuron_ids[i]] = static_cast<int>(i % static_cast<size_t>(cfg.type_count));

  VolumeMeta meta;
  meta.dims = dims;
  meta.voxel_size_nm = {cfg.voxel_size_nm, cfg.voxel_size_nm, cfg.voxel_size_nm};
  meta.chunk = cfg.chunk;
  meta.dtype = DType::label64;
  gt.neuron_volume = LabelVolume::from_dense(neuron_dense, meta);
  gt.fragment_volume = LabelVolume::from_dense(fragment_dense, meta);
  meta.dtype = DType::gray8;
  SynthOutput out{std::move(gt), GrayVolume::from_dense(gray, meta)};
  return out;
}

bool same_neuron(const GroundTruth& gt, uint64_t a, uint64_t b) {
  const auto ia = gt.fragment_to_neuron.find(a);
  const auto ib = gt.fragment_to_neuron.find(b);
  if (ia == gt.fragment_to_neuron.end() || ib == gt.fragment_to_neuron.end())
    throw Error("unknown_fragment", "fragment " + std::to_string(ia == gt.fragment_to_neuron.end() ? a : b) +
                                        " not in ground truth");
  return ia->second == ib->second;
}

std::vector<LabeledEdge> label_candidates(const GroundTruth& gt, const std::vector<AdjacencyEdge>& edges) {
  std::vector<LabeledEdge> out;
  out.reserve(edges.size());
  for (const auto& e : edges) out.push_back({&e, same_neuron(gt, e.a, e.b)});
  return out;
}

void write_truth(const std::filesystem::path& path, const GroundTruth& gt) {
  nlohmann::ordered_json j;
  auto f2n = nlohmann::ordered_json::array();
  for (const auto& [f, n] : gt.fragment_to_neuron) f2n.push_back({f, n});
  j["fragment_to_neuron"] = f2n;
  auto edges = nlohmann::ordered_json::array();
  for (const auto& [a, b] : gt.true_merge_edges) edges.push_back({a, b});
  j["true_merge_edges"] = edges;
  auto types = nlohmann::ordered_json::array();
  for (const auto& [n, t] : gt.neuron_types) types.push_back({n, t});
  j["neuron_types"] = types;
  j["identified"] = gt.identified;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << j.dump() << '\n';
}

GroundTruth read_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot read " + path.string());
  GroundTruth gt;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& p : j.at("fragment_to_neuron")) gt.fragment_to_neuron[p.at(0).get<uint64_t>()] = p.at(1).get<uint64_t>();
    for (const auto& p : j.at("true_merge_edges")) gt.true_merge_edges.insert({p.at(0).get<uint64_t>(), p.at(1).get<uint64_t>()});
    for (const auto& p : j.at("neuron_types")) gt.neuron_types[p.at(0).get<uint64_t>()] = p.at(1).get<int>();
    for (const auto& f : j.at("identified")) gt.identified.insert(f.get<uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw Error("format", "bad truth file " + path.string() + ": " + e.what());
  }
  return gt;
}

}  // namespace proofkit
