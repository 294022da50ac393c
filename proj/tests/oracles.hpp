#pragma once
// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "proofkit/adjacency.hpp"
#include "proofkit/common.hpp"
#include "proofkit/evalkit.hpp"
#include "proofkit/volume.hpp"

namespace oracle {

using namespace proofkit;

// Random labels in [0, n_labels) with spatially blocky structure so edges have
// varied contact counts.
inline LabelVolume random_labels(uint64_t seed, int64_t edge = 32, uint64_t n_labels = 12, int64_t chunk = 16) {
  Rng rng(seed);
  Dense<uint64_t> d({edge, edge, edge});
  const int64_t cell = 1 + static_cast<int64_t>(rng.below(4));
  for (int64_t z = 0; z < edge; ++z)
    for (int64_t y = 0; y < edge; ++y)
      for (int64_t x = 0; x < edge; ++x) {
        if (x % cell == 0 || rng.uniform() < 0.3) d(x, y, z) = rng.below(n_labels);
        else d(x, y, z) = d(x - 1, y, z);
      }
  return LabelVolume::from_dense(d, {d.dims, {8, 8, 8}, DType::label64, chunk});
}

// Single pass over every voxel and its six neighbours; each unordered face
// pair is seen twice and counted once. rep_location follows the documented
// rule: the a-side voxel with the most (a,b) face pairs inside its 3^3 cube,
// ties by smallest (x,y,z).
inline std::vector<AdjacencyEdge> brute_adjacency(const Dense<uint64_t>& d, int64_t factor = 1,
                                                  const Dims& full = {0, 0, 0}) {
  struct Acc {
    int64_t twice = 0;
    int64_t best = -1;
    Voxel rep;
  };
  std::map<std::pair<uint64_t, uint64_t>, Acc> acc;
  auto pairs_in_cube = [&](const Voxel& v, uint64_t a, uint64_t b) {
    int64_t n = 0;
    for (int64_t z = v.z - 1; z <= v.z + 1; ++z)
      for (int64_t y = v.y - 1; y <= v.y + 1; ++y)
        for (int64_t x = v.x - 1; x <= v.x + 1; ++x)
          for (int64_t w = 0; w < 3; ++w) {
            int64_t q[3] = {x, y, z};
            ++q[w];
            if (q[0] > v.x + 1 || q[1] > v.y + 1 || q[2] > v.z + 1) continue;
            const uint64_t l = d.get(x, y, z), m = d.get(q[0], q[1], q[2]);
            if (!d.contains(x, y, z) || !d.contains(q[0], q[1], q[2])) continue;
            if ((l == a && m == b) || (l == b && m == a)) ++n;
          }
    return n;
  };
  const int64_t off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int64_t z = 0; z < d.dims[2]; ++z)
    for (int64_t y = 0; y < d.dims[1]; ++y)
      for (int64_t x = 0; x < d.dims[0]; ++x)
        for (const auto& o : off) {
          const int64_t qx = x + o[0], qy = y + o[1], qz = z + o[2];
          if (!d.contains(qx, qy, qz)) continue;
          const uint64_t l = d(x, y, z), m = d(qx, qy, qz);
          if (l == 0 || m == 0 || l == m) continue;
          auto& a = acc[{std::min(l, m), std::max(l, m)}];
          ++a.twice;
          if (l < m) {
            const Voxel v{x, y, z};
            const int64_t s = pairs_in_cube(v, l, m);
            if (s > a.best || (s == a.best && v < a.rep)) {
              a.best = s;
              a.rep = v;
            }
          }
        }
  std::vector<AdjacencyEdge> out;
  for (const auto& [k, a] : acc) {
    AdjacencyEdge e;
    e.a = k.first;
    e.b = k.second;
    e.contact_voxels = a.twice / 2;
    e.factor = factor;
    const Dims lim = full[0] ? full : d.dims;
    e.rep_location = {std::min(a.rep.x * factor + factor / 2, lim[0] - 1),
                      std::min(a.rep.y * factor + factor / 2, lim[1] - 1),
                      std::min(a.rep.z * factor + factor / 2, lim[2] - 1)};
    out.push_back(e);
  }
  return out;
}

// PR curve by sweeping every candidate threshold and counting directly.
inline PrCurve brute_pr(const std::vector<std::pair<double, int>>& scored) {
  std::vector<double> th;
  int64_t pos = 0;
  for (const auto& [s, l] : scored) {
    th.push_back(s);
    pos += l;
  }
  std::sort(th.begin(), th.end(), std::greater<>());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  PrCurve c;
  c.positives = pos;
  double prev_recall = 0;
  for (double t : th) {
    PrPoint p;
    p.threshold = t;
    for (const auto& [s, l] : scored) {
      if (s >= t) (l ? p.tp : p.fp)++;
      else if (l) ++p.fn;
    }
    p.precision = static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp);
    p.recall = static_cast<double>(p.tp) / static_cast<double>(pos);
    c.auprc += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
    c.points.push_back(p);
  }
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("proofkit-" + tag + "-" + hex64(mix64(
        static_cast<uint64_t>(std::hash<std::string>{}(tag)) ^ static_cast<uint64_t>(reinterpret_cast<uintptr_t>(this)))));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace oracle
