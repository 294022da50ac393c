#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "proofkit/adjacency.hpp"
#include "proofkit/body_state.hpp"
#include "proofkit/synapse.hpp"
#include "proofkit/volume.hpp"

namespace proofkit {

constexpr int kEvidenceChannels = 4;
constexpr int64_t kDefaultEvidenceEdge = 9;
constexpr double kDefaultProxRadiusNm = 80.0;

// Channels: 0 grayscale / 255, 1 mask of a, 2 mask of b, 3 synapse proximity.
// Layout is channel-major, each channel x-fastest.
struct EvidenceTensor {
  int64_t edge = 0;
  Voxel center;
  std::vector<float> data;

  EvidenceTensor() = default;
  EvidenceTensor(int64_t e, Voxel c) : edge(e), center(c), data(static_cast<size_t>(kEvidenceChannels * e * e * e), 0.f) {}

  size_t channel_size() const { return static_cast<size_t>(edge * edge * edge); }
  size_t index(int c, int64_t x, int64_t y, int64_t z) const {
    return static_cast<size_t>(c) * channel_size() + static_cast<size_t>(x + edge * (y + edge * z));
  }
  float at(int c, int64_t x, int64_t y, int64_t z) const { return data[index(c, x, y, z)]; }
  std::span<const float> channel(int c) const { return {data.data() + static_cast<size_t>(c) * channel_size(), channel_size()}; }

  bool operator==(const EvidenceTensor&) const = default;
};

// All T-bar and PSD sites of a synapse list.
std::vector<Voxel> synapse_sites(const std::vector<SynapseRecord>& synapses);

EvidenceTensor extract_evidence(const GrayVolume& gray, const LabelVolume& labels, std::span<const Voxel> sites,
                                const MergeCandidate& cand, int64_t edge = kDefaultEvidenceEdge,
                                double prox_radius_nm = kDefaultProxRadiusNm);
EvidenceTensor extract_evidence(const GrayVolume& gray, const LabelVolume& labels,
                                const std::vector<SynapseRecord>& synapses, const MergeCandidate& cand,
                                int64_t edge = kDefaultEvidenceEdge, double prox_radius_nm = kDefaultProxRadiusNm);

struct PointSet {
  std::vector<std::array<double, 3>> points;  // full-resolution coordinates
  int64_t voxels_in_context = 0;              // at the sampling resolution
};

struct SampledPoints {
  PointSet a;
  PointSet b;
  int64_t point_factor = 1;
};

constexpr int64_t kDefaultContextEdge = 300;
constexpr int64_t kDefaultPointFactor = 4;
constexpr int kDefaultPointCount = 2048;

// Holds labels downsampled to the point resolution so many candidates can be
// sampled without repeating the downsample.
class PointSampler {
 public:
  PointSampler(const LabelVolume& labels, int64_t point_factor);

  // n_points/2 voxels per segment inside the context cube centered on the
  // candidate location. Without replacement when the segment has enough
  // voxels; otherwise every voxel once plus uniform draws with replacement.
  SampledPoints sample(const MergeCandidate& cand, int64_t context_edge, int n_points, uint64_t seed) const;

  int64_t point_factor() const { return factor_; }

 private:
  Dense<uint64_t> labels_;
  int64_t factor_;
};

SampledPoints sample_points(const LabelVolume& labels, const MergeCandidate& cand, int64_t context_edge,
                            int64_t point_factor, int n_points, uint64_t seed);

constexpr size_t kShapeDescriptorSize = 32;
using ShapeDescriptor = std::array<double, kShapeDescriptorSize>;

// Descriptor layout:
//   0-2   eigenvalues of a (descending) / context_edge^2
//   3-5   eigenvalues of b
//   6-7   sqrt(l2/l1), sqrt(l3/l1) of a
//   8-9   same for b
//   10-12 (centroid a - center) / context_edge
//   13-15 (centroid b - center) / context_edge
//   16    |centroid b - centroid a| / context_edge
//   17    |cos| between principal axes
//   18    fraction of points with an opposite-segment point in the 26-neighbourhood
//   19-20 bounding-box occupancy of a, b
//   21-28 radial histogram of all points around the center
//   29-30 log1p(distinct sampled points) of a, b
//   31    constant 1
ShapeDescriptor shape_descriptor(const SampledPoints& pts, const MergeCandidate& cand, int64_t context_edge);

// Eigen-decomposition of a symmetric 3x3 matrix (cyclic Jacobi). Eigenvalues
// are sorted descending; vectors[i] pairs with values[i].
struct SymEigen3 {
  std::array<double, 3> values;
  std::array<std::array<double, 3>, 3> vectors;
};
SymEigen3 symmetric_eigen3(const std::array<std::array<double, 3>, 3>& m);

constexpr int kTopPartners = 3;
constexpr size_t kConnectivitySize = 60;
using ConnectivityFeatures = std::array<double, kConnectivitySize>;

// Partner counts per body, built once per body state.
//   0-3   inputs a, outputs a, inputs b, outputs b
//   4-7   the same counted only toward identified partners
//   8-13  top-3 common input partners as (count a, count b) per slot
//   14-19 top-3 common output partners
//   20-25 top-3 common input cell types
//   26-31 top-3 common output cell types
//   32-35 entries 4-7 as fractions of 0-3
//   36-59 entries 8-31 as fractions of the segment's total in that direction
// Common partners rank by min(count a, count b) desc, ties by smaller id.
class ConnectivityTable {
 public:
  ConnectivityTable(const std::vector<SynapseRecord>& synapses, const BodyState& bodies,
                    const std::map<uint64_t, int>& fragment_types);

  ConnectivityFeatures features(uint64_t a, uint64_t b) const;

 private:
  struct BodyLinks {
    std::map<uint64_t, int64_t> inputs;
    std::map<uint64_t, int64_t> outputs;
    int64_t total_in = 0;
    int64_t total_out = 0;
  };
  const BodyLinks& links(uint64_t root) const;

  const BodyState& bodies_;
  std::unordered_map<uint64_t, BodyLinks> links_;
  std::unordered_map<uint64_t, int> body_type_;
};

ConnectivityFeatures connectivity_features(const std::vector<SynapseRecord>& synapses, const BodyState& bodies,
                                           const std::map<uint64_t, int>& fragment_types, uint64_t a, uint64_t b);

// evidence.bin (little-endian f32 records) plus evidence.idx
// (candidate id, byte offset, edge, center) as TSV.
class EvidenceWriter {
 public:
  explicit EvidenceWriter(const std::filesystem::path& dir);
  void append(const std::string& candidate_id, const EvidenceTensor& t);
  void close();

 private:
  std::filesystem::path dir_;
  std::ofstream bin_;
  std::ofstream idx_;
  uint64_t offset_ = 0;
};

class EvidenceReader {
 public:
  explicit EvidenceReader(const std::filesystem::path& dir);
  bool contains(const std::string& candidate_id) const { return entries_.count(candidate_id) != 0; }
  EvidenceTensor read(const std::string& candidate_id) const;
  std::vector<std::string> ids() const;

 private:
  struct Entry {
    uint64_t offset;
    int64_t edge;
    Voxel center;
  };
  std::filesystem::path bin_path_;
  std::map<std::string, Entry> entries_;
};

struct CandidateFeatures {
  std::string id;
  ShapeDescriptor shape{};
  ConnectivityFeatures connectivity{};
};

void write_features(const std::filesystem::path& path, const std::vector<CandidateFeatures>& feats);
std::vector<CandidateFeatures> read_features(const std::filesystem::path& path);

}  // namespace proofkit
