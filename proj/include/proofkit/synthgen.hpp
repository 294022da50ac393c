#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "proofkit/synapse.hpp"
#include "proofkit/volume.hpp"

namespace proofkit {

struct SynthConfig {
  Dims dims{256, 256, 256};
  int neuron_count = 60;
  double tube_radius_min = 3.0;
  double tube_radius_max = 7.0;
  double tube_length_vox = 1100.0;
  int split_count = 300;
  // Side branches grown from random trunk points; each is its own fragment
  // touching the trunk, like the small detached twigs left by segmentation.
  int twig_count = 150;
  double twig_length_vox = 120.0;
  // Expected synapses per 1000 face-adjacent voxel pairs between neurons.
  double synapse_density = 20.0;
  double noise_sigma = 15.0;
  // Per-voxel probability that a cut surface voxel is drawn as membrane.
  double p_false_membrane = 0.3;
  int type_count = 5;
  int64_t chunk = 64;
  double voxel_size_nm = 8.0;
  uint64_t seed = 0;

  void validate() const;
};

using FragmentPair = std::pair<uint64_t, uint64_t>;

struct GroundTruth {
  LabelVolume neuron_volume;
  LabelVolume fragment_volume;
  std::map<uint64_t, uint64_t> fragment_to_neuron;
  // Adjacent fragment pairs (a < b) of the same neuron.
  std::set<FragmentPair> true_merge_edges;
  std::vector<SynapseRecord> synapses;
  std::map<uint64_t, int> neuron_types;
  // Fragments holding >= 50% of their neuron's voxels.
  std::set<uint64_t> identified;
};

struct SynthOutput {
  GroundTruth truth;
  GrayVolume gray;
};

SynthOutput generate(const SynthConfig& config);

struct AdjacencyEdge;

struct LabeledEdge {
  const AdjacencyEdge* edge = nullptr;
  bool merge = false;
};

// merge iff both fragments belong to the same neuron.
std::vector<LabeledEdge> label_candidates(const GroundTruth& gt, const std::vector<AdjacencyEdge>& edges);
bool same_neuron(const GroundTruth& gt, uint64_t a, uint64_t b);

// truth.json: fragment_to_neuron, true_merge_edges, neuron_types, identified.
void write_truth(const std::filesystem::path& path, const GroundTruth& gt);
// Loads the table parts of truth.json; volumes and synapses are loaded separately.
GroundTruth read_truth(const std::filesystem::path& path);

}  // namespace proofkit
