#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "proofkit/body_state.hpp"
#include "proofkit/volume.hpp"

namespace proofkit {

struct AdjacencyEdge {
  uint64_t a = 0;  // a < b
  uint64_t b = 0;
  int64_t contact_voxels = 0;
  Voxel rep_location;  // full resolution
  int64_t factor = 1;

  bool operator==(const AdjacencyEdge&) const = default;
};

enum class Workflow { focused, orphan };

std::string to_string(Workflow w);
Workflow parse_workflow(const std::string& s);

struct MergeCandidate {
  AdjacencyEdge edge;
  std::string id;
  // Name of the volume the edge was computed on; empty for single-volume use.
  std::string volume;
  std::map<std::string, double> scores;
  Workflow workflow = Workflow::focused;
};

constexpr double kBaselineKappa = 50.0;

// Block-parallel 6-connected adjacency on v downsampled by factor.
// Result is sorted by (a, b) and independent of block_edge and thread count.
std::vector<AdjacencyEdge> compute_adjacency(const LabelVolume& v, int64_t factor, int64_t block_edge = 64);

std::string candidate_id(const AdjacencyEdge& e, const std::string& volume = "");
double baseline_score(int64_t contact_voxels, double kappa = kBaselineKappa);

struct CandidateFilter {
  Workflow workflow = Workflow::focused;
  int64_t min_contact = 1;
  // Required for the orphan workflow.
  const BodyState* bodies = nullptr;
  // Orphan workflow: synapse weight range of the non-identified body.
  int64_t orphan_weight_min = 0;
  int64_t orphan_weight_max = INT64_MAX;
  std::string volume;
};

// Focused: every edge with contact >= min_contact. Orphan: edges with exactly
// one endpoint in an identified body. Attaches the baseline score.
std::vector<MergeCandidate> candidates_for(const std::vector<AdjacencyEdge>& edges, const CandidateFilter& filter);

void write_adjacency_tsv(const std::filesystem::path& path, const std::vector<AdjacencyEdge>& edges);
std::vector<AdjacencyEdge> read_adjacency_tsv(const std::filesystem::path& path);

std::string candidate_to_json(const MergeCandidate& c);
MergeCandidate candidate_from_json(const std::string& line);

void write_candidates(const std::filesystem::path& path, const std::vector<MergeCandidate>& cands);
std::vector<MergeCandidate> read_candidates(const std::filesystem::path& path);

}  // namespace proofkit
