#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "proofkit/adjacency.hpp"
#include "proofkit/body_state.hpp"
#include "proofkit/synapse.hpp"

namespace proofkit {

enum class Verdict { merge, no_merge, indeterminate };

std::string to_string(Verdict v);
Verdict parse_verdict(const std::string& s);

struct Decision {
  std::string candidate_id;
  Verdict verdict = Verdict::no_merge;
  std::string source;     // human:<reviewer> or auto:<model fingerprint>
  std::string timestamp;  // UTC, ISO 8601
  uint64_t sequence = 0;

  bool operator==(const Decision&) const = default;
};

std::string decision_to_json(const Decision& d);
Decision decision_from_json(const std::string& line);

// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_now();

// Append-only decision log, optionally backed by a decisions.jsonl file.
// Sequences start at 1 and are gap-free. At most one decision per candidate:
// a repeated append returns the original entry.
class DecisionLog {
 public:
  DecisionLog() = default;
  // Loads an existing file (validating the sequence) and appends to it.
  explicit DecisionLog(const std::filesystem::path& path);

  struct AppendResult {
    Decision decision;
    bool inserted = false;
  };
  AppendResult append(const std::string& candidate_id, Verdict verdict, const std::string& source,
                      const std::string& timestamp);

  std::vector<Decision> entries() const;
  std::optional<Decision> find(const std::string& candidate_id) const;
  size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<Decision> entries_;
  std::unordered_map<std::string, size_t> by_candidate_;
  std::ofstream file_;
};

// Reads decisions.jsonl; throws sequence_gap when sequences are not 1, 2, 3, ...
std::vector<Decision> read_decisions(const std::filesystem::path& path);
void check_sequence(std::span<const Decision> log);

using CandidateIndex = std::unordered_map<std::string, std::pair<uint64_t, uint64_t>>;
CandidateIndex index_candidates(const std::vector<MergeCandidate>& cands);

// Per-fragment synapse weight: T-bars on the fragment plus PSDs on it.
std::unordered_map<uint64_t, int64_t> synapse_weights(const std::vector<SynapseRecord>& synapses);

// Every fragment its own body, with identified flags and synapse weights.
BodyState initial_body_state(const std::vector<uint64_t>& fragments, const std::set<uint64_t>& identified,
                             const std::vector<SynapseRecord>& synapses);

// Applies merge verdicts in log order on top of initial.
BodyState replay(std::span<const Decision> log, const CandidateIndex& candidates, BodyState initial);

struct TriageResult {
  std::vector<size_t> order;  // indices into the input, by score desc then id
  size_t selected = 0;        // ceil(budget * n)
  std::optional<double> value;  // fraction of true merges in the selection
};

TriageResult triage(std::span<const std::string> ids, std::span<const double> scores, double budget_fraction,
                    std::span<const int> labels = {});

// One-sided Wilson score upper bound on a binomial proportion.
double wilson_upper(int64_t errors, int64_t n, double confidence);

struct CalibrationItem {
  double score = 0;
  bool correct = false;
};

// Smallest score whose at-or-above set has Wilson upper error <= target.
std::optional<double> calibrate_threshold(std::span<const CalibrationItem> sample, double target_error,
                                          double confidence = 0.95);

struct OrphanPolicy {
  int64_t weight_min = 10;
  int64_t weight_max = 100;
  double threshold = 0.9;
  int max_merges_per_orphan = 1;
  int passes = 1;

  void validate() const;
};

struct OrphanProposal {
  int pass = 0;
  uint64_t orphan = 0;  // orphan body root at the start of the pass
  MergeCandidate candidate;
  double score = 0;
  bool accepted = false;
};

struct OrphanRunResult {
  std::vector<OrphanProposal> proposals;  // best edge per orphan per pass
  std::vector<Decision> accepted;
};

// Fusion scores for a batch of candidates against the current body state;
// called once per pass.
using CandidateScorer = std::function<std::vector<double>(const std::vector<MergeCandidate>&, const BodyState&)>;

OrphanRunResult orphan_link_run(BodyState& bodies, const std::vector<AdjacencyEdge>& edges,
                                const CandidateScorer& scorer, const OrphanPolicy& policy, DecisionLog& log,
                                const std::string& source, const std::string& timestamp);

struct CompletenessCounts {
  int64_t connections = 0;
  int64_t identified_connections = 0;
  double fraction() const {
    return connections ? static_cast<double>(identified_connections) / static_cast<double>(connections) : 0.0;
  }
};

CompletenessCounts completeness(const BodyState& bodies, const std::vector<SynapseRecord>& synapses);

struct CompletenessReport {
  CompletenessCounts before;
  CompletenessCounts after;
  int64_t accepted_merges = 0;
  // Synaptic elements that moved from non-identified into identified bodies.
  int64_t tbars_added = 0;
  int64_t psds_added = 0;
};

CompletenessReport completeness_report(const BodyState& before, const BodyState& after,
                                       const std::vector<SynapseRecord>& synapses, int64_t accepted_merges);
void write_completeness_report(const std::filesystem::path& path, const CompletenessReport& r);

}  // namespace proofkit
