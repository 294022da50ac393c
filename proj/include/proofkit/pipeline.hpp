#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "proofkit/adjacency.hpp"
#include "proofkit/cnn.hpp"
#include "proofkit/evidence.hpp"
#include "proofkit/fusion.hpp"
#include "proofkit/models.hpp"
#include "proofkit/synthgen.hpp"
#include "proofkit/workflow.hpp"

// File-level pipeline stages behind the CLI subcommands. Each stage reads and
// writes only the files named below inside a data directory (one synthetic
// volume per directory).
namespace proofkit::pipeline {

namespace fs = std::filesystem;

namespace files {
inline constexpr const char* gray = "gray";
inline constexpr const char* fragments = "fragments";
inline constexpr const char* neurons = "neurons";
inline constexpr const char* synapses = "synapses.jsonl";
inline constexpr const char* truth = "truth.json";
inline constexpr const char* adjacency = "adjacency.tsv";
inline constexpr const char* candidates = "candidates.jsonl";
inline constexpr const char* features = "features.jsonl";
inline constexpr const char* scored = "scored.jsonl";
inline constexpr const char* decisions = "decisions.jsonl";
}  // namespace files

// Derived file names for a candidate file. The default candidates.jsonl uses
// evidence.bin/.idx in the data directory, features.jsonl and scored.jsonl;
// any other "<stem>.jsonl" uses "<stem>.evidence/", "<stem>.features.jsonl"
// and "<stem>.scored.jsonl".
struct CandidateFiles {
  fs::path candidates, evidence_dir, features, scored;
};
CandidateFiles candidate_files(const fs::path& dir, const std::string& candidates_name);

struct Dataset {
  fs::path dir;
  GrayVolume gray;
  LabelVolume fragments;
  std::vector<SynapseRecord> synapses;
  GroundTruth truth;  // tables only; volumes are not loaded
  bool has_truth = false;

  // Cell types are known only for identified fragments.
  std::map<uint64_t, int> known_types() const;
  std::vector<uint64_t> fragment_ids() const;
  BodyState initial_bodies() const;
  // Initial bodies with decisions.jsonl (when present) replayed on top.
  BodyState current_bodies(const std::vector<MergeCandidate>& known) const;
  int label(const MergeCandidate& c) const;  // requires truth
};

Dataset load_dataset(const fs::path& dir, bool require_truth = false);

struct FeatureParams {
  int64_t edge = kDefaultEvidenceEdge;
  double prox_radius_nm = kDefaultProxRadiusNm;
  int64_t context_edge = kDefaultContextEdge;
  int64_t point_factor = kDefaultPointFactor;
  int n_points = kDefaultPointCount;
  uint64_t seed = 0;
};

// Shared by the features stage and on-the-fly orphan scoring so both see
// identical inputs.
class FeatureExtractor {
 public:
  FeatureExtractor(const Dataset& data, const FeatureParams& params);
  EvidenceTensor evidence(const MergeCandidate& c) const;
  ShapeDescriptor shape(const MergeCandidate& c) const;
  CandidateFeatures features(const MergeCandidate& c, const ConnectivityTable& conn) const;

 private:
  const Dataset& data_;
  FeatureParams params_;
  std::vector<Voxel> sites_;
  PointSampler sampler_;
};

// --- stages ---------------------------------------------------------------

void gen(const fs::path& dir, const SynthConfig& config);

void adjacency(const fs::path& dir, int64_t factor, int64_t block_edge);

struct CandidatesParams {
  Workflow workflow = Workflow::focused;
  int64_t min_contact = 1;
  int64_t weight_min = 10;  // orphan workflow only
  int64_t weight_max = 100;
  size_t sample = 0;    // uniform subset of this size (0 = all)
  size_t balanced = 0;  // half merges, half non-merges (needs truth)
  uint64_t seed = 0;
  std::string out = files::candidates;
};
size_t candidates(const fs::path& dir, const CandidatesParams& p);

void features(const fs::path& dir, const std::string& candidates_name, const FeatureParams& p);

enum class LabelSource { truth, decisions };
LabelSource parse_label_source(const std::string& s);

struct TrainCnnParams {
  CnnConfig config;
  TrainHyper hyper;
  LabelSource labels = LabelSource::truth;
  std::string candidates_name = files::candidates;
};
// Writes the bundle (fusion untrained) and train_log.csv beside it.
ModelBundle train_cnn(const std::vector<fs::path>& dirs, const TrainCnnParams& p, const fs::path& out_model);

struct TrainFusionParams {
  SvmOptions svm;
  LabelSource labels = LabelSource::truth;
  std::string candidates_name = files::candidates;
};
ModelBundle train_fusion(const std::vector<fs::path>& dirs, const fs::path& in_model, const TrainFusionParams& p,
                         const fs::path& out_model);

// Scores a candidate file into <name>.scored.jsonl (scored.jsonl for the default).
size_t score(const fs::path& dir, const fs::path& model, const std::string& candidates_name);

struct TriageParams {
  double budget = 0.2;
  std::string source = "fusion";
  std::string candidates_name = files::candidates;
};
TriageResult triage(const fs::path& dir, const TriageParams& p);

struct CalibrateParams {
  double target_error = 0.03;
  double confidence = 0.95;
  std::string candidates_name = "orphan_candidates.jsonl";
  // Label unit: the best-scoring edge of each orphan (what orphan-link acts
  // on) or every candidate edge.
  bool per_orphan = true;
  size_t sample = 500;  // uniform subset cap (0 = all)
  uint64_t seed = 0;
};
struct CalibrationOutcome {
  std::optional<double> threshold;
  int64_t sample_size = 0;
  int64_t errors = 0;
};
CalibrationOutcome calibrate(const std::vector<fs::path>& dirs, const fs::path& in_model, const CalibrateParams& p,
                             const fs::path& out_model);

struct OrphanLinkParams {
  OrphanPolicy policy;
  std::optional<double> threshold_override;
  FeatureParams features;
  std::string timestamp = "1970-01-01T00:00:00Z";  // "now" = wall clock
};
struct OrphanLinkOutcome {
  CompletenessReport report;
  OrphanRunResult run;
};
OrphanLinkOutcome orphan_link(const fs::path& dir, const fs::path& model, const OrphanLinkParams& p);

struct EvalParams {
  std::string candidates_name = files::candidates;
  std::optional<fs::path> assessments;
  double budget = 0.2;
};
void eval(const fs::path& dir, const EvalParams& p);

}  // namespace proofkit::pipeline
