#include "proofkit/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "proofkit/common.hpp"
#include "proofkit/evalkit.hpp"

namespace proofkit::pipeline {

using nlohmann::ordered_json;

namespace {

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw Error("missing_input", p.string() + " not found (" + hint + ")");
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<size_t>(rng.below(i))]);
}

}  // namespace

CandidateFiles candidate_files(const fs::path& dir, const std::string& name) {
  CandidateFiles f;
  f.candidates = dir / name;
  if (name == files::candidates) {
    f.evidence_dir = dir;
    f.features = dir / files::features;
    f.scored = dir / files::scored;
    return f;
  }
  std::string stem = name;
  if (stem.size() > 6 && stem.ends_with(".jsonl")) stem.resize(stem.size() - 6);
  f.evidence_dir = dir / (stem + ".evidence");
  f.features = dir / (stem + ".features.jsonl");
  f.scored = dir / (stem + ".scored.jsonl");
  return f;
}

std::map<uint64_t, int> Dataset::known_types() const {
  std::map<uint64_t, int> types;
  for (uint64_t f : truth.identified) {
    auto n = truth.fragment_to_neuron.find(f);
    if (n == truth.fragment_to_neuron.end()) continue;
    auto t = truth.neuron_types.find(n->second);
    if (t != truth.neuron_types.end()) types[f] = t->second;
  }
  return types;
}

std::vector<uint64_t> Dataset::fragment_ids() const {
  std::vector<uint64_t> ids;
  for (const auto& [f, n] : truth.fragment_to_neuron) ids.push_back(f);
  return ids;
}

BodyState Dataset::initial_bodies() const { return initial_body_state(fragment_ids(), truth.identified, synapses); }

BodyState Dataset::current_bodies(const std::vector<MergeCandidate>& known) const {
  BodyState bs = initial_bodies();
  const fs::path log = dir / files::decisions;
  if (!fs::exists(log)) return bs;
  CandidateIndex idx = index_candidates(known);
  const fs::path adj = dir / files::adjacency;
  if (fs::exists(adj))
    for (const auto& e : read_adjacency_tsv(adj)) idx.emplace(candidate_id(e), std::make_pair(e.a, e.b));
  const auto decisions = read_decisions(log);
  return replay(decisions, idx, std::move(bs));
}

int Dataset::label(const MergeCandidate& c) const {
  if (!has_truth) throw Error("missing_input", "truth.json required for ground-truth labels in " + dir.string());
  return same_neuron(truth, c.edge.a, c.edge.b) ? 1 : 0;
}

Dataset load_dataset(const fs::path& dir, bool require_truth) {
  Dataset d;
  d.dir = dir;
  require_file(dir / files::fragments, "run gen first");
  d.gray = read_gray_volume(dir / files::gray);
  d.fragments = read_label_volume(dir / files::fragments);
  d.synapses = read_synapses(dir / files::synapses);
  // Fragment ids, identified flags and types live in truth.json; it is the
  // segmentation metadata as well as the oracle.
  require_file(dir / files::truth, "run gen first");
  d.truth = read_truth(dir / files::truth);
  d.has_truth = true;
  (void)require_truth;
  return d;
}

FeatureExtractor::FeatureExtractor(const Dataset& data, const FeatureParams& params)
    : data_(data), params_(params), sites_(synapse_sites(data.synapses)), sampler_(data.fragments, params.point_factor) {}

EvidenceTensor FeatureExtractor::evidence(const MergeCandidate& c) const {
  return extract_evidence(data_.gray, data_.fragments, sites_, c, params_.edge, params_.prox_radius_nm);
}

ShapeDescriptor FeatureExtractor::shape(const MergeCandidate& c) const {
  const uint64_t seed = params_.seed ^ parse_hex64(c.id);
  const auto pts = sampler_.sample(c, params_.context_edge, params_.n_points, seed);
  return shape_descriptor(pts, c, params_.context_edge);
}

CandidateFeatures FeatureExtractor::features(const MergeCandidate& c, const ConnectivityTable& conn) const {
  CandidateFeatures f;
  f.id = c.id;
  f.shape = shape(c);
  f.connectivity = conn.features(c.edge.a, c.edge.b);
  return f;
}

void gen(const fs::path& dir, const SynthConfig& config) {
  const SynthOutput out = generate(config);
  fs::create_directories(dir);
  write_volume(dir / files::gray, out.gray);
  write_volume(dir / files::fragments, out.truth.fragment_volume);
  write_volume(dir / files::neurons, out.truth.neuron_volume);
  write_synapses(dir / files::synapses, out.truth.synapses);
  write_truth(dir / files::truth, out.truth);
}

void adjacency(const fs::path& dir, int64_t factor, int64_t block_edge) {
  const LabelVolume v = read_label_volume(dir / files::fragments);
  write_adjacency_tsv(dir / files::adjacency, compute_adjacency(v, factor, block_edge));
}

size_t candidates(const fs::path& dir, const CandidatesParams& p) {
  if (p.sample && p.balanced) throw Error("invalid_argument", "--sample and --balanced are exclusive");
  require_file(dir / files::adjacency, "run adjacency first");
  const auto edges = read_adjacency_tsv(dir / files::adjacency);
  const Dataset data = load_dataset(dir);
  const BodyState bodies = data.current_bodies({});
  CandidateFilter filter;
  filter.workflow = p.workflow;
  filter.min_contact = p.min_contact;
  filter.bodies = &bodies;
  if (p.workflow == Workflow::orphan) {
    filter.orphan_weight_min = p.weight_min;
    filter.orphan_weight_max = p.weight_max;
  }
  auto cands = candidates_for(edges, filter);
  Rng rng(derive_seed(p.seed, "candidates"));
  if (p.sample && p.sample < cands.size()) {
    std::vector<size_t> idx(cands.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle(idx, rng);
    idx.resize(p.sample);
    std::sort(idx.begin(), idx.end());
    std::vector<MergeCandidate> keep;
    for (size_t i : idx) keep.push_back(cands[i]);
    cands = std::move(keep);
  } else if (p.balanced) {
    std::vector<size_t> pos, neg;
    for (size_t i = 0; i < cands.size(); ++i) (data.label(cands[i]) ? pos : neg).push_back(i);
    const size_t half = p.balanced / 2;
    if (pos.size() < half || neg.size() < p.balanced - half)
      throw Error("insufficient_data", "balanced sample of " + std::to_string(p.balanced) + " needs " +
                                           std::to_string(half) + " merges; only " + std::to_string(pos.size()) +
                                           " available in " + dir.string());
    shuffle(pos, rng);
    shuffle(neg, rng);
    pos.resize(half);
    neg.resize(p.balanced - half);
    std::vector<size_t> idx = pos;
    idx.insert(idx.end(), neg.begin(), neg.end());
    std::sort(idx.begin(), idx.end());
    std::vector<MergeCandidate> keep;
    for (size_t i : idx) keep.push_back(cands[i]);
    cands = std::move(keep);
  }
  write_candidates(dir / p.out, cands);
  return cands.size();
}

void features(const fs::path& dir, const std::string& candidates_name, const FeatureParams& p) {
  const CandidateFiles cf = candidate_files(dir, candidates_name);
  require_file(cf.candidates, "run candidates first");
  const auto cands = read_candidates(cf.candidates);
  const Dataset data = load_dataset(dir);
  const BodyState bodies = data.current_bodies(cands);
  const ConnectivityTable conn(data.synapses, bodies, data.known_types());
  const FeatureExtractor fx(data, p);
  fs::create_directories(cf.evidence_dir);
  EvidenceWriter writer(cf.evidence_dir);
  std::vector<CandidateFeatures> feats(cands.size());
  // Chunks bound memory; results are written in candidate order.
  constexpr size_t kChunk = 64;
  for (size_t begin = 0; begin < cands.size(); begin += kChunk) {
    const size_t n = std::min(kChunk, cands.size() - begin);
    std::vector<EvidenceTensor> tensors(n);
    parallel_for(n, [&](size_t i) {
      tensors[i] = fx.evidence(cands[begin + i]);
      feats[begin + i] = fx.features(cands[begin + i], conn);
    });
    for (size_t i = 0; i < n; ++i) writer.append(cands[begin + i].id, tensors[i]);
  }
  writer.close();
  write_features(cf.features, feats);
}

LabelSource parse_label_source(const std::string& s) {
  if (s == "truth") return LabelSource::truth;
  if (s == "decisions") return LabelSource::decisions;
  throw Error("invalid_argument", "labels must be truth or decisions, got '" + s + "'");
}

namespace {

// Candidate id -> 0/1. Decision labels skip indeterminate verdicts and pass
// merge/no_merge through unchanged.
std::map<std::string, int> collect_labels(const fs::path& dir, const std::vector<MergeCandidate>& cands,
                                          LabelSource source) {
  std::map<std::string, int> labels;
  if (source == LabelSource::truth) {
    require_file(dir / files::truth, "truth labels need truth.json");
    GroundTruth gt = read_truth(dir / files::truth);
    for (const auto& c : cands) labels[c.id] = same_neuron(gt, c.edge.a, c.edge.b) ? 1 : 0;
  } else {
    require_file(dir / files::decisions, "decision labels need decisions.jsonl");
    std::set<std::string> known;
    for (const auto& c : cands) known.insert(c.id);
    for (const auto& d : read_decisions(dir / files::decisions)) {
      if (!known.count(d.candidate_id) || d.verdict == Verdict::indeterminate) continue;
      labels[d.candidate_id] = d.verdict == Verdict::merge ? 1 : 0;
    }
  }
  return labels;
}

std::map<std::string, CandidateFeatures> features_by_id(const fs::path& path) {
  std::map<std::string, CandidateFeatures> m;
  for (auto& f : read_features(path)) m.emplace(f.id, std::move(f));
  return m;
}

}  // namespace

ModelBundle train_cnn(const std::vector<fs::path>& dirs, const TrainCnnParams& p, const fs::path& out_model) {
  if (dirs.empty()) throw Error("invalid_argument", "at least one --data-dir is required");
  std::vector<EvidenceTensor> tensors;
  std::vector<int> labels;
  Fnv1a fp;
  for (const auto& dir : dirs) {
    const CandidateFiles cf = candidate_files(dir, p.candidates_name);
    require_file(cf.candidates, "run candidates first");
    const auto cands = read_candidates(cf.candidates);
    const auto lab = collect_labels(dir, cands, p.labels);
    const EvidenceReader reader(cf.evidence_dir);
    for (const auto& c : cands) {
      auto it = lab.find(c.id);
      if (it == lab.end()) continue;
      tensors.push_back(reader.read(c.id));
      labels.push_back(it->second);
      fp.str(c.id).u64(static_cast<uint64_t>(it->second));
    }
  }
  if (tensors.empty()) throw Error("insufficient_data", "no labeled candidates with evidence");
  // The network's input edge follows the stored evidence.
  CnnConfig config = p.config;
  config.input_edge = tensors.front().edge;
  for (const auto& t : tensors)
    if (t.edge != config.input_edge) throw Error("shape_mismatch", "evidence tensors have mixed edges");
  std::vector<LabeledTensor> data;
  for (size_t i = 0; i < tensors.size(); ++i) data.push_back({&tensors[i], labels[i]});
  log_info("train-cnn: " + std::to_string(data.size()) + " labeled examples");
  const CnnTrainResult res = cnn_train(config, data, p.hyper, true);
  ModelBundle b;
  b.cnn = res.model;
  b.train_fingerprint = fp.u64(config.seed)
                            .u64(static_cast<uint64_t>(p.hyper.epochs))
                            .u64(static_cast<uint64_t>(p.hyper.batch))
                            .bytes(&p.hyper.lr, sizeof p.hyper.lr)
                            .bytes(&p.hyper.momentum, sizeof p.hyper.momentum)
                            .value();
  if (out_model.has_parent_path()) fs::create_directories(out_model.parent_path());
  save_bundle(out_model, b);
  std::ofstream log(out_model.parent_path() / "train_log.csv", std::ios::trunc);
  log << "epoch,loss,seconds\n";
  for (size_t e = 0; e < res.epoch_loss.size(); ++e)
    log << e + 1 << ',' << format_double(res.epoch_loss[e]) << ',' << format_double(res.epoch_seconds[e]) << '\n';
  return b;
}

ModelBundle train_fusion(const std::vector<fs::path>& dirs, const fs::path& in_model, const TrainFusionParams& p,
                         const fs::path& out_model) {
  if (dirs.empty()) throw Error("invalid_argument", "at least one --data-dir is required");
  ModelBundle b = load_bundle(in_model);
  std::vector<FusionExample> data;
  Fnv1a fp;
  fp.u64(b.train_fingerprint);
  for (const auto& dir : dirs) {
    const CandidateFiles cf = candidate_files(dir, p.candidates_name);
    require_file(cf.candidates, "run candidates first");
    require_file(cf.features, "run features first");
    const auto cands = read_candidates(cf.candidates);
    const auto lab = collect_labels(dir, cands, p.labels);
    const auto feats = features_by_id(cf.features);
    const EvidenceReader reader(cf.evidence_dir);
    std::vector<const MergeCandidate*> used;
    for (const auto& c : cands)
      if (lab.count(c.id)) used.push_back(&c);
    std::vector<FusionExample> part(used.size());
    parallel_for(used.size(), [&](size_t i) {
      const auto& c = *used[i];
      auto f = feats.find(c.id);
      if (f == feats.end()) throw Error("missing_features", "no features for candidate " + c.id);
      const double cnn = cnn_forward(b.cnn, reader.read(c.id));
      part[i].x = fusion_input(cnn, c.scores.at("baseline"), f->second.shape, f->second.connectivity);
      part[i].label = lab.at(c.id);
    });
    for (size_t i = 0; i < used.size(); ++i) fp.str(used[i]->id).u64(static_cast<uint64_t>(part[i].label));
    data.insert(data.end(), part.begin(), part.end());
  }
  if (data.empty()) throw Error("insufficient_data", "no labeled candidates for fusion training");
  log_info("train-fusion: " + std::to_string(data.size()) + " labeled examples");
  b.fusion = fusion_train(data, p.svm);
  b.threshold.reset();
  b.train_fingerprint = fp.u64(p.svm.seed).bytes(&p.svm.lambda, sizeof p.svm.lambda).value();
  save_bundle(out_model, b);
  return b;
}

size_t score(const fs::path& dir, const fs::path& model, const std::string& candidates_name) {
  const ModelBundle b = load_bundle(model);
  const CandidateFiles cf = candidate_files(dir, candidates_name);
  require_file(cf.candidates, "run candidates first");
  require_file(cf.features, "run features first");
  auto cands = read_candidates(cf.candidates);
  const auto feats = features_by_id(cf.features);
  const EvidenceReader reader(cf.evidence_dir);
  constexpr size_t kChunk = 64;
  for (size_t begin = 0; begin < cands.size(); begin += kChunk) {
    const size_t n = std::min(kChunk, cands.size() - begin);
    std::vector<EvidenceTensor> tensors(n);
    std::vector<ScoreInput> inputs(n);
    for (size_t i = 0; i < n; ++i) {
      const auto& c = cands[begin + i];
      tensors[i] = reader.read(c.id);
      auto f = feats.find(c.id);
      inputs[i] = {&tensors[i], c.scores.at("baseline"), f == feats.end() ? nullptr : &f->second,
                   kFeatureLayoutVersion};
    }
    const auto s = score_batch(b, inputs);
    for (size_t i = 0; i < n; ++i) {
      cands[begin + i].scores["cnn"] = s[i].cnn;
      if (s[i].fusion) cands[begin + i].scores["fusion"] = *s[i].fusion;
    }
  }
  write_candidates(cf.scored, cands);
  return cands.size();
}

namespace {

std::vector<MergeCandidate> read_scored(const fs::path& dir, const std::string& candidates_name) {
  const CandidateFiles cf = candidate_files(dir, candidates_name);
  require_file(cf.scored, "run score first");
  return read_candidates(cf.scored);
}

double score_of(const MergeCandidate& c, const std::string& source) {
  auto it = c.scores.find(source);
  if (it == c.scores.end()) throw Error("missing_score", "candidate " + c.id + " has no '" + source + "' score");
  return it->second;
}

}  // namespace

TriageResult triage(const fs::path& dir, const TriageParams& p) {
  const auto cands = read_scored(dir, p.candidates_name);
  std::vector<std::string> ids;
  std::vector<double> scores;
  for (const auto& c : cands) {
    ids.push_back(c.id);
    scores.push_back(score_of(c, p.source));
  }
  std::vector<int> labels;
  const bool truth = fs::exists(dir / files::truth);
  if (truth) {
    const GroundTruth gt = read_truth(dir / files::truth);
    for (const auto& c : cands) labels.push_back(same_neuron(gt, c.edge.a, c.edge.b) ? 1 : 0);
  }
  const TriageResult r = proofkit::triage(ids, scores, p.budget, labels);
  std::ofstream out(dir / "triage.csv", std::ios::trunc);
  if (!out) throw Error("io", "cannot write triage.csv");
  out << "rank,candidate_id,score,selected\n";
  for (size_t k = 0; k < r.order.size(); ++k)
    out << k + 1 << ',' << ids[r.order[k]] << ',' << format_double(scores[r.order[k]]) << ','
        << (k < r.selected ? 1 : 0) << '\n';
  ordered_json j;
  j["source"] = p.source;
  j["budget"] = p.budget;
  j["candidates"] = ids.size();
  j["selected"] = r.selected;
  j["value"] = opt_json(r.value);
  write_json(dir / "triage_summary.json", j);
  return r;
}

CalibrationOutcome calibrate(const std::vector<fs::path>& dirs, const fs::path& in_model, const CalibrateParams& p,
                             const fs::path& out_model) {
  if (dirs.empty()) throw Error("invalid_argument", "at least one --data-dir is required");
  ModelBundle b = load_bundle(in_model);
  std::vector<CalibrationItem> items;
  for (const auto& dir : dirs) {
    const auto cands = read_scored(dir, p.candidates_name);
    require_file(dir / files::truth, "calibration labels need truth.json");
    const GroundTruth gt = read_truth(dir / files::truth);
    if (!p.per_orphan) {
      for (const auto& c : cands) items.push_back({score_of(c, "fusion"), same_neuron(gt, c.edge.a, c.edge.b)});
      continue;
    }
    const BodyState bodies = load_dataset(dir).current_bodies({});
    std::map<uint64_t, const MergeCandidate*> best;
    for (const auto& c : cands) {
      const uint64_t ra = bodies.find(c.edge.a), rb = bodies.find(c.edge.b);
      if (bodies.identified(ra) == bodies.identified(rb)) continue;
      const uint64_t orphan = bodies.identified(ra) ? rb : ra;
      const double s = score_of(c, "fusion");
      auto [it, fresh] = best.try_emplace(orphan, &c);
      if (fresh) continue;
      const double t = score_of(*it->second, "fusion");
      if (s > t || (s == t && c.id < it->second->id)) it->second = &c;
    }
    for (const auto& [o, c] : best) items.push_back({score_of(*c, "fusion"), same_neuron(gt, c->edge.a, c->edge.b)});
  }
  if (p.sample && items.size() > p.sample) {
    Rng rng(p.seed);
    for (size_t i = 0; i < p.sample; ++i) std::swap(items[i], items[i + rng.below(items.size() - i)]);
    items.resize(p.sample);
  }
  CalibrationOutcome out;
  out.sample_size = static_cast<int64_t>(items.size());
  out.threshold = calibrate_threshold(items, p.target_error, p.confidence);
  if (out.threshold)
    for (const auto& it : items) out.errors += it.score >= *out.threshold && !it.correct;
  b.threshold = out.threshold;
  save_bundle(out_model, b);
  ordered_json j;
  j["target_error"] = p.target_error;
  j["confidence"] = p.confidence;
  j["unit"] = p.per_orphan ? "orphan" : "candidate";
  j["sample_size"] = out.sample_size;
  j["threshold"] = opt_json(out.threshold);
  int64_t above = 0;
  if (out.threshold)
    for (const auto& it : items) above += it.score >= *out.threshold;
  j["accepted_in_sample"] = above;
  j["errors_in_sample"] = out.errors;
  j["wilson_upper"] = out.threshold ? ordered_json(wilson_upper(out.errors, above, p.confidence)) : ordered_json(nullptr);
  write_json(out_model.parent_path() / "calibration.json", j);
  if (!out.threshold) log_warn("calibrate: no threshold meets the target error; orphan-link will need --tau");
  return out;
}

OrphanLinkOutcome orphan_link(const fs::path& dir, const fs::path& model, const OrphanLinkParams& p) {
  const ModelBundle b = load_bundle(model);
  if (!b.fusion_trained()) throw Error("untrained", "model has no fusion layer; run train-fusion");
  OrphanPolicy policy = p.policy;
  if (p.threshold_override) policy.threshold = *p.threshold_override;
  else if (b.threshold) policy.threshold = *b.threshold;
  else throw Error("uncalibrated", "model has no calibrated threshold; run calibrate or pass --tau");
  require_file(dir / files::adjacency, "run adjacency first");
  const auto edges = read_adjacency_tsv(dir / files::adjacency);
  const Dataset data = load_dataset(dir);
  BodyState bodies = data.current_bodies({});
  const BodyState before = bodies;
  const FeatureExtractor fx(data, p.features);
  const auto types = data.known_types();
  DecisionLog log(dir / files::decisions);
  const std::string source = "auto:" + bundle_fingerprint(b);
  const std::string stamp = p.timestamp == "now" ? utc_now() : p.timestamp;

  CandidateScorer scorer = [&](const std::vector<MergeCandidate>& cands, const BodyState& bs) {
    const ConnectivityTable conn(data.synapses, bs, types);
    std::vector<double> out(cands.size());
    parallel_for(cands.size(), [&](size_t i) {
      const auto& c = cands[i];
      const EvidenceTensor t = fx.evidence(c);
      const CandidateFeatures f = fx.features(c, conn);
      const Scores s = score(b, {&t, c.scores.at("baseline"), &f, kFeatureLayoutVersion});
      out[i] = *s.fusion;
    });
    return out;
  };
  OrphanLinkOutcome res;
  res.run = orphan_link_run(bodies, edges, scorer, policy, log, source, stamp);
  res.report = completeness_report(before, bodies, data.synapses, static_cast<int64_t>(res.run.accepted.size()));
  write_completeness_report(dir / "completeness_report.json", res.report);
  std::ofstream out(dir / "orphan_proposals.csv", std::ios::trunc);
  if (!out) throw Error("io", "cannot write orphan_proposals.csv");
  out << "pass,orphan,candidate_id,a,b,score,accepted\n";
  for (const auto& pr : res.run.proposals)
    out << pr.pass << ',' << pr.orphan << ',' << pr.candidate.id << ',' << pr.candidate.edge.a << ','
        << pr.candidate.edge.b << ',' << format_double(pr.score) << ',' << (pr.accepted ? 1 : 0) << '\n';
  return res;
}

void eval(const fs::path& dir, const EvalParams& p) {
  const auto cands = read_scored(dir, p.candidates_name);
  require_file(dir / files::truth, "eval needs truth.json");
  const GroundTruth gt = read_truth(dir / files::truth);
  std::vector<int> labels;
  for (const auto& c : cands) labels.push_back(same_neuron(gt, c.edge.a, c.edge.b) ? 1 : 0);
  ordered_json summary;
  summary["candidates"] = cands.size();
  int64_t positives = 0;
  for (int l : labels) positives += l;
  const double merge_rate = cands.empty() ? 0.0 : static_cast<double>(positives) / static_cast<double>(cands.size());
  summary["positives"] = positives;
  summary["merge_rate"] = merge_rate;
  ordered_json auprc = ordered_json::object();
  std::string primary;
  for (const std::string source : {"baseline", "cnn", "fusion"}) {
    if (!std::all_of(cands.begin(), cands.end(), [&](const auto& c) { return c.scores.count(source) != 0; })) continue;
    std::vector<std::pair<double, int>> scored;
    for (size_t i = 0; i < cands.size(); ++i) scored.emplace_back(cands[i].scores.at(source), labels[i]);
    const PrCurve pr = pr_curve(scored);
    auprc[source] = pr.auprc;
    write_pr_csv(dir / ("pr_curve_" + source + ".csv"), pr);
    if (source != "baseline") primary = source;
  }
  if (primary.empty()) throw Error("missing_score", "scored candidates lack cnn/fusion scores");
  summary["auprc"] = auprc;
  summary["primary_source"] = primary;
  {
    std::vector<std::pair<double, int>> scored;
    for (size_t i = 0; i < cands.size(); ++i) scored.emplace_back(cands[i].scores.at(primary), labels[i]);
    write_pr_csv(dir / "pr_curve.csv", pr_curve(scored));
  }
  std::vector<std::string> ids;
  std::vector<double> scores;
  for (const auto& c : cands) {
    ids.push_back(c.id);
    scores.push_back(c.scores.at(primary));
  }
  const TriageResult tr = proofkit::triage(ids, scores, p.budget, labels);
  std::vector<int> ranked;
  for (size_t i : tr.order) ranked.push_back(labels[i]);
  const EffortValue ev = effort_value(ranked, merge_rate);
  write_effort_csv(dir / "effort_value.csv", ev);
  summary["budget"] = p.budget;
  summary["value_at_budget"] = opt_json(tr.value);
  summary["effort_for_90"] = ev.effort_for_90;
  summary["value_at_20"] = ev.value_at_20;
  if (p.assessments) {
    std::map<std::string, double> by_id;
    for (size_t i = 0; i < cands.size(); ++i) by_id[ids[i]] = scores[i];
    const auto rp = review_precision(read_assessments(*p.assessments), by_id);
    write_review_csv(dir / "review_precision.csv", rp);
    summary["reviewed"] = rp.ranked_ids.size();
  }
  write_json(dir / "eval_summary.json", summary);
}

}  // namespace proofkit::pipeline
