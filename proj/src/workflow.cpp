#include "proofkit/workflow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>

#include <boost/math/distributions/normal.hpp>

#include "json.hpp"
#include "proofkit/common.hpp"

namespace proofkit {

using nlohmann::ordered_json;

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::merge: return "merge";
    case Verdict::no_merge: return "no_merge";
    case Verdict::indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

Verdict parse_verdict(const std::string& s) {
  if (s == "merge") return Verdict::merge;
  if (s == "no_merge") return Verdict::no_merge;
  if (s == "indeterminate") return Verdict::indeterminate;
  throw Error("invalid_argument", "unknown verdict '" + s + "'");
}

std::string decision_to_json(const Decision& d) {
  ordered_json j;
  j["candidate_id"] = d.candidate_id;
  j["verdict"] = to_string(d.verdict);
  j["source"] = d.source;
  j["timestamp"] = d.timestamp;
  j["sequence"] = d.sequence;
  return j.dump();
}

Decision decision_from_json(const std::string& line) {
  try {
    const auto j = ordered_json::parse(line);
    Decision d;
    d.candidate_id = j.at("candidate_id").get<std::string>();
    d.verdict = parse_verdict(j.at("verdict").get<std::string>());
    d.source = j.at("source").get<std::string>();
    d.timestamp = j.at("timestamp").get<std::string>();
    d.sequence = j.at("sequence").get<uint64_t>();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error("format", std::string("bad decision record: ") + e.what());
  }
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void check_sequence(std::span<const Decision> log) {
  for (size_t i = 0; i < log.size(); ++i)
    if (log[i].sequence != i + 1)
      throw Error("sequence_gap", "expected sequence " + std::to_string(i + 1) + ", found " +
                                      std::to_string(log[i].sequence));
}

std::vector<Decision> read_decisions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open " + path.string());
  std::vector<Decision> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(decision_from_json(line));
  check_sequence(out);
  return out;
}

DecisionLog::DecisionLog(const std::filesystem::path& path) {
  if (std::filesystem::exists(path)) {
    entries_ = read_decisions(path);
    for (size_t i = 0; i < entries_.size(); ++i) {
      if (!by_candidate_.emplace(entries_[i].candidate_id, i).second)
        throw Error("format", "duplicate decision for candidate " + entries_[i].candidate_id);
    }
  }
  file_.open(path, std::ios::app);
  if (!file_) throw Error("io", "cannot open " + path.string() + " for append");
}

DecisionLog::AppendResult DecisionLog::append(const std::string& candidate_id, Verdict verdict,
                                              const std::string& source, const std::string& timestamp) {
  std::lock_guard lock(mu_);
  if (auto it = by_candidate_.find(candidate_id); it != by_candidate_.end()) return {entries_[it->second], false};
  Decision d{candidate_id, verdict, source, timestamp, entries_.size() + 1};
  if (file_.is_open()) {
    file_ << decision_to_json(d) << '\n';
    file_.flush();
    if (!file_) throw Error("io", "decision log append failed");
  }
  by_candidate_.emplace(candidate_id, entries_.size());
  entries_.push_back(d);
  return {d, true};
}

std::vector<Decision> DecisionLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::optional<Decision> DecisionLog::find(const std::string& candidate_id) const {
  std::lock_guard lock(mu_);
  auto it = by_candidate_.find(candidate_id);
  if (it == by_candidate_.end()) return std::nullopt;
  return entries_[it->second];
}

size_t DecisionLog::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

CandidateIndex index_candidates(const std::vector<MergeCandidate>& cands) {
  CandidateIndex idx;
  for (const auto& c : cands) idx.emplace(c.id, std::make_pair(c.edge.a, c.edge.b));
  return idx;
}

std::unordered_map<uint64_t, int64_t> synapse_weights(const std::vector<SynapseRecord>& synapses) {
  std::unordered_map<uint64_t, int64_t> w;
  for (const auto& s : synapses) {
    ++w[s.pre_fragment];
    for (uint64_t p : s.post_fragments) ++w[p];
  }
  return w;
}

BodyState initial_body_state(const std::vector<uint64_t>& fragments, const std::set<uint64_t>& identified,
                             const std::vector<SynapseRecord>& synapses) {
  const auto w = synapse_weights(synapses);
  BodyState bs;
  for (uint64_t f : fragments) {
    auto it = w.find(f);
    bs.add_fragment(f, identified.count(f) != 0, it == w.end() ? 0 : it->second);
  }
  return bs;
}

BodyState replay(std::span<const Decision> log, const CandidateIndex& candidates, BodyState initial) {
  check_sequence(log);
  for (const auto& d : log) {
    auto it = candidates.find(d.candidate_id);
    if (it == candidates.end()) throw Error("unknown_candidate", "decision references unknown candidate " + d.candidate_id);
    if (d.verdict == Verdict::merge) initial.unite(it->second.first, it->second.second);
  }
  return initial;
}

TriageResult triage(std::span<const std::string> ids, std::span<const double> scores, double budget,
                    std::span<const int> labels) {
  if (ids.size() != scores.size()) throw Error("invalid_argument", "ids and scores differ in length");
  if (!labels.empty() && labels.size() != ids.size()) throw Error("invalid_argument", "labels differ in length");
  if (!(budget >= 0 && budget <= 1)) throw Error("invalid_argument", "budget fraction must be in [0,1]");
  TriageResult r;
  r.order.resize(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) r.order[i] = i;
  std::sort(r.order.begin(), r.order.end(), [&](size_t x, size_t y) {
    if (scores[x] != scores[y]) return scores[x] > scores[y];
    return ids[x] < ids[y];
  });
  // The epsilon keeps e.g. 0.2 * 1000 from rounding up to 201.
  r.selected = std::min(ids.size(), static_cast<size_t>(std::ceil(budget * static_cast<double>(ids.size()) - 1e-9)));
  if (!labels.empty()) {
    int64_t total = 0, hit = 0;
    for (int l : labels) total += l == 1;
    for (size_t k = 0; k < r.selected; ++k) hit += labels[r.order[k]] == 1;
    r.value = total ? static_cast<double>(hit) / static_cast<double>(total) : 1.0;
  }
  return r;
}

double wilson_upper(int64_t errors, int64_t n, double confidence) {
  if (n <= 0) return 1.0;
  const double z = boost::math::quantile(boost::math::normal(), confidence);
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(errors) / nn;
  const double z2 = z * z;
  const double center = p + z2 / (2 * nn);
  const double spread = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn));
  return std::min(1.0, (center + spread) / (1 + z2 / nn));
}

std::optional<double> calibrate_threshold(std::span<const CalibrationItem> sample, double target_error,
                                          double confidence) {
  if (sample.empty()) throw Error("invalid_argument", "calibration sample is empty");
  if (!(target_error > 0 && target_error <= 1)) throw Error("invalid_argument", "target error must be in (0,1]");
  if (!(confidence > 0 && confidence < 1)) throw Error("invalid_argument", "confidence must be in (0,1)");
  std::vector<CalibrationItem> s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end(), [](const auto& x, const auto& y) { return x.score > y.score; });
  std::optional<double> tau;
  int64_t n = 0, errors = 0;
  for (size_t i = 0; i < s.size();) {
    size_t j = i;
    while (j < s.size() && s[j].score == s[i].score) {
      ++n;
      errors += !s[j].correct;
      ++j;
    }
    if (wilson_upper(errors, n, confidence) <= target_error) tau = s[i].score;
    i = j;
  }
  return tau;
}

void OrphanPolicy::validate() const {
  if (!(threshold > 0 && threshold < 1)) throw Error("invalid_argument", "orphan threshold must be in (0,1)");
  if (weight_min > weight_max) throw Error("invalid_argument", "weight_min > weight_max");
  if (max_merges_per_orphan != 1) throw Error("invalid_argument", "max_merges_per_orphan must be 1");
  if (passes < 1) throw Error("invalid_argument", "passes must be >= 1");
}

OrphanRunResult orphan_link_run(BodyState& bodies, const std::vector<AdjacencyEdge>& edges,
                                const CandidateScorer& scorer, const OrphanPolicy& policy, DecisionLog& log,
                                const std::string& source, const std::string& timestamp) {
  policy.validate();
  OrphanRunResult result;
  for (int pass = 0; pass < policy.passes; ++pass) {
    // Candidate edges per orphan body, computed against the pass-start state.
    std::map<uint64_t, std::vector<MergeCandidate>> per_orphan;
    for (const auto& e : edges) {
      const uint64_t ra = bodies.find(e.a), rb = bodies.find(e.b);
      if (ra == rb) continue;
      const bool ia = bodies.identified(ra), ib = bodies.identified(rb);
      if (ia == ib) continue;
      const uint64_t orphan = ia ? rb : ra;
      const int64_t w = bodies.synapse_weight(orphan);
      if (w < policy.weight_min || w > policy.weight_max) continue;
      MergeCandidate c;
      c.edge = e;
      c.id = candidate_id(e);
      c.workflow = Workflow::orphan;
      c.scores["baseline"] = baseline_score(e.contact_voxels);
      per_orphan[orphan].push_back(std::move(c));
    }
    std::vector<MergeCandidate> flat;
    for (const auto& [o, cs] : per_orphan) flat.insert(flat.end(), cs.begin(), cs.end());
    const std::vector<double> scores = scorer(flat, bodies);
    if (scores.size() != flat.size()) throw Error("internal", "scorer returned the wrong number of scores");
    size_t k = 0;
    for (auto& [o, cs] : per_orphan)
      for (auto& c : cs) c.scores["fusion"] = scores[k++];

    size_t accepted_this_pass = 0;
    for (auto& [orphan, cs] : per_orphan) {
      const MergeCandidate* best = nullptr;
      for (const auto& c : cs) {
        const double s = c.scores.at("fusion");
        if (!best || s > best->scores.at("fusion") || (s == best->scores.at("fusion") && c.id < best->id)) best = &c;
      }
      OrphanProposal p{pass, orphan, *best, best->scores.at("fusion"), false};
      // Another orphan accepted earlier in this pass cannot touch this body
      // (orphans only join identified bodies), but guard anyway.
      if (p.score >= policy.threshold && !bodies.identified(orphan) && !bodies.same_body(best->edge.a, best->edge.b)) {
        auto r = log.append(best->id, Verdict::merge, source, timestamp);
        if (r.inserted) {
          bodies.unite(best->edge.a, best->edge.b);
          result.accepted.push_back(r.decision);
          p.accepted = true;
          ++accepted_this_pass;
        }
      }
      result.proposals.push_back(std::move(p));
    }
    if (accepted_this_pass == 0) break;
  }
  return result;
}

CompletenessCounts completeness(const BodyState& bodies, const std::vector<SynapseRecord>& synapses) {
  CompletenessCounts c;
  for (const auto& s : synapses) {
    const bool pre = bodies.identified(s.pre_fragment);
    for (uint64_t post : s.post_fragments) {
      ++c.connections;
      if (pre && bodies.identified(post)) ++c.identified_connections;
    }
  }
  return c;
}

CompletenessReport completeness_report(const BodyState& before, const BodyState& after,
                                       const std::vector<SynapseRecord>& synapses, int64_t accepted_merges) {
  CompletenessReport r;
  r.before = completeness(before, synapses);
  r.after = completeness(after, synapses);
  r.accepted_merges = accepted_merges;
  for (const auto& s : synapses) {
    if (!before.identified(s.pre_fragment) && after.identified(s.pre_fragment)) ++r.tbars_added;
    for (uint64_t p : s.post_fragments)
      if (!before.identified(p) && after.identified(p)) ++r.psds_added;
  }
  return r;
}

void write_completeness_report(const std::filesystem::path& path, const CompletenessReport& r) {
  ordered_json j;
  j["before"] = {{"fraction", r.before.fraction()},
                 {"connections", r.before.connections},
                 {"identified_connections", r.before.identified_connections}};
  j["after"] = {{"fraction", r.after.fraction()},
                {"connections", r.after.connections},
                {"identified_connections", r.after.identified_connections}};
  j["accepted_merges"] = r.accepted_merges;
  j["tbars_added"] = r.tbars_added;
  j["psds_added"] = r.psds_added;
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace proofkit
