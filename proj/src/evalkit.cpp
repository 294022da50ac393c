#include "proofkit/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "proofkit/common.hpp"

namespace proofkit {

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

PrCurve pr_curve(std::span<const std::pair<double, int>> scored) {
  std::vector<std::pair<double, int>> s(scored.begin(), scored.end());
  PrCurve c;
  for (const auto& [score, label] : s) {
    if (label != 0 && label != 1) throw Error("invalid_argument", "labels must be 0 or 1");
    if (std::isnan(score)) throw Error("invalid_argument", "NaN score");
    c.positives += label;
  }
  if (c.positives == 0) throw Error("no_positives", "PR curve needs at least one positive");
  std::sort(s.begin(), s.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  int64_t tp = 0, fp = 0;
  double prev_recall = 0;
  for (size_t i = 0; i < s.size();) {
    size_t j = i;
    while (j < s.size() && s[j].first == s[i].first) {
      tp += s[j].second;
      fp += 1 - s[j].second;
      ++j;
    }
    PrPoint p;
    p.threshold = s[i].first;
    p.tp = tp;
    p.fp = fp;
    p.fn = c.positives - tp;
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = static_cast<double>(tp) / static_cast<double>(c.positives);
    c.auprc += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
    c.points.push_back(p);
    i = j;
  }
  return c;
}

EffortValue effort_value(std::span<const int> ranked, double merge_rate) {
  EffortValue e;
  e.merge_rate = merge_rate;
  const size_t n = ranked.size();
  int64_t total = 0;
  for (int l : ranked) total += l == 1;
  e.curve.emplace_back(0.0, 0.0);
  int64_t hit = 0;
  bool found90 = total == 0;
  if (found90) e.effort_for_90 = 0;
  for (size_t k = 1; k <= n; ++k) {
    hit += ranked[k - 1] == 1;
    const double effort = static_cast<double>(k) / static_cast<double>(n);
    // With no positives every prefix trivially holds all the value.
    const double value = total ? static_cast<double>(hit) / static_cast<double>(total) : 1.0;
    e.curve.emplace_back(effort, value);
    if (!found90 && value >= 0.9) {
      e.effort_for_90 = effort;
      found90 = true;
    }
  }
  if (n > 0) {
    const size_t k20 = std::min(n, static_cast<size_t>(std::ceil(0.2 * static_cast<double>(n) - 1e-9)));
    e.value_at_20 = e.curve[k20].second;
  }
  return e;
}

std::string to_string(ReviewVerdict v) {
  switch (v) {
    case ReviewVerdict::correct: return "correct";
    case ReviewVerdict::incorrect: return "incorrect";
    case ReviewVerdict::indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

ReviewVerdict parse_review_verdict(const std::string& s) {
  if (s == "correct") return ReviewVerdict::correct;
  if (s == "incorrect") return ReviewVerdict::incorrect;
  if (s == "indeterminate") return ReviewVerdict::indeterminate;
  throw Error("invalid_argument", "unknown review verdict '" + s + "'");
}

namespace {

void push_precision(PrecisionBand& band, int64_t n, int64_t correct, int64_t indet) {
  band.treat_false.push_back(static_cast<double>(correct) / static_cast<double>(n));
  band.treat_true.push_back(static_cast<double>(correct + indet) / static_cast<double>(n));
}

}  // namespace

ReviewPrecision review_precision(std::span<const ReviewAssessment> assessments,
                                 const std::map<std::string, double>& scores) {
  std::map<std::string, std::map<std::string, ReviewVerdict>> by_candidate;
  for (const auto& a : assessments) {
    if (!scores.count(a.candidate_id)) throw Error("unscored", "assessed candidate " + a.candidate_id + " has no score");
    if (!by_candidate[a.candidate_id].emplace(a.reviewer, a.verdict).second)
      throw Error("duplicate_assessment", "candidate " + a.candidate_id + " assessed twice by " + a.reviewer);
  }
  ReviewPrecision r;
  for (const auto& [id, v] : by_candidate) r.ranked_ids.push_back(id);
  std::sort(r.ranked_ids.begin(), r.ranked_ids.end(), [&](const std::string& x, const std::string& y) {
    const double sx = scores.at(x), sy = scores.at(y);
    if (sx != sy) return sx > sy;
    return x < y;
  });
  std::set<std::string> reviewers;
  for (const auto& a : assessments) reviewers.insert(a.reviewer);
  for (const auto& who : reviewers) {
    PrecisionBand band;
    int64_t n = 0, correct = 0, indet = 0;
    for (const auto& id : r.ranked_ids) {
      const auto& m = by_candidate.at(id);
      auto it = m.find(who);
      if (it == m.end()) continue;
      ++n;
      correct += it->second == ReviewVerdict::correct;
      indet += it->second == ReviewVerdict::indeterminate;
      push_precision(band, n, correct, indet);
    }
    r.reviewers[who] = std::move(band);
  }
  int64_t n = 0, correct = 0, indet = 0;
  for (const auto& id : r.ranked_ids) {
    ReviewVerdict best = ReviewVerdict::incorrect;
    for (const auto& [who, v] : by_candidate.at(id)) best = std::max(best, v);
    ++n;
    correct += best == ReviewVerdict::correct;
    indet += best == ReviewVerdict::indeterminate;
    push_precision(r.combined, n, correct, indet);
  }
  return r;
}

std::vector<ReviewAssessment> read_assessments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open " + path.string());
  std::vector<ReviewAssessment> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("candidate_id").get<std::string>(), j.at("reviewer").get<std::string>(),
                     parse_review_verdict(j.at("verdict").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw Error("format", std::string("bad assessment record: ") + e.what());
    }
  }
  return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write " + path.string());
  return out;
}

}  // namespace

void write_pr_csv(const std::filesystem::path& path, const PrCurve& c) {
  auto out = open_out(path);
  out << "threshold,tp,fp,fn,precision,recall\n";
  for (const auto& p : c.points)
    out << format_double(p.threshold) << ',' << p.tp << ',' << p.fp << ',' << p.fn << ','
        << format_double(p.precision) << ',' << format_double(p.recall) << '\n';
}

void write_effort_csv(const std::filesystem::path& path, const EffortValue& e) {
  auto out = open_out(path);
  out << "effort,value\n";
  for (const auto& [x, v] : e.curve) out << format_double(x) << ',' << format_double(v) << '\n';
}

void write_review_csv(const std::filesystem::path& path, const ReviewPrecision& r) {
  auto out = open_out(path);
  out << "curve,rank,precision_indeterminate_false,precision_indeterminate_true\n";
  auto emit = [&](const std::string& name, const PrecisionBand& b) {
    for (size_t i = 0; i < b.treat_false.size(); ++i)
      out << name << ',' << i + 1 << ',' << format_double(b.treat_false[i]) << ',' << format_double(b.treat_true[i])
          << '\n';
  };
  for (const auto& [who, band] : r.reviewers) emit(who, band);
  emit("combined", r.combined);
}

}  // namespace proofkit
