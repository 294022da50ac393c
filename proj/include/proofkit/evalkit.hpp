#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace proofkit {

struct PrPoint {
  double threshold = 0;
  int64_t tp = 0, fp = 0, fn = 0;
  double precision = 0;
  double recall = 0;

  bool operator==(const PrPoint&) const = default;
};

// One point per distinct score, thresholds descending. auprc is the step sum
// of (recall_i - recall_{i-1}) * precision_i.
struct PrCurve {
  std::vector<PrPoint> points;
  int64_t positives = 0;
  double auprc = 0;
};

// Throws no_positives when no label is 1.
PrCurve pr_curve(std::span<const std::pair<double, int>> scored);

struct EffortValue {
  std::vector<std::pair<double, double>> curve;  // (effort, value) at k = 0..n
  double merge_rate = 0;
  double effort_for_90 = 1;  // smallest effort fraction reaching value >= 0.9
  double value_at_20 = 0;    // value at effort ceil(0.2 n) / n
};

// ranked_labels in review order (best first).
EffortValue effort_value(std::span<const int> ranked_labels, double merge_rate);

enum class ReviewVerdict { incorrect = 0, indeterminate = 1, correct = 2 };

struct ReviewAssessment {
  std::string candidate_id;
  std::string reviewer;  // "A" or "B"
  ReviewVerdict verdict = ReviewVerdict::indeterminate;
};

std::string to_string(ReviewVerdict v);
ReviewVerdict parse_review_verdict(const std::string& s);

struct PrecisionBand {
  std::vector<double> treat_false;  // indeterminate counted as incorrect
  std::vector<double> treat_true;   // indeterminate counted as correct
};

// Cumulative precision by rank (score desc, id asc). Reviewer curves cover the
// candidates that reviewer assessed; the combined curve uses the max verdict
// per candidate over all candidates.
struct ReviewPrecision {
  std::vector<std::string> ranked_ids;
  std::map<std::string, PrecisionBand> reviewers;
  PrecisionBand combined;
};

// Throws unscored when an assessed candidate has no score, and
// duplicate_assessment for a repeated (candidate, reviewer).
ReviewPrecision review_precision(std::span<const ReviewAssessment> assessments,
                                 const std::map<std::string, double>& scores);

std::vector<ReviewAssessment> read_assessments(const std::filesystem::path& path);

void write_pr_csv(const std::filesystem::path& path, const PrCurve& c);
void write_effort_csv(const std::filesystem::path& path, const EffortValue& e);
void write_review_csv(const std::filesystem::path& path, const ReviewPrecision& r);

// Shortest round-trip representation of a double, as used in all reports.
std::string format_double(double v);

}  // namespace proofkit
