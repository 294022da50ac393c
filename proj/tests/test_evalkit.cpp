#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "proofkit/evalkit.hpp"

using namespace proofkit;

namespace {
bool same_curve(const PrCurve& a, const PrCurve& b) {
  if (a.positives != b.positives || a.points.size() != b.points.size()) return false;
  for (size_t i = 0; i < a.points.size(); ++i)
    if (!(a.points[i] == b.points[i])) return false;
  return a.auprc == b.auprc;
}
}  // namespace

TEST_SUITE("evalkit") {
  TEST_CASE("hand-enumerated PR example") {
    const std::vector<std::pair<double, int>> s{{0.9, 1}, {0.8, 0}, {0.7, 1}};
    const PrCurve c = pr_curve(s);
    REQUIRE(c.points.size() == 3);
    CHECK(c.points[0].recall == 0.5);
    CHECK(c.points[0].precision == 1.0);
    CHECK(c.points[1].recall == 0.5);
    CHECK(c.points[1].precision == 0.5);
    CHECK(c.points[2].recall == 1.0);
    CHECK(c.points[2].precision == doctest::Approx(2.0 / 3));
    CHECK(c.auprc == doctest::Approx(0.5 * 1.0 + 0.5 * 2.0 / 3));
  }

  TEST_CASE("perfect separation gives precision 1 everywhere and auprc 1") {
    std::vector<std::pair<double, int>> s;
    for (int i = 0; i < 10; ++i) s.push_back({1.0 + i, 1});
    for (int i = 0; i < 30; ++i) s.push_back({i / 100.0, 0});
    const PrCurve c = pr_curve(s);
    for (const auto& p : c.points)
      if (p.recall < 1.0 || p.fp == 0) CHECK(p.precision == 1.0);
    CHECK(c.auprc == 1.0);
    CHECK_THROWS_AS(pr_curve(std::vector<std::pair<double, int>>{{0.5, 0}}), Error);
  }

  TEST_CASE("1000 random small sets match the exhaustive threshold oracle exactly") {
    Rng rng(2024);
    int checked = 0;
    for (int t = 0; t < 1000; ++t) {
      const size_t n = 1 + rng.below(50);
      std::vector<std::pair<double, int>> s;
      // Coarse scores force ties.
      for (size_t i = 0; i < n; ++i) s.push_back({static_cast<double>(rng.below(12)) / 11.0, rng.uniform() < 0.4});
      s.front().second = 1;
      CHECK(same_curve(pr_curve(s), oracle::brute_pr(s)));
      ++checked;
    }
    CHECK(checked == 1000);
  }

  TEST_CASE("effort-value: perfect ranking, Monte Carlo random ranking, 90-in-20 regime") {
    std::vector<int> perfect(100, 0);
    for (int i = 0; i < 20; ++i) perfect[i] = 1;
    const auto e = effort_value(perfect, 0.2);
    CHECK(e.value_at_20 == 1.0);
    CHECK(e.effort_for_90 == doctest::Approx(0.18));
    CHECK(e.curve.size() == 101);

    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      std::vector<int> lab(1000);
      for (auto& l : lab) l = rng.uniform() < 0.2;
      const auto r = effort_value(lab, 0.2);
      for (size_t k = 0; k < r.curve.size(); k += 50) CHECK(std::abs(r.curve[k].second - r.curve[k].first) <= 0.1);
    }

    // 1000 candidates, 200 merges: a ranking with precision 0.9 at recall 0.9
    // has 180 TP and 20 FP in its top 200, so FP == FN == 20.
    std::vector<int> regime;
    for (int i = 0; i < 180; ++i) regime.push_back(1);
    for (int i = 0; i < 20; ++i) regime.push_back(0);
    for (int i = 0; i < 20; ++i) regime.push_back(1);
    for (int i = 0; i < 780; ++i) regime.push_back(0);
    std::vector<std::pair<double, int>> scored;
    for (size_t i = 0; i < regime.size(); ++i) scored.push_back({1.0 - static_cast<double>(i) / 1000.0, regime[i]});
    const PrCurve c = pr_curve(scored);
    const PrPoint& at200 = c.points[199];
    CHECK(at200.precision == doctest::Approx(0.9));
    CHECK(at200.recall == doctest::Approx(0.9));
    CHECK(at200.fp == at200.fn);
    CHECK(at200.tp + at200.fp == c.positives);
    CHECK(effort_value(regime, 0.2).effort_for_90 == doctest::Approx(0.18));
  }

  TEST_CASE("review precision: all correct, all indeterminate, recount oracle") {
    std::map<std::string, double> scores;
    for (int i = 0; i < 30; ++i) scores["c" + std::to_string(i)] = i / 30.0;
    std::vector<ReviewAssessment> all;
    for (const auto& [id, s] : scores) all.push_back({id, "A", ReviewVerdict::correct});
    auto r = review_precision(all, scores);
    for (double p : r.combined.treat_false) CHECK(p == 1.0);
    for (double p : r.reviewers["A"].treat_true) CHECK(p == 1.0);

    std::vector<ReviewAssessment> indet;
    for (const auto& [id, s] : scores) indet.push_back({id, "B", ReviewVerdict::indeterminate});
    r = review_precision(indet, scores);
    for (size_t i = 0; i < r.reviewers["B"].treat_true.size(); ++i) {
      CHECK(r.reviewers["B"].treat_false[i] == 0.0);
      CHECK(r.reviewers["B"].treat_true[i] == 1.0);
    }

    Rng rng(5);
    std::vector<ReviewAssessment> mixed;
    for (const auto& [id, s] : scores)
      for (const char* who : {"A", "B"})
        if (rng.uniform() < 0.8) mixed.push_back({id, who, static_cast<ReviewVerdict>(rng.below(3))});
    r = review_precision(mixed, scores);
    // Recount combined from max verdicts in score order.
    std::vector<std::pair<double, std::string>> order;
    std::map<std::string, int> best;
    for (const auto& a : mixed) best[a.candidate_id] = std::max(best.count(a.candidate_id) ? best[a.candidate_id] : 0, static_cast<int>(a.verdict));
    for (const auto& [id, v] : best) order.push_back({-scores[id], id});
    std::sort(order.begin(), order.end());
    REQUIRE(r.combined.treat_false.size() == order.size());
    int n = 0, c = 0, ind = 0;
    for (size_t i = 0; i < order.size(); ++i) {
      const int v = best[order[i].second];
      ++n;
      c += v == 2;
      ind += v == 1;
      CHECK(r.ranked_ids[i] == order[i].second);
      CHECK(r.combined.treat_false[i] == doctest::Approx(static_cast<double>(c) / n));
      CHECK(r.combined.treat_true[i] == doctest::Approx(static_cast<double>(c + ind) / n));
    }

    std::vector<ReviewAssessment> dup{{"c1", "A", ReviewVerdict::correct}, {"c1", "A", ReviewVerdict::incorrect}};
    CHECK_THROWS_AS(review_precision(dup, scores), Error);
    std::vector<ReviewAssessment> unscored{{"zz", "A", ReviewVerdict::correct}};
    CHECK_THROWS_AS(review_precision(unscored, scores), Error);
  }

  TEST_CASE("report writers produce parseable CSV with round-trip doubles") {
    oracle::TempDir tmp("eval");
    const std::vector<std::pair<double, int>> s{{0.1, 1}, {1.0 / 3, 0}, {0.7, 1}};
    write_pr_csv(tmp.path / "pr.csv", pr_curve(s));
    std::ifstream in(tmp.path / "pr.csv");
    std::string header, row;
    std::getline(in, header);
    CHECK(header.find("precision") != std::string::npos);
    int rows = 0;
    while (std::getline(in, row)) ++rows;
    CHECK(rows == 3);
    CHECK(std::stod(format_double(1.0 / 3)) == 1.0 / 3);
    CHECK(format_double(0.5) == "0.5");
  }
}
