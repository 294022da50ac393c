#include <boost/math/distributions/binomial.hpp>
#include <thread>

#include "doctest.h"
#include "oracles.hpp"
#include "proofkit/body_state.hpp"
#include "proofkit/workflow.hpp"

using namespace proofkit;

namespace {

// Naive connected components by repeated relabeling.
std::map<uint64_t, uint64_t> naive_components(const std::vector<uint64_t>& ids,
                                              const std::vector<std::pair<uint64_t, uint64_t>>& merges) {
  std::map<uint64_t, uint64_t> comp;
  for (auto id : ids) comp[id] = id;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [a, b] : merges) {
      const uint64_t m = std::min(comp[a], comp[b]);
      if (comp[a] != m || comp[b] != m) {
        const uint64_t oa = comp[a], ob = comp[b];
        for (auto& [_, c] : comp)
          if (c == oa || c == ob) c = m;
        changed = true;
      }
    }
  }
  return comp;
}

MergeCandidate cand(uint64_t a, uint64_t b) {
  MergeCandidate c;
  c.edge = {a, b, 1, {static_cast<int64_t>(a), static_cast<int64_t>(b), 0}, 1};
  c.id = candidate_id(c.edge);
  return c;
}

}  // namespace

TEST_SUITE("workflow") {
  TEST_CASE("body state: union-find agrees with naive components; flags and weights follow roots") {
    Rng rng(4);
    BodyState bs;
    std::vector<uint64_t> ids;
    std::map<uint64_t, int64_t> w;
    std::set<uint64_t> ident;
    for (uint64_t i = 1; i <= 200; ++i) {
      ids.push_back(i * 10);
      w[i * 10] = static_cast<int64_t>(rng.below(20));
      const bool id = rng.uniform() < 0.1;
      if (id) ident.insert(i * 10);
      bs.add_fragment(i * 10, id, w[i * 10]);
    }
    std::vector<std::pair<uint64_t, uint64_t>> merges;
    for (int k = 0; k < 150; ++k) {
      const uint64_t a = ids[rng.below(ids.size())], b = ids[rng.below(ids.size())];
      merges.push_back({a, b});
      bs.unite(a, b);
    }
    const auto comp = naive_components(ids, merges);
    std::map<uint64_t, int64_t> cw, cs;
    std::map<uint64_t, bool> ci;
    for (auto id : ids) {
      cw[comp.at(id)] += w[id];
      cs[comp.at(id)] += 1;
      ci[comp.at(id)] = ci[comp.at(id)] || ident.count(id);
    }
    for (auto a : ids) {
      CHECK(bs.synapse_weight(a) == cw[comp.at(a)]);
      CHECK(bs.body_size(a) == cs[comp.at(a)]);
      CHECK(bs.identified(a) == ci[comp.at(a)]);
      for (int k = 0; k < 5; ++k) {
        const uint64_t b = ids[rng.below(ids.size())];
        CHECK(bs.same_body(a, b) == (comp.at(a) == comp.at(b)));
      }
    }
    CHECK(bs.roots().size() == std::set<uint64_t>([&] {
            std::set<uint64_t> s;
            for (const auto& [_, c] : comp) s.insert(c);
            return s;
          }()).size());
    CHECK_THROWS_AS(bs.find(7), Error);
  }

  TEST_CASE("decision log: gap-free sequences, duplicate returns original, file round trip") {
    oracle::TempDir tmp("log");
    const auto path = tmp.path / "decisions.jsonl";
    {
      DecisionLog log(path);
      auto r1 = log.append("c1", Verdict::merge, "human:A", "2024-01-01T00:00:00Z");
      auto r2 = log.append("c2", Verdict::no_merge, "human:B", "2024-01-01T00:00:01Z");
      auto r3 = log.append("c1", Verdict::no_merge, "human:B", "2024-01-01T00:00:02Z");
      CHECK(r1.decision.sequence == 1);
      CHECK(r2.decision.sequence == 2);
      CHECK_FALSE(r3.inserted);
      CHECK(r3.decision == r1.decision);
      CHECK(log.size() == 2);
    }
    {
      DecisionLog log(path);  // reopen and continue
      CHECK(log.append("c3", Verdict::indeterminate, "human:A", "t").decision.sequence == 3);
    }
    const auto all = read_decisions(path);
    REQUIRE(all.size() == 3);
    CHECK(all[0].candidate_id == "c1");
    CHECK(all[2].verdict == Verdict::indeterminate);
    CHECK(decision_from_json(decision_to_json(all[1])) == all[1]);
    std::vector<Decision> gap = all;
    gap[2].sequence = 5;
    CHECK_THROWS_WITH_AS(check_sequence(gap), doctest::Contains("sequence"), Error);
    CHECK_THROWS_AS(parse_verdict("maybe"), Error);
  }

  TEST_CASE("replay equals incremental body state; unknown candidates are rejected") {
    Rng rng(8);
    std::vector<uint64_t> frags;
    for (uint64_t i = 1; i <= 60; ++i) frags.push_back(i);
    BodyState init = initial_body_state(frags, {1, 2}, {});
    std::vector<MergeCandidate> cands;
    for (int k = 0; k < 80; ++k) cands.push_back(cand(1 + rng.below(60), 1 + rng.below(60)));
    DecisionLog log;
    BodyState live = init;
    for (const auto& c : cands) {
      const Verdict v = rng.uniform() < 0.5 ? Verdict::merge : Verdict::no_merge;
      if (log.append(c.id, v, "human:A", "t").inserted && v == Verdict::merge) live.unite(c.edge.a, c.edge.b);
    }
    const auto entries = log.entries();
    CHECK(replay(entries, index_candidates(cands), init) == live);
    CHECK_THROWS_AS(replay(entries, {}, init), Error);
  }

  TEST_CASE("initial body state counts T-bars and PSDs per fragment") {
    SynapseRecord s;
    s.tbar = {0, 0, 0};
    s.pre_fragment = 1;
    s.psds = {{1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
    s.post_fragments = {2, 2, 3};
    const BodyState bs = initial_body_state({1, 2, 3, 4}, {1}, {s});
    CHECK(bs.synapse_weight(1) == 1);
    CHECK(bs.synapse_weight(2) == 2);
    CHECK(bs.synapse_weight(3) == 1);
    CHECK(bs.synapse_weight(4) == 0);
    CHECK(bs.identified(1));
    CHECK_FALSE(bs.identified(2));
  }

  TEST_CASE("triage: budget 1.0 captures everything; ordering and ceil") {
    const std::vector<std::string> ids{"d", "a", "c", "b"};
    const std::vector<double> sc{0.5, 0.9, 0.5, 0.1};
    const std::vector<int> lab{1, 0, 1, 1};
    auto r = triage(ids, sc, 1.0, lab);
    CHECK(r.selected == 4);
    CHECK(*r.value == doctest::Approx(1.0));
    CHECK(r.order == std::vector<size_t>{1, 2, 0, 3});  // ties by id
    r = triage(ids, sc, 0.5, lab);
    CHECK(r.selected == 2);
    CHECK(*r.value == doctest::Approx(1.0 / 3));
    CHECK(triage(ids, sc, 0.26, lab).selected == 2);
    CHECK_FALSE(triage(ids, sc, 0.5).value.has_value());
    CHECK_THROWS_AS(triage(ids, sc, 1.5, lab), Error);
  }

  TEST_CASE("triage with random scores captures about the budget (Monte Carlo)") {
    double total = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      std::vector<std::string> ids;
      std::vector<double> sc;
      std::vector<int> lab;
      for (int i = 0; i < 1000; ++i) {
        ids.push_back(std::to_string(i));
        sc.push_back(rng.uniform());
        lab.push_back(rng.uniform() < 0.2);
      }
      const double v = *triage(ids, sc, 0.2, lab).value;
      CHECK(std::abs(v - 0.2) <= 0.1);
      total += v;
    }
    CHECK(total / 20 == doctest::Approx(0.2).epsilon(0.15));
  }

  TEST_CASE("wilson upper bound matches the closed form and brackets the exact binomial bound") {
    // 0 errors: (z^2 / n) / (1 + z^2 / n).
    const double z = 1.6448536269514722;
    for (int64_t n : {1, 10, 88, 200}) {
      const double nn = static_cast<double>(n);
      CHECK(wilson_upper(0, n, 0.95) == doctest::Approx(z * z / (nn + z * z)).epsilon(1e-12));
    }
    // Against Clopper-Pearson: Wilson is below the exact upper bound but close.
    for (int64_t e : {1, 3, 10}) {
      const double cp = boost::math::binomial_distribution<>::find_upper_bound_on_p(200, static_cast<double>(e), 0.05);
      const double w = wilson_upper(e, 200, 0.95);
      CHECK(w <= cp);
      CHECK(w >= 0.7 * cp);
    }
    CHECK(wilson_upper(5, 0, 0.95) == 1.0);
  }

  TEST_CASE("calibrate_threshold examples") {
    std::vector<CalibrationItem> all_correct;
    for (int i = 0; i < 200; ++i) all_correct.push_back({i / 200.0, true});
    const double bound = wilson_upper(0, 200, 0.95);
    CHECK(calibrate_threshold(all_correct, bound + 1e-12).value() == 0.0);
    CHECK_FALSE(calibrate_threshold(all_correct, bound * 0.999).has_value());
    // 0/n <= 0.03 needs n >= z^2 (1/0.03 - 1) = 87.5: 88 clean items qualify, 87 do not.
    std::vector<CalibrationItem> n88(all_correct.end() - 88, all_correct.end());
    std::vector<CalibrationItem> n87(all_correct.end() - 87, all_correct.end());
    CHECK(calibrate_threshold(n88, 0.03).value() == n88.front().score);
    CHECK_FALSE(calibrate_threshold(n87, 0.03).has_value());
    // Clean top 100 above 100 errors: tau stops at the 100th score.
    std::vector<CalibrationItem> split;
    for (int i = 0; i < 200; ++i) split.push_back({i / 200.0, i >= 100});
    CHECK(calibrate_threshold(split, 0.03).value() == 0.5);

    std::vector<CalibrationItem> mixed{{0.2, true}, {0.5, false}};
    CHECK(calibrate_threshold(mixed, 1.0).value() == 0.2);
    std::vector<CalibrationItem> top_wrong{{0.99, false}, {0.5, true}, {0.4, true}};
    CHECK_FALSE(calibrate_threshold(top_wrong, 0.05).has_value());
    CHECK_THROWS_AS(calibrate_threshold({}, 0.05), Error);
  }

  TEST_CASE("orphan link examples") {
    // Fragments: 1 identified, 2 orphan (weight 20), 3 orphan with no
    // identified neighbour, 4 identified.
    const std::vector<AdjacencyEdge> edges{{1, 2, 5, {0, 0, 0}, 1}, {2, 4, 9, {1, 0, 0}, 1}, {3, 5, 9, {2, 0, 0}, 1}};
    auto make = [] {
      BodyState bs;
      bs.add_fragment(1, true, 500);
      bs.add_fragment(2, false, 20);
      bs.add_fragment(3, false, 20);
      bs.add_fragment(4, true, 500);
      bs.add_fragment(5, false, 20);
      return bs;
    };
    auto scorer = [](const std::vector<MergeCandidate>& cs, const BodyState&) {
      std::vector<double> s;
      for (const auto& c : cs) s.push_back(c.edge.b == 4 ? 0.99 : 0.5);
      return s;
    };
    BodyState bs = make();
    DecisionLog log;
    OrphanPolicy pol;
    pol.threshold = 0.9;
    const auto r = orphan_link_run(bs, edges, scorer, pol, log, "auto:x", "t");
    REQUIRE(r.proposals.size() == 1);  // only fragment 2 has identified neighbours
    CHECK(r.proposals[0].candidate.edge.b == 4);
    CHECK(r.accepted.size() == 1);
    CHECK(bs.same_body(2, 4));
    CHECK_FALSE(bs.same_body(2, 1));
    CHECK(log.entries()[0].source == "auto:x");

    // Below threshold: proposal only.
    BodyState bs2 = make();
    DecisionLog log2;
    pol.threshold = 0.995;
    const auto r2 = orphan_link_run(bs2, edges, scorer, pol, log2, "auto:x", "t");
    CHECK(r2.accepted.empty());
    CHECK(log2.size() == 0);

    // Weight window excludes the orphan.
    BodyState bs3 = make();
    DecisionLog log3;
    pol.threshold = 0.9;
    pol.weight_min = 21;
    CHECK(orphan_link_run(bs3, edges, scorer, pol, log3, "auto:x", "t").proposals.empty());
  }

  TEST_CASE("orphan link never merges two non-identified bodies; second pass chains") {
    // Chain 1(identified) - 2 - 3: pass 1 joins 2, pass 2 joins 3.
    const std::vector<AdjacencyEdge> edges{{1, 2, 5, {0, 0, 0}, 1}, {2, 3, 5, {1, 0, 0}, 1}};
    BodyState bs;
    bs.add_fragment(1, true, 0);
    bs.add_fragment(2, false, 15);
    bs.add_fragment(3, false, 15);
    auto scorer = [](const std::vector<MergeCandidate>& cs, const BodyState&) { return std::vector<double>(cs.size(), 0.95); };
    DecisionLog log;
    OrphanPolicy pol;
    pol.passes = 1;
    BodyState one = bs;
    orphan_link_run(one, edges, scorer, pol, log, "auto:x", "t");
    CHECK(one.same_body(1, 2));
    CHECK_FALSE(one.same_body(2, 3));
    DecisionLog log2;
    pol.passes = 3;
    BodyState three = bs;
    const auto r = orphan_link_run(three, edges, scorer, pol, log2, "auto:x", "t");
    CHECK(three.same_body(1, 3));
    CHECK(r.accepted.size() == 2);
    CHECK(r.proposals.back().pass == 1);
  }

  TEST_CASE("completeness examples and report recount") {
    SynapseRecord s1{{0, 0, 0}, {{1, 0, 0}}, 1, {2}};
    SynapseRecord s2{{0, 0, 0}, {{1, 0, 0}}, 1, {3}};
    BodyState none;
    for (uint64_t i = 1; i <= 3; ++i) none.add_fragment(i, false);
    CHECK(completeness(none, {s1, s2}).fraction() == 0.0);
    BodyState half;
    half.add_fragment(1, true);
    half.add_fragment(2, true);
    half.add_fragment(3, false);
    CHECK(completeness(half, {s1, s2}).fraction() == doctest::Approx(0.5));
    BodyState all = half;
    all.unite(3, 1);
    CHECK(completeness(all, {s1, s2}).fraction() == 1.0);
    const auto rep = completeness_report(half, all, {s1, s2}, 1);
    CHECK(rep.before.identified_connections == 1);
    CHECK(rep.after.identified_connections == 2);
    CHECK(rep.psds_added == 1);
    CHECK(rep.tbars_added == 0);
  }

  TEST_CASE("decision log is safe under concurrent appends") {
    DecisionLog log;
    std::vector<std::thread> ts;
    for (int t = 0; t < 8; ++t)
      ts.emplace_back([&, t] {
        for (int i = 0; i < 200; ++i) log.append("c" + std::to_string((t * 131 + i * 7) % 1000), Verdict::merge, "h", "t");
      });
    for (auto& t : ts) t.join();
    const auto e = log.entries();
    CHECK_NOTHROW(check_sequence(e));
    std::set<std::string> ids;
    for (const auto& d : e) ids.insert(d.candidate_id);
    CHECK(ids.size() == e.size());
  }
}
