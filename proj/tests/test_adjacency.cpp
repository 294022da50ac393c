#include "doctest.h"
#include "oracles.hpp"
#include "proofkit/adjacency.hpp"
#include "proofkit/body_state.hpp"

using namespace proofkit;

namespace {
LabelVolume from(const Dense<uint64_t>& d, int64_t chunk = 64) {
  return LabelVolume::from_dense(d, {d.dims, {8, 8, 8}, DType::label64, chunk});
}
}  // namespace

TEST_SUITE("adjacency") {
  TEST_CASE("two voxels along x: one edge at the a-side voxel") {
    Dense<uint64_t> d({2, 1, 1});
    d.data = {1, 2};
    const auto e = compute_adjacency(from(d), 1, 16);
    REQUIRE(e.size() == 1);
    CHECK(e[0].a == 1);
    CHECK(e[0].b == 2);
    CHECK(e[0].contact_voxels == 1);
    CHECK(e[0].rep_location == Voxel{0, 0, 0});
  }

  TEST_CASE("constant and background-only volumes have no edges") {
    CHECK(compute_adjacency(from(Dense<uint64_t>({20, 20, 20}, 4)), 1, 16).empty());
    Dense<uint64_t> d({3, 1, 1});
    d.data = {1, 0, 2};  // separated by background
    CHECK(compute_adjacency(from(d), 1, 16).empty());
  }

  TEST_CASE("diagonal-only contact is not an edge") {
    Dense<uint64_t> d({2, 2, 1});
    d.data = {1, 0, 0, 2};
    CHECK(compute_adjacency(from(d), 1, 16).empty());
  }

  TEST_CASE("random volumes match the brute-force scan for every block edge") {
    for (uint64_t seed = 0; seed < 12; ++seed) {
      const LabelVolume v = oracle::random_labels(seed);
      const auto expect = oracle::brute_adjacency(v.to_dense());
      for (int64_t be : {16, 32, 64}) CHECK(compute_adjacency(v, 1, be) == expect);
    }
  }

  TEST_CASE("factor f equals factor 1 on the downsampled volume with rescaled reps") {
    const LabelVolume v = oracle::random_labels(77, 40, 6, 16);
    for (int64_t f : {2, 4}) {
      const auto direct = compute_adjacency(v, f, 16);
      const auto expect = oracle::brute_adjacency(downsample(v, f).to_dense(), f, v.dims());
      CHECK(direct == expect);
    }
    CHECK_THROWS_AS(compute_adjacency(v, 3, 16), Error);
  }

  TEST_CASE("thread count does not change the table") {
    const LabelVolume v = oracle::random_labels(5);
    set_thread_count(1);
    const auto one = compute_adjacency(v, 1, 16);
    set_thread_count(4);
    const auto four = compute_adjacency(v, 1, 16);
    set_thread_count(0);
    CHECK(one == four);
  }

  TEST_CASE("candidate ids are stable and baseline follows c / (c + 50)") {
    AdjacencyEdge e{3, 9, 50, {4, 5, 6}, 1};
    CHECK(candidate_id(e) == candidate_id(e));
    AdjacencyEdge moved = e;
    moved.rep_location.x = 5;
    CHECK(candidate_id(e) != candidate_id(moved));
    CHECK(candidate_id(e, "vol1") != candidate_id(e));
    CHECK(baseline_score(50) == doctest::Approx(0.5));
    CHECK(baseline_score(0) == 0.0);
  }

  TEST_CASE("focused filter passes through; min_contact filters") {
    const auto edges = compute_adjacency(oracle::random_labels(8), 1, 32);
    CandidateFilter f;
    CHECK(candidates_for(edges, f).size() == edges.size());
    f.min_contact = 10;
    size_t expect = 0;
    for (const auto& e : edges) expect += e.contact_voxels >= 10;
    CHECK(candidates_for(edges, f).size() == expect);
  }

  TEST_CASE("orphan filter equals a recount over body-state flags") {
    const auto edges = compute_adjacency(oracle::random_labels(9), 1, 32);
    BodyState bs;
    for (uint64_t l = 1; l < 12; ++l) bs.add_fragment(l, l % 4 == 0, static_cast<int64_t>(l * 7));
    CandidateFilter f;
    f.workflow = Workflow::orphan;
    CHECK_THROWS_AS(candidates_for(edges, f), Error);
    f.bodies = &bs;
    std::vector<std::string> expect;
    for (const auto& e : edges)
      if (bs.identified(e.a) != bs.identified(e.b)) expect.push_back(candidate_id(e));
    std::vector<std::string> got;
    for (const auto& c : candidates_for(edges, f)) {
      got.push_back(c.id);
      CHECK(c.workflow == Workflow::orphan);
    }
    CHECK(got == expect);

    // Weight window on the non-identified side.
    f.orphan_weight_min = 20;
    f.orphan_weight_max = 50;
    expect.clear();
    for (const auto& e : edges) {
      if (bs.identified(e.a) == bs.identified(e.b)) continue;
      const int64_t w = bs.synapse_weight(bs.identified(e.a) ? e.b : e.a);
      if (w >= 20 && w <= 50) expect.push_back(candidate_id(e));
    }
    got.clear();
    for (const auto& c : candidates_for(edges, f)) got.push_back(c.id);
    CHECK(got == expect);
  }

  TEST_CASE("orphan filter: fragment with no identified neighbour gives nothing") {
    Dense<uint64_t> d({3, 1, 1});
    d.data = {1, 2, 3};
    BodyState bs;
    for (uint64_t l = 1; l <= 3; ++l) bs.add_fragment(l, false);
    CandidateFilter f;
    f.workflow = Workflow::orphan;
    f.bodies = &bs;
    CHECK(candidates_for(compute_adjacency(from(d), 1, 16), f).empty());
  }

  TEST_CASE("TSV and JSONL round trips") {
    oracle::TempDir tmp("adj");
    const auto edges = compute_adjacency(oracle::random_labels(10), 1, 16);
    write_adjacency_tsv(tmp.path / "a.tsv", edges);
    CHECK(read_adjacency_tsv(tmp.path / "a.tsv") == edges);
    auto cands = candidates_for(edges, {});
    cands[0].scores["cnn"] = 0.125;
    cands[0].volume = "v";
    write_candidates(tmp.path / "c.jsonl", cands);
    const auto back = read_candidates(tmp.path / "c.jsonl");
    REQUIRE(back.size() == cands.size());
    for (size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].edge == cands[i].edge);
      CHECK(back[i].id == cands[i].id);
      CHECK(back[i].scores == cands[i].scores);
      CHECK(back[i].volume == cands[i].volume);
    }
  }
}
