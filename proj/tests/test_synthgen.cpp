#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "proofkit/adjacency.hpp"
#include "proofkit/synthgen.hpp"

using namespace proofkit;

namespace {
SynthConfig small_config(uint64_t seed, int splits = 30, int twigs = 0) {
  SynthConfig c;
  c.dims = {72, 64, 56};
  c.neuron_count = 8;
  c.tube_length_vox = 160;
  c.split_count = splits;
  c.twig_count = twigs;
  c.twig_length_vox = 40;
  c.chunk = 32;
  c.seed = seed;
  return c;
}
}  // namespace

TEST_SUITE("synthgen") {
  TEST_CASE("fragments partition neuron voxels and map to exactly one neuron") {
    const SynthOutput out = generate(small_config(11));
    const auto n = out.truth.neuron_volume.to_dense();
    const auto f = out.truth.fragment_volume.to_dense();
    std::map<uint64_t, int64_t> frag_count, neuron_count;
    for (size_t i = 0; i < n.data.size(); ++i) {
      CHECK((n.data[i] == 0) == (f.data[i] == 0));
      if (f.data[i] == 0) continue;
      REQUIRE(out.truth.fragment_to_neuron.count(f.data[i]));
      CHECK(out.truth.fragment_to_neuron.at(f.data[i]) == n.data[i]);
      ++frag_count[f.data[i]];
      ++neuron_count[n.data[i]];
    }
    int64_t fs = 0, ns = 0;
    for (const auto& [_, c] : frag_count) fs += c;
    for (const auto& [_, c] : neuron_count) ns += c;
    CHECK(fs == ns);
    CHECK(out.truth.fragment_to_neuron.size() == 8 + 30);
  }

  TEST_CASE("true merge edges equal same-neuron adjacency pairs (recount)") {
    const SynthOutput out = generate(small_config(12));
    const auto edges = oracle::brute_adjacency(out.truth.fragment_volume.to_dense());
    std::set<FragmentPair> recount;
    for (const auto& e : edges)
      if (out.truth.fragment_to_neuron.at(e.a) == out.truth.fragment_to_neuron.at(e.b)) recount.insert({e.a, e.b});
    CHECK(recount == out.truth.true_merge_edges);
    CHECK(out.truth.true_merge_edges.size() >= 30);

    const auto labeled = label_candidates(out.truth, edges);
    int64_t merges = 0;
    for (const auto& l : labeled) merges += l.merge;
    CHECK(merges == static_cast<int64_t>(recount.size()));
  }

  TEST_CASE("split_count = 0 leaves fragments equal to neurons up to relabeling") {
    const SynthOutput out = generate(small_config(13, 0));
    CHECK(out.truth.true_merge_edges.empty());
    const auto n = out.truth.neuron_volume.to_dense();
    const auto f = out.truth.fragment_volume.to_dense();
    std::map<uint64_t, uint64_t> f2n, n2f;
    for (size_t i = 0; i < n.data.size(); ++i) {
      if (!n.data[i]) continue;
      CHECK(f2n.emplace(f.data[i], n.data[i]).first->second == n.data[i]);
      CHECK(n2f.emplace(n.data[i], f.data[i]).first->second == f.data[i]);
    }
    CHECK(out.truth.identified.size() == f2n.size());
  }

  TEST_CASE("identified fragments hold at least half of their neuron (recount)") {
    const SynthOutput out = generate(small_config(14, 60, 12));
    const auto f = out.truth.fragment_volume.to_dense();
    std::map<uint64_t, int64_t> fsize, nsize;
    for (auto l : f.data)
      if (l) {
        ++fsize[l];
        ++nsize[out.truth.fragment_to_neuron.at(l)];
      }
    std::set<uint64_t> expect;
    for (const auto& [n, total] : nsize) {
      uint64_t best = 0;
      int64_t bs = -1;
      for (const auto& [fr, s] : fsize)
        if (out.truth.fragment_to_neuron.at(fr) == n && (s > bs || (s == bs && fr < best))) {
          bs = s;
          best = fr;
        }
      if (2 * bs >= total) expect.insert(best);
    }
    CHECK(expect == out.truth.identified);
  }

  TEST_CASE("twigs add one same-neuron fragment each, all touching their neuron") {
    const SynthOutput out = generate(small_config(16, 20, 15));
    CHECK(out.truth.fragment_to_neuron.size() == 8 + 20 + 15);
    const auto edges = oracle::brute_adjacency(out.truth.fragment_volume.to_dense());
    std::set<FragmentPair> recount;
    std::set<uint64_t> linked;
    for (const auto& e : edges)
      if (out.truth.fragment_to_neuron.at(e.a) == out.truth.fragment_to_neuron.at(e.b)) {
        recount.insert({e.a, e.b});
        linked.insert(e.a);
        linked.insert(e.b);
      }
    CHECK(recount == out.truth.true_merge_edges);
    // Every fragment of a multi-fragment neuron touches a sibling.
    std::map<uint64_t, int> per_neuron;
    for (const auto& [f, n] : out.truth.fragment_to_neuron) ++per_neuron[n];
    for (const auto& [f, n] : out.truth.fragment_to_neuron)
      if (per_neuron[n] > 1) CHECK(linked.count(f));
  }

  TEST_CASE("synapses sit on contacts between distinct neurons") {
    const SynthOutput out = generate(small_config(15));
    REQUIRE(!out.truth.synapses.empty());
    const auto& fv = out.truth.fragment_volume;
    for (const auto& s : out.truth.synapses) {
      CHECK(fv.at(s.tbar) == s.pre_fragment);
      REQUIRE(s.psds.size() == s.post_fragments.size());
      for (size_t i = 0; i < s.psds.size(); ++i) {
        CHECK(fv.at(s.psds[i]) == s.post_fragments[i]);
        CHECK(out.truth.fragment_to_neuron.at(s.pre_fragment) !=
              out.truth.fragment_to_neuron.at(s.post_fragments[i]));
      }
    }
  }

  TEST_CASE("generation is deterministic and seed-sensitive") {
    const SynthOutput a = generate(small_config(21)), b = generate(small_config(21)), c = generate(small_config(22));
    CHECK(a.gray == b.gray);
    CHECK(a.truth.fragment_volume == b.truth.fragment_volume);
    CHECK(a.truth.synapses == b.truth.synapses);
    CHECK(a.truth.neuron_types == b.truth.neuron_types);
    CHECK_FALSE(a.gray == c.gray);
  }

  TEST_CASE("truth.json round trip and config validation") {
    oracle::TempDir tmp("truth");
    const SynthOutput a = generate(small_config(23));
    write_truth(tmp.path / "truth.json", a.truth);
    const GroundTruth t = read_truth(tmp.path / "truth.json");
    CHECK(t.fragment_to_neuron == a.truth.fragment_to_neuron);
    CHECK(t.true_merge_edges == a.truth.true_merge_edges);
    CHECK(t.neuron_types == a.truth.neuron_types);
    CHECK(t.identified == a.truth.identified);
    SynthConfig bad = small_config(1);
    bad.split_count = -1;
    CHECK_THROWS_AS(generate(bad), Error);
    bad = small_config(1);
    bad.twig_count = -1;
    CHECK_THROWS_AS(generate(bad), Error);
    bad = small_config(1);
    bad.neuron_count = 0;
    CHECK_THROWS_AS(generate(bad), Error);
  }
}
