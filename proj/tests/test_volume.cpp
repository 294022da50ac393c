#include "doctest.h"
#include "oracles.hpp"
#include "proofkit/volume.hpp"

using namespace proofkit;

TEST_SUITE("volume") {
  TEST_CASE("chunked storage matches the dense source for ragged chunk grids") {
    const LabelVolume v = oracle::random_labels(3, 37, 9, 16);
    const Dense<uint64_t> d = v.to_dense();
    CHECK(v.chunk_grid() == Dims{3, 3, 3});
    for (int64_t z = 0; z < 37; z += 5)
      for (int64_t y = 0; y < 37; y += 3)
        for (int64_t x = 0; x < 37; ++x) CHECK(v.at(x, y, z) == d(x, y, z));
    CHECK(v.at(-1, 0, 0) == 0);
    CHECK(v.at(37, 0, 0) == 0);
    CHECK_THROWS_AS(LabelVolume(v).set(37, 0, 0, 1), Error);
  }

  TEST_CASE("write/read round trip is exact for both dtypes") {
    oracle::TempDir tmp("volume");
    const LabelVolume labels = oracle::random_labels(5, 33, 1000, 16);
    write_volume(tmp.path / "labels", labels);
    CHECK(read_label_volume(tmp.path / "labels") == labels);
    Dense<uint8_t> g({20, 9, 14});
    Rng rng(1);
    for (auto& x : g.data) x = static_cast<uint8_t>(rng.below(256));
    const GrayVolume gray = GrayVolume::from_dense(g, {g.dims, {4, 4, 30}, DType::gray8, 8});
    write_volume(tmp.path / "gray", gray);
    const AnyVolume any = read_volume(tmp.path / "gray");
    REQUIRE(std::holds_alternative<GrayVolume>(any));
    CHECK(std::get<GrayVolume>(any) == gray);
    CHECK_THROWS_AS(read_gray_volume(tmp.path / "labels"), Error);
    CHECK_THROWS_AS(read_label_volume(tmp.path / "missing"), Error);
  }

  TEST_CASE("downsample: label mode with smallest-id ties, gray rounded mean") {
    Dense<uint64_t> d({2, 2, 2}, 7);
    d(0, 0, 0) = 3;
    d(1, 0, 0) = 3;
    d(0, 1, 0) = 3;
    d(1, 1, 0) = 3;  // 4 x label 3, 4 x label 7 -> tie -> 3
    const auto lv = LabelVolume::from_dense(d, {d.dims, {8, 8, 8}, DType::label64, 64});
    const auto ds = downsample(lv, 2);
    CHECK(ds.dims() == Dims{1, 1, 1});
    CHECK(ds.at(0, 0, 0) == 3);
    CHECK(ds.meta().voxel_size_nm[0] == doctest::Approx(16.0));

    Dense<uint8_t> g({3, 1, 1});
    g.data = {10, 11, 200};
    const auto gv = GrayVolume::from_dense(g, {g.dims, {8, 8, 8}, DType::gray8, 64});
    const auto gd = downsample(gv, 2);
    CHECK(gd.dims() == Dims{2, 1, 1});
    CHECK(gd.at(0, 0, 0) == 11);   // (10 + 11) / 2 = 10.5 -> 11
    CHECK(gd.at(1, 0, 0) == 200);  // partial block averages what exists
    CHECK_THROWS_AS(downsample(gv, 3), Error);
    CHECK(downsample(lv, 1) == lv);
  }

  TEST_CASE("downsample oracle: brute-force mode over random volumes") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      const LabelVolume v = oracle::random_labels(seed, 21, 5, 8);
      const Dense<uint64_t> src = v.to_dense();
      for (int64_t f : {2, 4}) {
        const Dense<uint64_t> out = downsample(v, f).to_dense();
        for (int64_t z = 0; z < out.dims[2]; ++z)
          for (int64_t y = 0; y < out.dims[1]; ++y)
            for (int64_t x = 0; x < out.dims[0]; ++x) {
              std::map<uint64_t, int> count;
              for (int64_t k = 0; k < f * f * f; ++k) {
                const int64_t sx = x * f + k % f, sy = y * f + (k / f) % f, sz = z * f + k / (f * f);
                if (src.contains(sx, sy, sz)) ++count[src(sx, sy, sz)];
              }
              uint64_t best = 0;
              int bc = -1;
              for (const auto& [l, c] : count)
                if (c > bc) {
                  bc = c;
                  best = l;
                }
              CHECK(out(x, y, z) == best);
            }
      }
    }
  }

  TEST_CASE("extract_subvolume pads outside with zero and rejects even edges") {
    const LabelVolume v = oracle::random_labels(9, 16, 50, 16);
    const auto cube = extract_subvolume(v, {0, 15, 8}, 5);
    CHECK(cube.dims == Dims{5, 5, 5});
    for (int64_t z = 0; z < 5; ++z)
      for (int64_t y = 0; y < 5; ++y)
        for (int64_t x = 0; x < 5; ++x) CHECK(cube(x, y, z) == v.at(x - 2, 15 + y - 2, 8 + z - 2));
    CHECK_THROWS_AS(extract_subvolume(v, {0, 0, 0}, 4), Error);
  }
}
