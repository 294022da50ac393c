#include <cmath>
#include "doctest.h"
#include "oracles.hpp"
#include "proofkit/fusion.hpp"
#include "proofkit/models.hpp"

using namespace proofkit;

namespace {
std::vector<FusionExample> blobs(uint64_t seed, int n, double sep) {
  Rng rng(seed);
  std::vector<FusionExample> d;
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    d.push_back({{rng.normal() + (y ? sep : -sep), 0.5 * rng.normal() + (y ? sep : 0)}, y});
  }
  return d;
}
}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("Pegasos reaches the grid-search optimum of the SVM objective") {
    const auto d = blobs(1, 300, 0.7);
    SvmOptions o;
    o.lambda = 0.05;
    o.standardize = false;
    o.iterations_per_example = 400;
    const LinearSvm svm = train_linear_svm(d, o);
    double best = 1e300;
    for (double w1 = -3; w1 <= 3; w1 += 0.05)
      for (double w2 = -3; w2 <= 3; w2 += 0.05)
        for (double b = -2; b <= 2; b += 0.1) best = std::min(best, svm_objective(d, {{w1, w2}, b}, o.lambda));
    const double got = svm_objective(d, svm, o.lambda);
    CHECK(got <= best * 1.02);
  }

  TEST_CASE("separable toy problem is classified perfectly; training is deterministic") {
    const auto d = blobs(2, 200, 4.0);
    SvmOptions o;
    o.seed = 3;
    const LinearSvm svm = train_linear_svm(d, o);
    for (const auto& e : d) {
      const double m = svm.weights[0] * e.x[0] + svm.weights[1] * e.x[1] + svm.bias;
      CHECK((m > 0) == (e.label == 1));
    }
    const LinearSvm again = train_linear_svm(d, o);
    CHECK(again.weights == svm.weights);
    CHECK(again.bias == svm.bias);
  }

  TEST_CASE("Platt recovers a known logistic link") {
    Rng rng(6);
    const double a = -2.0, b = 0.5;
    std::vector<double> f;
    std::vector<int> y;
    for (int i = 0; i < 20000; ++i) {
      const double m = rng.uniform(-3, 3);
      f.push_back(m);
      y.push_back(rng.uniform() < 1.0 / (1.0 + std::exp(a * m + b)));
    }
    const PlattScale p = fit_platt(f, y);
    CHECK(p.a == doctest::Approx(a).epsilon(0.05));
    CHECK(p.b == doctest::Approx(b).epsilon(0.15));
  }

  TEST_CASE("fusion output is a probability monotone in the margin") {
    const auto d = blobs(4, 400, 1.0);
    SvmOptions o;
    o.seed = 1;
    const FusionParams fp = fusion_train(d, o);
    CHECK(fp.platt_a < 0);
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
      const std::vector<double> x1{rng.normal(), rng.normal()}, x2{rng.normal(), rng.normal()};
      const double p1 = fp.probability(x1), p2 = fp.probability(x2);
      CHECK(p1 >= 0);
      CHECK(p1 <= 1);
      if (fp.margin(x1) > fp.margin(x2)) CHECK(p1 >= p2);
    }
    std::vector<FusionExample> one_class(20, FusionExample{{1.0, 2.0}, 1});
    const FusionParams oc = fusion_train(one_class, o);
    CHECK(std::isfinite(oc.probability(std::vector<double>{1.0, 2.0})));
    CHECK_THROWS_AS(fusion_train({}, o), Error);
  }
}

TEST_SUITE("models") {
  namespace {
  ModelBundle small_bundle() {
    ModelBundle b;
    b.cnn.config.input_edge = 9;
    b.cnn.config.conv_blocks = {{2, 3, 2}};
    b.cnn.config.fc_widths = {3};
    const CnnNet<float> net(b.cnn.config);
    b.cnn.params = net.init_params(7);
    b.fusion.weights.assign(kFusionInputSize, 0.0);
    b.fusion.weights[0] = 2.0;
    b.fusion.bias = -1.0 / 3;
    b.fusion.platt_a = -1.5;
    b.fusion.platt_b = 0.25;
    b.train_fingerprint = 0xdeadbeef;
    b.threshold = 0.875;
    return b;
  }
  }  // namespace

  TEST_CASE("bundle round trip is exact and the fingerprint is stable") {
    oracle::TempDir tmp("bundle");
    const ModelBundle b = small_bundle();
    save_bundle(tmp.path / "m.aprf", b);
    const ModelBundle back = load_bundle(tmp.path / "m.aprf");
    CHECK(back.cnn.config == b.cnn.config);
    CHECK(back.cnn.params == b.cnn.params);
    CHECK(back.fusion == b.fusion);
    CHECK(back.threshold == b.threshold);
    CHECK(back.train_fingerprint == b.train_fingerprint);
    CHECK(serialize_bundle(back) == serialize_bundle(b));
    CHECK(bundle_fingerprint(back) == bundle_fingerprint(b));
    ModelBundle other = b;
    other.threshold.reset();
    CHECK(bundle_fingerprint(other) != bundle_fingerprint(b));
    CHECK(deserialize_bundle(serialize_bundle(other)).threshold == std::nullopt);
  }

  TEST_CASE("corrupt bundles are rejected") {
    std::string bytes = serialize_bundle(small_bundle());
    CHECK_THROWS_AS(deserialize_bundle("nope"), Error);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_bundle(bad_magic), Error);
    CHECK_THROWS_AS(deserialize_bundle(bytes.substr(0, bytes.size() - 4)), Error);
  }

  TEST_CASE("scoring: missing features, layout mismatch, untrained fusion, batch consistency") {
    const ModelBundle b = small_bundle();
    EvidenceTensor t(9, {4, 4, 4});
    Rng rng(2);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    CandidateFeatures f;
    f.id = "c";
    const Scores s = score(b, {&t, 0.3, &f, kFeatureLayoutVersion});
    REQUIRE(s.fusion.has_value());
    const auto x = fusion_input(s.cnn, 0.3, f.shape, f.connectivity);
    CHECK(x.size() == kFusionInputSize);
    CHECK(x[0] == doctest::Approx(std::log(s.cnn / (1.0 - s.cnn))));
    CHECK(fusion_input(1.0, 0, f.shape, f.connectivity)[0] == doctest::Approx(std::log((1 - 1e-7) / 1e-7)));
    CHECK(*s.fusion == doctest::Approx(b.fusion.probability(x)));
    CHECK(s.cnn == doctest::Approx(cnn_forward(b.cnn, t)));

    CHECK_THROWS_WITH_AS(score(b, {&t, 0.3, nullptr, kFeatureLayoutVersion}), doctest::Contains("feature"), Error);
    try {
      score(b, {&t, 0.3, &f, kFeatureLayoutVersion + 1});
      FAIL("expected layout_mismatch");
    } catch (const Error& e) {
      CHECK(e.code() == "layout_mismatch");
    }
    ModelBundle cnn_only = b;
    cnn_only.fusion = {};
    const Scores c = score(cnn_only, {&t, 0.3, &f, kFeatureLayoutVersion});
    CHECK_FALSE(c.fusion.has_value());

    std::vector<ScoreInput> batch(5, ScoreInput{&t, 0.3, &f, kFeatureLayoutVersion});
    for (const auto& r : score_batch(b, batch)) {
      CHECK(r.cnn == s.cnn);
      CHECK(*r.fusion == *s.fusion);
    }
  }
}
