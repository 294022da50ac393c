#include <cmath>

#include "doctest.h"
#include "proofkit/cnn.hpp"

using namespace proofkit;

namespace {

CnnConfig tiny_config(uint64_t seed = 1) {
  CnnConfig c;
  c.input_edge = 9;
  c.in_channels = 2;
  c.conv_blocks = {{3, 3, 2}, {2, 3, 2}};
  c.fc_widths = {5};
  c.seed = seed;
  return c;
}

// Direct loops: same-padded cross-correlation, ReLU, max pool, dense layers.
double naive_logit(const CnnConfig& cfg, const std::vector<double>& p, const std::vector<float>& input) {
  int64_t S = cfg.input_edge;
  int cin = cfg.in_channels;
  std::vector<double> x(input.begin(), input.end());
  size_t off = 0;
  for (const auto& b : cfg.conv_blocks) {
    const int k = b.kernel, pad = k / 2;
    const size_t w0 = off;
    off += static_cast<size_t>(b.filters * cin * k * k * k);
    const size_t b0 = off;
    off += static_cast<size_t>(b.filters);
    auto in_at = [&](int c, int64_t xx, int64_t yy, int64_t zz) {
      if (xx < 0 || yy < 0 || zz < 0 || xx >= S || yy >= S || zz >= S) return 0.0;
      return x[static_cast<size_t>(c * S * S * S + xx + S * (yy + S * zz))];
    };
    std::vector<double> conv(static_cast<size_t>(b.filters * S * S * S));
    for (int co = 0; co < b.filters; ++co)
      for (int64_t zz = 0; zz < S; ++zz)
        for (int64_t yy = 0; yy < S; ++yy)
          for (int64_t xx = 0; xx < S; ++xx) {
            double acc = p[b0 + static_cast<size_t>(co)];
            for (int ci = 0; ci < cin; ++ci)
              for (int dz = 0; dz < k; ++dz)
                for (int dy = 0; dy < k; ++dy)
                  for (int dx = 0; dx < k; ++dx)
                    acc += p[w0 + static_cast<size_t>(((co * cin + ci) * k + dz) * k * k + dy * k + dx)] *
                           in_at(ci, xx + dx - pad, yy + dy - pad, zz + dz - pad);
            conv[static_cast<size_t>(co * S * S * S + xx + S * (yy + S * zz))] = std::max(acc, 0.0);
          }
    const int64_t Q = S / b.pool;
    std::vector<double> pooled(static_cast<size_t>(b.filters * Q * Q * Q));
    for (int co = 0; co < b.filters; ++co)
      for (int64_t zz = 0; zz < Q; ++zz)
        for (int64_t yy = 0; yy < Q; ++yy)
          for (int64_t xx = 0; xx < Q; ++xx) {
            double m = -1;
            for (int d = 0; d < b.pool * b.pool * b.pool; ++d) {
              const int64_t sx = xx * b.pool + d % b.pool, sy = yy * b.pool + (d / b.pool) % b.pool,
                            sz = zz * b.pool + d / (b.pool * b.pool);
              m = std::max(m, conv[static_cast<size_t>(co * S * S * S + sx + S * (sy + S * sz))]);
            }
            pooled[static_cast<size_t>(co * Q * Q * Q + xx + Q * (yy + Q * zz))] = m;
          }
    x = std::move(pooled);
    S = Q;
    cin = b.filters;
  }
  std::vector<int> widths = cfg.fc_widths;
  widths.push_back(1);
  for (size_t l = 0; l < widths.size(); ++l) {
    const size_t in = x.size(), out = static_cast<size_t>(widths[l]);
    std::vector<double> y(out);
    const size_t w0 = off;
    off += in * out;
    const size_t b0 = off;
    off += out;
    for (size_t o = 0; o < out; ++o) {
      double acc = p[b0 + o];
      for (size_t i = 0; i < in; ++i) acc += p[w0 + o * in + i] * x[i];
      y[o] = l + 1 < widths.size() ? std::max(acc, 0.0) : acc;
    }
    x = std::move(y);
  }
  CHECK(off == p.size());
  return x[0];
}

std::vector<float> random_input(const CnnConfig& c, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> in(static_cast<size_t>(c.in_channels * c.input_edge * c.input_edge * c.input_edge));
  for (auto& v : in) v = static_cast<float>(rng.uniform(-1, 1));
  return in;
}

}  // namespace

TEST_SUITE("cnn") {
  TEST_CASE("forward pass matches the naive loop implementation") {
    const CnnConfig cfg = tiny_config();
    const CnnNet<double> net(cfg);
    for (uint64_t s = 0; s < 4; ++s) {
      const auto p = net.init_params(s);
      const auto in = random_input(cfg, 100 + s);
      auto ws = net.make_workspace();
      CHECK(net.logit(p, in, ws) == doctest::Approx(naive_logit(cfg, p, in)).epsilon(1e-12));
    }
  }

  TEST_CASE("gradient check: max relative error < 1e-4 over 5 seeds") {
    const CnnConfig cfg = tiny_config();
    for (uint64_t s = 0; s < 5; ++s) {
      GradCheckSample sample{random_input(cfg, s), static_cast<int>(s % 2)};
      const auto r = grad_check(cfg, sample, s);
      INFO("seed " << s << " worst param " << r.worst_param);
      CHECK(r.max_rel_error < 1e-4);
    }
  }

  TEST_CASE("flip masks equal explicitly flipped inputs") {
    const CnnConfig cfg = tiny_config();
    const CnnNet<double> net(cfg);
    const auto p = net.init_params(3);
    const auto in = random_input(cfg, 7);
    const int64_t S = cfg.input_edge;
    for (FlipMask m = 0; m < 8; ++m) {
      std::vector<float> flipped(in.size());
      for (int c = 0; c < cfg.in_channels; ++c)
        for (int64_t z = 0; z < S; ++z)
          for (int64_t y = 0; y < S; ++y)
            for (int64_t x = 0; x < S; ++x) {
              const int64_t sx = (m & 1) ? S - 1 - x : x, sy = (m & 2) ? S - 1 - y : y, sz = (m & 4) ? S - 1 - z : z;
              flipped[static_cast<size_t>(c * S * S * S + x + S * (y + S * z))] =
                  in[static_cast<size_t>(c * S * S * S + sx + S * (sy + S * sz))];
            }
      auto ws = net.make_workspace();
      const double a = net.logit(p, in, ws, m);
      const double b = net.logit(p, flipped, ws, 0);
      CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
  }

  TEST_CASE("BCE helpers are stable at extreme logits") {
    CHECK(sigmoid(800) == 1.0);
    CHECK(sigmoid(-800) == 0.0);
    CHECK(softplus(800) == doctest::Approx(800));
    CHECK(bce_with_logit(0, 1) == doctest::Approx(std::log(2.0)));
    CHECK(std::isfinite(bce_with_logit(-800, 1)));
  }

  TEST_CASE("training separates a trivially separable toy set and batch scoring is consistent") {
    CnnConfig cfg;
    cfg.input_edge = 9;
    cfg.conv_blocks = {{4, 3, 2}};
    cfg.fc_widths = {8};
    cfg.seed = 5;
    std::vector<EvidenceTensor> tensors;
    Rng rng(9);
    for (int i = 0; i < 64; ++i) {
      EvidenceTensor t(9, {4, 4, 4});
      const bool pos = i % 2 == 0;
      for (size_t k = 0; k < t.channel_size(); ++k) t.data[k] = static_cast<float>(rng.uniform(0, 0.3) + (pos ? 0.6 : 0.0));
      tensors.push_back(std::move(t));
    }
    std::vector<LabeledTensor> ds;
    for (size_t i = 0; i < tensors.size(); ++i) ds.push_back({&tensors[i], static_cast<int>(i % 2 == 0)});
    TrainHyper h;
    h.epochs = 15;
    h.batch = 8;
    const auto r = cnn_train(cfg, ds, h);
    CHECK(cnn_mean_loss(r.model, ds) < 0.5 * r.initial_loss);
    std::vector<const EvidenceTensor*> ptrs;
    for (const auto& t : tensors) ptrs.push_back(&t);
    const auto batch = cnn_forward_batch(r.model, ptrs);
    int correct = 0;
    for (size_t i = 0; i < tensors.size(); ++i) {
      CHECK(batch[i] == cnn_forward(r.model, tensors[i]));
      correct += (batch[i] > 0.5f) == (i % 2 == 0);
    }
    CHECK(correct >= 60);
    // Deterministic given the seed.
    CHECK(cnn_train(cfg, ds, h).model.params == r.model.params);
  }

  TEST_CASE("all-zero weights give probability 0.5") {
    CnnConfig cfg;
    cfg.input_edge = 9;
    cfg.conv_blocks = {{2, 3, 2}};
    cfg.fc_widths = {3};
    CnnModel m{cfg, std::vector<float>(CnnLayout(cfg).param_count, 0.0f)};
    EvidenceTensor t(9, {4, 4, 4});
    for (size_t k = 0; k < t.data.size(); ++k) t.data[k] = static_cast<float>(k % 7) / 7.0f;
    CHECK(cnn_forward(m, t) == 0.5f);
  }

  TEST_CASE("linear-only network: gradient exact to rounding") {
    CnnConfig cfg;
    cfg.input_edge = 9;
    cfg.in_channels = 2;
    cfg.conv_blocks = {};
    cfg.fc_widths = {};
    for (uint64_t s = 0; s < 3; ++s) {
      GradCheckSample sample{random_input(cfg, 40 + s), static_cast<int>(s % 2)};
      CHECK(grad_check(cfg, sample, s).max_rel_error < 1e-7);
    }
  }

  TEST_CASE("zero input: first-layer weight gradients vanish, bias gradients do not") {
    const CnnConfig cfg = tiny_config();
    const CnnNet<double> net(cfg);
    auto p = net.init_params(2);
    const auto& b0 = cfg.conv_blocks.front();
    const size_t nw = static_cast<size_t>(b0.filters * cfg.in_channels * b0.kernel * b0.kernel * b0.kernel);
    // Positive first-layer biases keep the ReLUs open on a zero input.
    for (size_t i = nw; i < nw + static_cast<size_t>(b0.filters); ++i) p[i] = 0.1;
    std::vector<double> g(p.size(), 0.0);
    auto ws = net.make_workspace();
    const std::vector<float> zero(static_cast<size_t>(cfg.in_channels * 9 * 9 * 9), 0.0f);
    net.loss_and_grad(p, zero, 1.0, ws, g);
    for (size_t i = 0; i < nw; ++i) CHECK(g[i] == 0.0);
    double bias_norm = 0;
    for (size_t i = nw; i < nw + static_cast<size_t>(b0.filters); ++i) bias_norm += std::abs(g[i]);
    CHECK(bias_norm > 0);
  }

  TEST_CASE("one example is memorized; uninformative labels settle at ln 2") {
    CnnConfig cfg;
    cfg.input_edge = 9;
    cfg.conv_blocks = {{4, 3, 2}};
    cfg.fc_widths = {8};
    cfg.seed = 3;
    EvidenceTensor t(9, {4, 4, 4});
    Rng rng(1);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    TrainHyper h;
    h.batch = 1;
    h.epochs = 200;
    const std::vector<LabeledTensor> one{{&t, 1}};
    CHECK(cnn_mean_loss(cnn_train(cfg, one, h).model, one) < 0.01);

    // Identical inputs with balanced labels: the best any model can do is
    // p = 0.5, i.e. loss ln 2.
    std::vector<LabeledTensor> same;
    for (int i = 0; i < 32; ++i) same.push_back({&t, i % 2});
    h.batch = 8;
    h.epochs = 30;
    const double loss = cnn_mean_loss(cnn_train(cfg, same, h).model, same);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(0.01));
  }

  TEST_CASE("config validation and shape errors") {
    CnnConfig bad = tiny_config();
    bad.input_edge = 2;
    CHECK_THROWS_AS(bad.validate(), Error);
    const CnnNet<double> net(tiny_config());
    auto ws = net.make_workspace();
    const auto p = net.init_params(1);
    CHECK_THROWS_AS(net.logit(p, std::vector<float>(5), ws), Error);
    CHECK(CnnLayout(CnnConfig::full_scale()).param_count > CnnLayout(CnnConfig{}).param_count);
  }
}
