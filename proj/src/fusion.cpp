#include "proofkit/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "proofkit/common.hpp"

namespace proofkit {

double FusionParams::margin(std::span<const double> x) const {
  if (x.size() != weights.size()) throw Error("shape_mismatch", "fusion input has wrong dimension");
  double m = bias;
  for (size_t i = 0; i < x.size(); ++i) m += weights[i] * x[i];
  return m;
}

double FusionParams::probability(std::span<const double> x) const {
  const double t = platt_a * margin(x) + platt_b;
  // Stable logistic of -t.
  if (t >= 0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

namespace {

void check_dims(const std::vector<FusionExample>& data) {
  if (data.empty()) throw Error("invalid_argument", "fusion dataset is empty");
  for (const auto& e : data) {
    if (e.x.size() != data.front().x.size()) throw Error("shape_mismatch", "inconsistent fusion vector dimension");
    if (e.label != 0 && e.label != 1) throw Error("invalid_argument", "labels must be 0 or 1");
  }
}

}  // namespace

double svm_objective(const std::vector<FusionExample>& data, const LinearSvm& svm, double lambda) {
  double reg = svm.bias * svm.bias;
  for (double w : svm.weights) reg += w * w;
  double hinge = 0;
  for (const auto& e : data) {
    double m = svm.bias;
    for (size_t i = 0; i < e.x.size(); ++i) m += svm.weights[i] * e.x[i];
    const double y = e.label == 1 ? 1.0 : -1.0;
    hinge += std::max(0.0, 1.0 - y * m);
  }
  return 0.5 * lambda * reg + hinge / static_cast<double>(data.size());
}

LinearSvm train_linear_svm(const std::vector<FusionExample>& data, const SvmOptions& opt) {
  check_dims(data);
  if (!(opt.lambda > 0)) throw Error("invalid_argument", "lambda must be > 0");
  const size_t n = data.size(), d = data.front().x.size();
  std::vector<double> mean(d, 0.0), scale(d, 1.0);
  if (opt.standardize) {
    for (const auto& e : data)
      for (size_t i = 0; i < d; ++i) mean[i] += e.x[i];
    for (auto& m : mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (const auto& e : data)
      for (size_t i = 0; i < d; ++i) var[i] += (e.x[i] - mean[i]) * (e.x[i] - mean[i]);
    for (size_t i = 0; i < d; ++i) {
      const double sd = std::sqrt(var[i] / static_cast<double>(n));
      scale[i] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
  }
  std::vector<std::vector<double>> xs(n, std::vector<double>(d));
  for (size_t k = 0; k < n; ++k)
    for (size_t i = 0; i < d; ++i) xs[k][i] = opt.standardize ? (data[k].x[i] - mean[i]) * scale[i] : data[k].x[i];

  // Weights are stored as scale * v to make the shrink step O(1).
  std::vector<double> v(d, 0.0), avg(d, 0.0);
  double w_scale = 1.0, b = 0.0, avg_b = 0.0;
  const uint64_t T = static_cast<uint64_t>(std::max(1, opt.iterations_per_example)) * n;
  const uint64_t avg_from = T / 2;
  Rng rng(derive_seed(opt.seed, "svm-order"));
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  size_t pos = n;
  double norm2 = 0.0;  // |v|^2 * w_scale^2 + b^2 tracked lazily
  for (uint64_t t = 1; t <= T; ++t) {
    if (pos == n) {
      for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(rng.below(i))]);
      pos = 0;
    }
    const auto& x = xs[order[pos]];
    const double y = data[order[pos]].label == 1 ? 1.0 : -1.0;
    ++pos;
    const double eta = 1.0 / (opt.lambda * static_cast<double>(t));
    double m = 0;
    for (size_t i = 0; i < d; ++i) m += v[i] * x[i];
    m = m * w_scale + (opt.fit_bias ? b : 0.0);
    const double shrink = 1.0 - eta * opt.lambda;  // = 1 - 1/t
    if (shrink <= 0) {
      std::fill(v.begin(), v.end(), 0.0);
      w_scale = 1.0;
      b = 0.0;
    } else {
      w_scale *= shrink;
      b *= shrink;
    }
    if (y * m < 1.0) {
      for (size_t i = 0; i < d; ++i) v[i] += eta * y * x[i] / w_scale;
      if (opt.fit_bias) b += eta * y;
    }
    // Project onto the ball of radius 1/sqrt(lambda).
    double vv = 0;
    for (double vi : v) vv += vi * vi;
    norm2 = vv * w_scale * w_scale + b * b;
    const double radius2 = 1.0 / opt.lambda;
    if (norm2 > radius2) {
      const double f = std::sqrt(radius2 / norm2);
      w_scale *= f;
      b *= f;
    }
    if (w_scale < 1e-100 || w_scale > 1e100) {
      for (auto& vi : v) vi *= w_scale;
      w_scale = 1.0;
    }
    if (t > avg_from) {
      for (size_t i = 0; i < d; ++i) avg[i] += v[i] * w_scale;
      avg_b += b;
    }
  }
  const double cnt = static_cast<double>(T - avg_from);
  LinearSvm out;
  out.weights.assign(d, 0.0);
  double bias = avg_b / cnt;
  for (size_t i = 0; i < d; ++i) {
    const double w = avg[i] / cnt;
    out.weights[i] = w * scale[i];
    bias -= w * scale[i] * mean[i];
  }
  out.bias = opt.fit_bias ? bias : 0.0;
  return out;
}

PlattScale fit_platt(std::span<const double> f, std::span<const int> labels) {
  if (f.size() != labels.size() || f.empty()) throw Error("invalid_argument", "platt inputs must be non-empty and aligned");
  double prior1 = 0, prior0 = 0;
  for (int y : labels) (y == 1 ? prior1 : prior0) += 1;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0), lo = 1.0 / (prior0 + 2.0);
  const size_t n = f.size();
  std::vector<double> t(n);
  for (size_t i = 0; i < n; ++i) t[i] = labels[i] == 1 ? hi : lo;
  double A = 0.0, B = std::log((prior0 + 1.0) / (prior1 + 1.0));
  auto fval = [&](double a, double b) {
    double v = 0;
    for (size_t i = 0; i < n; ++i) {
      const double fApB = f[i] * a + b;
      v += fApB >= 0 ? t[i] * fApB + std::log1p(std::exp(-fApB)) : (t[i] - 1) * fApB + std::log1p(std::exp(fApB));
    }
    return v;
  };
  const double sigma = 1e-12, min_step = 1e-10, eps = 1e-5;
  double fv = fval(A, B);
  for (int it = 0; it < 100; ++it) {
    double h11 = sigma, h22 = sigma, h21 = 0, g1 = 0, g2 = 0;
    for (size_t i = 0; i < n; ++i) {
      const double fApB = f[i] * A + B;
      double p, q;
      if (fApB >= 0) {
        p = std::exp(-fApB) / (1.0 + std::exp(-fApB));
        q = 1.0 / (1.0 + std::exp(-fApB));
      } else {
        p = 1.0 / (1.0 + std::exp(fApB));
        q = std::exp(fApB) / (1.0 + std::exp(fApB));
      }
      const double d2 = p * q;
      h11 += f[i] * f[i] * d2;
      h22 += d2;
      h21 += f[i] * d2;
      const double d1 = t[i] - p;
      g1 += f[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < eps && std::abs(g2) < eps) break;
    const double det = h11 * h22 - h21 * h21;
    const double dA = -(h22 * g1 - h21 * g2) / det;
    const double dB = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * dA + g2 * dB;
    double step = 1.0;
    while (step >= min_step) {
      const double na = A + step * dA, nb = B + step * dB;
      const double nf = fval(na, nb);
      if (nf < fv + 1e-4 * step * gd) {
        A = na;
        B = nb;
        fv = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < min_step) break;
  }
  return {A, B};
}

FusionParams fusion_train(const std::vector<FusionExample>& data, const SvmOptions& options) {
  check_dims(data);
  std::vector<FusionExample> fit, held;
  for (size_t i = 0; i < data.size(); ++i) (i % 5 == 4 ? held : fit).push_back(data[i]);
  if (held.empty() || fit.empty()) held = fit = data;
  size_t positives = 0;
  for (const auto& e : data) positives += e.label == 1;
  if (positives == 0 || positives == data.size())
    log_warn("fusion training data has a single class; the classifier is uninformative");
  const LinearSvm svm = train_linear_svm(fit, options);
  FusionParams p;
  p.weights = svm.weights;
  p.bias = svm.bias;
  p.lambda = options.lambda;
  std::vector<double> margins;
  std::vector<int> labels;
  for (const auto& e : held) {
    margins.push_back(p.margin(e.x));
    labels.push_back(e.label);
  }
  const PlattScale ps = fit_platt(margins, labels);
  if (ps.a < 0) {
    p.platt_a = ps.a;
    p.platt_b = ps.b;
  } else {
    // A non-negative slope would invert the ranking; keep the margin order.
    log_warn("Platt fit produced a non-negative slope; using the identity logistic");
    p.platt_a = -1.0;
    p.platt_b = 0.0;
  }
  return p;
}

}  // namespace proofkit
