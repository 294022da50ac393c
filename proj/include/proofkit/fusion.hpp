#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace proofkit {

// Linear SVM over the fusion input
//   [cnn_score, baseline_score, shape descriptor (32), connectivity (60)]
// with Platt scaling so the output is a probability.
struct FusionParams {
  std::vector<double> weights;
  double bias = 0;
  double lambda = 0.1;
  double platt_a = -1;
  double platt_b = 0;

  double margin(std::span<const double> x) const;
  // 1 / (1 + exp(platt_a * margin + platt_b)); platt_a < 0 keeps it monotone.
  double probability(std::span<const double> x) const;

  bool operator==(const FusionParams&) const = default;
};

struct FusionExample {
  std::vector<double> x;
  int label = 0;  // 1 = merge
};

struct SvmOptions {
  double lambda = 0.1;
  // Iterations = iterations_per_example * n.
  int iterations_per_example = 100;
  bool fit_bias = true;
  // Train on z-scored features and fold the scaling back into the weights.
  bool standardize = true;
  uint64_t seed = 0;
};

struct LinearSvm {
  std::vector<double> weights;
  double bias = 0;
};

// Pegasos-style stochastic subgradient descent on
//   lambda/2 * (|w|^2 + b^2) + mean(max(0, 1 - y (w.x + b)))
// returning the average of the second-half iterates. Deterministic.
LinearSvm train_linear_svm(const std::vector<FusionExample>& data, const SvmOptions& options);

double svm_objective(const std::vector<FusionExample>& data, const LinearSvm& svm, double lambda);

struct PlattScale {
  double a = -1;
  double b = 0;
};

// Platt's sigmoid fit with smoothed targets (Newton with backtracking).
PlattScale fit_platt(std::span<const double> margins, std::span<const int> labels);

// SVM on 4 of every 5 examples, Platt on the held-out fifth. A single-class
// dataset still yields valid parameters and logs a warning.
FusionParams fusion_train(const std::vector<FusionExample>& data, const SvmOptions& options);

}  // namespace proofkit
