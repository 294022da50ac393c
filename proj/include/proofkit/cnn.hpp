#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "proofkit/evidence.hpp"

namespace proofkit {

struct ConvBlock {
  int filters = 8;
  int kernel = 3;
  int pool = 2;
  bool operator==(const ConvBlock&) const = default;
};

// conv(same padding) -> ReLU -> maxpool per block, then ReLU FC layers and a
// single-logit output layer.
struct CnnConfig {
  int64_t input_edge = kDefaultEvidenceEdge;
  int in_channels = kEvidenceChannels;
  std::vector<ConvBlock> conv_blocks{{8, 3, 3}};
  std::vector<int> fc_widths{16};
  uint64_t seed = 0;
  // Random axis flips during training.
  bool flips = false;

  void validate() const;
  bool operator==(const CnnConfig&) const = default;

  static CnnConfig full_scale();
};

struct ConvLayerShape {
  int cin = 0, cout = 0, kernel = 3, pad = 1, pool = 2;
  int64_t size = 0;    // spatial edge of input and conv output
  int64_t padded = 0;  // size + 2 * pad
  int64_t pooled = 0;  // size / pool
  size_t w_offset = 0, b_offset = 0;
};

struct FcLayerShape {
  int in = 0, out = 0;
  bool relu = true;
  size_t w_offset = 0, b_offset = 0;
};

// Parameter blob layout in declaration order: per conv layer weights
// [cout][cin][k^3] then bias [cout]; per FC layer weights [out][in] then bias.
struct CnnLayout {
  std::vector<ConvLayerShape> conv;
  std::vector<FcLayerShape> fc;
  size_t param_count = 0;
  size_t flat_size = 0;

  explicit CnnLayout(const CnnConfig& config);
};

// Axis flips applied to the input (bit 0 = x, 1 = y, 2 = z).
using FlipMask = unsigned;

template <class T>
class CnnNet {
 public:
  explicit CnnNet(const CnnConfig& config);

  const CnnLayout& layout() const { return layout_; }
  const CnnConfig& config() const { return config_; }

  struct Workspace {
    std::vector<std::vector<T>> in_pad;    // per conv layer: cin * padded^3
    std::vector<std::vector<T>> pre;       // per conv layer: cout * padded^3
    std::vector<std::vector<uint32_t>> argmax;  // per conv layer: cout * pooled^3
    std::vector<std::vector<T>> fc_in;     // per FC layer input
    std::vector<std::vector<T>> fc_pre;    // per FC layer pre-activation
    // backward scratch
    std::vector<std::vector<T>> d_pre;
    std::vector<std::vector<T>> d_in_pad;
    std::vector<T> d_vec_a, d_vec_b;
  };

  Workspace make_workspace() const;

  // Runs the forward pass, leaving activations in ws for backward().
  T logit(std::span<const T> params, std::span<const float> input, Workspace& ws, FlipMask flips = 0) const;
  // Accumulates d(loss)/d(params) into grad given d(loss)/d(logit).
  void backward(std::span<const T> params, T d_logit, Workspace& ws, std::span<T> grad) const;

  // Binary cross-entropy on the logit; adds the gradient into grad.
  T loss_and_grad(std::span<const T> params, std::span<const float> input, T label, Workspace& ws,
                  std::span<T> grad, FlipMask flips = 0) const;

  std::vector<T> init_params(uint64_t seed) const;

 private:
  CnnConfig config_;
  CnnLayout layout_;
};

extern template class CnnNet<float>;
extern template class CnnNet<double>;

double sigmoid(double z);
// log(1 + exp(z)) without overflow.
double softplus(double z);
double bce_with_logit(double z, double label);

struct CnnModel {
  CnnConfig config;
  std::vector<float> params;
};

float cnn_forward(const CnnModel& model, const EvidenceTensor& t);
// Batch scoring; results are identical to scoring one tensor at a time.
std::vector<float> cnn_forward_batch(const CnnModel& model, std::span<const EvidenceTensor* const> tensors);

struct TrainHyper {
  double lr = 0.01;
  double momentum = 0.9;
  int batch = 16;
  int epochs = 30;
};

struct LabeledTensor {
  const EvidenceTensor* tensor = nullptr;
  int label = 0;
};

struct CnnTrainResult {
  CnnModel model;
  double initial_loss = 0;
  std::vector<double> epoch_loss;     // mean loss over each epoch's batches
  std::vector<double> epoch_seconds;
};

CnnTrainResult cnn_train(const CnnConfig& config, const std::vector<LabeledTensor>& dataset, const TrainHyper& hyper,
                         bool verbose = false);

// Mean BCE of a model over a dataset.
double cnn_mean_loss(const CnnModel& model, const std::vector<LabeledTensor>& dataset);

struct GradCheckSample {
  std::vector<float> input;  // in_channels * input_edge^3
  int label = 0;
};

struct GradCheckResult {
  double max_rel_error = 0;
  size_t worst_param = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

// f64 analytic gradients against central differences (h = 1e-5) for every
// parameter. Relative error uses max(|analytic|, |numeric|, 1e-3) as the
// denominator so finite-difference rounding on near-zero gradients does not
// dominate.
GradCheckResult grad_check(const CnnConfig& config, const GradCheckSample& sample, uint64_t param_seed,
                           double h = 1e-5);
GradCheckResult grad_check(const CnnConfig& config, const GradCheckSample& sample, std::span<const double> params,
                           double h = 1e-5);

}  // namespace proofkit
