#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proofkit/cnn.hpp"
#include "proofkit/evidence.hpp"
#include "proofkit/fusion.hpp"

namespace proofkit {

// Fusion input: [log-odds of the cnn score, baseline, shape descriptor,
// connectivity]. The CNN saturates near 0 and 1, so the SVM sees its logit.
constexpr int kFeatureLayoutVersion = 2;
constexpr size_t kFusionInputSize = 2 + kShapeDescriptorSize + kConnectivitySize;

std::vector<double> fusion_input(double cnn_score, double baseline, const ShapeDescriptor& shape,
                                 const ConnectivityFeatures& connectivity);

struct ModelBundle {
  CnnModel cnn;
  FusionParams fusion;  // empty weights until train-fusion
  bool fusion_trained() const { return !fusion.weights.empty(); }
  int feature_layout_version = kFeatureLayoutVersion;
  uint64_t train_fingerprint = 0;
  // Auto-accept threshold from calibrate; absent until calibrated.
  std::optional<double> threshold;
};

// model.aprf: "APRF", u32 format version, u32 header length, JSON header
// (cnn config, fusion parameters, layout version, fingerprint, threshold),
// then the CNN parameters as little-endian f32 in declaration order.
constexpr uint32_t kBundleFormatVersion = 1;
void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);
std::string serialize_bundle(const ModelBundle& bundle);
ModelBundle deserialize_bundle(const std::string& bytes);

// Short id for auto:<fingerprint> decision sources.
std::string bundle_fingerprint(const ModelBundle& bundle);

struct ScoreInput {
  const EvidenceTensor* tensor = nullptr;
  double baseline = 0;
  const CandidateFeatures* features = nullptr;
  int layout_version = kFeatureLayoutVersion;
};

struct Scores {
  double cnn = 0;
  std::optional<double> fusion;  // absent until the fusion layer is trained
};

// Throws layout_mismatch on a version mismatch and missing_features when the
// shape/connectivity vectors are absent.
Scores score(const ModelBundle& bundle, const ScoreInput& input);
std::vector<Scores> score_batch(const ModelBundle& bundle, std::span<const ScoreInput> inputs);

}  // namespace proofkit
