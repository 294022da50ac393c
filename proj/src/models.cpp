#include "proofkit/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "proofkit/common.hpp"

namespace proofkit {

static_assert(std::endian::native == std::endian::little, "model.aprf writer assumes a little-endian host");

using nlohmann::ordered_json;

std::vector<double> fusion_input(double cnn_score, double baseline, const ShapeDescriptor& shape,
                                 const ConnectivityFeatures& connectivity) {
  std::vector<double> x;
  x.reserve(kFusionInputSize);
  const double p = std::clamp(cnn_score, 1e-7, 1.0 - 1e-7);
  x.push_back(std::log(p / (1.0 - p)));
  x.push_back(baseline);
  x.insert(x.end(), shape.begin(), shape.end());
  x.insert(x.end(), connectivity.begin(), connectivity.end());
  return x;
}

namespace {

ordered_json config_json(const CnnConfig& c) {
  ordered_json blocks = ordered_json::array();
  for (const auto& b : c.conv_blocks) blocks.push_back({{"filters", b.filters}, {"kernel", b.kernel}, {"pool", b.pool}});
  return {{"input_edge", c.input_edge}, {"in_channels", c.in_channels}, {"conv_blocks", blocks},
          {"fc_widths", c.fc_widths},   {"seed", c.seed},               {"flips", c.flips}};
}

CnnConfig config_from(const ordered_json& j) {
  CnnConfig c;
  c.input_edge = j.at("input_edge").get<int64_t>();
  c.in_channels = j.at("in_channels").get<int>();
  c.conv_blocks.clear();
  for (const auto& b : j.at("conv_blocks"))
    c.conv_blocks.push_back({b.at("filters").get<int>(), b.at("kernel").get<int>(), b.at("pool").get<int>()});
  c.fc_widths = j.at("fc_widths").get<std::vector<int>>();
  c.seed = j.at("seed").get<uint64_t>();
  c.flips = j.at("flips").get<bool>();
  c.validate();
  return c;
}

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

uint32_t get_u32(const std::string& in, size_t pos) {
  uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  return v;
}

}  // namespace

std::string serialize_bundle(const ModelBundle& b) {
  ordered_json h;
  h["cnn"] = config_json(b.cnn.config);
  h["param_count"] = b.cnn.params.size();
  h["fusion"] = {{"weights", b.fusion.weights}, {"bias", b.fusion.bias},       {"lambda", b.fusion.lambda},
                 {"platt_a", b.fusion.platt_a},  {"platt_b", b.fusion.platt_b}};
  h["feature_layout_version"] = b.feature_layout_version;
  h["train_fingerprint"] = hex64(b.train_fingerprint);
  h["threshold"] = b.threshold ? ordered_json(*b.threshold) : ordered_json(nullptr);
  const std::string header = h.dump();
  std::string out = "APRF";
  put_u32(out, kBundleFormatVersion);
  put_u32(out, static_cast<uint32_t>(header.size()));
  out += header;
  out.append(reinterpret_cast<const char*>(b.cnn.params.data()), b.cnn.params.size() * sizeof(float));
  return out;
}

ModelBundle deserialize_bundle(const std::string& in) {
  if (in.size() < 12 || in.compare(0, 4, "APRF") != 0) throw Error("format", "not a model.aprf file (bad magic)");
  const uint32_t version = get_u32(in, 4);
  if (version != kBundleFormatVersion) throw Error("format", "unsupported model.aprf version " + std::to_string(version));
  const uint32_t hlen = get_u32(in, 8);
  if (in.size() < 12 + static_cast<size_t>(hlen)) throw Error("format", "truncated model.aprf header");
  ordered_json h;
  try {
    h = ordered_json::parse(in.substr(12, hlen));
  } catch (const std::exception& e) {
    throw Error("format", std::string("bad model.aprf header: ") + e.what());
  }
  ModelBundle b;
  try {
    b.cnn.config = config_from(h.at("cnn"));
    const auto& f = h.at("fusion");
    b.fusion.weights = f.at("weights").get<std::vector<double>>();
    b.fusion.bias = f.at("bias").get<double>();
    b.fusion.lambda = f.at("lambda").get<double>();
    b.fusion.platt_a = f.at("platt_a").get<double>();
    b.fusion.platt_b = f.at("platt_b").get<double>();
    b.feature_layout_version = h.at("feature_layout_version").get<int>();
    b.train_fingerprint = parse_hex64(h.at("train_fingerprint").get<std::string>());
    if (!h.at("threshold").is_null()) b.threshold = h.at("threshold").get<double>();
    const size_t n = h.at("param_count").get<size_t>();
    if (n != CnnLayout(b.cnn.config).param_count) throw Error("format", "param_count does not match the CNN config");
    if (in.size() != 12 + hlen + n * sizeof(float)) throw Error("format", "model.aprf parameter blob has wrong length");
    b.cnn.params.resize(n);
    std::memcpy(b.cnn.params.data(), in.data() + 12 + hlen, n * sizeof(float));
  } catch (const nlohmann::json::exception& e) {
    throw Error("format", std::string("bad model.aprf header: ") + e.what());
  }
  return b;
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
  const std::string bytes = serialize_bundle(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io", "write failed for " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_bundle(ss.str());
}

std::string bundle_fingerprint(const ModelBundle& bundle) {
  const std::string bytes = serialize_bundle(bundle);
  return hex64(Fnv1a().str(bytes).value());
}

namespace {

void check_input(const ModelBundle& bundle, const ScoreInput& in) {
  if (in.layout_version != bundle.feature_layout_version)
    throw Error("layout_mismatch", "feature layout version " + std::to_string(in.layout_version) +
                                       " does not match model version " + std::to_string(bundle.feature_layout_version));
  if (!in.tensor) throw Error("missing_features", "evidence tensor missing");
  if (!in.features) throw Error("missing_features", "shape/connectivity features missing");
}

}  // namespace

Scores score(const ModelBundle& bundle, const ScoreInput& in) {
  check_input(bundle, in);
  Scores s;
  s.cnn = cnn_forward(bundle.cnn, *in.tensor);
  if (bundle.fusion_trained())
    s.fusion = bundle.fusion.probability(fusion_input(s.cnn, in.baseline, in.features->shape, in.features->connectivity));
  return s;
}

std::vector<Scores> score_batch(const ModelBundle& bundle, std::span<const ScoreInput> inputs) {
  for (const auto& in : inputs) check_input(bundle, in);
  std::vector<Scores> out(inputs.size());
  parallel_for(inputs.size(), [&](size_t i) { out[i] = score(bundle, inputs[i]); });
  return out;
}

}  // namespace proofkit
