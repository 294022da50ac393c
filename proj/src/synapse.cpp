#include "proofkit/synapse.hpp"

#include <fstream>

#include "json.hpp"

namespace proofkit {

namespace {

nlohmann::ordered_json voxel_json(const Voxel& v) { return {v.x, v.y, v.z}; }

Voxel voxel_from(const nlohmann::json& j) { return {j.at(0).get<int64_t>(), j.at(1).get<int64_t>(), j.at(2).get<int64_t>()}; }

}  // namespace

void write_synapses(const std::filesystem::path& path, const std::vector<SynapseRecord>& synapses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  for (const auto& s : synapses) {
    nlohmann::ordered_json j;
    j["tbar"] = voxel_json(s.tbar);
    auto psds = nlohmann::ordered_json::array();
    for (const auto& p : s.psds) psds.push_back(voxel_json(p));
    j["psds"] = psds;
    j["pre_fragment"] = s.pre_fragment;
    j["post_fragments"] = s.post_fragments;
    out << j.dump() << '\n';
  }
}

std::vector<SynapseRecord> read_synapses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot read " + path.string());
  std::vector<SynapseRecord> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SynapseRecord s;
      s.tbar = voxel_from(j.at("tbar"));
      for (const auto& p : j.at("psds")) s.psds.push_back(voxel_from(p));
      s.pre_fragment = j.at("pre_fragment").get<uint64_t>();
      s.post_fragments = j.at("post_fragments").get<std::vector<uint64_t>>();
      if (s.psds.empty() || s.psds.size() != s.post_fragments.size())
        throw Error("format", "psds/post_fragments mismatch");
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error("format", path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace proofkit
