#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "proofkit/volume.hpp"

namespace proofkit {

// One T-bar with its post-synaptic densities. Each (tbar, psd) pair is one
// synaptic connection.
struct SynapseRecord {
  Voxel tbar;
  std::vector<Voxel> psds;
  uint64_t pre_fragment = 0;
  std::vector<uint64_t> post_fragments;

  bool operator==(const SynapseRecord&) const = default;
};

void write_synapses(const std::filesystem::path& path, const std::vector<SynapseRecord>& synapses);
std::vector<SynapseRecord> read_synapses(const std::filesystem::path& path);

}  // namespace proofkit
