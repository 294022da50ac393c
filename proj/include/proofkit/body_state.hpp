#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "proofkit/common.hpp"

namespace proofkit {

// Union-find over fragment ids (path compression, union by size). The
// identified flag and synapse weight live on roots and are combined on union.
// Const queries never write, so concurrent readers are safe; compression
// happens inside unite().
class BodyState {
 public:
  void add_fragment(uint64_t fragment, bool identified = false, int64_t synapse_weight = 0);
  bool contains(uint64_t fragment) const { return index_.count(fragment) != 0; }
  size_t fragment_count() const { return ids_.size(); }

  uint64_t find(uint64_t fragment) const;
  // Returns the new root id. No-op when already joined.
  uint64_t unite(uint64_t a, uint64_t b);
  bool same_body(uint64_t a, uint64_t b) const { return find(a) == find(b); }

  bool identified(uint64_t fragment) const;
  void set_identified(uint64_t fragment, bool flag = true);
  int64_t synapse_weight(uint64_t fragment) const;
  int64_t body_size(uint64_t fragment) const;

  // Fragment ids in insertion order.
  const std::vector<uint64_t>& fragments() const { return ids_; }
  // Root ids in ascending order.
  std::vector<uint64_t> roots() const;

  bool operator==(const BodyState& other) const;

 private:
  uint32_t idx(uint64_t fragment) const;
  uint32_t root_of(uint32_t i) const;
  uint32_t compress(uint32_t i);

  std::unordered_map<uint64_t, uint32_t> index_;
  std::vector<uint64_t> ids_;
  std::vector<uint32_t> parent_;
  std::vector<uint32_t> size_;
  std::vector<char> identified_;
  std::vector<int64_t> weight_;
};

}  // namespace proofkit
