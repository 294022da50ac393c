#include "proofkit/body_state.hpp"

#include <algorithm>

namespace proofkit {

void BodyState::add_fragment(uint64_t fragment, bool identified, int64_t synapse_weight) {
  if (fragment == 0) throw Error("invalid_argument", "fragment 0 is background");
  if (contains(fragment)) throw Error("invalid_argument", "duplicate fragment " + std::to_string(fragment));
  const auto i = static_cast<uint32_t>(ids_.size());
  index_[fragment] = i;
  ids_.push_back(fragment);
  parent_.push_back(i);
  size_.push_back(1);
  identified_.push_back(identified ? 1 : 0);
  weight_.push_back(synapse_weight);
}

uint32_t BodyState::idx(uint64_t fragment) const {
  const auto it = index_.find(fragment);
  if (it == index_.end()) throw Error("unknown_fragment", "fragment " + std::to_string(fragment) + " not in body state");
  return it->second;
}

uint32_t BodyState::root_of(uint32_t i) const {
  while (parent_[i] != i) i = parent_[i];
  return i;
}

uint32_t BodyState::compress(uint32_t i) {
  const uint32_t r = root_of(i);
  while (parent_[i] != r) {
    const uint32_t next = parent_[i];
    parent_[i] = r;
    i = next;
  }
  return r;
}

uint64_t BodyState::find(uint64_t fragment) const { return ids_[root_of(idx(fragment))]; }

uint64_t BodyState::unite(uint64_t a, uint64_t b) {
  uint32_t ra = compress(idx(a)), rb = compress(idx(b));
  if (ra == rb) return ids_[ra];
  // Equal sizes: the smaller fragment id becomes root so results do not
  // depend on argument order.
  if (size_[ra] < size_[rb] || (size_[ra] == size_[rb] && ids_[rb] < ids_[ra])) std::swap(ra, rb);
  parent_[rb] = ra;
  size_[ra] += size_[rb];
  weight_[ra] += weight_[rb];
  identified_[ra] = static_cast<char>(identified_[ra] | identified_[rb]);
  return ids_[ra];
}

bool BodyState::identified(uint64_t fragment) const { return identified_[root_of(idx(fragment))] != 0; }

void BodyState::set_identified(uint64_t fragment, bool flag) { identified_[root_of(idx(fragment))] = flag ? 1 : 0; }

int64_t BodyState::synapse_weight(uint64_t fragment) const { return weight_[root_of(idx(fragment))]; }

int64_t BodyState::body_size(uint64_t fragment) const { return size_[root_of(idx(fragment))]; }

std::vector<uint64_t> BodyState::roots() const {
  std::vector<uint64_t> out;
  for (uint32_t i = 0; i < ids_.size(); ++i)
    if (root_of(i) == i) out.push_back(ids_[i]);
  std::sort(out.begin(), out.end());
  return out;
}

bool BodyState::operator==(const BodyState& other) const {
  if (ids_.size() != other.ids_.size()) return false;
  for (uint64_t f : ids_) {
    if (!other.contains(f)) return false;
    if (find(f) != other.find(f)) return false;
    if (identified(f) != other.identified(f) || synapse_weight(f) != other.synapse_weight(f)) return false;
  }
  return true;
}

}  // namespace proofkit
