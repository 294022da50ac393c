#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "proofkit/common.hpp"

namespace proofkit {

enum class DType { label64, gray8 };

std::string to_string(DType t);
DType parse_dtype(const std::string& s);

struct Voxel {
  int64_t x = 0;
  int64_t y = 0;
  int64_t z = 0;
  auto operator<=>(const Voxel&) const = default;
};

using Dims = std::array<int64_t, 3>;

inline int64_t voxel_count(const Dims& d) { return d[0] * d[1] * d[2]; }

struct VolumeMeta {
  Dims dims{1, 1, 1};
  std::array<double, 3> voxel_size_nm{8.0, 8.0, 8.0};
  DType dtype = DType::label64;
  int64_t chunk = 64;

  void validate() const;
  bool operator==(const VolumeMeta&) const = default;
};

// Dense x-fastest block: index = x + dims_x * (y + dims_y * z).
template <class T>
struct Dense {
  Dims dims{0, 0, 0};
  std::vector<T> data;

  Dense() = default;
  explicit Dense(Dims d, T fill = T{}) : dims(d), data(static_cast<size_t>(voxel_count(d)), fill) {}

  size_t index(int64_t x, int64_t y, int64_t z) const {
    return static_cast<size_t>(x + dims[0] * (y + dims[1] * z));
  }
  bool contains(int64_t x, int64_t y, int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }
  T& operator()(int64_t x, int64_t y, int64_t z) { return data[index(x, y, z)]; }
  const T& operator()(int64_t x, int64_t y, int64_t z) const { return data[index(x, y, z)]; }
  // Zero outside the block.
  T get(int64_t x, int64_t y, int64_t z) const { return contains(x, y, z) ? data[index(x, y, z)] : T{}; }

  bool operator==(const Dense&) const = default;
};

template <class T>
struct dtype_of;
template <>
struct dtype_of<uint64_t> {
  static constexpr DType value = DType::label64;
};
template <>
struct dtype_of<uint8_t> {
  static constexpr DType value = DType::gray8;
};

// Chunked volume. Every chunk in the grid is materialized with chunk^3
// voxels; voxels past the volume edge are padding and stay 0.
template <class T>
class Volume {
 public:
  Volume() : Volume(VolumeMeta{{1, 1, 1}, {8, 8, 8}, dtype_of<T>::value, 64}) {}
  explicit Volume(VolumeMeta meta);

  const VolumeMeta& meta() const { return meta_; }
  const Dims& dims() const { return meta_.dims; }
  int64_t chunk_edge() const { return meta_.chunk; }
  const Dims& chunk_grid() const { return grid_; }

  bool contains(int64_t x, int64_t y, int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < meta_.dims[0] && y < meta_.dims[1] && z < meta_.dims[2];
  }

  T at(int64_t x, int64_t y, int64_t z) const {
    if (!contains(x, y, z)) return T{};
    const int64_t c = meta_.chunk;
    return chunks_[chunk_index(x / c, y / c, z / c)][local_index(x % c, y % c, z % c)];
  }
  T at(const Voxel& v) const { return at(v.x, v.y, v.z); }

  void set(int64_t x, int64_t y, int64_t z, T value) {
    if (!contains(x, y, z)) throw Error("out_of_range", "voxel outside volume");
    const int64_t c = meta_.chunk;
    chunks_[chunk_index(x / c, y / c, z / c)][local_index(x % c, y % c, z % c)] = value;
  }

  std::span<const T> chunk(int64_t cx, int64_t cy, int64_t cz) const { return chunks_[chunk_index(cx, cy, cz)]; }
  std::span<T> chunk(int64_t cx, int64_t cy, int64_t cz) { return chunks_[chunk_index(cx, cy, cz)]; }

  // Copies [origin, origin + extent) into a dense block, zero-filling
  // anything outside the volume.
  Dense<T> region(const Voxel& origin, const Dims& extent) const;
  Dense<T> to_dense() const { return region({0, 0, 0}, meta_.dims); }
  static Volume from_dense(const Dense<T>& dense, VolumeMeta meta);

  bool operator==(const Volume&) const = default;

 private:
  size_t chunk_index(int64_t cx, int64_t cy, int64_t cz) const {
    return static_cast<size_t>(cx + grid_[0] * (cy + grid_[1] * cz));
  }
  size_t local_index(int64_t x, int64_t y, int64_t z) const {
    return static_cast<size_t>(x + meta_.chunk * (y + meta_.chunk * z));
  }

  VolumeMeta meta_;
  Dims grid_{1, 1, 1};
  std::vector<std::vector<T>> chunks_;
};

using GrayVolume = Volume<uint8_t>;
using LabelVolume = Volume<uint64_t>;
using AnyVolume = std::variant<GrayVolume, LabelVolume>;

void write_volume(const std::filesystem::path& dir, const GrayVolume& v);
void write_volume(const std::filesystem::path& dir, const LabelVolume& v);
AnyVolume read_volume(const std::filesystem::path& dir);
LabelVolume read_label_volume(const std::filesystem::path& dir);
GrayVolume read_gray_volume(const std::filesystem::path& dir);

bool valid_factor(int64_t factor);

// Labels: per-block mode, ties to the smallest id. Gray: per-block mean
// rounded half-up. Partial edge blocks only consider in-bounds voxels.
LabelVolume downsample(const LabelVolume& v, int64_t factor);
GrayVolume downsample(const GrayVolume& v, int64_t factor);

// edge^3 block centered on center; out-of-bounds voxels are 0.
template <class T>
Dense<T> extract_subvolume(const Volume<T>& v, const Voxel& center, int64_t edge) {
  if (edge < 1 || edge % 2 == 0) throw Error("invalid_argument", "subvolume edge must be odd");
  const int64_t h = edge / 2;
  return v.region({center.x - h, center.y - h, center.z - h}, {edge, edge, edge});
}

}  // namespace proofkit
