#include "proofkit/volume.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace proofkit {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string to_string(DType t) { return t == DType::label64 ? "label64" : "gray8"; }

DType parse_dtype(const std::string& s) {
  if (s == "label64") return DType::label64;
  if (s == "gray8") return DType::gray8;
  throw Error("format", "unknown dtype '" + s + "'");
}

void VolumeMeta::validate() const {
  for (auto d : dims)
    if (d < 1) throw Error("invalid_argument", "volume dims must be >= 1");
  for (auto s : voxel_size_nm)
    if (!(s > 0)) throw Error("invalid_argument", "voxel_size_nm must be > 0");
  if (chunk < 8) throw Error("invalid_argument", "chunk edge must be >= 8");
}

template <class T>
Volume<T>::Volume(VolumeMeta meta) : meta_(meta) {
  meta_.dtype = dtype_of<T>::value;
  meta_.validate();
  for (int a = 0; a < 3; ++a) grid_[a] = (meta_.dims[a] + meta_.chunk - 1) / meta_.chunk;
  const size_t per_chunk = static_cast<size_t>(meta_.chunk * meta_.chunk * meta_.chunk);
  chunks_.assign(static_cast<size_t>(voxel_count(grid_)), std::vector<T>(per_chunk, T{}));
}

template <class T>
Dense<T> Volume<T>::region(const Voxel& origin, const Dims& extent) const {
  Dense<T> out(extent);
  const int64_t c = meta_.chunk;
  // Clip to the volume, then copy x-runs that stay inside one chunk.
  const int64_t x0 = std::max<int64_t>(origin.x, 0), x1 = std::min(origin.x + extent[0], meta_.dims[0]);
  const int64_t y0 = std::max<int64_t>(origin.y, 0), y1 = std::min(origin.y + extent[1], meta_.dims[1]);
  const int64_t z0 = std::max<int64_t>(origin.z, 0), z1 = std::min(origin.z + extent[2], meta_.dims[2]);
  if (x0 >= x1 || y0 >= y1 || z0 >= z1) return out;
  for (int64_t z = z0; z < z1; ++z) {
    for (int64_t y = y0; y < y1; ++y) {
      int64_t x = x0;
      while (x < x1) {
        const int64_t cx = x / c;
        const int64_t run_end = std::min(x1, (cx + 1) * c);
        const auto& ch = chunks_[chunk_index(cx, y / c, z / c)];
        const T* src = ch.data() + local_index(x % c, y % c, z % c);
        T* dst = out.data.data() + out.index(x - origin.x, y - origin.y, z - origin.z);
        std::copy(src, src + (run_end - x), dst);
        x = run_end;
      }
    }
  }
  return out;
}

template <class T>
Volume<T> Volume<T>::from_dense(const Dense<T>& dense, VolumeMeta meta) {
  meta.dims = dense.dims;
  Volume<T> v(meta);
  const int64_t c = meta.chunk;
  for (int64_t z = 0; z < dense.dims[2]; ++z)
    for (int64_t y = 0; y < dense.dims[1]; ++y)
      for (int64_t x = 0; x < dense.dims[0]; ++x)
        v.chunks_[v.chunk_index(x / c, y / c, z / c)][v.local_index(x % c, y % c, z % c)] = dense(x, y, z);
  return v;
}

template class Volume<uint8_t>;
template class Volume<uint64_t>;

namespace {

ordered_json manifest_json(const VolumeMeta& m) {
  ordered_json j;
  j["format_version"] = 1;
  j["dims"] = {m.dims[0], m.dims[1], m.dims[2]};
  j["voxel_size_nm"] = {m.voxel_size_nm[0], m.voxel_size_nm[1], m.voxel_size_nm[2]};
  j["dtype"] = to_string(m.dtype);
  j["chunk"] = m.chunk;
  return j;
}

VolumeMeta read_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  std::ifstream in(p);
  if (!in) throw Error("io", "missing manifest: " + p.string());
  VolumeMeta m;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format_version").get<int>() != 1) throw Error("format", "unsupported volume format_version");
    for (int a = 0; a < 3; ++a) {
      m.dims[a] = j.at("dims").at(a).get<int64_t>();
      m.voxel_size_nm[a] = j.at("voxel_size_nm").at(a).get<double>();
    }
    m.dtype = parse_dtype(j.at("dtype").get<std::string>());
    m.chunk = j.at("chunk").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("format", "bad manifest " + p.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

std::string chunk_name(int64_t cx, int64_t cy, int64_t cz) {
  return std::to_string(cx) + "_" + std::to_string(cy) + "_" + std::to_string(cz) + ".raw";
}

template <class T>
void write_impl(const fs::path& dir, const Volume<T>& v) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw Error("io", "cannot write manifest in " + dir.string());
    out << manifest_json(v.meta()).dump() << '\n';
  }
  const auto& g = v.chunk_grid();
  std::vector<unsigned char> buf;
  for (int64_t cz = 0; cz < g[2]; ++cz)
    for (int64_t cy = 0; cy < g[1]; ++cy)
      for (int64_t cx = 0; cx < g[0]; ++cx) {
        const auto ch = v.chunk(cx, cy, cz);
        buf.resize(ch.size() * sizeof(T));
        if constexpr (sizeof(T) == 1 || std::endian::native == std::endian::little) {
          std::memcpy(buf.data(), ch.data(), buf.size());
        } else {
          for (size_t i = 0; i < ch.size(); ++i)
            for (size_t b = 0; b < sizeof(T); ++b)
              buf[i * sizeof(T) + b] = static_cast<unsigned char>(static_cast<uint64_t>(ch[i]) >> (8 * b));
        }
        std::ofstream out(dir / chunk_name(cx, cy, cz), std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) throw Error("io", "failed writing chunk in " + dir.string());
      }
}

template <class T>
Volume<T> read_impl(const fs::path& dir, const VolumeMeta& meta) {
  Volume<T> v(meta);
  const auto& g = v.chunk_grid();
  const size_t expected = static_cast<size_t>(meta.chunk * meta.chunk * meta.chunk) * sizeof(T);
  std::vector<unsigned char> buf(expected);
  for (int64_t cz = 0; cz < g[2]; ++cz)
    for (int64_t cy = 0; cy < g[1]; ++cy)
      for (int64_t cx = 0; cx < g[0]; ++cx) {
        const fs::path p = dir / chunk_name(cx, cy, cz);
        std::error_code ec;
        const auto size = fs::file_size(p, ec);
        if (ec) throw Error("io", "missing chunk file: " + p.string());
        if (size < expected) throw Error("format", "truncated chunk file: " + p.string());
        if (size > expected) throw Error("format", "chunk size mismatch: " + p.string());
        std::ifstream in(p, std::ios::binary);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
        if (!in) throw Error("io", "failed reading chunk: " + p.string());
        auto ch = v.chunk(cx, cy, cz);
        if constexpr (sizeof(T) == 1 || std::endian::native == std::endian::little) {
          std::memcpy(ch.data(), buf.data(), expected);
        } else {
          for (size_t i = 0; i < ch.size(); ++i) {
            uint64_t x = 0;
            for (size_t b = 0; b < sizeof(T); ++b) x |= static_cast<uint64_t>(buf[i * sizeof(T) + b]) << (8 * b);
            ch[i] = static_cast<T>(x);
          }
        }
      }
  return v;
}

}  // namespace

void write_volume(const fs::path& dir, const GrayVolume& v) { write_impl(dir, v); }
void write_volume(const fs::path& dir, const LabelVolume& v) { write_impl(dir, v); }

AnyVolume read_volume(const fs::path& dir) {
  const VolumeMeta meta = read_manifest(dir);
  if (meta.dtype == DType::gray8) return read_impl<uint8_t>(dir, meta);
  return read_impl<uint64_t>(dir, meta);
}

LabelVolume read_label_volume(const fs::path& dir) {
  auto v = read_volume(dir);
  if (!std::holds_alternative<LabelVolume>(v)) throw Error("format", "expected label64 volume at " + dir.string());
  return std::get<LabelVolume>(std::move(v));
}

GrayVolume read_gray_volume(const fs::path& dir) {
  auto v = read_volume(dir);
  if (!std::holds_alternative<GrayVolume>(v)) throw Error("format", "expected gray8 volume at " + dir.string());
  return std::get<GrayVolume>(std::move(v));
}

bool valid_factor(int64_t f) { return f == 1 || f == 2 || f == 4 || f == 8 || f == 16; }

namespace {

template <class T, class Reduce>
Volume<T> downsample_impl(const Volume<T>& v, int64_t factor, Reduce reduce) {
  if (!valid_factor(factor)) throw Error("invalid_argument", "downsample factor must be one of 1,2,4,8,16");
  if (factor == 1) return v;
  const Dense<T> src = v.to_dense();
  VolumeMeta meta = v.meta();
  for (int a = 0; a < 3; ++a) {
    meta.dims[a] = (meta.dims[a] + factor - 1) / factor;
    meta.voxel_size_nm[a] *= static_cast<double>(factor);
  }
  Dense<T> out(meta.dims);
  std::vector<T> block;
  block.reserve(static_cast<size_t>(factor * factor * factor));
  for (int64_t z = 0; z < meta.dims[2]; ++z)
    for (int64_t y = 0; y < meta.dims[1]; ++y)
      for (int64_t x = 0; x < meta.dims[0]; ++x) {
        block.clear();
        for (int64_t dz = 0; dz < factor; ++dz)
          for (int64_t dy = 0; dy < factor; ++dy)
            for (int64_t dx = 0; dx < factor; ++dx) {
              const int64_t sx = x * factor + dx, sy = y * factor + dy, sz = z * factor + dz;
              if (src.contains(sx, sy, sz)) block.push_back(src(sx, sy, sz));
            }
        out(x, y, z) = reduce(block);
      }
  return Volume<T>::from_dense(out, meta);
}

}  // namespace

LabelVolume downsample(const LabelVolume& v, int64_t factor) {
  return downsample_impl(v, factor, [](std::vector<uint64_t>& block) {
    std::sort(block.begin(), block.end());
    uint64_t best = block.front();
    size_t best_count = 0;
    for (size_t i = 0; i < block.size();) {
      size_t j = i;
      while (j < block.size() && block[j] == block[i]) ++j;
      // Ascending scan with strict '>' keeps the smallest id among modes.
      if (j - i > best_count) {
        best_count = j - i;
        best = block[i];
      }
      i = j;
    }
    return best;
  });
}

GrayVolume downsample(const GrayVolume& v, int64_t factor) {
  return downsample_impl(v, factor, [](std::vector<uint8_t>& block) {
    uint64_t sum = 0;
    for (auto g : block) sum += g;
    const uint64_t n = block.size();
    return static_cast<uint8_t>((2 * sum + n) / (2 * n));
  });
}

}  // namespace proofkit
