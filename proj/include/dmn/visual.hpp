#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dmn/errors.hpp"
#include "dmn/params.hpp"
#include "dmn/tensor.hpp"

namespace dmn {

// Precomputed grid of local image feature vectors: H x W cells, C channels
// per cell, stored row-major as (row, col, channel).
struct FeatureGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  float at(std::size_t r, std::size_t c, std::size_t ch) const {
    return data[(r * width + c) * channels + ch];
  }
  std::size_t cells() const { return height * width; }
};

namespace detail {

constexpr char kGridMagic[4] = {'F', 'G', 'R', 'D'};
constexpr std::uint64_t kGridMaxValues = std::uint64_t{1} << 26;

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("feature grid: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32(std::istream& in) {
  std::uint32_t bits = read_u32(in);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline void write_f32(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32(out, bits);
}

}  // namespace detail

// Binary layout, little-endian: "FGRD", u32 height, u32 width, u32 channels,
// then height*width*channels float32 values in (row, col, channel) order.
inline FeatureGrid load_feature_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("feature grid: cannot open " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kGridMagic, 4) != 0)
    throw FormatError("feature grid: bad magic in " + path);

  FeatureGrid g;
  g.height = detail::read_u32(in);
  g.width = detail::read_u32(in);
  g.channels = detail::read_u32(in);
  if (g.height == 0 || g.width == 0 || g.channels == 0)
    throw FormatError("feature grid: zero dimension in " + path);
  const std::uint64_t n =
      std::uint64_t{g.height} * std::uint64_t{g.width} * std::uint64_t{g.channels};
  if (n > detail::kGridMaxValues)
    throw FormatError("feature grid: implausible dimensions in " + path);

  g.data.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    std::uint32_t bits;
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("feature grid: truncated payload in " + path);
    bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    if (!std::isfinite(f)) throw FormatError("feature grid: non-finite value in " + path);
    g.data[i] = f;
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("feature grid: trailing bytes in " + path);
  return g;
}

inline void save_feature_grid(const std::string& path, const FeatureGrid& g) {
  if (g.data.size() != g.height * g.width * g.channels)
    throw DimensionError("feature grid: data size does not match dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("feature grid: cannot write " + path);
  out.write(detail::kGridMagic, 4);
  detail::write_u32(out, static_cast<std::uint32_t>(g.height));
  detail::write_u32(out, static_cast<std::uint32_t>(g.width));
  detail::write_u32(out, static_cast<std::uint32_t>(g.channels));
  for (float f : g.data) detail::write_f32(out, f);
  if (!out) throw FormatError("feature grid: write failed for " + path);
}

// Boustrophedon cell order: start top-left moving right, then reverse
// direction on each following row. Keeps vertically adjacent cells adjacent
// in the flattened sequence.
inline std::vector<std::pair<std::size_t, std::size_t>> snake_order(std::size_t height,
                                                                    std::size_t width) {
  std::vector<std::pair<std::size_t, std::size_t>> order;
  order.reserve(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    if (r % 2 == 0)
      for (std::size_t c = 0; c < width; ++c) order.emplace_back(r, c);
    else
      for (std::size_t c = width; c-- > 0;) order.emplace_back(r, c);
  }
  return order;
}

// Inverse of snake_order: grid position of the k-th cell in the traversal.
inline std::pair<std::size_t, std::size_t> snake_position(std::size_t height, std::size_t width,
                                                          std::size_t k) {
  if (width == 0 || k >= height * width)
    throw IndexError("snake_position: index " + std::to_string(k) + " out of range");
  const std::size_t r = k / width;
  const std::size_t i = k % width;
  return {r, r % 2 == 0 ? i : width - 1 - i};
}

// Channel vectors of every cell, in snake order, as plain tensors.
inline std::vector<Tensor> grid_patches(const FeatureGrid& g) {
  if (g.cells() == 0) throw InputError("grid_patches: empty grid");
  std::vector<Tensor> patches;
  patches.reserve(g.cells());
  for (const auto& [r, c] : snake_order(g.height, g.width)) {
    std::vector<double> v(g.channels);
    for (std::size_t ch = 0; ch < g.channels; ++ch) v[ch] = g.at(r, c, ch);
    patches.push_back(Tensor::vec(std::move(v)));
  }
  return patches;
}

// Shared linear map from channel space into the model's hidden space,
// with tanh squashing.
struct VisualProjectionIds {
  ParamId W;
  ParamId b;

  static VisualProjectionIds create(ParamStore& store, const std::string& prefix,
                                    std::size_t hidden, std::size_t channels) {
    VisualProjectionIds ids;
    ids.W = store.add(prefix + ".W", Tensor::zeros({hidden, channels}));
    ids.b = store.add(prefix + ".b", Tensor::zeros({hidden}), /*bias=*/true);
    return ids;
  }
};

struct VisualProjection {
  Tensor W;
  Tensor b;
};

inline VisualProjection bind(Graph& g, const VisualProjectionIds& ids) {
  return VisualProjection{g.use(ids.W), g.use(ids.b)};
}

inline Tensor project_patch(const VisualProjection& proj, const Tensor& patch) {
  return tanh(add(matvec(proj.W, patch), proj.b));
}

}  // namespace dmn
