// Attention-guided feature dropping on the stem feature map.
//
// The attention map is the channel mean of the stem map times the channel
// mean of the (nearest-upsampled) last map. The top-n_kappa cells of that map
// are dropped, and a random complement keeps the total dropped count at
// n_gamma on every step.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "droptop/rng.hpp"
#include "droptop/tensor.hpp"

namespace droptop {

struct AttentionMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  float at(std::size_t i, std::size_t j) const { return values[i * width + j]; }
  std::size_t cells() const { return height * width; }
};

enum class MaskKind { hard, soft };

struct DropMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;
  MaskKind kind = MaskKind::hard;

  float at(std::size_t i, std::size_t j) const { return values[i * width + j]; }
  std::size_t dropped() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](float v) { return v < 1.0f; }));
  }
};

// Mean over channels of a c x h x w block stored row-major.
template <typename T>
AttentionMap channel_pool(std::span<const T> map, std::size_t channels, std::size_t h, std::size_t w) {
  if (channels == 0) throw std::invalid_argument("channel_pool: need at least one channel");
  if (map.size() != channels * h * w) throw ShapeError("channel_pool: data size does not match c x h x w");
  AttentionMap out{h, w, std::vector<float>(h * w, 0.0f)};
  for (std::size_t cell = 0; cell < h * w; ++cell) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) acc += static_cast<double>(map[c * h * w + cell]);
    out.values[cell] = static_cast<float>(acc / static_cast<double>(channels));
  }
  return out;
}

template <typename T>
AttentionMap channel_pool(const BasicTensor<T>& map) {
  if (map.rank() != 3) throw ShapeError("channel_pool: expected c x h x w, got " + shape_str(map.shape()));
  return channel_pool<T>(map.data(), map.dim(0), map.dim(1), map.dim(2));
}

// Sample `index` of an N x c x h x w batch, as a c x h x w view.
template <typename T>
std::span<const T> sample_view(const BasicTensor<T>& batch, std::size_t index) {
  const std::size_t per = batch.numel() / batch.dim(0);
  return batch.data().subspan(index * per, per);
}

// Upsampled channel mean of the last map: same values as pooling the
// nearest-upsampled map, since upsampling only repeats source cells.
inline AttentionMap upsample_pooled(const AttentionMap& pooled_last, std::size_t h, std::size_t w) {
  if (pooled_last.height > h || pooled_last.width > w) {
    throw ShapeError("fuse: last map " + std::to_string(pooled_last.height) + "x" + std::to_string(pooled_last.width) +
                     " is larger than first map " + std::to_string(h) + "x" + std::to_string(w));
  }
  AttentionMap out{h, w, std::vector<float>(h * w)};
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out.values[i * w + j] = pooled_last.at(i * pooled_last.height / h, j * pooled_last.width / w);
  return out;
}

template <typename T>
AttentionMap fuse(std::span<const T> first, std::size_t c, std::size_t h, std::size_t w, std::span<const T> last,
                  std::size_t c_last, std::size_t h_last, std::size_t w_last) {
  if (h_last > h || w_last > w) {
    throw ShapeError("fuse: last map " + std::to_string(h_last) + "x" + std::to_string(w_last) +
                     " is larger than first map " + std::to_string(h) + "x" + std::to_string(w));
  }
  AttentionMap out = channel_pool<T>(first, c, h, w);
  const AttentionMap up = upsample_pooled(channel_pool<T>(last, c_last, h_last, w_last), h, w);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= up.values[i];
  return out;
}

template <typename T>
AttentionMap fuse(const BasicTensor<T>& first, const BasicTensor<T>& last) {
  if (first.rank() != 3 || last.rank() != 3) {
    throw ShapeError("fuse: expected c x h x w maps, got " + shape_str(first.shape()) + " and " +
                     shape_str(last.shape()));
  }
  return fuse<T>(first.data(), first.dim(0), first.dim(1), first.dim(2), last.data(), last.dim(0), last.dim(1),
                 last.dim(2));
}

struct DropCounts {
  std::size_t n_kappa = 0;
  std::size_t n_rand = 0;
  std::size_t total() const { return n_kappa + n_rand; }
};

inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

// kappa and gamma are percentages of the h*w cells.
inline DropCounts stabilize(double kappa, double gamma, std::size_t h, std::size_t w) {
  if (!(kappa >= 0.0) || !(gamma >= 0.0) || gamma > 100.0) {
    throw std::invalid_argument("stabilize: need 0 <= kappa <= gamma <= 100");
  }
  if (kappa > gamma) {
    throw std::invalid_argument("stabilize: kappa " + std::to_string(kappa) + " exceeds gamma " +
                                std::to_string(gamma));
  }
  const double cells = static_cast<double>(h * w);
  const std::size_t n_gamma = round_half_up(gamma * cells / 100.0);
  const std::size_t n_kappa = std::min(round_half_up(kappa * cells / 100.0), n_gamma);
  return {n_kappa, n_gamma - n_kappa};
}

// Cell indices sorted by descending attention, ties to the smaller index.
inline std::vector<std::size_t> rank_cells(const AttentionMap& a) {
  std::vector<std::size_t> order(a.cells());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a.values[x] > a.values[y]; });
  return order;
}

inline DropMask hard_mask(const AttentionMap& a, std::size_t n_kappa, std::size_t n_rand, Rng& rng) {
  const std::size_t cells = a.cells();
  if (n_kappa + n_rand > cells) throw std::invalid_argument("hard_mask: more drops than cells");
  DropMask m{a.height, a.width, std::vector<float>(cells, 1.0f), MaskKind::hard};
  if (n_kappa + n_rand == 0) return m;
  const auto order = rank_cells(a);
  for (std::size_t r = 0; r < n_kappa; ++r) m.values[order[r]] = 0.0f;
  if (n_rand > 0) {
    std::vector<std::size_t> rest;
    rest.reserve(cells - n_kappa);
    for (std::size_t i = 0; i < cells; ++i)
      if (m.values[i] != 0.0f) rest.push_back(i);
    // Partial Fisher-Yates: the first n_rand slots become a uniform subset.
    for (std::size_t i = 0; i < n_rand; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(rest.size() - i));
      std::swap(rest[i], rest[j]);
      m.values[rest[i]] = 0.0f;
    }
  }
  return m;
}

// Linear soft mask: the cell of descending rank r within the top n_kappa
// keeps r / n_kappa of its activation. The rank-n_kappa cell keeps all of it.
inline DropMask soft_mask(const AttentionMap& a, std::size_t n_kappa) {
  const std::size_t cells = a.cells();
  if (n_kappa > cells) throw std::invalid_argument("soft_mask: n_kappa exceeds cell count");
  DropMask m{a.height, a.width, std::vector<float>(cells, 1.0f), MaskKind::soft};
  if (n_kappa == 0) return m;
  const auto order = rank_cells(a);
  for (std::size_t r = 0; r < n_kappa; ++r)
    m.values[order[r]] = static_cast<float>(static_cast<double>(r + 1) / static_cast<double>(n_kappa));
  return m;
}

inline DropMask all_ones_mask(std::size_t h, std::size_t w) {
  return DropMask{h, w, std::vector<float>(h * w, 1.0f), MaskKind::hard};
}

// 8-bit binary PGM, min-max normalized; a constant map renders black.
inline void write_pgm(const std::string& path, std::size_t h, std::size_t w, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "P5\n" << w << ' ' << h << "\n255\n";
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const float range = *hi - *lo;
  for (float v : values) {
    const float t = range > 0.0f ? (v - *lo) / range : 0.0f;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0f))));
  }
}

inline void write_grid_csv(const std::string& path, std::size_t h, std::size_t w, std::span<const float> values) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.precision(9);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) out << (j ? "," : "") << values[i * w + j];
    out << '\n';
  }
}

inline void write_pgm(const std::string& path, const AttentionMap& a) { write_pgm(path, a.height, a.width, a.values); }
inline void write_pgm(const std::string& path, const DropMask& m) { write_pgm(path, m.height, m.width, m.values); }
inline void write_csv(const std::string& path, const AttentionMap& a) {
  write_grid_csv(path, a.height, a.width, a.values);
}
inline void write_csv(const std::string& path, const DropMask& m) { write_grid_csv(path, m.height, m.width, m.values); }

}  // namespace droptop
