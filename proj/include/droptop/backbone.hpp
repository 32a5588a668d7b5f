// Small convolutional classifier with hooks at the stem output and the last
// feature map.
//
//   input --conv3x3(s1)+relu--> first --(x mask)--> conv3x3(s2)+relu ... --> last
//         --global avg pool--> features --linear--> logits
//
// Each block halves the spatial extent, so input_size must be divisible by
// 2^blocks. There is no normalization layer.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "droptop/rng.hpp"
#include "droptop/tensor.hpp"

namespace droptop {

struct BackboneConfig {
  std::size_t input_channels = 3;
  std::size_t input_size = 32;
  std::size_t stem_channels = 16;
  std::vector<std::size_t> block_channels{32, 64};
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;

  std::size_t downsample_factor() const { return std::size_t{1} << block_channels.size(); }
  std::size_t last_size() const { return input_size / downsample_factor(); }
  std::size_t feature_dim() const { return block_channels.empty() ? stem_channels : block_channels.back(); }

  void validate() const {
    if (input_channels == 0) throw std::invalid_argument("backbone: input_channels must be positive");
    if (stem_channels == 0) throw std::invalid_argument("backbone: stem_channels must be positive");
    if (num_classes < 2) throw std::invalid_argument("backbone: num_classes must be at least 2");
    if (input_size == 0 || input_size % downsample_factor() != 0) {
      throw std::invalid_argument("backbone: input_size " + std::to_string(input_size) +
                                  " not divisible by downsampling factor " + std::to_string(downsample_factor()));
    }
    for (auto c : block_channels)
      if (c == 0) throw std::invalid_argument("backbone: block channel widths must be positive");
  }
};

// Batched hook outputs. `first` is the unmasked stem output; `masked_first`
// is what the blocks consumed.
template <typename T>
struct BasicForwardRecord {
  BasicTensor<T> first;         // N x c x h x w
  BasicTensor<T> masked_first;  // N x c x h x w
  BasicTensor<T> last;          // N x c' x h' x w'
  BasicTensor<T> features;      // N x d
  BasicTensor<T> logits;        // N x k

  std::size_t batch_size() const { return logits.dim(0); }
};

template <typename T>
class BasicModel {
 public:
  explicit BasicModel(BackboneConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed, "init");
    auto conv = [&](std::size_t out, std::size_t in) {
      const double fan_in = static_cast<double>(in * 9);
      Layer layer{uniform_tensor({out, in, 3, 3}, std::sqrt(6.0 / fan_in), rng),
                  uniform_tensor({out}, 1.0 / std::sqrt(fan_in), rng)};
      return layer;
    };
    stem_ = conv(config_.stem_channels, config_.input_channels);
    std::size_t in = config_.stem_channels;
    for (auto c : config_.block_channels) {
      blocks_.push_back(conv(c, in));
      in = c;
    }
    const double fan_in = static_cast<double>(in);
    head_ = Layer{uniform_tensor({config_.num_classes, in}, 1.0 / std::sqrt(fan_in), rng),
                  uniform_tensor({config_.num_classes}, 1.0 / std::sqrt(fan_in), rng)};
  }

  // Deep copies: tensors are shared handles, so the defaults would alias.
  BasicModel(const BasicModel& other) : config_(other.config_) { copy_params_from(other); }
  BasicModel& operator=(const BasicModel& other) {
    if (this != &other) {
      config_ = other.config_;
      blocks_.clear();
      copy_params_from(other);
    }
    return *this;
  }
  BasicModel(BasicModel&&) noexcept = default;
  BasicModel& operator=(BasicModel&&) noexcept = default;

  const BackboneConfig& config() const { return config_; }

  std::vector<BasicTensor<T>> parameters() const {
    std::vector<BasicTensor<T>> out{stem_.weight, stem_.bias};
    for (const auto& b : blocks_) {
      out.push_back(b.weight);
      out.push_back(b.bias);
    }
    out.push_back(head_.weight);
    out.push_back(head_.bias);
    return out;
  }

  // mask, when given, is N x h x w and multiplies every stem channel.
  BasicForwardRecord<T> forward(const BasicTensor<T>& batch,
                                const std::optional<BasicTensor<T>>& mask = std::nullopt) const {
    if (batch.rank() != 4 || batch.dim(1) != config_.input_channels || batch.dim(2) != config_.input_size ||
        batch.dim(3) != config_.input_size) {
      throw ShapeError("forward: batch shape " + shape_str(batch.shape()) + " does not match input " +
                       std::to_string(config_.input_channels) + "x" + std::to_string(config_.input_size) + "x" +
                       std::to_string(config_.input_size));
    }
    BasicForwardRecord<T> rec;
    rec.first = relu(add_channel_bias(conv2d(batch, stem_.weight, 1, 1), stem_.bias));
    rec.masked_first = rec.first;
    if (mask) rec.masked_first = elementwise_mul(rec.first, expand_mask(*mask, rec.first.shape()));
    BasicTensor<T> x = rec.masked_first;
    for (const auto& b : blocks_) x = relu(add_channel_bias(conv2d(x, b.weight, 2, 1), b.bias));
    rec.last = x;
    rec.features = global_avg_pool(x);
    rec.logits = linear(rec.features, head_.weight, head_.bias);
    return rec;
  }

  std::vector<int> predict(const BasicTensor<T>& batch) const {
    const auto logits = forward(batch).logits;
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (logits[i * k + j] > logits[i * k + best]) best = j;
      out[i] = static_cast<int>(best);
    }
    return out;
  }

  // Flat binary checkpoint: "DTPM", u32 version, u32 bytes-per-value,
  // u32 tensor count, then per tensor u32 rank, u64 extents, raw values.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write("DTPM", 4);
    auto put32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    auto put64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    const auto params = parameters();
    put32(1);
    put32(sizeof(T));
    put32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
      put32(static_cast<std::uint32_t>(p.rank()));
      for (auto d : p.shape()) put64(d);
    }
    for (const auto& p : params) out.write(reinterpret_cast<const char*>(p.data().data()), p.numel() * sizeof(T));
    if (!out) throw std::runtime_error("write failed for " + path);
  }

  void load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "DTPM") throw std::runtime_error(path + ": bad magic bytes");
    auto get32 = [&] {
      std::uint32_t v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      return v;
    };
    auto get64 = [&] {
      std::uint64_t v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      return v;
    };
    if (get32() != 1) throw std::runtime_error(path + ": unsupported checkpoint version");
    if (get32() != sizeof(T)) throw std::runtime_error(path + ": value width mismatch");
    auto params = parameters();
    if (get32() != params.size()) throw std::runtime_error(path + ": parameter count mismatch");
    for (auto& p : params) {
      const auto rank = get32();
      Shape shape(rank);
      for (auto& d : shape) d = get64();
      if (shape != p.shape()) {
        throw std::runtime_error(path + ": tensor shape " + shape_str(shape) + " expected " + shape_str(p.shape()));
      }
    }
    for (auto& p : params) {
      auto dst = p.mutable_data();
      in.read(reinterpret_cast<char*>(dst.data()), dst.size() * sizeof(T));
    }
    if (!in) throw std::runtime_error(path + ": truncated checkpoint");
  }

 private:
  struct Layer {
    BasicTensor<T> weight;
    BasicTensor<T> bias;
  };

  static BasicTensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return BasicTensor<T>(std::move(shape), std::move(v), true);
  }

  static BasicTensor<T> fresh(const BasicTensor<T>& t) {
    return BasicTensor<T>(t.shape(), std::vector<T>(t.data().begin(), t.data().end()), true);
  }

  void copy_params_from(const BasicModel& other) {
    stem_ = Layer{fresh(other.stem_.weight), fresh(other.stem_.bias)};
    for (const auto& b : other.blocks_) blocks_.push_back(Layer{fresh(b.weight), fresh(b.bias)});
    head_ = Layer{fresh(other.head_.weight), fresh(other.head_.bias)};
  }

  static BasicTensor<T> expand_mask(const BasicTensor<T>& mask, const Shape& target) {
    const std::size_t n = target[0], c = target[1], h = target[2], w = target[3];
    if (mask.rank() != 3 || mask.dim(0) != n || mask.dim(1) != h || mask.dim(2) != w) {
      throw ShapeError("forward: mask shape " + shape_str(mask.shape()) + " expected " +
                       shape_str({n, h, w}));
    }
    std::vector<T> full(n * c * h * w);
    const auto m = mask.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        std::copy(m.begin() + b * h * w, m.begin() + (b + 1) * h * w, full.begin() + (b * c + ch) * h * w);
    return BasicTensor<T>(target, std::move(full));
  }

  BackboneConfig config_;
  Layer stem_;
  std::vector<Layer> blocks_;
  Layer head_;
};

using Model = BasicModel<float>;
using ForwardRecord = BasicForwardRecord<float>;

// p <- p - lr * grad(p) for every parameter, then clears gradients.
template <typename T>
void sgd_step(std::vector<BasicTensor<T>>& params, BasicTensor<T>& loss, T lr) {
  loss.backward();
  for (auto& p : params) {
    if (p.has_grad()) {
      auto data = p.mutable_data();
      const auto g = p.grad();
      for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * g[i];
    }
    p.zero_grad();
  }
}

template <typename T>
void sgd_step(BasicModel<T>& model, BasicTensor<T>& loss, T lr) {
  auto params = model.parameters();
  sgd_step(params, loss, lr);
}

}  // namespace droptop
