// Dense row-major tensors with reverse-mode gradients over a fixed op set.
//
// A tensor is a shared handle to a graph node. Ops build new nodes whose
// backward closures scatter gradients into their parents; calling
// backward() on a result walks the graph once in reverse topological order.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace droptop {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <std::floating_point T>
class BasicTensor {
 public:
  using value_type = T;

  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<T>& ensure_grad() {
      if (grad.empty()) grad.assign(data.size(), T{0});
      return grad;
    }
  };

  BasicTensor() : node_(std::make_shared<Node>()) {}

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == 0) throw ShapeError("tensor extent " + std::to_string(i) + " is zero");
    }
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " needs " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  // Result node of an op. Parents that do not track gradients are dropped.
  static BasicTensor make_result(Shape shape, std::vector<T> data,
                                 std::vector<BasicTensor> inputs,
                                 std::function<void(Node&)> backward) {
    BasicTensor out(std::move(shape), std::move(data));
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      out.node_->requires_grad = true;
      for (const auto& in : inputs) out.node_->parents.push_back(in.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  bool empty() const { return node_->data.empty(); }

  std::span<const T> data() const { return node_->data; }
  // Only for parameter updates and test setup; ops never mutate inputs.
  std::span<T> mutable_data() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Leaf copy with no history.
  BasicTensor detach() const { return BasicTensor(shape(), node_->data, false); }

  BasicTensor reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
    }
    return make_result(std::move(new_shape), node_->data, {*this}, [](Node& out) {
      auto& g = out.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    });
  }

  void backward() {
    if (numel() != 1) throw ShapeError("backward() without seed needs a scalar, got " + shape_str(shape()));
    std::vector<T> seed{T{1}};
    backward(seed);
  }

  void backward(std::span<const T> seed) {
    if (seed.size() != numel()) throw ShapeError("backward seed size mismatch");
    if (!requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    // Iterative post-order DFS.
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    auto& g = node_->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward && !node->grad.empty()) node->backward(*node);
    }
  }

  Node& node() const { return *node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

// C[m][n] += sum_k A[m*a_row + k*a_col] * B[k][n], row-major B and C.
// Each element accumulates k in ascending order, so a zeroed C receives the
// plain left-to-right sum.
template <typename T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t a_row, std::size_t a_col,
              const T* B, T* C) {
  constexpr std::size_t kTile = 256;
  for (std::size_t n0 = 0; n0 < N; n0 += kTile) {
    const std::size_t nn = std::min(kTile, N - n0);
    std::size_t m = 0;
    for (; m + 4 <= M; m += 4) {
      T* c0 = C + m * N + n0;
      T* c1 = c0 + N;
      T* c2 = c1 + N;
      T* c3 = c2 + N;
      for (std::size_t k = 0; k < K; ++k) {
        const T a0 = A[m * a_row + k * a_col], a1 = A[(m + 1) * a_row + k * a_col];
        const T a2 = A[(m + 2) * a_row + k * a_col], a3 = A[(m + 3) * a_row + k * a_col];
        const T* b = B + k * N + n0;
        for (std::size_t j = 0; j < nn; ++j) {
          c0[j] += a0 * b[j];
          c1[j] += a1 * b[j];
          c2[j] += a2 * b[j];
          c3[j] += a3 * b[j];
        }
      }
    }
    for (; m < M; ++m) {
      T* c = C + m * N + n0;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[m * a_row + k * a_col];
        const T* b = B + k * N + n0;
        for (std::size_t j = 0; j < nn; ++j) c[j] += a * b[j];
      }
    }
  }
}

// Dot product with eight interleaved partial sums (a fixed, vectorizable
// summation order).
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lane[8] = {};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t l = 0; l < 8; ++l) lane[l] += a[j + l] * b[j + l];
  T sum = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
  for (; j < n; ++j) sum += a[j] * b[j];
  return sum;
}

}  // namespace detail

// Cross-correlation of an NCHW input with an OIKK weight (square kernels).
// Each output element sums input-channel, kernel-row, kernel-column terms in
// that order, starting from zero.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      std::size_t stride, std::size_t padding) {
  using detail::require;
  require(input.rank() == 4, "conv2d: input must be NCHW, got " + shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be OIKK, got " + shape_str(weight.shape()));
  require(stride >= 1, "conv2d: stride must be positive");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == cin, "conv2d: weight input-channel dimension " + std::to_string(weight.dim(1)) +
                                    " does not match input channels " + std::to_string(cin));
  require(weight.dim(3) == k, "conv2d: kernel height " + std::to_string(k) + " and width " +
                                  std::to_string(weight.dim(3)) + " differ");
  require(h + 2 * padding >= k, "conv2d: padded height " + std::to_string(h + 2 * padding) +
                                    " smaller than kernel " + std::to_string(k));
  require(w + 2 * padding >= k, "conv2d: padded width " + std::to_string(w + 2 * padding) +
                                    " smaller than kernel " + std::to_string(k));
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (w + 2 * padding - k) / stride + 1;

  // Column matrix: row r = (c, kh, kw), column j = (b, y, x); padding reads 0.
  const std::size_t rows = cin * k * k, ohw = oh * ow, cols = n * ohw;
  auto col = std::make_shared<std::vector<T>>(rows * cols, T{0});
  const auto x = input.data();
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t kh = 0; kh < k; ++kh)
      for (std::size_t kw = 0; kw < k; ++kw) {
        T* crow = col->data() + ((c * k + kh) * k + kw) * cols;
        for (std::size_t b = 0; b < n; ++b) {
          const T* src = x.data() + (b * cin + c) * h * w;
          for (std::size_t y = 0; y < oh; ++y) {
            const std::size_t iy = y * stride + kh;
            if (iy < padding || iy - padding >= h) continue;
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const std::size_t ix = xo * stride + kw;
              if (ix < padding || ix - padding >= w) continue;
              crow[b * ohw + y * ow + xo] = src[(iy - padding) * w + ix - padding];
            }
          }
        }
      }

  // out[o][j] accumulates rows in ascending r.
  const auto wt = weight.data();
  std::vector<T> acc(cout * cols, T{0});
  detail::gemm_acc(cout, cols, rows, wt.data(), rows, 1, col->data(), acc.data());
  std::vector<T> out(n * cout * ohw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      std::copy_n(acc.data() + o * cols + b * ohw, ohw, out.data() + (b * cout + o) * ohw);

  return BasicTensor<T>::make_result(
      {n, cout, oh, ow}, std::move(out), {input, weight},
      [=](typename BasicTensor<T>::Node& node) {
        const auto& gout = node.grad;
        const auto& wv = node.parents[1]->data;
        const bool want_x = node.parents[0]->requires_grad;
        const bool want_w = node.parents[1]->requires_grad;
        // Output gradient rearranged to [o][j].
        std::vector<T> g(cout * cols);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t o = 0; o < cout; ++o)
            std::copy_n(gout.data() + (b * cout + o) * ohw, ohw, g.data() + o * cols + b * ohw);
        if (want_w) {
          auto& gw = node.parents[1]->ensure_grad();
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t r = 0; r < rows; ++r)
              gw[o * rows + r] += detail::dot(g.data() + o * cols, col->data() + r * cols, cols);
        }
        if (want_x) {
          auto& gx = node.parents[0]->ensure_grad();
          // gcol = W^T g, then scattered back through the im2col indexing.
          std::vector<T> gcol(rows * cols, T{0});
          detail::gemm_acc(rows, cols, cout, wv.data(), 1, rows, g.data(), gcol.data());
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t kh = 0; kh < k; ++kh)
              for (std::size_t kw = 0; kw < k; ++kw) {
                const T* grow = gcol.data() + ((c * k + kh) * k + kw) * cols;
                for (std::size_t b = 0; b < n; ++b) {
                  T* dst = gx.data() + (b * cin + c) * h * w;
                  for (std::size_t y = 0; y < oh; ++y) {
                    const std::size_t iy = y * stride + kh;
                    if (iy < padding || iy - padding >= h) continue;
                    for (std::size_t xo = 0; xo < ow; ++xo) {
                      const std::size_t ix = xo * stride + kw;
                      if (ix < padding || ix - padding >= w) continue;
                      dst[(iy - padding) * w + ix - padding] += grow[b * ohw + y * ow + xo];
                    }
                  }
                }
              }
        }
      });
}

// Adds bias[c] to every element of channel c of an NCHW tensor.
template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& input, const BasicTensor<T>& bias) {
  detail::require(input.rank() == 4, "add_channel_bias: input must be NCHW, got " + shape_str(input.shape()));
  detail::require(bias.rank() == 1 && bias.dim(0) == input.dim(1),
                  "add_channel_bias: bias length must equal channel dimension " + std::to_string(input.dim(1)));
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  std::vector<T> out(input.data().begin(), input.data().end());
  const auto bv = bias.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) out[(b * c + ch) * hw + i] += bv[ch];
  return BasicTensor<T>::make_result(input.shape(), std::move(out), {input, bias},
                                     [=](typename BasicTensor<T>::Node& node) {
                                       const auto& g = node.grad;
                                       if (node.parents[0]->requires_grad) {
                                         auto& gx = node.parents[0]->ensure_grad();
                                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                       }
                                       if (node.parents[1]->requires_grad) {
                                         auto& gb = node.parents[1]->ensure_grad();
                                         for (std::size_t b = 0; b < n; ++b)
                                           for (std::size_t ch = 0; ch < c; ++ch) {
                                             T acc{0};
                                             for (std::size_t i = 0; i < hw; ++i) acc += g[(b * c + ch) * hw + i];
                                             gb[ch] += acc;
                                           }
                                       }
                                     });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  std::vector<T> out(input.numel());
  const auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return BasicTensor<T>::make_result(input.shape(), std::move(out), {input},
                                     [](typename BasicTensor<T>::Node& node) {
                                       auto& gx = node.parents[0]->ensure_grad();
                                       const auto& x = node.parents[0]->data;
                                       for (std::size_t i = 0; i < gx.size(); ++i)
                                         if (x[i] > T{0}) gx[i] += node.grad[i];
                                     });
}

// x: N x D, weight: K x D, bias: K  ->  N x K
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  using detail::require;
  require(x.rank() == 2, "linear: input must be N x D, got " + shape_str(x.shape()));
  require(weight.rank() == 2, "linear: weight must be K x D, got " + shape_str(weight.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1), k = weight.dim(0);
  require(weight.dim(1) == d, "linear: weight feature dimension " + std::to_string(weight.dim(1)) +
                                  " does not match input dimension " + std::to_string(d));
  require(bias.rank() == 1 && bias.dim(0) == k, "linear: bias length must be " + std::to_string(k));
  std::vector<T> out(n * k);
  const auto xv = x.data();
  const auto wv = weight.data();
  const auto bv = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      T acc{0};
      for (std::size_t q = 0; q < d; ++q) acc += xv[i * d + q] * wv[j * d + q];
      out[i * k + j] = acc + bv[j];
    }
  return BasicTensor<T>::make_result({n, k}, std::move(out), {x, weight, bias},
                                     [=](typename BasicTensor<T>::Node& node) {
                                       const auto& g = node.grad;
                                       const auto& xv = node.parents[0]->data;
                                       const auto& wv = node.parents[1]->data;
                                       if (node.parents[0]->requires_grad) {
                                         auto& gx = node.parents[0]->ensure_grad();
                                         for (std::size_t i = 0; i < n; ++i)
                                           for (std::size_t j = 0; j < k; ++j)
                                             for (std::size_t q = 0; q < d; ++q) gx[i * d + q] += g[i * k + j] * wv[j * d + q];
                                       }
                                       if (node.parents[1]->requires_grad) {
                                         auto& gw = node.parents[1]->ensure_grad();
                                         for (std::size_t i = 0; i < n; ++i)
                                           for (std::size_t j = 0; j < k; ++j)
                                             for (std::size_t q = 0; q < d; ++q) gw[j * d + q] += g[i * k + j] * xv[i * d + q];
                                       }
                                       if (node.parents[2]->requires_grad) {
                                         auto& gb = node.parents[2]->ensure_grad();
                                         for (std::size_t i = 0; i < n; ++i)
                                           for (std::size_t j = 0; j < k; ++j) gb[j] += g[i * k + j];
                                       }
                                     });
}

// NCHW -> NC, mean over spatial cells.
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
  detail::require(input.rank() == 4, "global_avg_pool: input must be NCHW, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  std::vector<T> out(n * c);
  const auto x = input.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < hw; ++j) acc += x[i * hw + j];
    out[i] = acc / static_cast<T>(hw);
  }
  return BasicTensor<T>::make_result({n, c}, std::move(out), {input},
                                     [=](typename BasicTensor<T>::Node& node) {
                                       auto& gx = node.parents[0]->ensure_grad();
                                       for (std::size_t i = 0; i < n * c; ++i) {
                                         const T gi = node.grad[i] / static_cast<T>(hw);
                                         for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += gi;
                                       }
                                     });
}

// Mean over the batch of -log softmax(logits)[target].
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
  using detail::require;
  require(logits.rank() == 2, "softmax_cross_entropy: logits must be N x K, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(targets.size() == n, "softmax_cross_entropy: " + std::to_string(targets.size()) +
                                   " targets for batch of " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k) {
      throw std::out_of_range("softmax_cross_entropy: class index " + std::to_string(targets[i]) +
                              " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto z = logits.data();
  std::vector<T> probs(n * k);
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data() + i * k;
    const T m = *std::max_element(row, row + k);
    T s{0};
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - m);
      s += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= s;
    total += (m + std::log(s)) - row[targets[i]];
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return BasicTensor<T>::make_result({1}, {total / static_cast<T>(n)}, {logits},
                                     [=, probs = std::move(probs)](typename BasicTensor<T>::Node& node) {
                                       auto& gz = node.parents[0]->ensure_grad();
                                       const T g = node.grad[0] / static_cast<T>(n);
                                       for (std::size_t i = 0; i < n; ++i)
                                         for (std::size_t j = 0; j < k; ++j) {
                                           const T onehot = static_cast<std::size_t>(tgt[i]) == j ? T{1} : T{0};
                                           gz[i * k + j] += g * (probs[i * k + j] - onehot);
                                         }
                                     });
}

// Mean squared difference; gradients flow to both sides when tracked.
template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& prediction, const BasicTensor<T>& target) {
  detail::require(prediction.shape() == target.shape(), "mse: shape " + shape_str(prediction.shape()) +
                                                            " vs " + shape_str(target.shape()));
  const auto p = prediction.data();
  const auto t = target.data();
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  const std::size_t count = p.size();
  return BasicTensor<T>::make_result({1}, {acc / static_cast<T>(count)}, {prediction, target},
                                     [=](typename BasicTensor<T>::Node& node) {
                                       const auto& pv = node.parents[0]->data;
                                       const auto& tv = node.parents[1]->data;
                                       const T g = node.grad[0] * T{2} / static_cast<T>(count);
                                       if (node.parents[0]->requires_grad) {
                                         auto& gp = node.parents[0]->ensure_grad();
                                         for (std::size_t i = 0; i < count; ++i) gp[i] += g * (pv[i] - tv[i]);
                                       }
                                       if (node.parents[1]->requires_grad) {
                                         auto& gt = node.parents[1]->ensure_grad();
                                         for (std::size_t i = 0; i < count; ++i) gt[i] -= g * (pv[i] - tv[i]);
                                       }
                                     });
}

template <typename T>
BasicTensor<T> elementwise_mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require(a.shape() == b.shape(), "elementwise_mul: shape " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](typename BasicTensor<T>::Node& node) {
    const auto& av = node.parents[0]->data;
    const auto& bv = node.parents[1]->data;
    if (node.parents[0]->requires_grad) {
      auto& ga = node.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i] * bv[i];
    }
    if (node.parents[1]->requires_grad) {
      auto& gb = node.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += node.grad[i] * av[i];
    }
  });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](typename BasicTensor<T>::Node& node) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!node.parents[p]->requires_grad) continue;
      auto& g = node.parents[p]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {a}, [factor](typename BasicTensor<T>::Node& node) {
    auto& g = node.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * factor;
  });
}

// Rows [begin, end) along the leading dimension.
template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require(a.rank() >= 1 && begin < end && end <= a.dim(0),
                  "slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                      ") invalid for shape " + shape_str(a.shape()));
  const std::size_t row = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<T> out(a.data().begin() + begin * row, a.data().begin() + end * row);
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), {a},
                                     [=](typename BasicTensor<T>::Node& node) {
                                       auto& g = node.parents[0]->ensure_grad();
                                       for (std::size_t i = 0; i < node.grad.size(); ++i) g[begin * row + i] += node.grad[i];
                                     });
}

// Nearest-neighbour upsampling of the two trailing spatial axes with
// source index floor(i * src / dst). Works on C x h x w or N x C x h x w.
template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& input, std::size_t target_h, std::size_t target_w) {
  using detail::require;
  require(input.rank() >= 3, "upsample_nearest: need at least 3 dims, got " + shape_str(input.shape()));
  const std::size_t r = input.rank();
  const std::size_t sh = input.dim(r - 2), sw = input.dim(r - 1);
  require(target_h >= sh, "upsample_nearest: target height " + std::to_string(target_h) +
                              " smaller than source height " + std::to_string(sh));
  require(target_w >= sw, "upsample_nearest: target width " + std::to_string(target_w) +
                              " smaller than source width " + std::to_string(sw));
  const std::size_t planes = input.numel() / (sh * sw);
  Shape shape = input.shape();
  shape[r - 2] = target_h;
  shape[r - 1] = target_w;
  std::vector<std::size_t> src_index(target_h * target_w);
  for (std::size_t i = 0; i < target_h; ++i)
    for (std::size_t j = 0; j < target_w; ++j) src_index[i * target_w + j] = (i * sh / target_h) * sw + (j * sw / target_w);
  std::vector<T> out(planes * target_h * target_w);
  const auto x = input.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t q = 0; q < src_index.size(); ++q) out[p * src_index.size() + q] = x[p * sh * sw + src_index[q]];
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), {input},
                                     [=, src_index = std::move(src_index)](typename BasicTensor<T>::Node& node) {
                                       auto& g = node.parents[0]->ensure_grad();
                                       const std::size_t cells = src_index.size();
                                       for (std::size_t p = 0; p < planes; ++p)
                                         for (std::size_t q = 0; q < cells; ++q) g[p * sh * sw + src_index[q]] += node.grad[p * cells + q];
                                     });
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace droptop
