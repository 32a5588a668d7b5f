// Fixed-capacity episodic memory.
//
// Two update policies:
//   random    - once full, the n-th stream item replaces a uniformly chosen
//               slot with probability capacity / n.
//   reservoir - the n-th stream item draws j uniformly from [0, n) and is
//               stored at slot j iff j < capacity.
// Retrieval is a uniform sample without replacement.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "droptop/rng.hpp"

namespace droptop {

struct MemoryItem {
  std::vector<float> image;  // C x H x W, row-major
  int label = 0;
  int task_id = 0;
  std::optional<std::vector<float>> logits;  // recorded at insertion (DER++)
  std::size_t seen_index = 0;
};

enum class UpdatePolicy { random, reservoir };

inline const char* to_string(UpdatePolicy p) { return p == UpdatePolicy::random ? "random" : "reservoir"; }

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, UpdatePolicy policy) : capacity_(capacity), policy_(policy) {
    items_.reserve(capacity);
  }

  std::size_t capacity() const { return capacity_; }
  UpdatePolicy policy() const { return policy_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::size_t n_seen() const { return n_seen_; }
  const std::vector<MemoryItem>& items() const { return items_; }
  const MemoryItem& operator[](std::size_t i) const { return items_[i]; }

  // RngLike needs uniform_index(n) and uniform01().
  template <typename RngLike>
  void update(MemoryItem item, RngLike& rng) {
    ++n_seen_;
    if (capacity_ == 0) return;
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
      return;
    }
    if (policy_ == UpdatePolicy::reservoir) {
      const auto j = static_cast<std::size_t>(rng.uniform_index(n_seen_));
      if (j < capacity_) items_[j] = std::move(item);
    } else {
      const double keep = static_cast<double>(capacity_) / static_cast<double>(n_seen_);
      if (rng.uniform01() < keep) items_[static_cast<std::size_t>(rng.uniform_index(capacity_))] = std::move(item);
    }
  }

  template <typename RngLike>
  void update(std::vector<MemoryItem> batch, RngLike& rng) {
    for (auto& item : batch) update(std::move(item), rng);
  }

  // Slot indices of min(batch_size, size()) distinct items.
  template <typename RngLike>
  std::vector<std::size_t> retrieve(std::size_t batch_size, RngLike& rng) const {
    const std::size_t take = std::min(batch_size, items_.size());
    std::vector<std::size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(take);
    return idx;
  }

  // Slot indices of items labelled class_id, ordered by stream position.
  std::vector<std::size_t> class_samples(int class_id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].label == class_id) out.push_back(i);
    std::sort(out.begin(), out.end(),
              [&](std::size_t a, std::size_t b) { return items_[a].seen_index < items_[b].seen_index; });
    return out;
  }

  std::vector<int> labels_present() const {
    std::vector<int> out;
    for (const auto& it : items_) out.push_back(it.label);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  void write_audit_csv(std::ostream& out) const {
    out << "slot,label,task_id,seen_index\n";
    for (std::size_t i = 0; i < items_.size(); ++i)
      out << i << ',' << items_[i].label << ',' << items_[i].task_id << ',' << items_[i].seen_index << '\n';
  }

 private:
  std::size_t capacity_;
  UpdatePolicy policy_;
  std::vector<MemoryItem> items_;
  std::size_t n_seen_ = 0;
};

}  // namespace droptop
