// Continual-learning metrics and shortcut-feature diagnostics.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "droptop/backbone.hpp"

namespace droptop {

// Row i (0-based) holds accuracies on tasks 0..i after finishing task i.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks) : rows_(tasks) {
    for (std::size_t i = 0; i < tasks; ++i) rows_[i].assign(i + 1, 0.0);
  }
  AccuracyMatrix(std::initializer_list<std::vector<double>> rows) : rows_(rows) { check(); }
  explicit AccuracyMatrix(std::vector<std::vector<double>> rows) : rows_(std::move(rows)) { check(); }

  std::size_t tasks() const { return rows_.size(); }
  double at(std::size_t i, std::size_t j) const { return rows_.at(i).at(j); }
  void set(std::size_t i, std::size_t j, double v) {
    if (j > i) throw std::out_of_range("accuracy matrix is lower triangular");
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("accuracy must lie in [0, 1]");
    rows_.at(i).at(j) = v;
  }
  const std::vector<std::vector<double>>& rows() const { return rows_; }

 private:
  void check() const {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (rows_[i].size() != i + 1) throw std::invalid_argument("accuracy matrix row " + std::to_string(i) + " has wrong length");
      for (double v : rows_[i])
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("accuracy must lie in [0, 1]");
    }
  }
  std::vector<std::vector<double>> rows_;
};

// Mean over i of A_i, where A_i averages the tasks seen after task i.
inline double avg_accuracy(const AccuracyMatrix& m) {
  if (m.tasks() == 0) throw std::invalid_argument("avg_accuracy: empty matrix");
  double total = 0.0;
  for (const auto& row : m.rows()) total += std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
  return total / static_cast<double>(m.tasks());
}

// Mean over earlier tasks j of (best earlier accuracy on j) - (final accuracy on j).
inline double forgetting(const AccuracyMatrix& m) {
  const std::size_t T = m.tasks();
  if (T < 2) throw std::invalid_argument("forgetting: need at least two tasks");
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < T; ++j) {
    double best = m.at(j, j);
    for (std::size_t k = j + 1; k + 1 < T; ++k) best = std::max(best, m.at(k, j));
    total += best - m.at(T - 1, j);
  }
  return total / static_cast<double>(T - 1);
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || truth.empty()) throw std::invalid_argument("accuracy: size mismatch or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

struct MeanStderr {
  double mean = 0.0;
  double std_error = 0.0;
};

inline MeanStderr mean_stderr(std::span<const double> xs) {
  if (xs.empty()) return {};
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

// ---------------------------------------------------------------------------
// Shortcut diagnostics over the pooled features z.

struct DiagnosticThresholds {
  double rho = 0.0;  // "highly activated" on seen data
  double eps = 0.0;  // "still activated" on unseen data

  void validate() const {
    if (!(rho >= 0.0 && eps >= 0.0 && rho >= eps)) throw std::invalid_argument("diagnostics: need rho >= eps >= 0");
  }
};

enum class FeatureLabel { shortcut, non_shortcut, inactive };

inline const char* to_string(FeatureLabel l) {
  switch (l) {
    case FeatureLabel::shortcut: return "shortcut";
    case FeatureLabel::non_shortcut: return "non_shortcut";
    default: return "inactive";
  }
}

// Per-feature mean |z_i| over a batch.
template <typename T>
std::vector<double> mean_abs_features(const BasicModel<T>& model, const BasicTensor<T>& batch) {
  const auto z = model.forward(batch).features;
  const std::size_t n = z.dim(0), d = z.dim(1);
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += std::fabs(static_cast<double>(z[i * d + j]));
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

inline FeatureLabel classify_feature(double seen_mean, double unseen_mean, const DiagnosticThresholds& th) {
  if (seen_mean < th.rho) return FeatureLabel::inactive;
  return unseen_mean >= th.eps ? FeatureLabel::shortcut : FeatureLabel::non_shortcut;
}

inline std::vector<FeatureLabel> classify_features(std::span<const double> seen_means, std::span<const double> unseen_means,
                                                   const DiagnosticThresholds& th) {
  th.validate();
  if (seen_means.size() != unseen_means.size()) throw std::invalid_argument("classify_features: size mismatch");
  std::vector<FeatureLabel> out(seen_means.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = classify_feature(seen_means[i], unseen_means[i], th);
  return out;
}

template <typename T>
std::vector<FeatureLabel> classify_features(const BasicModel<T>& model, const BasicTensor<T>& seen,
                                            const BasicTensor<T>& unseen, const DiagnosticThresholds& th) {
  const auto s = mean_abs_features(model, seen);
  const auto u = mean_abs_features(model, unseen);
  return classify_features(s, u, th);
}

// Linear-interpolated percentile, q in [0, 100].
inline double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(xs.begin(), xs.end());
  const double pos = q / 100.0 * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

// rho, eps = 75th and 25th percentiles of the seen-batch feature means.
inline DiagnosticThresholds default_thresholds(std::span<const double> seen_means) {
  std::vector<double> v(seen_means.begin(), seen_means.end());
  return {percentile(v, 75.0), percentile(v, 25.0)};
}

struct ActivationGap {
  std::optional<double> shortcut_mean;
  std::optional<double> non_shortcut_mean;
  std::size_t shortcut_count = 0;
  std::size_t non_shortcut_count = 0;
};

inline ActivationGap activation_gap(std::span<const double> seen_means, std::span<const FeatureLabel> labels) {
  if (seen_means.size() != labels.size()) throw std::invalid_argument("activation_gap: size mismatch");
  double s = 0.0, ns = 0.0;
  ActivationGap gap;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == FeatureLabel::shortcut) {
      s += seen_means[i];
      ++gap.shortcut_count;
    } else if (labels[i] == FeatureLabel::non_shortcut) {
      ns += seen_means[i];
      ++gap.non_shortcut_count;
    }
  }
  if (gap.shortcut_count) gap.shortcut_mean = s / static_cast<double>(gap.shortcut_count);
  if (gap.non_shortcut_count) gap.non_shortcut_mean = ns / static_cast<double>(gap.non_shortcut_count);
  return gap;
}

template <typename T>
ActivationGap activation_gap(const BasicModel<T>& model, const BasicTensor<T>& seen, std::span<const FeatureLabel> labels) {
  const auto s = mean_abs_features(model, seen);
  return activation_gap(s, labels);
}

// Plug-in mutual information estimate, in bits, between two discrete labels.
inline double mutual_information_bits(std::span<const int> x, std::span<const int> y) {
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("mutual_information_bits: size mismatch");
  std::map<int, double> px, py;
  std::map<std::pair<int, int>, double> pxy;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    px[x[i]] += 1.0 / n;
    py[y[i]] += 1.0 / n;
    pxy[{x[i], y[i]}] += 1.0 / n;
  }
  double mi = 0.0;
  for (const auto& [k, p] : pxy) mi += p * std::log2(p / (px[k.first] * py[k.second]));
  return std::max(0.0, mi);
}

// Attention values split by whether the cell lies in the ground-truth
// shortcut region.
struct AttentionHistogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::size_t> shortcut;
  std::vector<std::size_t> other;

  AttentionHistogram(double lo_, double hi_, std::size_t bins) : lo(lo_), hi(hi_), shortcut(bins, 0), other(bins, 0) {}

  void add(double value, bool in_shortcut) {
    const std::size_t bins = shortcut.size();
    double t = hi > lo ? (value - lo) / (hi - lo) : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const std::size_t b = std::min(bins - 1, static_cast<std::size_t>(t * static_cast<double>(bins)));
    (in_shortcut ? shortcut : other)[b]++;
  }

  void write_csv(std::ostream& out) const {
    out << "bin_lo,bin_hi,shortcut_count,other_count\n";
    const double w = (hi - lo) / static_cast<double>(shortcut.size());
    for (std::size_t b = 0; b < shortcut.size(); ++b)
      out << lo + w * static_cast<double>(b) << ',' << lo + w * static_cast<double>(b + 1) << ',' << shortcut[b] << ','
          << other[b] << '\n';
  }
};

}  // namespace droptop
