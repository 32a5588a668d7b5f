// Inclusion-probability checks for the replay buffer, shared by the unit
// tests and the acceptance binary.

#pragma once

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <vector>

#include "droptop/replay.hpp"

namespace reservoir_props {

// Replays a fixed list of outcomes; uniform_index(n) must be asked for
// exactly the bound the script expects.
struct ScriptedRng {
  std::vector<std::uint64_t> picks;
  std::vector<std::uint64_t> bounds;
  std::size_t pos = 0;
  std::uint64_t uniform_index(std::uint64_t n) {
    bounds.push_back(n);
    return pos < picks.size() ? picks[pos++] % n : 0;
  }
  double uniform01() { return 0.0; }
};

// Exact per-item inclusion probabilities of a reservoir buffer after n items,
// by enumerating every branch of the random draws.
inline std::vector<double> exhaustive_inclusion(std::size_t capacity, std::size_t n) {
  std::vector<double> prob(n, 0.0);
  // Draw i (1-based item i > capacity) has i equally likely outcomes.
  std::vector<std::uint64_t> radix;
  for (std::size_t i = capacity + 1; i <= n; ++i) radix.push_back(i);
  std::vector<std::uint64_t> digits(radix.size(), 0);
  for (;;) {
    droptop::ReplayBuffer buf(capacity, droptop::UpdatePolicy::reservoir);
    ScriptedRng rng{digits, {}, 0};
    for (std::size_t i = 0; i < n; ++i) {
      droptop::MemoryItem item;
      item.seen_index = i;
      buf.update(std::move(item), rng);
    }
    double p = 1.0;
    for (auto r : radix) p /= static_cast<double>(r);
    for (const auto& it : buf.items()) prob[it.seen_index] += p;
    std::size_t k = 0;
    while (k < digits.size() && ++digits[k] == radix[k]) digits[k++] = 0;
    if (k == digits.size()) break;
  }
  return prob;
}

struct MonteCarlo {
  std::vector<std::size_t> counts;  // per stream item, over trials
  std::size_t trials = 0;
  double p = 0.0;

  double sigma() const { return std::sqrt(static_cast<double>(trials) * p * (1.0 - p)); }
  double mean() const { return static_cast<double>(trials) * p; }

  std::size_t outside(double z) const {
    std::size_t out = 0;
    for (auto c : counts) out += std::fabs(static_cast<double>(c) - mean()) > z * sigma();
    return out;
  }

  // Exact probability that one item's count lands outside z sigma.
  double tail_probability(double z) const {
    boost::math::binomial_distribution<double> dist(static_cast<double>(trials), p);
    const double lo = mean() - z * sigma(), hi = mean() + z * sigma();
    double tail = 0.0;
    if (lo > 0.0) tail += boost::math::cdf(dist, std::ceil(lo) - 1.0);
    tail += boost::math::cdf(boost::math::complement(dist, std::floor(hi)));
    return tail;
  }

  // Items outside 3 sigma are no more than a correct sampler would produce
  // (expected + 3 sd of that count), and none is outside the bound that a
  // family-wise 1% test over all items allows.
  bool consistent() const {
    const double q = tail_probability(3.0);
    const double n = static_cast<double>(counts.size());
    const double allowed = n * q + 3.0 * std::sqrt(n * q * (1.0 - q));
    const double z_family = boost::math::quantile(boost::math::complement(boost::math::normal(), 0.005 / n));
    return static_cast<double>(outside(3.0)) <= allowed && outside(z_family) == 0;
  }
};

inline MonteCarlo inclusion(droptop::UpdatePolicy policy, std::size_t capacity, std::size_t n, std::size_t trials,
                            std::uint64_t seed) {
  MonteCarlo mc{std::vector<std::size_t>(n, 0), trials, static_cast<double>(capacity) / static_cast<double>(n)};
  droptop::Rng rng(seed, "buffer");
  for (std::size_t t = 0; t < trials; ++t) {
    droptop::ReplayBuffer buf(capacity, policy);
    for (std::size_t i = 0; i < n; ++i) {
      droptop::MemoryItem item;
      item.seen_index = i;
      buf.update(std::move(item), rng);
    }
    for (const auto& it : buf.items()) ++mc.counts[it.seen_index];
  }
  return mc;
}

}  // namespace reservoir_props
