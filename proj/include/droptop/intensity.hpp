// Per-class drop-intensity control.
//
// Each class holds two candidate intensities, kappa_dec = kappa' * alpha and
// kappa_inc = kappa' / alpha (capped at gamma). Training alternates between
// them every `period` iterations on one global clock. At each phase boundary
// the class's replay-memory loss is measured and the reduction since the
// previous boundary is credited to the phase that just ended. Once both
// histories hold `history` entries, a one-sided Welch t-test decides whether
// to shift both candidates down, up, or not at all.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace droptop {

struct ShiftConfig {
  double alpha = 0.9;
  std::size_t period = 3;   // p
  std::size_t history = 10; // l
  double gamma = 5.0;       // percent
  double kappa0 = 5.0;      // percent
  double significance = 0.05;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("shift: alpha must lie in (0, 1)");
    if (period < 1) throw std::invalid_argument("shift: period must be at least 1");
    if (history < 2) throw std::invalid_argument("shift: history length must be at least 2");
    if (!(gamma >= 0.0 && gamma <= 100.0)) throw std::invalid_argument("shift: gamma must lie in [0, 100]");
    if (!(kappa0 > 0.0 || gamma == 0.0)) throw std::invalid_argument("shift: kappa0 must be positive");
    if (kappa0 > gamma) throw std::invalid_argument("shift: kappa0 must not exceed gamma");
    if (!(significance > 0.0 && significance < 0.5)) {
      throw std::invalid_argument("shift: significance must lie in (0, 0.5)");
    }
  }
};

enum class Phase { dec, inc };
enum class ShiftOutcome { decremented, incremented, unchanged };

inline const char* to_string(Phase p) { return p == Phase::dec ? "dec" : "inc"; }
inline const char* to_string(ShiftOutcome o) {
  switch (o) {
    case ShiftOutcome::decremented: return "decremented";
    case ShiftOutcome::incremented: return "incremented";
    default: return "unchanged";
  }
}

// One-sided Welch two-sample t-test, alternative mean(a) > mean(b).
// Zero variance on both sides falls back to comparing the means directly.
inline double t_test_p(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("t_test_p: need at least two values per sample");
  auto moments = [](std::span<const double> x) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  const double se2 = sa + sb;
  if (!(se2 > 0.0)) {
    if (ma > mb) return 0.0;
    if (ma < mb) return 1.0;
    return 0.5;
  }
  const double t = (ma - mb) / std::sqrt(se2);
  const double df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  const boost::math::students_t dist(df);
  // P(T >= t); using the complement for t > 0 keeps both tails accurate.
  return t >= 0.0 ? boost::math::cdf(boost::math::complement(dist, t)) : boost::math::cdf(dist, -t);
}

struct IntensityState {
  int class_id = 0;
  double kappa_dec = 0.0;
  double kappa_inc = 0.0;
  std::vector<double> h_dec;
  std::vector<double> h_inc;
  std::optional<double> l_old;
  Phase phase = Phase::dec;
  std::size_t iter_in_phase = 0;

  static IntensityState fresh(int class_id, const ShiftConfig& cfg) {
    IntensityState s;
    s.class_id = class_id;
    s.kappa_dec = cfg.kappa0 * cfg.alpha;
    s.kappa_inc = std::min(cfg.kappa0 / cfg.alpha, cfg.gamma);
    return s;
  }

  bool histories_full(const ShiftConfig& cfg) const {
    return h_dec.size() >= cfg.history && h_inc.size() >= cfg.history;
  }
};

inline double current_kappa(const IntensityState& s) { return s.phase == Phase::dec ? s.kappa_dec : s.kappa_inc; }

// Credits L_old - L_new to the phase that just ended, then swaps phase. The
// first boundary after a reset only records the loss level.
inline void on_boundary(IntensityState& s, double l_new, const ShiftConfig& cfg) {
  if (s.l_old) {
    auto& h = s.phase == Phase::dec ? s.h_dec : s.h_inc;
    if (h.size() < cfg.history) h.push_back(*s.l_old - l_new);
  }
  s.l_old = l_new;
  s.phase = s.phase == Phase::dec ? Phase::inc : Phase::dec;
  s.iter_in_phase = 0;
}

// Absent class: no measurement, but the phase still follows the global clock
// and the stale loss level is dropped so the next reduction is not credited
// across two phases.
inline void skip_boundary(IntensityState& s) {
  s.l_old.reset();
  s.phase = s.phase == Phase::dec ? Phase::inc : Phase::dec;
  s.iter_in_phase = 0;
}

inline ShiftOutcome apply_shift(IntensityState& s, double p_value, const ShiftConfig& cfg) {
  ShiftOutcome outcome = ShiftOutcome::unchanged;
  if (p_value <= cfg.significance) {
    s.kappa_inc = s.kappa_dec;
    s.kappa_dec = s.kappa_dec * cfg.alpha;
    outcome = ShiftOutcome::decremented;
  } else if (p_value >= 1.0 - cfg.significance) {
    s.kappa_dec = s.kappa_inc;
    s.kappa_inc = std::min(s.kappa_inc / cfg.alpha, cfg.gamma);
    outcome = ShiftOutcome::incremented;
  }
  s.h_dec.clear();
  s.h_inc.clear();
  return outcome;
}

struct ShiftResult {
  ShiftOutcome outcome = ShiftOutcome::unchanged;
  double p_value = 0.5;
};

// Requires both histories full.
inline ShiftResult maybe_shift(IntensityState& s, const ShiftConfig& cfg) {
  if (!s.histories_full(cfg)) throw std::logic_error("maybe_shift: histories not full");
  const double p = t_test_p(s.h_dec, s.h_inc);
  return {apply_shift(s, p, cfg), p};
}

struct TraceRow {
  std::size_t iteration = 0;
  int class_id = 0;
  Phase phase = Phase::dec;
  double kappa = 0.0;
  std::optional<double> p_value;
  std::optional<ShiftOutcome> outcome;
  bool skipped = false;
};

inline void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows) {
  out << "iteration,class_id,phase,kappa,p_value,outcome\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.class_id << ',' << to_string(r.phase) << ',' << r.kappa << ',';
    if (r.p_value) out << *r.p_value;
    out << ',';
    if (r.skipped)
      out << "skipped";
    else if (r.outcome)
      out << to_string(*r.outcome);
    out << '\n';
  }
}

// Loss of the replay samples of one class (or all samples for kAllClasses);
// nullopt when the memory holds none.
using ClassLossFn = std::function<std::optional<double>(int class_id)>;
inline constexpr int kAllClasses = -1;

// Drives per-class states on a shared phase clock. In common mode a single
// state (class id kAllClasses) serves every class.
class IntensityController {
 public:
  IntensityController(ShiftConfig cfg, std::vector<int> classes, bool common = false)
      : cfg_(cfg), common_(common) {
    cfg_.validate();
    if (common_) {
      states_.emplace(kAllClasses, IntensityState::fresh(kAllClasses, cfg_));
    } else {
      for (int c : classes) states_.emplace(c, IntensityState::fresh(c, cfg_));
    }
  }

  const ShiftConfig& config() const { return cfg_; }
  bool common() const { return common_; }

  double kappa(int class_id) const { return current_kappa(state(class_id)); }

  const IntensityState& state(int class_id) const {
    auto it = states_.find(common_ ? kAllClasses : class_id);
    if (it == states_.end()) throw std::out_of_range("intensity: unknown class " + std::to_string(class_id));
    return it->second;
  }

  const std::map<int, IntensityState>& states() const { return states_; }
  const std::vector<TraceRow>& trace() const { return trace_; }

  // Histories and loss levels restart; candidate intensities carry over.
  void begin_task() {
    clock_ = 0;
    for (auto& [id, s] : states_) {
      s.h_dec.clear();
      s.h_inc.clear();
      s.l_old.reset();
      s.phase = Phase::dec;
      s.iter_in_phase = 0;
    }
  }

  // Call once after every training iteration. `global_iteration` is only
  // used to label trace rows.
  void after_iteration(std::size_t global_iteration, const ClassLossFn& loss) {
    ++clock_;
    for (auto& [id, s] : states_) ++s.iter_in_phase;
    if (clock_ % cfg_.period != 0) return;
    for (auto& [id, s] : states_) {
      TraceRow row{global_iteration, id, s.phase, current_kappa(s), std::nullopt, std::nullopt, false};
      const auto l_new = loss(id);
      if (!l_new) {
        skip_boundary(s);
        row.skipped = true;
        trace_.push_back(row);
        continue;
      }
      on_boundary(s, *l_new, cfg_);
      if (s.histories_full(cfg_)) {
        const auto result = maybe_shift(s, cfg_);
        row.p_value = result.p_value;
        row.outcome = result.outcome;
      }
      trace_.push_back(row);
    }
  }

 private:
  ShiftConfig cfg_;
  bool common_;
  std::map<int, IntensityState> states_;
  std::vector<TraceRow> trace_;
  std::size_t clock_ = 0;
};

// One learner as seen by the intensity controller: a training step under
// per-class intensities, and a replay-memory loss probe.
class ShiftLearner {
 public:
  virtual ~ShiftLearner() = default;
  virtual std::vector<int> classes() const = 0;
  virtual std::size_t num_tasks() const = 0;
  virtual std::size_t iterations(std::size_t task) const = 0;
  virtual void train_step(std::size_t task, std::size_t iteration, const std::function<double(int)>& kappa) = 0;
  virtual std::optional<double> class_loss(int class_id) = 0;
};

struct TestPoint {
  std::size_t iteration = 0;
  int class_id = 0;
  ShiftOutcome single = ShiftOutcome::unchanged;
  ShiftOutcome reference = ShiftOutcome::unchanged;
};

struct AgreementReport {
  std::map<int, double> agreement;       // per class, over matched test points
  double overall = 0.0;                  // over all matched test points
  std::size_t test_points = 0;
  std::vector<TestPoint> points;
  std::vector<TraceRow> single_trace;
  std::vector<TraceRow> reference_trace;
};

// Single-model alternation versus a two-model reference that trains one
// learner per candidate on the same batches. The reference credits each
// model's loss reduction over the same 2p-iteration windows the single model
// spans with one dec and one inc phase, so both test at the same iterations.
inline AgreementReport run_reference_pair(const ShiftConfig& cfg, ShiftLearner& single, ShiftLearner& dec_model,
                                          ShiftLearner& inc_model) {
  cfg.validate();
  AgreementReport report;
  if (single.num_tasks() == 0) return report;
  const auto classes = single.classes();
  IntensityController ctl(cfg, classes);
  std::map<int, IntensityState> ref;
  for (int c : classes) ref.emplace(c, IntensityState::fresh(c, cfg));
  std::map<int, std::optional<double>> ref_old_dec, ref_old_inc;

  std::size_t global = 0;
  for (std::size_t task = 0; task < single.num_tasks(); ++task) {
    ctl.begin_task();
    for (auto& [c, s] : ref) {
      s.h_dec.clear();
      s.h_inc.clear();
      ref_old_dec[c].reset();
      ref_old_inc[c].reset();
    }
    const std::size_t iters = single.iterations(task);
    for (std::size_t it = 0; it < iters; ++it, ++global) {
      single.train_step(task, it, [&](int c) { return ctl.kappa(c); });
      dec_model.train_step(task, it, [&](int c) { return ref.at(c).kappa_dec; });
      inc_model.train_step(task, it, [&](int c) { return ref.at(c).kappa_inc; });
      ctl.after_iteration(global, [&](int c) { return single.class_loss(c); });

      const std::size_t clock = it + 1;
      // First reference boundary at p, then every 2p, matching the single
      // model's first recording boundary and its dec+inc cycle.
      if (clock < cfg.period || (clock - cfg.period) % (2 * cfg.period) != 0) continue;
      for (auto& [c, s] : ref) {
        TraceRow row{global, c, Phase::dec, s.kappa_dec, std::nullopt, std::nullopt, false};
        const auto ld = dec_model.class_loss(c);
        const auto li = inc_model.class_loss(c);
        if (!ld || !li) {
          ref_old_dec[c].reset();
          ref_old_inc[c].reset();
          row.skipped = true;
          report.reference_trace.push_back(row);
          continue;
        }
        if (ref_old_dec[c] && ref_old_inc[c]) {
          if (s.h_dec.size() < cfg.history) s.h_dec.push_back(*ref_old_dec[c] - *ld);
          if (s.h_inc.size() < cfg.history) s.h_inc.push_back(*ref_old_inc[c] - *li);
        }
        ref_old_dec[c] = *ld;
        ref_old_inc[c] = *li;
        if (s.histories_full(cfg)) {
          const auto result = maybe_shift(s, cfg);
          row.p_value = result.p_value;
          row.outcome = result.outcome;
        }
        report.reference_trace.push_back(row);
      }
    }
  }
  report.single_trace = ctl.trace();

  // Match test points by (iteration, class).
  std::map<std::pair<std::size_t, int>, ShiftOutcome> ref_tests;
  for (const auto& r : report.reference_trace)
    if (r.outcome) ref_tests[{r.iteration, r.class_id}] = *r.outcome;
  std::map<int, std::pair<std::size_t, std::size_t>> tally;
  std::size_t agree = 0;
  for (const auto& r : report.single_trace) {
    if (!r.outcome) continue;
    auto it = ref_tests.find({r.iteration, r.class_id});
    if (it == ref_tests.end()) continue;
    report.points.push_back({r.iteration, r.class_id, *r.outcome, it->second});
    auto& [hit, total] = tally[r.class_id];
    ++total;
    if (*r.outcome == it->second) {
      ++hit;
      ++agree;
    }
  }
  report.test_points = report.points.size();
  for (const auto& [c, t] : tally) report.agreement[c] = static_cast<double>(t.first) / static_cast<double>(t.second);
  report.overall = report.test_points ? static_cast<double>(agree) / static_cast<double>(report.test_points) : 0.0;
  return report;
}

}  // namespace droptop
