// Replay-based online continual learning with optional attention-guided
// feature dropping.
//
// Per training iteration:
//   1. take the next stream minibatch and a replay minibatch (two for DER++),
//   2. if dropping is enabled, run a measurement forward, fuse the stem and
//      last feature maps of each sample, and build its drop mask from the
//      intensity of its class,
//   3. forward the combined batch with the masks, compute the method loss,
//      take an SGD step,
//   4. insert the stream samples into memory,
//   5. advance the intensity controller's phase clock.
// Evaluation never masks and never touches the model or memory.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "droptop/backbone.hpp"
#include "droptop/config.hpp"
#include "droptop/debias.hpp"
#include "droptop/intensity.hpp"
#include "droptop/metrics.hpp"
#include "droptop/replay.hpp"
#include "droptop/rng.hpp"
#include "droptop/stream.hpp"

namespace droptop {

inline bool uses_controller(DropMode m) { return m == DropMode::on || m == DropMode::soft || m == DropMode::no_fusion; }

struct DiagnosticRecord {
  std::size_t after_task = 0;
  DiagnosticThresholds thresholds;
  std::size_t shortcut = 0;
  std::size_t non_shortcut = 0;
  std::size_t inactive = 0;
  std::optional<double> shortcut_mean;
  std::optional<double> non_shortcut_mean;
};

struct CurvePoint {
  std::size_t iteration = 0;
  std::size_t training_task = 0;
  std::size_t eval_task = 0;
  double accuracy = 0.0;
};

struct MaskStats {
  std::size_t masks = 0;
  std::size_t min_dropped = SIZE_MAX;
  std::size_t max_dropped = 0;
  std::size_t top_cells_missed = 0;  // hard masks whose top-n_kappa cells were not all dropped

  void add(std::size_t dropped) {
    ++masks;
    min_dropped = std::min(min_dropped, dropped);
    max_dropped = std::max(max_dropped, dropped);
  }
};

struct SeedResult {
  std::uint64_t seed = 0;
  AccuracyMatrix biased;
  AccuracyMatrix unbiased;
  std::optional<AccuracyMatrix> only_bg;
  double a_avg = 0.0;
  double a_avg_unbiased = 0.0;
  std::optional<double> f_last;
  std::optional<double> f_last_unbiased;
  std::vector<TraceRow> trace;
  std::map<int, std::pair<double, double>> kappa_end;  // class -> (kappa_dec, kappa_inc)
  std::vector<DiagnosticRecord> diagnostics;
  std::optional<AttentionHistogram> histogram;
  std::vector<CurvePoint> curve;
  MaskStats mask_stats;
  std::size_t iterations = 0;
  std::size_t stream_samples_trained = 0;
  std::string buffer_audit;
};

// One model + memory + random streams, stepping through a task stream. With
// WithDebias = false the dropping path is compiled out entirely.
template <bool WithDebias = true>
class Learner final : public ShiftLearner {
 public:
  Learner(const ExperimentConfig& cfg, const TaskStream& stream, std::uint64_t seed)
      : cfg_(cfg),
        stream_(stream),
        model_(cfg.backbone_for(seed)),
        buffer_(cfg.memory_capacity, cfg.method == Method::er ? UpdatePolicy::random : UpdatePolicy::reservoir),
        rng_mask_(seed, "mask"),
        rng_buffer_(seed, "buffer"),
        rng_retrieval_(seed, "retrieval") {
    for (const auto& t : stream_.tasks) classes_.insert(classes_.end(), t.classes.begin(), t.classes.end());
  }

  std::vector<int> classes() const override { return classes_; }
  std::size_t num_tasks() const override { return stream_.tasks.size(); }
  std::size_t iterations(std::size_t task) const override {
    const auto n = stream_.tasks.at(task).train.size();
    return (n + cfg_.batch_size - 1) / cfg_.batch_size;
  }

  const Model& model() const { return model_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const MaskStats& mask_stats() const { return mask_stats_; }
  std::size_t stream_samples_trained() const { return stream_samples_trained_; }

  // Called with the attention map and mask of the first sample whenever the
  // dump hook is set.
  std::function<void(std::size_t, std::size_t, const AttentionMap&, const DropMask&)> mask_hook;

  void train_step(std::size_t task, std::size_t it, const std::function<double(int)>& kappa) override {
    const auto& train = stream_.tasks.at(task).train;
    const std::size_t begin = it * cfg_.batch_size;
    const std::size_t end = std::min(begin + cfg_.batch_size, train.size());
    if (begin >= end) throw std::out_of_range("train_step: iteration past end of task");

    std::vector<const std::vector<float>*> images;
    std::vector<int> labels;
    for (std::size_t i = begin; i < end; ++i) {
      images.push_back(&train[i].image);
      labels.push_back(train[i].label);
    }
    const std::size_t n_stream = end - begin;
    stream_samples_trained_ += n_stream;

    std::vector<std::size_t> mem1, mem2;
    if (!buffer_.empty()) {
      mem1 = buffer_.retrieve(cfg_.batch_size, rng_retrieval_);
      if (cfg_.method == Method::derpp) mem2 = buffer_.retrieve(cfg_.batch_size, rng_retrieval_);
    }
    for (auto idx : mem1) {
      images.push_back(&buffer_[idx].image);
      labels.push_back(buffer_[idx].label);
    }
    for (auto idx : mem2) {
      images.push_back(&buffer_[idx].image);
      labels.push_back(buffer_[idx].label);
    }
    const Tensor batch = stack(images);

    std::optional<Tensor> mask;
    if constexpr (WithDebias) {
      if (cfg_.droptop != DropMode::off) mask = build_masks(batch, labels, kappa, task, it);
    }

    const auto rec = model_.forward(batch, mask);
    Tensor loss;
    if (cfg_.method == Method::er) {
      loss = softmax_cross_entropy(rec.logits, std::span<const int>(labels));
    } else {
      const std::span<const int> all(labels);
      loss = softmax_cross_entropy(slice_rows(rec.logits, 0, n_stream), all.subspan(0, n_stream));
      if (!mem1.empty()) {
        const std::size_t k = rec.logits.dim(1);
        std::vector<float> stored;
        stored.reserve(mem1.size() * k);
        for (auto idx : mem1) stored.insert(stored.end(), buffer_[idx].logits->begin(), buffer_[idx].logits->end());
        const Tensor target({mem1.size(), k}, std::move(stored));
        const auto distill = mse(slice_rows(rec.logits, n_stream, n_stream + mem1.size()), target);
        loss = add(loss, scale(distill, static_cast<float>(cfg_.derpp_distill_coef)));
      }
      if (!mem2.empty()) {
        const std::size_t off = n_stream + mem1.size();
        const auto ce = softmax_cross_entropy(slice_rows(rec.logits, off, off + mem2.size()), all.subspan(off, mem2.size()));
        loss = add(loss, scale(ce, static_cast<float>(cfg_.derpp_mem_ce_coef)));
      }
    }
    sgd_step(model_, loss, static_cast<float>(cfg_.lr));

    const std::size_t k = rec.logits.dim(1);
    for (std::size_t i = 0; i < n_stream; ++i) {
      MemoryItem item;
      item.image = train[begin + i].image;
      item.label = train[begin + i].label;
      item.task_id = static_cast<int>(task);
      item.seen_index = seen_++;
      if (cfg_.method == Method::derpp)
        item.logits = std::vector<float>(rec.logits.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                                         rec.logits.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
      buffer_.update(std::move(item), rng_buffer_);
    }
  }

  // Mean cross-entropy over the memory samples of one class (all samples for
  // kAllClasses), unmasked.
  std::optional<double> class_loss(int class_id) override {
    std::vector<std::size_t> idx;
    if (class_id == kAllClasses) {
      idx.resize(buffer_.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    } else {
      idx = buffer_.class_samples(class_id);
    }
    if (idx.empty()) return std::nullopt;
    double total = 0.0;
    for (std::size_t b = 0; b < idx.size(); b += kEvalChunk) {
      const std::size_t e = std::min(idx.size(), b + kEvalChunk);
      std::vector<const std::vector<float>*> images;
      std::vector<int> labels;
      for (std::size_t i = b; i < e; ++i) {
        images.push_back(&buffer_[idx[i]].image);
        labels.push_back(buffer_[idx[i]].label);
      }
      const auto logits = model_.forward(stack(images)).logits.detach();
      total += static_cast<double>(softmax_cross_entropy(logits, std::span<const int>(labels)).item()) *
               static_cast<double>(e - b);
    }
    return total / static_cast<double>(idx.size());
  }

  double evaluate(const std::vector<Sample>& samples) const {
    std::size_t hit = 0;
    for (std::size_t b = 0; b < samples.size(); b += kEvalChunk) {
      const std::size_t e = std::min(samples.size(), b + kEvalChunk);
      const auto pred = model_.predict(stack_images(samples, b, e));
      for (std::size_t i = b; i < e; ++i) hit += pred[i - b] == samples[i].label;
    }
    return static_cast<double>(hit) / static_cast<double>(samples.size());
  }

 private:
  static constexpr std::size_t kEvalChunk = 256;

  Tensor stack(const std::vector<const std::vector<float>*>& images) const {
    const std::size_t s = stream_.config.image_size;
    std::vector<float> data;
    data.reserve(images.size() * 3 * s * s);
    for (const auto* img : images) data.insert(data.end(), img->begin(), img->end());
    return Tensor({images.size(), 3, s, s}, std::move(data));
  }

  Tensor build_masks(const Tensor& batch, const std::vector<int>& labels, const std::function<double(int)>& kappa,
                     std::size_t task, std::size_t it) {
    const std::size_t n = batch.dim(0);
    const std::size_t h = stream_.config.image_size, w = h;
    const auto& shift = cfg_.shift;
    const DropMode mode = cfg_.droptop;
    std::optional<ForwardRecord> probe;
    if (mode != DropMode::random) {
      // Measurement only: no gradient ever flows from this pass.
      probe = model_.forward(batch);
    }
    std::vector<float> out;
    out.reserve(n * h * w);
    for (std::size_t i = 0; i < n; ++i) {
      double k = 0.0;
      switch (mode) {
        case DropMode::fixed: k = shift.kappa0; break;
        case DropMode::random: k = 0.0; break;
        default: k = std::min(kappa(labels[i]), shift.gamma); break;
      }
      const DropCounts counts = stabilize(k, shift.gamma, h, w);
      AttentionMap att{h, w, std::vector<float>(h * w, 0.0f)};
      if (probe) {
        const auto& first = probe->first;
        const auto& last = probe->last;
        if (mode == DropMode::no_fusion) {
          att = upsample_pooled(channel_pool<float>(sample_view(last, i), last.dim(1), last.dim(2), last.dim(3)), h, w);
        } else {
          att = fuse<float>(sample_view(first, i), first.dim(1), first.dim(2), first.dim(3), sample_view(last, i),
                            last.dim(1), last.dim(2), last.dim(3));
        }
      }
      DropMask m = mode == DropMode::soft ? soft_mask(att, counts.n_kappa)
                                          : hard_mask(att, counts.n_kappa, counts.n_rand, rng_mask_);
      mask_stats_.add(m.dropped());
      if (mask_hook && i == 0) mask_hook(task, it, att, m);
      out.insert(out.end(), m.values.begin(), m.values.end());
    }
    return Tensor({n, h, w}, std::move(out));
  }

  const ExperimentConfig& cfg_;
  const TaskStream& stream_;
  Model model_;
  ReplayBuffer buffer_;
  Rng rng_mask_;
  Rng rng_buffer_;
  Rng rng_retrieval_;
  std::vector<int> classes_;
  std::size_t seen_ = 0;
  std::size_t stream_samples_trained_ = 0;
  MaskStats mask_stats_;
};

namespace harness_detail {

inline Tensor stack_subset(const std::vector<Sample>& samples, std::size_t limit) {
  return stack_images(samples, 0, std::min(limit, samples.size()));
}

template <bool WithDebias>
DiagnosticRecord diagnose(const Learner<WithDebias>& learner, const TaskStream& stream, std::size_t task) {
  std::vector<Sample> seen;
  for (std::size_t j = 0; j <= task; ++j)
    seen.insert(seen.end(), stream.tasks[j].test_biased.begin(), stream.tasks[j].test_biased.end());
  const auto& unseen = stream.tasks[task + 1].test_biased;
  const auto seen_means = mean_abs_features(learner.model(), stack_subset(seen, 512));
  const auto unseen_means = mean_abs_features(learner.model(), stack_subset(unseen, 512));
  DiagnosticRecord rec;
  rec.after_task = task;
  rec.thresholds = default_thresholds(seen_means);
  const auto labels = classify_features(seen_means, unseen_means, rec.thresholds);
  for (auto l : labels) {
    if (l == FeatureLabel::shortcut) ++rec.shortcut;
    else if (l == FeatureLabel::non_shortcut) ++rec.non_shortcut;
    else ++rec.inactive;
  }
  const auto gap = activation_gap(seen_means, labels);
  rec.shortcut_mean = gap.shortcut_mean;
  rec.non_shortcut_mean = gap.non_shortcut_mean;
  return rec;
}

// Fused attention of unmasked test images, split by the cue region.
template <bool WithDebias>
AttentionHistogram attention_histogram(const Learner<WithDebias>& learner, const TaskStream& stream) {
  std::vector<float> values;
  std::vector<std::uint8_t> in_cue;
  for (const auto& task : stream.tasks) {
    const std::size_t n = std::min<std::size_t>(64, task.test_biased.size());
    const auto rec = learner.model().forward(stack_images(task.test_biased, 0, n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto att = fuse<float>(sample_view(rec.first, i), rec.first.dim(1), rec.first.dim(2), rec.first.dim(3),
                                   sample_view(rec.last, i), rec.last.dim(1), rec.last.dim(2), rec.last.dim(3));
      values.insert(values.end(), att.values.begin(), att.values.end());
      const auto& region = task.test_biased[i].shortcut_region;
      in_cue.insert(in_cue.end(), region.begin(), region.end());
    }
  }
  const float hi = values.empty() ? 1.0f : *std::max_element(values.begin(), values.end());
  AttentionHistogram hist(0.0, hi > 0.0f ? hi : 1.0, 20);
  for (std::size_t i = 0; i < values.size(); ++i) hist.add(values[i], in_cue[i] != 0);
  return hist;
}

inline std::string csv_of(const std::function<void(std::ostream&)>& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

}  // namespace harness_detail

// Trains one seed end to end.
template <bool WithDebias = true>
SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path* mask_dir = nullptr) {
  const TaskStream stream = generate_stream(cfg.stream_for(seed));
  Learner<WithDebias> learner(cfg, stream, seed);
  const std::size_t T = stream.tasks.size();

  std::optional<IntensityController> ctl;
  if constexpr (WithDebias) {
    if (uses_controller(cfg.droptop)) ctl.emplace(cfg.shift, learner.classes(), cfg.common_intensity);
    if (mask_dir && cfg.droptop != DropMode::off) {
      std::filesystem::create_directories(*mask_dir);
      learner.mask_hook = [mask_dir](std::size_t task, std::size_t it, const AttentionMap& a, const DropMask& m) {
        if (it % 100 != 0) return;
        const auto stem = "task" + std::to_string(task) + "_iter" + std::to_string(it);
        write_pgm((*mask_dir / (stem + "_attention.pgm")).string(), a);
        write_pgm((*mask_dir / (stem + "_mask.pgm")).string(), m);
        write_csv((*mask_dir / (stem + "_attention.csv")).string(), a);
      };
    }
  }

  SeedResult res;
  res.seed = seed;
  res.biased = AccuracyMatrix(T);
  res.unbiased = AccuracyMatrix(T);
  const bool has_bg = T > 0 && !stream.tasks[0].test_only_bg.empty();
  if (has_bg) res.only_bg = AccuracyMatrix(T);

  std::size_t global = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (ctl) ctl->begin_task();
    const std::size_t iters = learner.iterations(t);
    for (std::size_t it = 0; it < iters; ++it, ++global) {
      learner.train_step(t, it, [&](int c) { return ctl ? ctl->kappa(c) : cfg.shift.kappa0; });
      if (ctl) ctl->after_iteration(global, [&](int c) { return learner.class_loss(c); });
      if (cfg.eval_every && (it + 1) % cfg.eval_every == 0) {
        for (std::size_t j = 0; j < T; ++j)
          res.curve.push_back({global + 1, t, j, learner.evaluate(stream.tasks[j].test_biased)});
      }
    }
    for (std::size_t j = 0; j <= t; ++j) {
      res.biased.set(t, j, learner.evaluate(stream.tasks[j].test_biased));
      res.unbiased.set(t, j, learner.evaluate(stream.tasks[j].test_unbiased));
      if (has_bg) res.only_bg->set(t, j, learner.evaluate(stream.tasks[j].test_only_bg));
    }
    if (t + 1 < T) res.diagnostics.push_back(harness_detail::diagnose(learner, stream, t));
  }
  res.iterations = global;
  res.stream_samples_trained = learner.stream_samples_trained();
  if (T > 0) {
    res.a_avg = avg_accuracy(res.biased);
    res.a_avg_unbiased = avg_accuracy(res.unbiased);
  }
  if (T >= 2) {
    res.f_last = forgetting(res.biased);
    res.f_last_unbiased = forgetting(res.unbiased);
  }
  if (ctl) {
    res.trace = ctl->trace();
    for (const auto& [c, s] : ctl->states()) res.kappa_end[c] = {s.kappa_dec, s.kappa_inc};
  }
  if (T > 0) res.histogram = harness_detail::attention_histogram(learner, stream);
  res.mask_stats = learner.mask_stats();
  res.buffer_audit = harness_detail::csv_of([&](std::ostream& os) { learner.buffer().write_audit_csv(os); });
  return res;
}

// ---------------------------------------------------------------------------
// Result emission.

inline nlohmann::json matrix_json(const AccuracyMatrix& m) { return nlohmann::json(m.rows()); }

inline nlohmann::json seed_json(const ExperimentConfig& cfg, const SeedResult& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["method"] = to_string(cfg.method);
  j["droptop"] = to_string(cfg.droptop);
  j["a_avg"] = r.a_avg;
  j["a_avg_unbiased"] = r.a_avg_unbiased;
  j["f_last"] = r.f_last ? nlohmann::json(*r.f_last) : nlohmann::json(nullptr);
  j["f_last_unbiased"] = r.f_last_unbiased ? nlohmann::json(*r.f_last_unbiased) : nlohmann::json(nullptr);
  j["accuracy_matrix"] = matrix_json(r.biased);
  j["accuracy_matrix_unbiased"] = matrix_json(r.unbiased);
  if (r.only_bg) j["accuracy_matrix_only_bg"] = matrix_json(*r.only_bg);
  nlohmann::json kappa = nlohmann::json::object();
  for (const auto& [c, k] : r.kappa_end) kappa[std::to_string(c)] = {{"kappa_dec", k.first}, {"kappa_inc", k.second}};
  j["kappa_endpoints"] = kappa;
  std::size_t dec = 0, inc = 0, same = 0, skipped = 0;
  for (const auto& row : r.trace) {
    if (row.skipped) ++skipped;
    if (!row.outcome) continue;
    if (*row.outcome == ShiftOutcome::decremented) ++dec;
    else if (*row.outcome == ShiftOutcome::incremented) ++inc;
    else ++same;
  }
  j["shift_counts"] = {{"decremented", dec}, {"incremented", inc}, {"unchanged", same}, {"skipped_boundaries", skipped}};
  nlohmann::json diags = nlohmann::json::array();
  for (const auto& d : r.diagnostics) {
    diags.push_back({{"after_task", d.after_task},
                     {"rho", d.thresholds.rho},
                     {"eps", d.thresholds.eps},
                     {"shortcut", d.shortcut},
                     {"non_shortcut", d.non_shortcut},
                     {"inactive", d.inactive},
                     {"shortcut_mean_act", d.shortcut_mean ? nlohmann::json(*d.shortcut_mean) : nlohmann::json(nullptr)},
                     {"non_shortcut_mean_act",
                      d.non_shortcut_mean ? nlohmann::json(*d.non_shortcut_mean) : nlohmann::json(nullptr)}});
  }
  j["diagnostics"] = diags;
  j["iterations"] = r.iterations;
  j["masks_built"] = r.mask_stats.masks;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline void write_seed_outputs(const ExperimentConfig& cfg, const SeedResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "summary.json", seed_json(cfg, r).dump(2) + "\n");
  std::ostringstream results;
  results << "split,after_task,task,accuracy\n";
  results.precision(10);
  auto rows = [&](const char* split, const AccuracyMatrix& m) {
    for (std::size_t i = 0; i < m.tasks(); ++i)
      for (std::size_t j = 0; j <= i; ++j) results << split << ',' << i << ',' << j << ',' << m.at(i, j) << '\n';
  };
  rows("biased", r.biased);
  rows("unbiased", r.unbiased);
  if (r.only_bg) rows("only_bg", *r.only_bg);
  write_text(dir / "results.csv", results.str());
  std::ostringstream trace;
  write_trace_csv(trace, r.trace);
  write_text(dir / "kappa_trace.csv", trace.str());
  write_text(dir / "buffer_audit.csv", r.buffer_audit);
  if (r.histogram) {
    std::ostringstream h;
    r.histogram->write_csv(h);
    write_text(dir / "attention_hist.csv", h.str());
  }
  if (!r.curve.empty()) {
    std::ostringstream c;
    c << "iteration,training_task,eval_task,accuracy\n";
    for (const auto& p : r.curve) c << p.iteration << ',' << p.training_task << ',' << p.eval_task << ',' << p.accuracy << '\n';
    write_text(dir / "curve.csv", c.str());
  }
}

struct Aggregate {
  MeanStderr a_avg;
  MeanStderr a_avg_unbiased;
  std::optional<MeanStderr> f_last;
  std::optional<MeanStderr> f_last_unbiased;
};

struct RunArtifacts {
  std::vector<SeedResult> seeds;
  Aggregate aggregate;
};

inline Aggregate aggregate(const std::vector<SeedResult>& results) {
  std::vector<double> a, au, f, fu;
  for (const auto& r : results) {
    a.push_back(r.a_avg);
    au.push_back(r.a_avg_unbiased);
    if (r.f_last) f.push_back(*r.f_last);
    if (r.f_last_unbiased) fu.push_back(*r.f_last_unbiased);
  }
  Aggregate agg{mean_stderr(a), mean_stderr(au), std::nullopt, std::nullopt};
  if (!f.empty()) agg.f_last = mean_stderr(f);
  if (!fu.empty()) agg.f_last_unbiased = mean_stderr(fu);
  return agg;
}

inline void ensure_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (ec || !out) throw ConfigError("output directory " + dir.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

// Runs every seed (optionally on parallel workers), writes per-seed outputs
// under out_dir/seed_<s>/ and the aggregate to out_dir/summary.json.
template <bool WithDebias = true>
RunArtifacts run(const ExperimentConfig& cfg, bool write_outputs = true) {
  cfg.validate();
  if (write_outputs) ensure_writable(cfg.out_dir);
  RunArtifacts art;
  art.seeds.resize(cfg.seeds.size());
  auto work = [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const auto dir = cfg.out_dir / ("seed_" + std::to_string(seed));
    const auto mask_dir = dir / "masks";
    art.seeds[i] = run_seed<WithDebias>(cfg, seed, write_outputs && cfg.dump_masks ? &mask_dir : nullptr);
    if (write_outputs) write_seed_outputs(cfg, art.seeds[i], dir);
  };
  if (cfg.workers <= 1 || cfg.seeds.size() <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) work(i);
  } else {
    std::size_t next = 0;
    std::mutex m;
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    for (std::size_t w = 0; w < std::min(cfg.workers, cfg.seeds.size()); ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(m);
            if (next >= cfg.seeds.size() || failure) return;
            i = next++;
          }
          try {
            work(i);
          } catch (...) {
            std::lock_guard lock(m);
            failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  art.aggregate = aggregate(art.seeds);
  if (write_outputs) {
    nlohmann::json j;
    j["method"] = to_string(cfg.method);
    j["droptop"] = to_string(cfg.droptop);
    j["generator"] = to_string(cfg.stream.generator);
    j["bias_ratio"] = cfg.stream.bias_ratio;
    j["seeds"] = cfg.seeds;
    auto ms = [](const MeanStderr& m) { return nlohmann::json{{"mean", m.mean}, {"stderr", m.std_error}}; };
    j["a_avg"] = ms(art.aggregate.a_avg);
    j["a_avg_unbiased"] = ms(art.aggregate.a_avg_unbiased);
    j["f_last"] = art.aggregate.f_last ? ms(*art.aggregate.f_last) : nlohmann::json(nullptr);
    j["f_last_unbiased"] = art.aggregate.f_last_unbiased ? ms(*art.aggregate.f_last_unbiased) : nlohmann::json(nullptr);
    nlohmann::json per = nlohmann::json::array();
    for (const auto& r : art.seeds) per.push_back(seed_json(cfg, r));
    j["per_seed"] = per;
    write_text(cfg.out_dir / "summary.json", j.dump(2) + "\n");
  }
  return art;
}

// ---------------------------------------------------------------------------
// One-axis sweeps.

struct SweepRow {
  std::string value;
  MeanStderr a_avg;
  MeanStderr a_avg_unbiased;
};

inline void set_sweep_axis(ExperimentConfig& cfg, const std::string& axis, const std::string& value) {
  if (axis == "kappa0" || axis == "kappa") {
    apply_setting(cfg, "shift.kappa0", value);
  } else if (axis == "gamma") {
    apply_setting(cfg, "shift.gamma", value);
    // Intensity can never start above the total drop ratio.
    cfg.shift.kappa0 = std::min(cfg.shift.kappa0, cfg.shift.gamma);
  } else if (axis == "alpha") {
    apply_setting(cfg, "shift.alpha", value);
  } else if (axis == "p" || axis == "period") {
    apply_setting(cfg, "shift.period", value);
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "' (expected kappa0|gamma|alpha|p)");
  }
}

inline std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::string& axis,
                                   const std::vector<std::string>& values, bool write_outputs = true) {
  std::vector<ExperimentConfig> cfgs;
  for (const auto& v : values) {
    ExperimentConfig c = base;
    set_sweep_axis(c, axis, v);
    c.out_dir = base.out_dir / (axis + "_" + v);
    c.validate();
    cfgs.push_back(std::move(c));
  }
  if (write_outputs) ensure_writable(base.out_dir);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const auto art = run(cfgs[i], write_outputs);
    rows.push_back({values[i], art.aggregate.a_avg, art.aggregate.a_avg_unbiased});
  }
  if (write_outputs) {
    std::ostringstream os;
    os.precision(10);
    os << axis << ",mean_a_avg,stderr_a_avg,mean_a_avg_unbiased,stderr_a_avg_unbiased\n";
    for (const auto& r : rows)
      os << r.value << ',' << r.a_avg.mean << ',' << r.a_avg.std_error << ',' << r.a_avg_unbiased.mean << ','
         << r.a_avg_unbiased.std_error << '\n';
    write_text(base.out_dir / ("sweep_" + axis + ".csv"), os.str());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Single-model vs two-model intensity agreement.

struct ReferencePairResult {
  std::vector<AgreementReport> per_seed;
  MeanStderr agreement;
};

inline ReferencePairResult reference_pair(const ExperimentConfig& cfg, bool write_outputs = true) {
  cfg.validate();
  if (write_outputs) ensure_writable(cfg.out_dir);
  ReferencePairResult out;
  std::vector<double> agreements;
  nlohmann::json seeds_json = nlohmann::json::array();
  ExperimentConfig c = cfg;
  if (!uses_controller(c.droptop)) c.droptop = DropMode::on;
  for (auto seed : cfg.seeds) {
    const TaskStream stream = generate_stream(c.stream_for(seed));
    Learner<true> single(c, stream, seed), dec(c, stream, seed), inc(c, stream, seed);
    auto report = run_reference_pair(c.shift, single, dec, inc);
    if (report.test_points) agreements.push_back(report.overall);
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [k, v] : report.agreement) per_class[std::to_string(k)] = v;
    seeds_json.push_back({{"seed", seed},
                          {"agreement", report.overall},
                          {"test_points", report.test_points},
                          {"per_class", per_class}});
    if (write_outputs) {
      const auto dir = cfg.out_dir / ("seed_" + std::to_string(seed));
      std::filesystem::create_directories(dir);
      std::ostringstream a, b;
      write_trace_csv(a, report.single_trace);
      write_trace_csv(b, report.reference_trace);
      write_text(dir / "kappa_trace_single.csv", a.str());
      write_text(dir / "kappa_trace_reference.csv", b.str());
    }
    out.per_seed.push_back(std::move(report));
  }
  out.agreement = mean_stderr(agreements);
  if (write_outputs) {
    nlohmann::json j;
    j["agreement"] = {{"mean", out.agreement.mean}, {"stderr", out.agreement.std_error}};
    j["per_seed"] = seeds_json;
    write_text(cfg.out_dir / "reference_pair.json", j.dump(2) + "\n");
  }
  return out;
}

}  // namespace droptop
