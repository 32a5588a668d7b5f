#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "droptop/droptop.hpp"
#include "grad_suite.hpp"
#include "mask_props.hpp"
#include "oracles.hpp"
#include "reservoir_props.hpp"

using namespace droptop;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

std::string ms(const MeanStderr& m) { return fixed(m.mean) + "±" + fixed(m.std_error); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Context {
  ExperimentConfig color;
  ExperimentConfig patch;
  fs::path scratch;
  // Biased-stream ER results, shared by the forgetting, diagnostic and
  // baseline-identity criteria.
  std::optional<RunArtifacts> er_biased;
  double er_biased_seconds = 0.0;

  const RunArtifacts& biased_er() {
    if (!er_biased) {
      auto c = color;
      c.droptop = DropMode::off;
      const auto t0 = Clock::now();
      er_biased = run(c, false);
      er_biased_seconds = seconds_since(t0);
    }
    return *er_biased;
  }
};

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const auto worst = grad_suite::run(8, 2024);
  const double secs = seconds_since(t0);
  std::string worst_op;
  for (const auto& [op, err] : worst.by_op)
    if (err == worst.overall()) worst_op = op;
  return {worst.cases >= 100 && worst.overall() < 1e-3 && secs < 60.0,
          std::to_string(worst.by_op.size()) + " ops, " + std::to_string(worst.cases) + " cases, max rel err " +
              sci(worst.overall()) + " (" + worst_op + "), " + fixed(secs, 1) + "s"};
}

Verdict mask_invariants() {
  const auto r = mask_props::run(10000, 77);
  return {r.cases >= 10000 && r.total() == 0,
          std::to_string(r.cases) + " cases; violations: zero-count " + std::to_string(r.zero_count) + ", top-missing " +
              std::to_string(r.top_missing) + ", scale " + std::to_string(r.scale_changed) + ", soft-range " +
              std::to_string(r.soft_range) + ", soft-rank " + std::to_string(r.soft_rank) + ", fusion " +
              std::to_string(r.fuse_mismatch)};
}

Verdict t_test_oracle() {
  std::mt19937_64 gen(4242);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> len(2, 20);
  double worst = 0.0, worst_sym = 0.0;
  const int pairs = 200;
  for (int i = 0; i < pairs; ++i) {
    std::vector<double> a(len(gen)), b(len(gen));
    const double shift = nd(gen), sa = std::exp(nd(gen)), sb = std::exp(nd(gen));
    for (auto& x : a) x = shift + sa * nd(gen);
    for (auto& x : b) x = sb * nd(gen);
    worst = std::max(worst, std::fabs(t_test_p(a, b) - oracle::welch_p(a, b)));
    worst_sym = std::max(worst_sym, std::fabs(t_test_p(a, b) + t_test_p(b, a) - 1.0));
  }
  std::ostringstream d;
  d << pairs << " pairs, max |p - oracle| " << std::scientific << std::setprecision(2) << worst << ", max |p(a,b)+p(b,a)-1| "
    << worst_sym;
  return {worst < 1e-3 && worst_sym < 1e-9, d.str()};
}

Verdict reservoir_property() {
  const auto t0 = Clock::now();
  const auto mc = reservoir_props::inclusion(UpdatePolicy::reservoir, 100, 10000, 2000, 99);
  double exhaustive_err = 0.0;
  for (std::size_t cap = 1; cap <= 3; ++cap)
    for (std::size_t n = cap; n <= 6; ++n) {
      const auto p = reservoir_props::exhaustive_inclusion(cap, n);
      for (double v : p) exhaustive_err = std::max(exhaustive_err, std::fabs(v - double(cap) / double(n)));
    }
  const double secs = seconds_since(t0);
  const double expected_outside = double(mc.counts.size()) * mc.tail_probability(3.0);
  return {mc.consistent() && exhaustive_err < 1e-12 && secs < 120.0,
          "10^4 items x 2000 trials: " + std::to_string(mc.outside(3.0)) + " outside 3 sigma (binomial expectation " +
              fixed(expected_outside, 1) + "); exhaustive max err " + sci(exhaustive_err) + "; " + fixed(secs, 1) +
              "s"};
}

Verdict appendix_b(Context& ctx) {
  const auto t0 = Clock::now();
  const auto& biased = ctx.biased_er();
  auto unbiased_cfg = ctx.color;
  unbiased_cfg.droptop = DropMode::off;
  unbiased_cfg.stream.bias_ratio = 0.0;
  const auto clean = run(unbiased_cfg, false);
  auto dt_cfg = ctx.color;
  dt_cfg.droptop = DropMode::on;
  const auto dt = run(dt_cfg, false);
  const double secs = seconds_since(t0) + ctx.er_biased_seconds;

  const auto& fb = *biased.aggregate.f_last;
  const auto& fc = *clean.aggregate.f_last;
  const auto& fd = *dt.aggregate.f_last;
  const auto& ub = biased.aggregate.a_avg_unbiased;
  const auto& ud = dt.aggregate.a_avg_unbiased;
  const bool a = fb.mean > fc.mean;
  const bool b_forget = fd.mean + fd.std_error < fb.mean - fb.std_error;
  const bool b_acc = ud.mean - ud.std_error > ub.mean + ub.std_error;
  return {a && b_forget && b_acc && secs < 600.0,
          std::string("(a) ") + (a ? "ok" : "FAIL") + " F_last biased ER " + ms(fb) + " vs bias-0 ER " + ms(fc) + "; (b) " +
              (b_forget && b_acc ? "ok" : "FAIL") + " F_last DropTop " + ms(fd) + " vs ER " + ms(fb) +
              ", unbiased A_avg DropTop " + ms(ud) + " vs ER " + ms(ub) + "; " + fixed(secs, 0) + "s"};
}

Verdict ablation(Context& ctx) {
  const auto t0 = Clock::now();
  std::map<DropMode, MeanStderr> acc;
  for (auto mode : {DropMode::on, DropMode::fixed, DropMode::random, DropMode::no_fusion}) {
    auto c = ctx.patch;
    c.droptop = mode;
    acc[mode] = run(c, false).aggregate.a_avg_unbiased;
  }
  const double secs = seconds_since(t0);
  const double on = acc[DropMode::on].mean, fx = acc[DropMode::fixed].mean, rd = acc[DropMode::random].mean,
               nf = acc[DropMode::no_fusion].mean;
  const bool order = on >= fx && fx >= rd && on > nf;
  return {order && secs < 1800.0,
          "unbiased A_avg: DropTop " + ms(acc[DropMode::on]) + ", Fixed " + ms(acc[DropMode::fixed]) + ", Rand " +
              ms(acc[DropMode::random]) + ", NoMF " + ms(acc[DropMode::no_fusion]) + " [" +
              (on >= fx ? "on>=fixed " : "on<fixed ") + (fx >= rd ? "fixed>=rand " : "fixed<rand ") +
              (on > nf ? "on>nomf" : "on<=nomf") + "]; " + fixed(secs, 0) + "s"};
}

Verdict reference_agreement(Context& ctx) {
  const auto t0 = Clock::now();
  const auto r = reference_pair(ctx.color, false);
  std::size_t points = 0;
  for (const auto& s : r.per_seed) points += s.test_points;
  return {r.per_seed.size() >= 5 && points > 0 && r.agreement.mean > 0.6,
          "agreement " + ms(r.agreement) + " over " + std::to_string(r.per_seed.size()) + " seeds, " +
              std::to_string(points) + " matched test points; " + fixed(seconds_since(t0), 0) + "s"};
}

Verdict diagnostic_gap(Context& ctx) {
  const auto& biased = ctx.biased_er();
  std::vector<double> sc, ns;
  std::size_t gaps_positive = 0, seeds = 0, n_sc = 0, n_ns = 0, n_in = 0;
  for (const auto& s : biased.seeds) {
    if (s.diagnostics.empty()) continue;
    const auto& d = s.diagnostics.front();
    n_sc += d.shortcut;
    n_ns += d.non_shortcut;
    n_in += d.inactive;
    if (!d.shortcut_mean || !d.non_shortcut_mean) continue;
    ++seeds;
    sc.push_back(*d.shortcut_mean);
    ns.push_back(*d.non_shortcut_mean);
    gaps_positive += *d.shortcut_mean > *d.non_shortcut_mean;
  }
  if (sc.empty()) return {false, "no seed produced both shortcut and non-shortcut features (summed labels: shortcut " +
                                    std::to_string(n_sc) + ", non-shortcut " + std::to_string(n_ns) + ", inactive " +
                                    std::to_string(n_in) + ")"};
  const auto a = mean_stderr(sc), b = mean_stderr(ns);
  return {a.mean > b.mean, "mean |z| shortcut " + ms(a) + " vs non-shortcut " + ms(b) + " (" +
                               std::to_string(gaps_positive) + "/" + std::to_string(seeds) + " seeds positive)"};
}

Verdict determinism(Context& ctx) {
  auto c = ctx.color;
  c.droptop = DropMode::on;
  c.seeds = {0, 1};
  c.out_dir = ctx.scratch / "determinism";
  std::vector<std::string> files{"summary.json", "seed_0/summary.json", "seed_0/kappa_trace.csv",
                                 "seed_1/kappa_trace.csv", "seed_0/results.csv"};
  auto snapshot = [&] {
    fs::remove_all(c.out_dir);
    run(c);
    std::vector<std::string> out;
    for (const auto& f : files) out.push_back(slurp(c.out_dir / f));
    return out;
  };
  const auto first = snapshot();
  const auto second = snapshot();
  std::size_t same = 0, trace_rows = 0;
  for (std::size_t i = 0; i < files.size(); ++i) same += first[i] == second[i] && !first[i].empty();
  trace_rows = static_cast<std::size_t>(std::count(first[2].begin(), first[2].end(), '\n'));
  fs::remove_all(c.out_dir);
  return {same == files.size() && trace_rows > 1, std::to_string(same) + "/" + std::to_string(files.size()) +
                                                      " output files bit-identical across two runs (" +
                                                      std::to_string(trace_rows - 1) + " trace rows)"};
}

Verdict baseline_identity(Context& ctx) {
  const auto& with = ctx.biased_er();
  auto c = ctx.color;
  c.droptop = DropMode::off;
  const auto without = run<false>(c, false);
  std::size_t same = 0;
  for (std::size_t i = 0; i < with.seeds.size(); ++i)
    same += seed_json(c, with.seeds[i]).dump() == seed_json(c, without.seeds[i]).dump() &&
            with.seeds[i].buffer_audit == without.seeds[i].buffer_audit;
  return {same == with.seeds.size(), std::to_string(same) + "/" + std::to_string(with.seeds.size()) +
                                         " seeds bit-identical (accuracy matrices, metrics, replay buffer)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string only;
  std::string config_dir = DROPTOP_CONFIG_DIR;
  std::size_t workers = 1;
  app.add_option("--only", only, "comma-separated criterion numbers");
  app.add_option("--config-dir", config_dir, "directory holding color_er.cfg and patch_er.cfg");
  app.add_option("--workers", workers, "parallel seed workers for experiment criteria");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  {
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) selected.insert(std::stoi(item));
  }

  Context ctx;
  ctx.color = load_config(fs::path(config_dir) / "color_er.cfg");
  ctx.patch = load_config(fs::path(config_dir) / "patch_er.cfg");
  ctx.color.workers = ctx.patch.workers = workers;
  ctx.scratch = fs::temp_directory_path() / "droptop_acceptance";

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"mask invariants", mask_invariants},
      {"t-test oracle", t_test_oracle},
      {"reservoir inclusion", reservoir_property},
      {"color-stream forgetting and debiasing", [&] { return appendix_b(ctx); }},
      {"ablation ordering", [&] { return ablation(ctx); }},
      {"single vs two-model agreement", [&] { return reference_agreement(ctx); }},
      {"shortcut activation gap", [&] { return diagnostic_gap(ctx); }},
      {"determinism", [&] { return determinism(ctx); }},
      {"baseline identity", [&] { return baseline_identity(ctx); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << "  " << criteria[i].first << ": "
              << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
