#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

#include "droptop/droptop.hpp"

using namespace droptop;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "extra key=value settings applied after the file")->take_all();
}

ExperimentConfig load(const Common& c) {
  auto cfg = load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::string fmt(const MeanStderr& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << m.mean << " ± " << m.std_error;
  return os.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DropTop online continual learning simulator"};
  app.require_subcommand(1);

  Common run_opts;
  std::string method, mode, seeds, out;
  bool dump_masks = false;
  auto* run_cmd = app.add_subcommand("run", "train every seed and write per-seed and aggregate results");
  add_common(run_cmd, run_opts);
  run_cmd->add_option("--method", method, "er|derpp");
  run_cmd->add_option("--droptop", mode, "on|off|fixed|random|soft|no_fusion");
  run_cmd->add_option("--seeds", seeds, "comma-separated seed list");
  run_cmd->add_option("--out", out, "output directory");
  run_cmd->add_flag("--dump-masks", dump_masks, "write attention and mask PGMs every 100 iterations");

  Common sweep_opts;
  std::string axis, values;
  auto* sweep_cmd = app.add_subcommand("sweep", "one-axis hyperparameter sweep");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--axis", axis, "kappa0|gamma|alpha|p")->required();
  sweep_cmd->add_option("--values", values, "comma-separated values")->required();

  Common pair_opts;
  auto* pair_cmd = app.add_subcommand("reference-pair", "single-model vs two-model intensity agreement");
  add_common(pair_cmd, pair_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      auto cfg = load(run_opts);
      if (!method.empty()) apply_setting(cfg, "method", method);
      if (!mode.empty()) apply_setting(cfg, "droptop", mode);
      if (!seeds.empty()) apply_setting(cfg, "seeds", seeds);
      if (!out.empty()) cfg.out_dir = out;
      if (dump_masks) cfg.dump_masks = true;
      const auto art = run(cfg);
      std::cout << "A_avg           " << fmt(art.aggregate.a_avg) << '\n';
      std::cout << "A_avg unbiased  " << fmt(art.aggregate.a_avg_unbiased) << '\n';
      if (art.aggregate.f_last) std::cout << "F_last          " << fmt(*art.aggregate.f_last) << '\n';
      if (art.aggregate.f_last_unbiased) std::cout << "F_last unbiased " << fmt(*art.aggregate.f_last_unbiased) << '\n';
      std::cout << "results in " << cfg.out_dir.string() << '\n';
    } else if (*sweep_cmd) {
      const auto cfg = load(sweep_opts);
      const auto rows = sweep(cfg, axis, split_list(values));
      std::cout << axis << "\tA_avg\tA_avg unbiased\n";
      for (const auto& r : rows) std::cout << r.value << '\t' << fmt(r.a_avg) << '\t' << fmt(r.a_avg_unbiased) << '\n';
    } else if (*pair_cmd) {
      const auto cfg = load(pair_opts);
      const auto r = reference_pair(cfg);
      for (std::size_t i = 0; i < r.per_seed.size(); ++i)
        std::cout << "seed " << cfg.seeds[i] << ": agreement " << r.per_seed[i].overall << " over "
                  << r.per_seed[i].test_points << " test points\n";
      std::cout << "agreement " << fmt(r.agreement) << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
