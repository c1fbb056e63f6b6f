// t3t command-line tool.
//
//   t3t synth        write a synthetic dataset
//   t3t train        train a model, stream metrics, write a parameter bundle
//   t3t eval         accuracy of a bundle on a dataset split
//   t3t ablate       component-mask table (CSV)
//   t3t sweep-alpha  balance-value table (CSV)
//   t3t analyze      per-frame TS/TD scale table (CSV)
//   t3t gradcheck    finite-difference check of every parameter group
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "t3t/t3t.hpp"

namespace fs = std::filesystem;
using namespace t3t;

namespace {

// Task and model options shared by several subcommands. Only flags that were
// given override the config file (or the defaults).
struct CommonOptions {
  std::string config;
  std::optional<std::string> kind;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n, d, n_train, n_val, n_test, epochs;
  std::optional<double> sigma, mu, drift, alpha, lr;

  void add_task(CLI::App* app) {
    app->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--kind", kind, "task kind: trend, event or mixed");
    app->add_option("--seed", seed, "data and model seed");
    app->add_option("--n", n, "frames per sample");
    app->add_option("--d", d, "feature dimension");
    app->add_option("--n-train", n_train, "training samples");
    app->add_option("--n-val", n_val, "validation samples");
    app->add_option("--n-test", n_test, "test samples");
    app->add_option("--sigma", sigma, "frame noise");
    app->add_option("--mu", mu, "event jump height");
    app->add_option("--drift", drift, "trend displacement");
  }

  void add_model(CLI::App* app) {
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--alpha", alpha, "balance value");
    app->add_option("--lr", lr, "Adam learning rate");
  }

  ModelConfig resolve() const {
    ModelConfig c = config.empty() ? ModelConfig{} : load_config(config);
    if (kind) c.task.kind = parse_task_kind(*kind);
    if (seed) c.seed = c.task.seed = *seed;
    if (n) c.task.N = *n;
    if (d) c.task.D = *d;
    if (n_train) c.task.n_train = *n_train;
    if (n_val) c.task.n_val = *n_val;
    if (n_test) c.task.n_test = *n_test;
    if (sigma) c.task.sigma = *sigma;
    if (mu) c.task.mu = *mu;
    if (drift) c.task.drift = *drift;
    c.sync_with_task();
    if (epochs) c.epochs = *epochs;
    if (alpha) c.alpha = *alpha;
    if (lr) c.optim.lr = *lr;
    c.task.validate();
    c.validate();
    return c;
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << text;
}

std::vector<std::uint64_t> seed_list(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < count; ++i) s.push_back(first + i);
  return s;
}

const std::vector<Sample>& pick_split(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val;
  if (split == "test") return ds.test;
  throw ConfigError("split must be train, val or test, got '" + split + "'");
}

Dataset dataset_for(const ModelConfig& cfg, const std::string& dir) {
  if (dir.empty()) return generate(cfg.task);
  Dataset ds = load_dataset(dir);
  if (ds.spec.N != cfg.N || ds.spec.D != cfg.D || ds.spec.L != cfg.L || ds.spec.M() != cfg.M)
    throw ConfigError("dataset shape (N=" + std::to_string(ds.spec.N) + ", D=" + std::to_string(ds.spec.D) +
                      ", M=" + std::to_string(ds.spec.M()) + ") does not match the model config");
  return ds;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal Trio Transformer on synthetic VideoQA tasks"};
  app.require_subcommand(1);

  // synth
  CommonOptions synth_opt;
  std::string synth_out = "data";
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset directory");
  synth_opt.add_task(synth);
  synth->add_option("--out", synth_out, "output directory");

  // train
  CommonOptions train_opt;
  std::string train_data, train_out = "model", train_metrics;
  std::vector<std::string> train_masks;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a parameter bundle");
  train_opt.add_task(train_cmd);
  train_opt.add_model(train_cmd);
  train_cmd->add_option("--data", train_data, "dataset directory (generated from the config if omitted)");
  train_cmd->add_option("--out", train_out, "bundle directory");
  train_cmd->add_option("--metrics", train_metrics, "metrics JSONL file (stdout if omitted)");
  train_cmd->add_option("--mask", train_masks, "component mask, repeatable");

  // eval
  std::string eval_model, eval_data, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a bundle");
  eval->add_option("--model", eval_model, "bundle directory")->required();
  eval->add_option("--data", eval_data, "dataset directory (regenerated from the bundle config if omitted)");
  eval->add_option("--split", eval_split, "train, val or test");

  // ablate
  CommonOptions ablate_opt;
  std::vector<std::string> ablate_masks;
  std::size_t ablate_seeds = 5;
  unsigned ablate_jobs = 1;
  std::string ablate_out;
  auto* ablate_cmd = app.add_subcommand("ablate", "train every mask over several seeds");
  ablate_opt.add_task(ablate_cmd);
  ablate_opt.add_model(ablate_cmd);
  ablate_cmd->add_option("--mask", ablate_masks, "component mask, repeatable")->required();
  ablate_cmd->add_option("--seeds", ablate_seeds, "number of seeds, counting up from --seed");
  ablate_cmd->add_option("--jobs", ablate_jobs, "concurrent runs");
  ablate_cmd->add_option("--out", ablate_out, "CSV file (stdout if omitted)");

  // sweep-alpha
  CommonOptions sweep_opt;
  std::vector<double> sweep_grid;
  double sweep_step = 0.1;
  std::size_t sweep_seeds = 5;
  unsigned sweep_jobs = 1;
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep-alpha", "train over a grid of balance values");
  sweep_opt.add_task(sweep);
  sweep_opt.add_model(sweep);
  sweep->add_option("--grid", sweep_grid, "alpha values")->delimiter(',');
  sweep->add_option("--step", sweep_step, "grid step over [0,1] when --grid is omitted")->check(CLI::PositiveNumber);
  sweep->add_option("--seeds", sweep_seeds, "number of seeds, counting up from --seed");
  sweep->add_option("--jobs", sweep_jobs, "concurrent runs");
  sweep->add_option("--out", sweep_out, "CSV file (stdout if omitted)");

  // analyze
  std::string an_model, an_data, an_split = "test", an_out, an_detail;
  auto* analyze = app.add_subcommand("analyze", "per-frame TS and TD scale summary");
  analyze->add_option("--model", an_model, "bundle directory")->required();
  analyze->add_option("--data", an_data, "dataset directory (regenerated from the bundle config if omitted)");
  analyze->add_option("--split", an_split, "train, val or test");
  analyze->add_option("--out", an_out, "CSV file (stdout if omitted)");
  analyze->add_option("--detail", an_detail, "per-sample CSV file");

  // gradcheck
  GradcheckOptions gc;
  double gc_tol = 1e-4;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck_cmd->add_option("--seed", gc.seed, "seed");
  gradcheck_cmd->add_option("--n", gc.N, "frames");
  gradcheck_cmd->add_option("--d", gc.D, "feature dimension");
  gradcheck_cmd->add_option("--l", gc.L, "question length");
  gradcheck_cmd->add_option("--m", gc.M, "candidates");
  gradcheck_cmd->add_option("--heads", gc.heads, "attention heads");
  gradcheck_cmd->add_option("--step", gc.h, "finite-difference step");
  gradcheck_cmd->add_option("--tol", gc_tol, "maximum accepted relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*synth) {
      const auto cfg = synth_opt.resolve();
      const auto ds = generate(cfg.task);
      save_dataset(synth_out, ds);
      std::cout << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size() << " samples to "
                << synth_out << "\n";
    } else if (*train_cmd) {
      auto cfg = train_opt.resolve();
      for (const auto& m : train_masks) apply_mask(cfg, m);
      cfg.validate();
      const auto ds = dataset_for(cfg, train_data);
      std::ofstream file;
      if (!train_metrics.empty()) {
        file.open(train_metrics, std::ios::trunc);
        if (!file) throw FormatError("cannot write '" + train_metrics + "'");
      }
      std::ostream& out = train_metrics.empty() ? std::cout : file;
      try {
        auto result = train(cfg, ds, [&](const Metrics& m) { out << metrics_jsonl(m) << "\n" << std::flush; });
        save_bundle(train_out, result.params, cfg);
      } catch (TrainingDiverged& e) {
        const auto rescue = fs::path(train_out) / ("checkpoint-epoch-" + std::to_string(e.checkpoint_epoch));
        save_bundle(rescue, e.checkpoint, cfg);
        throw NumericError(std::string(e.what()) + " (saved to " + rescue.string() + ")");
      }
    } else if (*eval) {
      auto bundle = load_bundle(eval_model);
      const auto ds = dataset_for(bundle.config, eval_data);
      const auto m = evaluate(bundle.params, bundle.config, pick_split(ds, eval_split), eval_split);
      const double chance = 1.0 / static_cast<double>(bundle.config.M);
      std::cout << "{\"split\":\"" << eval_split << "\",\"count\":" << m.count << ",\"accuracy\":" << fmt(m.accuracy)
                << ",\"loss\":" << fmt(m.loss) << ",\"chance\":" << fmt(chance) << "}\n";
    } else if (*ablate_cmd) {
      const auto cfg = ablate_opt.resolve();
      const auto rows = ablate(cfg, ablate_masks, seed_list(cfg.seed, ablate_seeds), ablate_jobs);
      write_text(ablate_out, table_csv(rows));
    } else if (*sweep) {
      const auto cfg = sweep_opt.resolve();
      if (sweep_grid.empty()) {
        const auto steps = static_cast<std::size_t>(std::llround(1.0 / sweep_step));
        for (std::size_t i = 0; i <= steps; ++i) sweep_grid.push_back(std::min(1.0, static_cast<double>(i) * sweep_step));
      }
      const auto rows = sweep_alpha(cfg, sweep_grid, seed_list(cfg.seed, sweep_seeds), sweep_jobs);
      write_text(sweep_out, table_csv(rows, true));
      std::cerr << "best alpha for " << to_string(cfg.task.kind) << ": " << rows[best_row(rows)].name << "\n";
    } else if (*analyze) {
      auto bundle = load_bundle(an_model);
      const auto ds = dataset_for(bundle.config, an_data);
      const auto a = analyze_scales(bundle.params, bundle.config, pick_split(ds, an_split));
      write_text(an_out, scale_csv(a));
      if (!an_detail.empty()) write_text(an_detail, scale_detail_csv(a));
    } else if (*gradcheck_cmd) {
      double worst = 0.0;
      std::printf("%-12s %-20s %6s %12s %12s\n", "variant", "group", "count", "max_abs", "rel_error");
      for (const auto& e : gradcheck(gc)) {
        std::printf("%-12s %-20s %6zu %12.3e %12.3e\n", e.variant.c_str(), e.group.c_str(), e.count, e.max_abs_error,
                    e.rel_error);
        worst = std::max(worst, e.rel_error);
      }
      std::printf("max relative error %.3e (tolerance %.1e)\n", worst, gc_tol);
      if (!(worst <= gc_tol)) {
        std::cerr << "gradcheck: relative error above tolerance\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "t3t: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
