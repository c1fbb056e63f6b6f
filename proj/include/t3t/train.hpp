#pragma once

// Training and evaluation loops plus the experiment harness built on them:
// component ablations, the alpha sweep and the per-frame scale analysis.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "t3t/model.hpp"
#include "t3t/optim.hpp"
#include "t3t/synth.hpp"

namespace t3t {

struct Metrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> trend_accuracy;
  std::optional<double> event_accuracy;
  double wall_seconds = 0.0;
  std::size_t count = 0;
};

namespace detail {

struct Tally {
  double loss = 0.0;
  std::size_t n = 0, correct = 0;
  std::size_t kind_n[2] = {0, 0}, kind_correct[2] = {0, 0};

  void add(const Sample& s, double l, bool hit) {
    loss += l;
    ++n;
    correct += hit;
    const int k = s.kind == TaskKind::event ? 1 : 0;
    ++kind_n[k];
    kind_correct[k] += hit;
  }

  Metrics finish(std::size_t epoch, std::string split, double seconds) const {
    Metrics m;
    m.epoch = epoch;
    m.split = std::move(split);
    m.count = n;
    m.loss = n ? loss / static_cast<double>(n) : 0.0;
    m.accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
    if (kind_n[0]) m.trend_accuracy = static_cast<double>(kind_correct[0]) / static_cast<double>(kind_n[0]);
    if (kind_n[1]) m.event_accuracy = static_cast<double>(kind_correct[1]) / static_cast<double>(kind_n[1]);
    m.wall_seconds = seconds;
    return m;
  }
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline Metrics evaluate(ModelParams& params, const ModelConfig& cfg, const std::vector<Sample>& samples,
                        std::string split, std::size_t epoch = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally tally;
  for (const auto& s : samples) {
    Tape tape;
    Var logits = forward(tape, s, params, cfg, Mode::eval);
    const double l = qa_loss(logits, s.gold).value().item();
    tally.add(s, l, argmax(logits.value()) == s.gold);
  }
  return tally.finish(epoch, std::move(split), detail::seconds_since(t0));
}

class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, ModelParams checkpoint, std::size_t checkpoint_epoch)
      : NumericError(what), checkpoint(std::move(checkpoint)), checkpoint_epoch(checkpoint_epoch) {}

  ModelParams checkpoint;
  std::size_t checkpoint_epoch;
};

struct TrainResult {
  std::vector<Metrics> history;  // epoch 0 (untrained) train/val, then train/val per epoch
  Metrics test;
  ModelParams params;
};

using MetricsSink = std::function<void(const Metrics&)>;

// Per-sample Adam (batch size 1) on cross-entropy. The sample order of each
// epoch, dropout masks and initial parameters all derive from cfg.seed.
inline TrainResult train(const ModelConfig& cfg, const Dataset& data, const MetricsSink& sink = {}) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("train: empty training split");
  TrainResult result;
  result.params = ModelParams::init(cfg);
  auto& params = result.params;
  auto named = named_parameters(params);
  OptimizerState opt;
  opt.cfg = cfg.optim;
  std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), std::uint64_t{0x5eed}};
  std::mt19937_64 rng(seq);

  auto emit = [&](Metrics m) {
    if (sink) sink(m);
    result.history.push_back(std::move(m));
  };
  emit(evaluate(params, cfg, data.train, "train", 0));
  if (!data.val.empty()) emit(evaluate(params, cfg, data.val, "val", 0));

  ModelParams checkpoint = params;
  std::size_t checkpoint_epoch = 0;
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    detail::Tally tally;
    for (std::size_t idx : order) {
      const Sample& s = data.train[idx];
      params.zero_grad();
      Tape tape;
      Var logits = forward(tape, s, params, cfg, Mode::train, &rng);
      Var loss = qa_loss(logits, s.gold);
      const double l = loss.value().item();
      if (!std::isfinite(l))
        throw TrainingDiverged("train: loss became non-finite at epoch " + std::to_string(epoch) +
                                   "; last good checkpoint is epoch " + std::to_string(checkpoint_epoch),
                               checkpoint, checkpoint_epoch);
      tape.backward(loss);
      try {
        adam_step(named, opt);
      } catch (const NumericError& e) {
        throw TrainingDiverged(std::string(e.what()) + "; last good checkpoint is epoch " +
                                   std::to_string(checkpoint_epoch),
                               checkpoint, checkpoint_epoch);
      }
      tally.add(s, l, argmax(logits.value()) == s.gold);
    }
    emit(tally.finish(epoch, "train", detail::seconds_since(t0)));
    if (!data.val.empty()) emit(evaluate(params, cfg, data.val, "val", epoch));
    checkpoint = params;
    checkpoint_epoch = epoch;
  }
  result.test = evaluate(params, cfg, data.test, "test", cfg.epochs);
  if (sink) sink(result.test);
  return result;
}

// ---------------------------------------------------------------------------
// Experiment harness

struct RunSummary {
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  double train_loss_initial = 0.0;
  double train_loss_final = 0.0;
};

struct TableRow {
  std::string name;  // mask name or alpha value
  double alpha = 0.0;
  std::vector<RunSummary> runs;

  double median_accuracy() const {
    std::vector<double> acc;
    for (const auto& r : runs) acc.push_back(r.test_accuracy);
    if (acc.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(acc.begin(), acc.end());
    const std::size_t n = acc.size();
    return n % 2 ? acc[n / 2] : 0.5 * (acc[n / 2 - 1] + acc[n / 2]);
  }
};

// Data and model seeds for run i of an experiment: the task seed and the
// model seed both advance together so every mask sees the same datasets.
inline ModelConfig seeded(ModelConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.task.seed = seed;
  return cfg;
}

inline RunSummary summarize(std::uint64_t seed, const TrainResult& r) {
  RunSummary s;
  s.seed = seed;
  s.test_accuracy = r.test.accuracy;
  s.test_loss = r.test.loss;
  for (const auto& m : r.history) {
    if (m.split != "train") continue;
    if (m.epoch == 0) s.train_loss_initial = m.loss;
    s.train_loss_final = m.loss;
  }
  return s;
}

// Runs every (config, seed) pair. Datasets are generated once per seed and
// shared by all configs; jobs > 1 spreads runs across threads.
inline std::vector<std::vector<RunSummary>> run_grid(const std::vector<ModelConfig>& configs,
                                                     const std::vector<std::uint64_t>& seeds, unsigned jobs = 1) {
  if (configs.empty()) return {};
  std::map<std::uint64_t, Dataset> datasets;
  for (auto seed : seeds) datasets.emplace(seed, generate(seeded(configs.front(), seed).task));
  for (const auto& c : configs) {
    c.validate();
    if (c.task.kind != configs.front().task.kind || c.task.N != configs.front().task.N)
      throw ConfigError("run_grid: all configs must share one task");
  }

  std::vector<std::vector<RunSummary>> out(configs.size(), std::vector<RunSummary>(seeds.size()));
  std::vector<std::pair<std::size_t, std::size_t>> work;
  for (std::size_t i = 0; i < configs.size(); ++i)
    for (std::size_t j = 0; j < seeds.size(); ++j) work.emplace_back(i, j);

  auto run_one = [&](std::size_t w) {
    const auto [i, j] = work[w];
    const auto cfg = seeded(configs[i], seeds[j]);
    out[i][j] = summarize(seeds[j], train(cfg, datasets.at(seeds[j])));
  };
  if (jobs <= 1) {
    for (std::size_t w = 0; w < work.size(); ++w) run_one(w);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> pool;
    for (unsigned t = 0; t < jobs; ++t)
      pool.push_back(std::async(std::launch::async, [&] {
        for (std::size_t w; (w = next.fetch_add(1)) < work.size();) run_one(w);
      }));
    for (auto& f : pool) f.get();
  }
  return out;
}

inline std::vector<TableRow> ablate(const ModelConfig& base, const std::vector<std::string>& masks,
                                    const std::vector<std::uint64_t>& seeds, unsigned jobs = 1) {
  std::vector<ModelConfig> configs;
  for (const auto& m : masks) configs.push_back(masked(base, m));
  auto runs = run_grid(configs, seeds, jobs);
  std::vector<TableRow> rows;
  for (std::size_t i = 0; i < masks.size(); ++i) rows.push_back({masks[i], configs[i].alpha, std::move(runs[i])});
  return rows;
}

inline std::vector<TableRow> sweep_alpha(const ModelConfig& base, const std::vector<double>& grid,
                                         const std::vector<std::uint64_t>& seeds, unsigned jobs = 1) {
  std::vector<ModelConfig> configs;
  for (double a : grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("sweep_alpha: alpha must lie in [0,1], got " + std::to_string(a));
    ModelConfig c = base;
    c.alpha = a;
    configs.push_back(c);
  }
  auto runs = run_grid(configs, seeds, jobs);
  std::vector<TableRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%.6g", grid[i]);
    rows.push_back({name, grid[i], std::move(runs[i])});
  }
  return rows;
}

// Index of the row with the highest median accuracy; lowest index on ties.
inline std::size_t best_row(const std::vector<TableRow>& rows) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].median_accuracy() > rows[best].median_accuracy()) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Per-frame scale analysis

struct Summary {
  double min = 0.0, max = 0.0, mean = 0.0, std = 0.0;
};

inline Summary summarize_values(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(acc / static_cast<double>(v.size()));
  return s;
}

struct ScaleRow {
  std::size_t frame = 0;  // 1-based
  double delta = 0.0;
  Summary ts;         // ||TS row|| / max over the sample's rows
  Summary td;         // ||TD row|| / max over the sample's rows
  Summary deviation;  // ||TS row - chord row||, unnormalized
};

struct ScaleAnalysis {
  std::vector<ScaleRow> rows;
  // [sample][frame] raw values behind the summaries.
  std::vector<std::vector<double>> ts_norm, td_norm, deviation;
};

namespace detail {

inline double row_norm(const Tensor& t, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(r, c) * t.at(r, c);
  return std::sqrt(s);
}

inline std::vector<double> normalized(std::vector<double> v) {
  const double mx = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  for (auto& x : v) x = mx > 0.0 ? x / mx : 0.0;
  return v;
}

}  // namespace detail

// TS and TD outputs per frame over a set of samples, whatever alpha the
// model was trained with.
inline ScaleAnalysis analyze_scales(ModelParams& params, const ModelConfig& cfg, const std::vector<Sample>& samples) {
  cfg.validate();
  const auto steps = uniform_time_steps(cfg.N);
  const SmoothConfig smooth{cfg.K, cfg.kernel_width, cfg.dropout_rate};
  const DiffConfig diff{cfg.I, cfg.use_softmax};
  ScaleAnalysis out;
  for (const auto& s : samples) {
    Tape tape;
    Var f = tape.constant(s.frames.values);
    Var w = stochastic_part(f, params.conv, smooth);
    const Tensor& fs = temporal_smoothing(f, w, steps).value();
    const Tensor& fd = temporal_difference(f, diff).value();
    const Tensor& F = s.frames.values;
    const std::size_t n = F.rows(), d = F.cols();
    std::vector<double> ts(n), td(n), dev(n);
    for (std::size_t i = 0; i < n; ++i) {
      ts[i] = detail::row_norm(fs, i);
      td[i] = detail::row_norm(fd, i);
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double chord = (1.0 - steps.delta[i]) * F.at(0, c) + steps.delta[i] * F.at(n - 1, c);
        acc += (fs.at(i, c) - chord) * (fs.at(i, c) - chord);
      }
      dev[i] = std::sqrt(acc);
    }
    out.ts_norm.push_back(detail::normalized(std::move(ts)));
    out.td_norm.push_back(detail::normalized(std::move(td)));
    out.deviation.push_back(std::move(dev));
  }
  for (std::size_t i = 0; i < cfg.N; ++i) {
    std::vector<double> ts, td, dev;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      ts.push_back(out.ts_norm[k][i]);
      td.push_back(out.td_norm[k][i]);
      dev.push_back(out.deviation[k][i]);
    }
    out.rows.push_back({i + 1, steps.delta[i], summarize_values(ts), summarize_values(td), summarize_values(dev)});
  }
  return out;
}

}  // namespace t3t
