// Acceptance suite. Usage: acceptance <t3t-cli> <work-dir>
// Prints one PASS/FAIL line per criterion and exits nonzero if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "t3t/t3t.hpp"

using namespace t3t;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string cli;
fs::path work;
int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  failures += !o.pass;
  std::printf("%s %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

Tensor gaussian(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = g(rng);
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tree_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) out += fs::relative(f, dir).string() + "\n" + slurp(f);
  return out;
}

// Metrics lines without the wall-clock field.
std::string metrics_without_timing(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line, out;
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    j.erase("wall_seconds");
    out += j.dump() + "\n";
  }
  return out;
}

int run_cli(const std::string& args, const fs::path& dir, const std::string& log) {
  const std::string cmd = "cd " + dir.string() + " && " + cli + " " + args + " > " + log + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome bridge_pinning() {
  std::mt19937_64 rng(101);
  double err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng() % 30, d = 1 + rng() % 40;
    Tensor f = gaussian({n, d}, rng), w = gaussian({n, d}, rng, 5.0);
    Tape tape;
    const Tensor& fs = temporal_smoothing(tape.constant(f), tape.constant(w), uniform_time_steps(n)).value();
    for (std::size_t c = 0; c < d; ++c)
      err = std::max({err, std::abs(fs.at(0, c) - f.at(0, c)), std::abs(fs.at(n - 1, c) - f.at(n - 1, c))});
  }
  return {err <= 1e-12, "max endpoint error " + num(err) + " over 100 pairs"};
}

Outcome chord_deviation() {
  std::mt19937_64 rng(102);
  double err = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 2 + rng() % 30, d = 1 + rng() % 40;
    Tensor f = gaussian({n, d}, rng), w = gaussian({n, d}, rng, 3.0);
    const auto t = uniform_time_steps(n);
    Tape tape;
    const Tensor& fs = temporal_smoothing(tape.constant(f), tape.constant(w), t).value();
    for (std::size_t r = 0; r < n; ++r) {
      double dev = 0.0, wn = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double chord = (1 - t.delta[r]) * f.at(0, c) + t.delta[r] * f.at(n - 1, c);
        dev += (fs.at(r, c) - chord) * (fs.at(r, c) - chord);
        wn += w.at(r, c) * w.at(r, c);
      }
      err = std::max(err, std::abs(std::sqrt(dev) - std::sqrt(t.delta[r] * (1 - t.delta[r]) * wn)));
    }
  }
  return {err <= 1e-10, "max deviation error " + num(err)};
}

Outcome difference_identities() {
  std::mt19937_64 rng(103);
  bool ok = true;
  Tensor f1 = gaussian({12, 1}, rng);
  {
    Tape tape;
    const Tensor& fd = temporal_difference(tape.constant(f1), DiffConfig{0, true}).value();
    ok &= fd.at(0, 0) == 0.0;
    for (std::size_t i = 1; i < 12; ++i) ok &= fd.at(i, 0) == f1.at(i, 0) - f1.at(i - 1, 0);
  }
  const bool first = ok;
  Tensor f = gaussian({10, 6}, rng);
  for (std::size_t interval : {0u, 1u, 2u})
    for (bool sm : {true, false}) {
      Tape tape;
      const Tensor& fd = temporal_difference(tape.constant(f), DiffConfig{interval, sm}).value();
      for (std::size_t i = 0; i <= interval; ++i)
        for (std::size_t c = 0; c < 6; ++c) ok &= fd.at(i, c) == 0.0;
    }
  const bool prefix = ok;
  Tensor f3 = f;
  for (auto& v : f3.data()) v *= 3.0;
  double plain = 0.0, soft = 0.0;
  {
    Tape tape;
    const Tensor& a = temporal_difference(tape.constant(f), DiffConfig{0, false}).value();
    const Tensor& b = temporal_difference(tape.constant(f3), DiffConfig{0, false}).value();
    const Tensor& c = temporal_difference(tape.constant(f), DiffConfig{0, true}).value();
    const Tensor& e = temporal_difference(tape.constant(f3), DiffConfig{0, true}).value();
    for (std::size_t k = 0; k < a.size(); ++k) {
      plain = std::max(plain, std::abs(b[k] - 3.0 * a[k]));
      soft = std::max(soft, std::abs(e[k] - 3.0 * c[k]));
    }
  }
  ok &= plain <= 1e-12 && soft > 1e-3;
  return {ok, std::string("first differences ") + (first ? "exact" : "WRONG") + ", prefix zeros " +
                  (prefix ? "exact" : "WRONG") + ", scaling gap without softmax " + num(plain) + ", with softmax " +
                  num(soft)};
}

Outcome blend_endpoints() {
  std::mt19937_64 rng(104);
  bool ok = true;
  for (int i = 0; i < 20; ++i) {
    Tape tape;
    Var fs = tape.constant(gaussian({16, 32}, rng)), fd = tape.constant(gaussian({16, 32}, rng));
    ok &= blend(fs, fd, {0.0}).value() == fs.value();
    ok &= blend(fs, fd, {1.0}).value() == fd.value();
  }
  return {ok, ok ? "alpha=0 and alpha=1 bit-identical to TS and TD" : "endpoint mismatch"};
}

Outcome gradient_suite() {
  const auto errors = gradcheck({});
  double worst = 0.0;
  std::string where;
  for (const auto& e : errors)
    if (e.rel_error >= worst) worst = e.rel_error, where = e.variant + "/" + e.group;
  return {!errors.empty() && worst <= 1e-4,
          std::to_string(errors.size()) + " groups, max relative error " + num(worst) + " at " + where};
}

Outcome shared_gradient() {
  std::mt19937_64 rng(106);
  const std::size_t d = 32;
  Tensor frames = gaussian({16, d}, rng), temporal = gaussian({16, d}, rng), question = gaussian({4, d}, rng);
  Tensor proj = gaussian({16, d}, rng);
  AttentionParams shared(d, 4);
  shared.init(rng);
  auto first = shared, second = shared;
  for (auto* p : {&shared, &first, &second}) p->for_each([](const char*, Tensor& t) { t.set_requires_grad(true); });
  {
    Tape tape;
    Var out = temporal_fusion(tape.constant(frames), tape.constant(temporal), tape.constant(question), shared, {true});
    tape.backward(sum(mul(out, tape.constant(proj))));
  }
  {
    Tape tape;
    Var fq = attention(tape.constant(frames), tape.constant(question), first, {true});
    Var out = attention(tape.constant(temporal), fq, second, {true});
    tape.backward(sum(mul(out, tape.constant(proj))));
  }
  std::vector<Tensor*> s, a, b;
  shared.for_each([&](const char*, Tensor& t) { s.push_back(&t); });
  first.for_each([&](const char*, Tensor& t) { a.push_back(&t); });
  second.for_each([&](const char*, Tensor& t) { b.push_back(&t); });
  double err = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t k = 0; k < s[i]->size(); ++k)
      err = std::max(err, std::abs(s[i]->grad()[k] - a[i]->grad()[k] - b[i]->grad()[k]));
  return {err <= 1e-10, "max gradient gap " + num(err)};
}

Outcome loss_sanity() {
  double err = 0.0;
  for (std::size_t m : {2u, 3u, 5u}) {
    Tape tape;
    err = std::max(err, std::abs(qa_loss(tape.constant(Tensor({m, 1}, -0.3)), 0).value().item() -
                                 std::log(static_cast<double>(m))));
  }
  bool monotone = true;
  double prev = 1e300;
  for (double g = -5.0; g <= 5.0; g += 0.25) {
    Tape tape;
    const double l = qa_loss(tape.constant(Tensor::matrix({{0.1}, {-0.7}, {g}, {0.4}, {1.2}})), 2).value().item();
    monotone &= l < prev;
    prev = l;
  }
  return {err <= 1e-12 && monotone,
          "max |loss - ln M| " + num(err) + ", strictly decreasing " + (monotone ? "yes" : "no")};
}

// Every training-based criterion shares these runs.
struct Experiments {
  std::vector<TableRow> sweep;                // mixed task, alpha grid
  std::map<TaskKind, std::vector<TableRow>> ablation;  // only-TS, only-TD, full
  double untrained_accuracy = 0.0, untrained_sigma = 0.0, chance = 0.0;
};

const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
const std::vector<std::string> ablation_masks{"only-TS", "only-TD", "TS+TD+TF"};

ModelConfig task_config(TaskKind kind) {
  ModelConfig c;
  c.task.kind = kind;
  c.sync_with_task();
  c.validate();
  return c;
}

Experiments run_experiments() {
  Experiments e;
  {
    const auto cfg = task_config(TaskKind::mixed);
    auto params = ModelParams::init(cfg);
    const auto ds = generate(cfg.task);
    e.untrained_accuracy = evaluate(params, cfg, ds.test, "test", 0).accuracy;
    e.chance = 1.0 / static_cast<double>(cfg.M);
    e.untrained_sigma = std::sqrt(e.chance * (1 - e.chance) / static_cast<double>(ds.test.size()));
  }
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  e.sweep = sweep_alpha(task_config(TaskKind::mixed), grid, seeds);
  detail::write_file(work / "sweep_mixed.csv", table_csv(e.sweep, true));
  for (auto kind : {TaskKind::event, TaskKind::trend}) {
    e.ablation[kind] = ablate(task_config(kind), ablation_masks, seeds);
    detail::write_file(work / ("ablation_" + std::string(to_string(kind)) + ".csv"), table_csv(e.ablation[kind]));
  }
  // Mixed ablation rows are the sweep's endpoints and the default alpha.
  const auto base = task_config(TaskKind::mixed);
  auto row_at = [&](double a) {
    for (const auto& r : e.sweep)
      if (std::abs(r.alpha - a) < 1e-9) return r;
    throw std::runtime_error("alpha " + num(a) + " not on the grid");
  };
  auto& mixed = e.ablation[TaskKind::mixed];
  for (const auto& m : ablation_masks) {
    auto r = row_at(masked(base, m).alpha);
    r.name = m;
    mixed.push_back(r);
  }
  detail::write_file(work / "ablation_mixed.csv", table_csv(mixed));
  return e;
}

Outcome learnability(const Experiments& e) {
  const auto base = task_config(TaskKind::mixed);
  TableRow full;
  for (const auto& r : e.sweep)
    if (std::abs(r.alpha - base.alpha) < 1e-9) full = r;
  const double med = full.median_accuracy();
  const double gap = std::abs(e.untrained_accuracy - e.chance);
  std::string accs;
  for (const auto& r : full.runs) accs += (accs.empty() ? "" : " ") + num(r.test_accuracy);
  return {med >= 0.90 && gap <= 3 * e.untrained_sigma,
          "median test accuracy " + num(med) + " [" + accs + "], untrained " + num(e.untrained_accuracy) +
              " vs chance " + num(e.chance) + " (3 sigma " + num(3 * e.untrained_sigma) + ")"};
}

Outcome ablation_directions(const Experiments& e) {
  auto med = [&](TaskKind k, std::size_t i) { return 100.0 * e.ablation.at(k)[i].median_accuracy(); };
  std::string detail;
  bool ok = true;
  auto check = [&](bool cond, const std::string& what) {
    ok &= cond;
    detail += (detail.empty() ? "" : "; ") + what + (cond ? " ok" : " MISSED");
  };
  for (auto k : {TaskKind::event, TaskKind::trend, TaskKind::mixed}) {
    detail += std::string(detail.empty() ? "" : "; ") + std::string(to_string(k)) + " TS/TD/full " + num(med(k, 0)) + "/" +
              num(med(k, 1)) + "/" + num(med(k, 2));
  }
  check(med(TaskKind::event, 1) >= med(TaskKind::event, 0) + 5.0, "event TD>=TS+5");
  check(med(TaskKind::trend, 0) >= med(TaskKind::trend, 1) + 5.0, "trend TS>=TD+5");
  for (auto k : {TaskKind::event, TaskKind::trend})
    check(med(k, 2) >= std::max(med(k, 0), med(k, 1)) - 2.0, std::string(to_string(k)) + " full within 2");
  check(med(TaskKind::mixed, 2) > std::max(med(TaskKind::mixed, 0), med(TaskKind::mixed, 1)), "mixed full best");
  return {ok, detail};
}

Outcome alpha_sweep(const Experiments& e) {
  const double lo = e.sweep.front().median_accuracy(), hi = e.sweep.back().median_accuracy();
  std::string detail;
  double best = -1.0, best_alpha = 0.0;
  for (const auto& r : e.sweep) {
    detail += (detail.empty() ? "" : " ") + r.name + ":" + num(r.median_accuracy());
    if (r.alpha > 0.0 && r.alpha < 1.0 && r.median_accuracy() > best) best = r.median_accuracy(), best_alpha = r.alpha;
  }
  return {best > lo && best > hi, "best interior alpha " + num(best_alpha) + " (" + num(best) + "); medians " + detail};
}

Outcome scale_analysis() {
  auto cfg = task_config(TaskKind::mixed);
  cfg.task.n_train = 10;
  cfg.task.n_val = 10;
  cfg.task.n_test = 500;
  bool zeros = true;
  double err = 0.0;
  for (std::size_t interval : {0u, 2u}) {
    cfg.I = interval;
    cfg.epochs = 1;
    const auto ds = generate(cfg.task);
    auto params = train(cfg, ds).params;
    const auto a = analyze_scales(params, cfg, ds.test);
    const auto steps = uniform_time_steps(cfg.N);
    for (std::size_t s = 0; s < ds.test.size(); ++s) {
      zeros &= a.deviation[s][0] == 0.0 && a.deviation[s][cfg.N - 1] == 0.0;
      for (std::size_t n = 0; n <= cfg.I; ++n) zeros &= a.td_norm[s][n] == 0.0;
      const Tensor& F = ds.test[s].frames.values;
      Tape tape;
      const Tensor& w =
          stochastic_part(tape.constant(F), params.conv, SmoothConfig{cfg.K, cfg.kernel_width, 0.0}).value();
      std::vector<double> ts(cfg.N);
      for (std::size_t n = 0; n < cfg.N; ++n) {
        const double dl = steps.delta[n], scale = std::sqrt(dl * (1 - dl));
        double norm = 0.0;
        for (std::size_t c = 0; c < cfg.D; ++c) {
          const double v = (1 - dl) * F.at(0, c) + dl * F.at(cfg.N - 1, c) + scale * w.at(n, c);
          norm += v * v;
        }
        ts[n] = std::sqrt(norm);
      }
      const double mx = *std::max_element(ts.begin(), ts.end());
      for (std::size_t n = 0; n < cfg.N; ++n) err = std::max(err, std::abs(a.ts_norm[s][n] - ts[n] / mx));
    }
  }
  return {zeros && err <= 1e-10,
          std::string("structural zeros ") + (zeros ? "exact" : "WRONG") + ", TS column recomputation error " + num(err)};
}

Outcome reproducibility() {
  const fs::path root = work / "repro";
  fs::remove_all(root);
  std::string detail;
  bool ok = true;
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    fs::create_directories(d);
    const std::string small = " --kind event --n-train 40 --n-val 10 --n-test 20 --epochs 2 --seeds 2";
    const std::vector<std::pair<std::string, std::string>> steps{
        {"synth --kind mixed --seed 1 --out data", "synth"},
        {"train --kind mixed --seed 1 --data data --out model --metrics m.jsonl", "train"},
        {"eval --model model --data data", "eval"},
        {"analyze --model model --data data --out scales.csv --detail detail.csv", "analyze"},
        {"ablate" + small + " --mask only-TS --mask only-TD --out ablate.csv", "ablate"},
        {"sweep-alpha" + small + " --step 0.5 --out sweep.csv", "sweep"},
        {"gradcheck --seed 7", "gradcheck"},
    };
    for (const auto& [args, name] : steps) {
      const int code = run_cli(args, d, name + ".out");
      if (code != 0) ok = false, detail += name + " exited " + std::to_string(code) + "; ";
    }
    detail::write_file(d / "metrics.cmp", metrics_without_timing(d / "m.jsonl"));
    fs::remove(d / "m.jsonl");
  }
  const bool same = tree_bytes(root / "a") == tree_bytes(root / "b");
  ok &= same;
  detail += std::string("synth/train/eval/analyze/ablate/sweep-alpha/gradcheck outputs ") +
            (same ? "byte-identical" : "DIFFER") + " across two runs (metrics compared without wall_seconds)";
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: acceptance <t3t-cli> <work-dir>\n");
    return 2;
  }
  cli = fs::absolute(argv[1]).string();
  work = fs::absolute(argv[2]);
  fs::create_directories(work);

  report(1, "bridge pinning", bridge_pinning);
  report(2, "chord deviation", chord_deviation);
  report(3, "difference identities", difference_identities);
  report(4, "blend endpoints", blend_endpoints);
  report(5, "gradient suite", gradient_suite);
  report(6, "shared-parameter gradient", shared_gradient);
  report(7, "loss sanity", loss_sanity);
  report(11, "scale analysis", scale_analysis);
  report(12, "reproducibility", reproducibility);

  const auto t0 = std::chrono::steady_clock::now();
  Experiments e;
  std::string error;
  try {
    e = run_experiments();
  } catch (const std::exception& ex) {
    error = ex.what();
  }
  std::printf("     training runs finished in %.0fs\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  auto shared = [&](auto fn) {
    return [&, fn] { return error.empty() ? fn(e) : Outcome{false, "experiments failed: " + error}; };
  };
  report(8, "learnability", shared(learnability));
  report(9, "ablation directions", shared(ablation_directions));
  report(10, "alpha sweep", shared(alpha_sweep));

  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
