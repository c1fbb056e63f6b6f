#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "t3t/errors.hpp"

namespace t3t {

enum class TaskKind { trend, event, mixed };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::trend: return "trend";
    case TaskKind::event: return "event";
    case TaskKind::mixed: return "mixed";
  }
  return "?";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "trend") return TaskKind::trend;
  if (s == "event") return TaskKind::event;
  if (s == "mixed") return TaskKind::mixed;
  throw ConfigError("kind: unknown task kind '" + std::string(s) + "'");
}

// Synthetic task parameters. Trend samples drift from a random start along one
// of trend_classes directions; event samples carry one decaying jump in one of
// event_classes channel groups.
struct TaskSpec {
  TaskKind kind = TaskKind::mixed;
  std::size_t N = 16;
  std::size_t D = 32;
  std::size_t L = 4;
  std::size_t trend_classes = 2;
  std::size_t event_classes = 3;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  double sigma = 0.1;         // per-channel frame noise
  double mu = 1.0;            // per-channel jump height
  double drift = 0.375;       // trend displacement between first and last frame
  double start_spread = 0.1;  // std of the random per-sample baseline
  double decay = 0.25;        // jump decay factor per frame
  double trend_fraction = 0.5;
  std::uint64_t seed = 1;

  // Candidate count per sample.
  std::size_t M() const {
    switch (kind) {
      case TaskKind::trend: return trend_classes;
      case TaskKind::event: return event_classes;
      case TaskKind::mixed: return trend_classes + event_classes;
    }
    return 0;
  }

  void validate() const {
    if (N < 5) throw ConfigError("task.N must be >= 5, got " + std::to_string(N));
    if (D < 2) throw ConfigError("task.D must be >= 2");
    if (L < 2) throw ConfigError("task.L must be >= 2 (the question names its kind)");
    if (trend_classes < 2 || trend_classes > 8) throw ConfigError("task.trend_classes must lie in [2,8]");
    if (event_classes < 2 || event_classes > 8) throw ConfigError("task.event_classes must lie in [2,8]");
    if (event_classes > D) throw ConfigError("task.event_classes must not exceed D");
    if (!(sigma >= 0.0)) throw ConfigError("task.sigma must be >= 0");
    if (!(mu > 0.0)) throw ConfigError("task.mu must be > 0");
    if (!(drift > 0.0)) throw ConfigError("task.drift must be > 0");
    if (!(start_spread >= 0.0)) throw ConfigError("task.start_spread must be >= 0");
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("task.decay must lie in [0,1)");
    if (!(trend_fraction >= 0.0 && trend_fraction <= 1.0)) throw ConfigError("task.trend_fraction must lie in [0,1]");
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("optim.lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optim.beta1 must lie in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optim.beta2 must lie in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("optim.eps must be > 0");
  }
};

struct ModelConfig {
  std::size_t N = 16;
  std::size_t D = 32;
  std::size_t L = 4;
  std::size_t M = 5;
  std::size_t vocab = 32;
  double alpha = 0.5;
  std::size_t K = 2;
  std::size_t kernel_width = 3;
  std::size_t I = 0;
  bool use_softmax = true;
  std::size_t heads = 4;
  bool residual = true;
  double dropout_rate = 0.0;

  // Component switches used by the ablation masks.
  bool temporal = true;         // false: feed raw frames where the blend would go
  bool question_fusion = true;  // false: skip fQ = Att(f, q), use f as key/value
  bool regrounding = true;      // false: stop at fQ
  bool shared_fusion = true;    // false: a separate block for the second call site

  std::uint64_t seed = 1;
  std::size_t epochs = 30;
  TaskSpec task;
  AdamConfig optim;

  void validate() const {
    if (N < 2) throw ConfigError("N must be >= 2, got " + std::to_string(N));
    if (D < 1) throw ConfigError("D must be >= 1");
    if (L < 1) throw ConfigError("L must be >= 1");
    if (M < 2) throw ConfigError("M must be >= 2, got " + std::to_string(M));
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1], got " + std::to_string(alpha));
    if (K < 1) throw ConfigError("K must be >= 1");
    if (kernel_width % 2 == 0) throw ConfigError("kernel_width must be odd, got " + std::to_string(kernel_width));
    if (heads == 0 || D % heads != 0)
      throw ConfigError("heads must divide D, got heads=" + std::to_string(heads) + " D=" + std::to_string(D));
    if (I + 1 >= N) throw ConfigError("I must satisfy I + 1 < N, got I=" + std::to_string(I));
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
    optim.validate();
  }

  // Model shape follows the task.
  void sync_with_task() {
    N = task.N;
    D = task.D;
    L = task.L;
    M = task.M();
  }
};

}  // namespace t3t
