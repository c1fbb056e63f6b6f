#pragma once

// Temporal smoothing (bridge-pinned features with a learned conv stochastic
// part), temporal differencing and the blend of the two.

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "t3t/ops.hpp"

namespace t3t {

enum class Mode { train, eval };

// N x D per-frame features; row n-1 holds frame n.
struct FrameFeatures {
  Tensor values;

  FrameFeatures() = default;
  explicit FrameFeatures(Tensor v) : values(std::move(v)) {
    if (values.rank() != 2) throw DimensionError("frames: expected N x D, got " + shape_str(values.shape()));
    if (values.rows() < 2) throw ConfigError("frames: N must be >= 2, got " + std::to_string(values.rows()));
  }

  std::size_t N() const { return values.rows(); }
  std::size_t D() const { return values.cols(); }
};

struct TimeSteps {
  std::vector<double> delta;
};

// delta[n] = n / (N - 1) for 0-based n; exactly 0 at the first frame and 1 at the last.
inline TimeSteps uniform_time_steps(std::size_t n) {
  if (n < 2) throw ConfigError("uniform_time_steps: N must be >= 2, got " + std::to_string(n));
  TimeSteps t;
  t.delta.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.delta[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  t.delta.back() = 1.0;
  return t;
}

struct SmoothConfig {
  std::size_t K = 2;
  std::size_t kernel_width = 3;
  double dropout_rate = 0.0;

  void validate() const {
    if (K < 1) throw ConfigError("K must be >= 1");
    if (kernel_width % 2 == 0) throw ConfigError("kernel_width must be odd, got " + std::to_string(kernel_width));
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ConfigError("dropout_rate must lie in [0,1), got " + std::to_string(dropout_rate));
  }
};

struct DiffConfig {
  std::size_t I = 0;
  bool use_softmax = true;

  void validate(std::size_t n) const {
    if (I + 1 >= n)
      throw ConfigError("I must satisfy I + 1 < N, got I=" + std::to_string(I) + " N=" + std::to_string(n));
  }
};

struct BlendConfig {
  double alpha = 0.5;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1], got " + std::to_string(alpha));
  }
};

struct ConvLayer {
  Tensor weights;  // D x D x k
  Tensor bias;     // D
};

// Dropout is drawn from rng only when mode == train and rate > 0.
struct DropoutState {
  Mode mode = Mode::eval;
  std::mt19937_64* rng = nullptr;
};

inline Var dropout(Var x, double rate, DropoutState state) {
  if (state.mode != Mode::train || rate <= 0.0) return x;
  if (!state.rng) throw ContractError("dropout: training mode requires an rng");
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  for (auto& m : mask.data()) m = keep(*state.rng) ? s : 0.0;
  return mul(x, x.tape->constant(std::move(mask)));
}

// W = [conv1d_time, relu]_K over the whole frame sequence.
inline Var stochastic_part(Var f, std::span<ConvLayer> layers, const SmoothConfig& cfg, DropoutState drop = {}) {
  cfg.validate();
  if (layers.size() != cfg.K)
    throw ConfigError("stochastic_part: K=" + std::to_string(cfg.K) + " but " + std::to_string(layers.size()) +
                      " conv layers supplied");
  Tape& tp = *f.tape;
  Var h = f;
  for (auto& layer : layers) {
    if (layer.weights.rank() != 3 || layer.weights.dim(2) != cfg.kernel_width)
      throw ConfigError("stochastic_part: conv weights " + shape_str(layer.weights.shape()) +
                        " disagree with kernel_width=" + std::to_string(cfg.kernel_width));
    h = relu(conv1d_time(h, tp.leaf(layer.weights), tp.leaf(layer.bias)));
    h = dropout(h, cfg.dropout_rate, drop);
  }
  return h;
}

// Row n = (1 - delta_n) f_1 + delta_n f_N + sqrt(delta_n (1 - delta_n)) W_n.
inline Var temporal_smoothing(Var f, Var w, const TimeSteps& t) {
  const auto& F = f.value();
  detail::require_matrix("temporal_smoothing", F);
  detail::require_same("temporal_smoothing", F, w.value());
  const std::size_t n = F.rows();
  if (t.delta.size() != n)
    throw DimensionError("temporal_smoothing: " + std::to_string(t.delta.size()) + " time steps for " +
                         shape_str(F.shape()));
  Tensor start({n, 1}), end({n, 1});
  std::vector<double> spread(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = t.delta[i];
    start[i] = 1.0 - d;
    end[i] = d;
    spread[i] = std::sqrt(d * (1.0 - d));
  }
  Tape& tp = *f.tape;
  Var chord = add(matmul(tp.constant(std::move(start)), slice_rows(f, 0, 1)),
                  matmul(tp.constant(std::move(end)), slice_rows(f, n - 1, n)));
  return add(chord, scale_rows(w, std::move(spread)));
}

// Row n = d_n * softmax(d_n) with d_n = f_n - f_{n-1-I}; rows whose lagged
// frame falls before the sequence start are zero.
inline Var temporal_difference(Var f, const DiffConfig& cfg) {
  const auto& F = f.value();
  detail::require_matrix("temporal_difference", F);
  const std::size_t n = F.rows(), lag = cfg.I + 1;
  cfg.validate(n);
  const std::size_t d = F.cols();
  Var diff = sub(slice_rows(f, lag, n), slice_rows(f, 0, n - lag));
  if (cfg.use_softmax) diff = mul(diff, softmax_rows(diff));
  Var zeros = f.tape->constant(Tensor({lag, d}));
  return concat_rows({zeros, diff});
}

// (1 - alpha) fs + alpha fd; the endpoints return the matching input unchanged.
inline Var blend(Var fs, Var fd, const BlendConfig& cfg) {
  cfg.validate();
  detail::require_same("blend", fs.value(), fd.value());
  if (cfg.alpha == 0.0) return fs;
  if (cfg.alpha == 1.0) return fd;
  return add(scale(fs, 1.0 - cfg.alpha), scale(fd, cfg.alpha));
}

}  // namespace t3t
