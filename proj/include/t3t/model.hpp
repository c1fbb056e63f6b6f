#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "t3t/config.hpp"
#include "t3t/fusion.hpp"
#include "t3t/synth.hpp"
#include "t3t/temporal.hpp"

namespace t3t {

// All trainable tensors of the full model.
struct ModelParams {
  Tensor embedding;  // vocab x D
  std::vector<ConvLayer> conv;
  AttentionParams fusion;      // shared by both temporal-fusion call sites
  AttentionParams fusion_aux;  // second call site when sharing is disabled
  AttentionParams self_att;
  AttentionParams head;
  Tensor out_weights;  // D x 1

  static ModelParams init(const ModelConfig& cfg) {
    cfg.validate();
    if (cfg.vocab < vocab::size) throw ConfigError("vocab must be >= " + std::to_string(vocab::size));
    std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), std::uint64_t{0x1417}};
    std::mt19937_64 rng(seq);
    const std::size_t d = cfg.D;
    const double a = 1.0 / std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> u(-a, a);

    ModelParams p;
    p.embedding = Tensor({cfg.vocab, d});
    for (auto& v : p.embedding.data()) v = u(rng);
    const double ac = 1.0 / std::sqrt(static_cast<double>(d * cfg.kernel_width));
    std::uniform_real_distribution<double> uc(-ac, ac);
    for (std::size_t k = 0; k < cfg.K; ++k) {
      ConvLayer layer{Tensor({d, d, cfg.kernel_width}), Tensor({d})};
      for (auto& v : layer.weights.data()) v = uc(rng);
      p.conv.push_back(std::move(layer));
    }
    for (AttentionParams* ap : {&p.fusion, &p.self_att, &p.head}) {
      *ap = AttentionParams(d, cfg.heads);
      ap->init(rng);
    }
    if (!cfg.shared_fusion) {
      // Same values as the shared block so the two layouts start identical.
      p.fusion_aux = p.fusion;
    }
    p.out_weights = Tensor({d, 1});
    for (auto& v : p.out_weights.data()) v = u(rng);
    p.set_requires_grad(true);
    return p;
  }

  template <class F>
  void for_each(F&& fn) {
    fn("embedding", embedding);
    for (std::size_t k = 0; k < conv.size(); ++k) {
      fn("conv" + std::to_string(k) + ".weights", conv[k].weights);
      fn("conv" + std::to_string(k) + ".bias", conv[k].bias);
    }
    const std::pair<const char*, AttentionParams*> blocks[] = {
        {"fusion", &fusion}, {"fusion_aux", &fusion_aux}, {"self_att", &self_att}, {"head", &head}};
    for (auto [name, block] : blocks) {
      if (block->wq.empty()) continue;
      block->for_each([&](const char* field, Tensor& t) { fn(std::string(name) + "." + field, t); });
    }
    fn("out_weights", out_weights);
  }

  void set_requires_grad(bool on) {
    for_each([&](const std::string&, Tensor& t) { t.set_requires_grad(on); });
  }

  void zero_grad() {
    for_each([](const std::string&, Tensor& t) { t.zero_grad(); });
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each([&](const std::string&, Tensor& t) { n += t.size(); });
    return n;
  }
};

// Intermediate activations of one forward pass, kept for analysis and tests.
struct ForwardTrace {
  Var frames, question, candidates;
  Var stochastic, smooth, difference, temporal, fused, logits;
  bool has_smooth = false, has_difference = false;
};

// Embedding lookup -> TS, TD, blend -> temporal fusion -> answer prediction.
inline Var forward(Tape& tape, const Sample& sample, ModelParams& params, const ModelConfig& cfg,
                   Mode mode = Mode::eval, std::mt19937_64* rng = nullptr, ForwardTrace* trace = nullptr) {
  const auto& F = sample.frames.values;
  if (F.rows() != cfg.N || F.cols() != cfg.D)
    throw ConfigError("forward: sample frames " + shape_str(F.shape()) + " do not match N=" + std::to_string(cfg.N) +
                      " D=" + std::to_string(cfg.D));
  if (sample.question_ids.size() != cfg.L)
    throw ConfigError("forward: question length " + std::to_string(sample.question_ids.size()) +
                      " does not match L=" + std::to_string(cfg.L));
  if (sample.candidate_ids.size() != cfg.M)
    throw ConfigError("forward: " + std::to_string(sample.candidate_ids.size()) + " candidates but M=" +
                      std::to_string(cfg.M));
  if (params.conv.size() != cfg.K)
    throw ConfigError("forward: parameters hold " + std::to_string(params.conv.size()) + " conv layers but K=" +
                      std::to_string(cfg.K));
  if (!cfg.shared_fusion && params.fusion_aux.wq.empty())
    throw ConfigError("forward: unshared fusion requested but parameters have no second fusion block");

  ForwardTrace local;
  ForwardTrace& tr = trace ? *trace : local;
  const AttentionOptions opt{cfg.residual};

  Var f = tape.constant(F);
  Var table = tape.leaf(params.embedding);
  Var q = embedding(table, sample.question_ids);
  Var c = embedding(table, sample.candidate_ids);
  tr.frames = f;
  tr.question = q;
  tr.candidates = c;

  Var ft = f;
  if (cfg.temporal) {
    const SmoothConfig smooth{cfg.K, cfg.kernel_width, cfg.dropout_rate};
    const DiffConfig diff{cfg.I, cfg.use_softmax};
    const BlendConfig mix{cfg.alpha};
    mix.validate();
    Var fs, fd;
    if (cfg.alpha < 1.0) {
      tr.stochastic = stochastic_part(f, params.conv, smooth, DropoutState{mode, rng});
      fs = temporal_smoothing(f, tr.stochastic, uniform_time_steps(cfg.N));
      tr.smooth = fs;
      tr.has_smooth = true;
    }
    if (cfg.alpha > 0.0) {
      fd = temporal_difference(f, diff);
      tr.difference = fd;
      tr.has_difference = true;
    }
    ft = cfg.alpha == 0.0 ? fs : cfg.alpha == 1.0 ? fd : blend(fs, fd, mix);
  }
  tr.temporal = ft;

  AttentionParams& second = cfg.shared_fusion ? params.fusion : params.fusion_aux;
  Var fused;
  if (!cfg.regrounding) {
    fused = attention(f, q, params.fusion, opt);
  } else if (!cfg.question_fusion) {
    fused = attention(ft, f, params.fusion, opt);
  } else {
    Var fq = attention(f, q, params.fusion, opt);
    fused = attention(ft, fq, second, opt);
  }
  tr.fused = fused;
  tr.logits = answer_predict(fused, q, c, params.self_att, params.head, tape.leaf(params.out_weights), opt);
  return tr.logits;
}

inline Tensor predict_logits(const Sample& sample, ModelParams& params, const ModelConfig& cfg) {
  Tape tape;
  return forward(tape, sample, params, cfg).value();
}

// Named component masks. A mask name may combine several entries with ',',
// e.g. "K=1,dropout".
inline const std::vector<std::string>& known_masks() {
  static const std::vector<std::string> names{
      "TS+TD+TF", "TF-only", "TS+TD-only", "only-TS", "only-TD", "only-*q", "only-*t", "w/o-shared",
      "K=1",      "K=2",     "dropout",    "no-dropout", "I=0", "I=1",     "softmax", "no-softmax"};
  return names;
}

inline constexpr double mask_dropout_rate = 0.1;

inline void apply_mask(ModelConfig& cfg, std::string_view mask) {
  std::size_t start = 0;
  while (start <= mask.size()) {
    const auto stop = std::min(mask.find(',', start), mask.size());
    const auto name = mask.substr(start, stop - start);
    if (name == "TS+TD+TF") {
    } else if (name == "TF-only") {
      cfg.temporal = false;
    } else if (name == "TS+TD-only" || name == "only-*t") {
      cfg.question_fusion = false;
    } else if (name == "only-TS") {
      cfg.alpha = 0.0;
    } else if (name == "only-TD") {
      cfg.alpha = 1.0;
    } else if (name == "only-*q") {
      cfg.regrounding = false;
    } else if (name == "w/o-shared") {
      cfg.shared_fusion = false;
    } else if (name == "K=1") {
      cfg.K = 1;
    } else if (name == "K=2") {
      cfg.K = 2;
    } else if (name == "dropout") {
      cfg.dropout_rate = mask_dropout_rate;
    } else if (name == "no-dropout") {
      cfg.dropout_rate = 0.0;
    } else if (name == "I=0") {
      cfg.I = 0;
    } else if (name == "I=1") {
      cfg.I = 1;
    } else if (name == "softmax") {
      cfg.use_softmax = true;
    } else if (name == "no-softmax") {
      cfg.use_softmax = false;
    } else {
      throw ConfigError("unknown mask '" + std::string(name) + "'");
    }
    start = stop + 1;
  }
}

inline ModelConfig masked(ModelConfig cfg, std::string_view mask) {
  apply_mask(cfg, mask);
  cfg.validate();
  return cfg;
}

}  // namespace t3t
