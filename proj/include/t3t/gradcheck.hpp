#pragma once

// Central finite-difference check of the full model's analytic gradients.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "t3t/model.hpp"

namespace t3t {

struct GradcheckOptions {
  std::uint64_t seed = 7;
  std::size_t N = 6;
  std::size_t D = 8;
  std::size_t L = 3;
  std::size_t M = 3;
  std::size_t heads = 2;
  double h = 1e-5;
};

struct GroupError {
  std::string variant;
  std::string group;
  std::size_t count = 0;
  double max_abs_error = 0.0;
  // max |analytic - numeric| / max(max |analytic|, max |numeric|, 1e-6)
  double rel_error = 0.0;
};

// Random sample with distinct candidates.
inline Sample gradcheck_sample(const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> token(0, vocab::size - 1);
  Sample s;
  Tensor f({o.N, o.D});
  for (auto& v : f.data()) v = gauss(rng);
  s.frames = FrameFeatures(std::move(f));
  for (std::size_t l = 0; l < o.L; ++l) s.question_ids.push_back(token(rng));
  std::vector<std::size_t> ids(vocab::size);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::shuffle(ids.begin(), ids.end(), rng);
  s.candidate_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(o.M));
  s.gold = o.seed % o.M;
  return s;
}

inline ModelConfig gradcheck_config(const GradcheckOptions& o) {
  ModelConfig c;
  c.N = o.N;
  c.D = o.D;
  c.L = o.L;
  c.M = o.M;
  c.heads = o.heads;
  c.seed = o.seed;
  c.residual = true;
  c.validate();
  return c;
}

// Model variants that together touch every parameter group and every
// branch of the forward pass.
inline std::vector<std::pair<std::string, ModelConfig>> gradcheck_variants(const GradcheckOptions& o) {
  const ModelConfig base = gradcheck_config(o);
  std::vector<std::pair<std::string, ModelConfig>> out{{"full", base}};
  for (const char* mask : {"w/o-shared", "no-softmax", "I=1,K=1", "only-*t", "only-*q"})
    out.emplace_back(mask, masked(base, mask));
  ModelConfig plain = base;
  plain.residual = false;
  out.emplace_back("no-residual", plain);
  return out;
}

inline double gradcheck_loss(const Sample& s, ModelParams& p, const ModelConfig& cfg) {
  Tape tape;
  return qa_loss(forward(tape, s, p, cfg), s.gold).value().item();
}

inline std::vector<GroupError> gradcheck_model(const std::string& variant, const ModelConfig& cfg, const Sample& s,
                                               double h) {
  ModelParams params = ModelParams::init(cfg);
  params.zero_grad();
  {
    Tape tape;
    Var loss = qa_loss(forward(tape, s, params, cfg), s.gold);
    tape.backward(loss);
  }
  std::vector<GroupError> out;
  params.for_each([&](const std::string& name, Tensor& t) {
    GroupError e{variant, name, t.size()};
    double scale = 1e-6;
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double keep = t[k];
      t[k] = keep + h;
      const double up = gradcheck_loss(s, params, cfg);
      t[k] = keep - h;
      const double down = gradcheck_loss(s, params, cfg);
      t[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = t.grad()[k];
      e.max_abs_error = std::max(e.max_abs_error, std::abs(analytic - numeric));
      scale = std::max({scale, std::abs(analytic), std::abs(numeric)});
    }
    e.rel_error = e.max_abs_error / scale;
    out.push_back(e);
  });
  return out;
}

inline std::vector<GroupError> gradcheck(const GradcheckOptions& o = {}) {
  const Sample s = gradcheck_sample(o);
  std::vector<GroupError> out;
  for (const auto& [name, cfg] : gradcheck_variants(o)) {
    auto part = gradcheck_model(name, cfg, s, o.h);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace t3t
