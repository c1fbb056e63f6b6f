#pragma once

// Multi-head attention, the shared-parameter temporal fusion, the answer head
// and the cross-entropy objective.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "t3t/ops.hpp"

namespace t3t {

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // D x D, applied as x * W
  Tensor bq, bk, bv, bo;  // D
  std::size_t heads = 1;

  AttentionParams() = default;
  AttentionParams(std::size_t d, std::size_t h)
      : wq({d, d}), wk({d, d}), wv({d, d}), wo({d, d}), bq({d}), bk({d}), bv({d}), bo({d}), heads(h) {
    validate();
  }

  std::size_t width() const { return wq.rows(); }

  void validate() const {
    const std::size_t d = width();
    if (heads == 0 || d % heads != 0)
      throw ConfigError("heads must be a positive divisor of D, got heads=" + std::to_string(heads) +
                        " D=" + std::to_string(d));
    for (const Tensor* w : {&wq, &wk, &wv, &wo})
      if (w->shape() != Shape{d, d}) throw DimensionError("attention: projection " + shape_str(w->shape()));
    for (const Tensor* b : {&bq, &bk, &bv, &bo})
      if (b->size() != d) throw DimensionError("attention: bias " + shape_str(b->shape()));
  }

  // Uniform(-1/sqrt(D), 1/sqrt(D)) projections, zero biases.
  void init(std::mt19937_64& rng) {
    const double a = 1.0 / std::sqrt(static_cast<double>(width()));
    std::uniform_real_distribution<double> u(-a, a);
    for (Tensor* w : {&wq, &wk, &wv, &wo})
      for (auto& v : w->data()) v = u(rng);
    for (Tensor* b : {&bq, &bk, &bv, &bo}) std::fill(b->data().begin(), b->data().end(), 0.0);
  }

  template <class F>
  void for_each(F&& fn) {
    fn("wq", wq), fn("wk", wk), fn("wv", wv), fn("wo", wo);
    fn("bq", bq), fn("bk", bk), fn("bv", bv), fn("bo", bo);
  }
};

struct AttentionOptions {
  bool residual = false;
};

// Per head h: softmax((Q_h K_h^T) / sqrt(D/H)) V_h; heads concatenated and
// projected by Wo. Output has one row per query row.
inline Var attention(Var query, Var key_value, AttentionParams& p, AttentionOptions opt = {}) {
  p.validate();
  const std::size_t d = p.width();
  if (query.value().rank() != 2 || query.cols() != d || key_value.value().rank() != 2 || key_value.cols() != d)
    throw DimensionError("attention: query " + shape_str(query.shape()) + " and key/value " +
                         shape_str(key_value.shape()) + " must both have width " + std::to_string(d));
  Tape& tp = *query.tape;
  Var q = add_row_bias(matmul(query, tp.leaf(p.wq)), tp.leaf(p.bq));
  Var k = add_row_bias(matmul(key_value, tp.leaf(p.wk)), tp.leaf(p.bk));
  Var v = add_row_bias(matmul(key_value, tp.leaf(p.wv)), tp.leaf(p.bv));
  const std::size_t dh = d / p.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Var qh = p.heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = p.heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = p.heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    Var weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv));
    heads.push_back(matmul(weights, vh));
  }
  Var joined = p.heads == 1 ? heads[0] : concat_cols(heads);
  Var out = add_row_bias(matmul(joined, tp.leaf(p.wo)), tp.leaf(p.bo));
  return opt.residual ? add(out, query) : out;
}

// Attention weight matrices (one per head), without recording gradients.
inline std::vector<Tensor> attention_weights(const Tensor& query, const Tensor& key_value, AttentionParams& p) {
  Tape tp;
  Var q = add_row_bias(matmul(tp.constant(query), tp.constant(p.wq)), tp.constant(p.bq));
  Var k = add_row_bias(matmul(tp.constant(key_value), tp.constant(p.wk)), tp.constant(p.bk));
  const std::size_t dh = p.width() / p.heads;
  std::vector<Tensor> out;
  for (std::size_t h = 0; h < p.heads; ++h) {
    Var s = matmul(slice_cols(q, h * dh, (h + 1) * dh), transpose(slice_cols(k, h * dh, (h + 1) * dh)));
    out.push_back(softmax_rows(scale(s, 1.0 / std::sqrt(static_cast<double>(dh)))).value());
  }
  return out;
}

// fQ = Att(f, q); fC = Att(fT, fQ). Both calls go through the same parameter
// instance, so its gradient collects both call sites.
inline Var temporal_fusion(Var frames, Var temporal, Var question, AttentionParams& shared, AttentionOptions opt = {}) {
  Var fq = attention(frames, question, shared, opt);
  return attention(temporal, fq, shared, opt);
}

// H = SelfAtt([fC; q]); logits = Att(candidates, H) * out_weights, shape M x 1.
inline Var answer_predict(Var fused, Var question, Var candidates, AttentionParams& self_params,
                          AttentionParams& head_params, Var out_weights, AttentionOptions opt = {}) {
  Var joint = concat_rows({fused, question});
  Var h = attention(joint, joint, self_params, opt);
  return matmul(attention(candidates, h, head_params, opt), out_weights);
}

// -log softmax(logits)[gold], gold 0-based.
inline Var qa_loss(Var logits, std::size_t gold) {
  const auto& L = logits.value();
  if (L.rank() != 2 || L.cols() != 1) throw DimensionError("qa_loss: logits must be M x 1, got " + shape_str(L.shape()));
  if (gold >= L.rows())
    throw ContractError("qa_loss: gold index " + std::to_string(gold) + " out of range for M=" +
                        std::to_string(L.rows()));
  Var lp = log_softmax_rows(transpose(logits));
  return scale(slice_cols(lp, gold, gold + 1), -1.0);
}

// Lowest index wins ties.
inline std::size_t argmax(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

}  // namespace t3t
