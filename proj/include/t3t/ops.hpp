#pragma once

// Differentiable primitives over 2-D tensors (plus the rank-3 conv kernel and
// rank-1 bias vectors). Every op validates shapes, computes the forward value
// eagerly and records its vector-Jacobian product on the tape.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "t3t/tensor.hpp"

namespace t3t {

namespace detail {

inline Tape& tape_of(Var a) {
  if (!a.tape) throw ContractError("op: variable is not bound to a tape");
  return *a.tape;
}

inline Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("op: operands recorded on different tapes");
  return tape_of(a);
}

inline void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// c[r x t] += a[r x s] * b[s x t]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t r, std::size_t s, std::size_t t) {
  for (std::size_t i = 0; i < r; ++i) {
    double* ci = c + i * t;
    for (std::size_t k = 0; k < s; ++k) {
      const double aik = a[i * s + k];
      if (aik == 0.0) continue;
      const double* bk = b + k * t;
      for (std::size_t j = 0; j < t; ++j) ci[j] += aik * bk[j];
    }
  }
}

// c[r x s] += g[r x t] * b[s x t]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t r, std::size_t s, std::size_t t) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* gi = g + i * t;
    for (std::size_t k = 0; k < s; ++k) {
      const double* bk = b + k * t;
      double acc = 0.0;
      for (std::size_t j = 0; j < t; ++j) acc += gi[j] * bk[j];
      c[i * s + k] += acc;
    }
  }
}

// c[s x t] += a[r x s]^T * g[r x t]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t r, std::size_t s, std::size_t t) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* gi = g + i * t;
    for (std::size_t k = 0; k < s; ++k) {
      const double aik = a[i * s + k];
      if (aik == 0.0) continue;
      double* ck = c + k * t;
      for (std::size_t j = 0; j < t; ++j) ck[j] += aik * gi[j];
    }
  }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& tp = detail::tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_matrix("matmul", A);
  detail::require_matrix("matmul", B);
  if (A.cols() != B.rows())
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
  const std::size_t r = A.rows(), s = A.cols(), t = B.cols();
  Tensor out({r, t});
  detail::gemm_nn(A.data().data(), B.data().data(), out.data().data(), r, s, t);
  return tp.record(std::move(out), {a, b}, [a, b, r, s, t](Tape& tape, std::span<const double> g) {
    if (tape.needs_grad(a))
      detail::gemm_nt(g.data(), tape.value(b).data().data(), tape.grad_of(a).data(), r, s, t);
    if (tape.needs_grad(b))
      detail::gemm_tn(tape.value(a).data().data(), g.data(), tape.grad_of(b).data(), r, s, t);
  });
}

inline Var add(Var a, Var b) {
  Tape& tp = detail::tape_of(a, b);
  detail::require_same("add", a.value(), b.value());
  Tensor out = a.value();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  out.set_requires_grad(false);
  return tp.record(std::move(out), {a, b}, [a, b](Tape& tape, std::span<const double> g) {
    for (Var v : {a, b}) {
      if (!tape.needs_grad(v)) continue;
      auto gv = tape.grad_of(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  Tape& tp = detail::tape_of(a, b);
  detail::require_same("sub", a.value(), b.value());
  Tensor out = a.value();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  out.set_requires_grad(false);
  return tp.record(std::move(out), {a, b}, [a, b](Tape& tape, std::span<const double> g) {
    if (tape.needs_grad(a)) {
      auto ga = tape.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tape.needs_grad(b)) {
      auto gb = tape.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& tp = detail::tape_of(a, b);
  detail::require_same("mul", a.value(), b.value());
  Tensor out = a.value();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  out.set_requires_grad(false);
  return tp.record(std::move(out), {a, b}, [a, b](Tape& tape, std::span<const double> g) {
    if (tape.needs_grad(a)) {
      auto ga = tape.grad_of(a);
      auto bd = tape.value(b).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
    }
    if (tape.needs_grad(b)) {
      auto gb = tape.grad_of(b);
      auto ad = tape.value(a).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
    }
  });
}

inline Var scale(Var a, double c) {
  Tape& tp = detail::tape_of(a);
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (auto& v : out.data()) v *= c;
  return tp.record(std::move(out), {a}, [a, c](Tape& tape, std::span<const double> g) {
    auto ga = tape.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

// Row r of x multiplied by coeffs[r].
inline Var scale_rows(Var x, std::vector<double> coeffs) {
  Tape& tp = detail::tape_of(x);
  const Tensor& X = x.value();
  detail::require_matrix("scale_rows", X);
  if (coeffs.size() != X.rows())
    throw DimensionError("scale_rows: " + std::to_string(coeffs.size()) + " coefficients for " +
                         shape_str(X.shape()));
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = coeffs[i] * X.at(i, j);
  return tp.record(std::move(out), {x}, [x, r, c, coeffs = std::move(coeffs)](Tape& tape, std::span<const double> g) {
    auto gx = tape.grad_of(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += coeffs[i] * g[i * c + j];
  });
}

// x[R x C] + bias broadcast over rows; bias is [C] or [1 x C].
inline Var add_row_bias(Var x, Var bias) {
  Tape& tp = detail::tape_of(x, bias);
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  detail::require_matrix("add_row_bias", X);
  if (B.size() != X.cols() || (B.rank() == 2 && B.rows() != 1) || B.rank() > 2)
    throw DimensionError("add_row_bias: bias " + shape_str(B.shape()) + " does not fit " + shape_str(X.shape()));
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = X.at(i, j) + B[j];
  return tp.record(std::move(out), {x, bias}, [x, bias, r, c](Tape& tape, std::span<const double> g) {
    if (tape.needs_grad(x)) {
      auto gx = tape.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tape.needs_grad(bias)) {
      auto gb = tape.grad_of(bias);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

// max(x, 0); the subgradient at exactly 0 is 0.
inline Var relu(Var x) {
  Tape& tp = detail::tape_of(x);
  Tensor out = x.value();
  out.set_requires_grad(false);
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return tp.record(std::move(out), {x}, [x](Tape& tape, std::span<const double> g) {
    auto gx = tape.grad_of(x);
    auto xd = tape.value(x).data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xd[i] > 0.0) gx[i] += g[i];
  });
}

inline Var log(Var x) {
  Tape& tp = detail::tape_of(x);
  Tensor out = x.value();
  out.set_requires_grad(false);
  for (auto& v : out.data()) v = std::log(v);
  return tp.record(std::move(out), {x}, [x](Tape& tape, std::span<const double> g) {
    auto gx = tape.grad_of(x);
    auto xd = tape.value(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xd[i];
  });
}

// Row-wise softmax, max-shifted.
inline Var softmax_rows(Var x) {
  Tape& tp = detail::tape_of(x);
  const Tensor& X = x.value();
  detail::require_matrix("softmax_rows", X);
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = X.data().data() + i * c;
    double* yi = out.data().data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < c; ++j) yi[j] /= z;
  }
  std::vector<double> y(out.values());
  return tp.record(std::move(out), {x}, [x, r, c, y = std::move(y)](Tape& tape, std::span<const double> g) {
    auto gx = tape.grad_of(x);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

// Row-wise log-softmax.
inline Var log_softmax_rows(Var x) {
  Tape& tp = detail::tape_of(x);
  const Tensor& X = x.value();
  detail::require_matrix("log_softmax_rows", X);
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out({r, c});
  std::vector<double> prob(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = X.data().data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xi[j] - mx);
    const double lz = std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = xi[j] - mx - lz;
      prob[i * c + j] = std::exp(out.at(i, j));
    }
  }
  return tp.record(std::move(out), {x}, [x, r, c, prob = std::move(prob)](Tape& tape, std::span<const double> g) {
    auto gx = tape.grad_of(x);
    for (std::size_t i = 0; i < r; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] - prob[i * c + j] * total;
    }
  });
}

inline Var transpose(Var x) {
  Tape& tp = detail::tape_of(x);
  const Tensor& X = x.value();
  detail::require_matrix("transpose", X);
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = X.at(i, j);
  return tp.record(std::move(out), {x}, [x, r, c](Tape& tape, std::span<const double> g) {
    auto gx = tape.grad_of(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

// Rows [begin, end).
inline Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Tape& tp = detail::tape_of(x);
  const Tensor& X = x.value();
  detail::require_matrix("slice_rows", X);
  if (begin >= end || end > X.rows())
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + shape_str(X.shape()));
  const std::size_t c = X.cols();
  Tensor out({end - begin, c},
             std::vector<double>(X.data().begin() + begin * c, X.data().begin() + end * c));
  return tp.record(std::move(out), {x}, [x, begin, c](Tape& tape, std::span<const double> g) {
    auto gx = tape.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * c + i] += g[i];
  });
}

// Columns [begin, end).
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tape& tp = detail::tape_of(x);
  const Tensor& X = x.value();
  detail::require_matrix("slice_cols", X);
  if (begin >= end || end > X.cols())
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + shape_str(X.shape()));
  const std::size_t r = X.rows(), c = X.cols(), w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = X.at(i, begin + j);
  return tp.record(std::move(out), {x}, [x, r, c, w, begin](Tape& tape, std::span<const double> g) {
    auto gx = tape.grad_of(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += g[i * w + j];
  });
}

// Stack along axis 0.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& tp = detail::tape_of(parts[0]);
  const std::size_t c = parts[0].value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_matrix("concat_rows", p.value());
    if (p.tape != &tp) throw ContractError("concat_rows: operands recorded on different tapes");
    if (p.value().cols() != c)
      throw DimensionError("concat_rows: width mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    rows += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(rows * c);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tp.record(Tensor({rows, c}, std::move(data)), parts, [inputs](Tape& tape, std::span<const double> g) {
    std::size_t offset = 0;
    for (const auto& p : inputs) {
      const std::size_t n = tape.value(p).size();
      if (tape.needs_grad(p)) {
        auto gp = tape.grad_of(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

// Stack along axis 1.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& tp = detail::tape_of(parts[0]);
  const std::size_t r = parts[0].value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::require_matrix("concat_cols", p.value());
    if (p.tape != &tp) throw ContractError("concat_cols: operands recorded on different tapes");
    if (p.value().rows() != r)
      throw DimensionError("concat_cols: height mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    cols += p.value().cols();
  }
  Tensor out({r, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) out.at(i, offset + j) = P.at(i, j);
    offset += P.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tp.record(std::move(out), parts, [inputs, r, cols](Tape& tape, std::span<const double> g) {
    std::size_t offset = 0;
    for (const auto& p : inputs) {
      const std::size_t w = tape.value(p).cols();
      if (tape.needs_grad(p)) {
        auto gp = tape.grad_of(p);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + offset + j];
      }
      offset += w;
    }
  });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var sum(Var x) {
  Tape& tp = detail::tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return tp.record(Tensor::scalar(s), {x}, [x](Tape& tape, std::span<const double> g) {
    for (auto& v : tape.grad_of(x)) v += g[0];
  });
}

inline Var mean(Var x) {
  Tape& tp = detail::tape_of(x);
  const auto n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return tp.record(Tensor::scalar(s / n), {x}, [x, n](Tape& tape, std::span<const double> g) {
    for (auto& v : tape.grad_of(x)) v += g[0] / n;
  });
}

// Gather rows of table[V x D] by index; backward scatter-adds.
inline Var embedding(Var table, std::vector<std::size_t> ids) {
  Tape& tp = detail::tape_of(table);
  const Tensor& T = table.value();
  detail::require_matrix("embedding", T);
  if (ids.empty()) throw DimensionError("embedding: empty index list");
  const std::size_t d = T.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= T.rows())
      throw DimensionError("embedding: index " + std::to_string(ids[i]) + " out of range for " +
                           shape_str(T.shape()));
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = T.at(ids[i], j);
  }
  return tp.record(std::move(out), {table}, [table, d, ids = std::move(ids)](Tape& tape, std::span<const double> g) {
    auto gt = tape.grad_of(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += g[i * d + j];
  });
}

// 1-D convolution along the time axis of x[N x D] with weights[Dout x Din x k]
// and bias[Dout]; zero padding (k-1)/2 at both ends, stride 1, so the output
// keeps N rows.
inline Var conv1d_time(Var x, Var weights, Var bias) {
  Tape& tp = detail::tape_of(x, weights);
  if (bias.tape != &tp) throw ContractError("conv1d_time: operands recorded on different tapes");
  const Tensor& X = x.value();
  const Tensor& W = weights.value();
  const Tensor& B = bias.value();
  detail::require_matrix("conv1d_time", X);
  if (W.rank() != 3)
    throw DimensionError("conv1d_time: weights must be [Dout x Din x k], got " + shape_str(W.shape()));
  const std::size_t n = X.rows(), din = X.cols(), dout = W.dim(0), k = W.dim(2);
  if (W.dim(1) != din)
    throw DimensionError("conv1d_time: weights " + shape_str(W.shape()) + " do not fit input " +
                         shape_str(X.shape()));
  if (k % 2 == 0) throw ConfigError("conv1d_time: kernel_width must be odd, got " + std::to_string(k));
  if (B.size() != dout)
    throw DimensionError("conv1d_time: bias " + shape_str(B.shape()) + " does not fit weights " +
                         shape_str(W.shape()));
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor out({n, dout});
  const double* xd = X.data().data();
  const double* wd = W.data().data();
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t co = 0; co < dout; ++co) {
      double acc = B[co];
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const double* xs = xd + static_cast<std::size_t>(src) * din;
        const double* wr = wd + co * din * k + j;
        for (std::size_t ci = 0; ci < din; ++ci) acc += wr[ci * k] * xs[ci];
      }
      out.at(t, co) = acc;
    }
  }
  return tp.record(std::move(out), {x, weights, bias},
                   [x, weights, bias, n, din, dout, k, pad](Tape& tape, std::span<const double> g) {
                     const double* xd = tape.value(x).data().data();
                     const double* wd = tape.value(weights).data().data();
                     double* gx = tape.needs_grad(x) ? tape.grad_of(x).data() : nullptr;
                     double* gw = tape.needs_grad(weights) ? tape.grad_of(weights).data() : nullptr;
                     if (tape.needs_grad(bias)) {
                       auto gb = tape.grad_of(bias);
                       for (std::size_t t = 0; t < n; ++t)
                         for (std::size_t co = 0; co < dout; ++co) gb[co] += g[t * dout + co];
                     }
                     for (std::size_t t = 0; t < n; ++t) {
                       for (std::size_t co = 0; co < dout; ++co) {
                         const double go = g[t * dout + co];
                         if (go == 0.0) continue;
                         for (std::size_t j = 0; j < k; ++j) {
                           const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
                           if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
                           const std::size_t s = static_cast<std::size_t>(src) * din;
                           const std::size_t wo = co * din * k + j;
                           if (gx)
                             for (std::size_t ci = 0; ci < din; ++ci) gx[s + ci] += go * wd[wo + ci * k];
                           if (gw)
                             for (std::size_t ci = 0; ci < din; ++ci) gw[wo + ci * k] += go * xd[s + ci];
                         }
                       }
                     }
                   });
}

}  // namespace t3t
