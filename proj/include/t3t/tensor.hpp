#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "t3t/errors.hpp"

namespace t3t {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major array of doubles. A tensor flagged requires_grad carries a
// same-shaped gradient buffer that backward() accumulates into.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor: shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("tensor: ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  // 1xC matrix.
  static Tensor row(std::initializer_list<double> values) {
    return Tensor({1, values.size()}, std::vector<double>(values));
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double item() const {
    if (data_.size() != 1) throw ContractError("tensor: item() on " + shape_str(shape_));
    return data_[0];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on)
      grad_.assign(data_.size(), 0.0);
    else
      grad_.clear();
  }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  void check_shape() const {
    for (auto d : shape_)
      if (d == 0) throw DimensionError("tensor: zero-sized dimension in " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Ordered record of primitive operations. Nodes are appended by the forward
// pass; backward() replays them in reverse. Parameters enter through leaf(),
// which references the caller's tensor so gradients land in its grad buffer.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const double> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor& t) {
    if (auto it = leaves_.find(&t); it != leaves_.end()) return Var{this, it->second};
    Node n;
    n.external = &t;
    n.needs_grad = t.requires_grad();
    const auto id = push(std::move(n));
    leaves_.emplace(&t, id);
    return Var{this, id};
  }

  Var constant(Tensor t) {
    Node n;
    n.owned = std::move(t);
    return Var{this, push(std::move(n))};
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward back) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(back));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward back) {
    Node n;
    n.owned = std::move(value);
    for (const auto& in : inputs) {
      if (in.tape != this) throw ContractError("tape: input recorded on a different tape");
      n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    }
    if (n.needs_grad) n.back = std::move(back);
    return Var{this, push(std::move(n))};
  }

  const Tensor& value(Var v) const { return nodes_[v.id].ref(); }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator for an input of the node being replayed.
  std::span<double> grad_of(Var v) {
    auto& n = nodes_[v.id];
    if (n.grad.empty()) n.grad.assign(n.ref().size(), 0.0);
    return n.grad;
  }

  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: loss recorded on a different tape");
    if (value(loss).size() != 1)
      throw ContractError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
    for (auto& n : nodes_) n.grad.clear();
    grad_of(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.back) {
        n.back(*this, n.grad);
      } else if (n.external && n.external->requires_grad()) {
        auto g = n.external->grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    Tensor owned;
    Tensor* external = nullptr;
    bool needs_grad = false;
    Backward back;
    std::vector<double> grad;

    const Tensor& ref() const { return external ? *external : owned; }
  };

  std::uint32_t push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::uint32_t> leaves_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace t3t
