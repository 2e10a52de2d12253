#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "grmc/errors.hpp"

namespace grmc::ad {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string to_string(const Shape& shape);
Index element_count(const Shape& shape);

/// Dense row-major array of rank 1-3. Rank-3 tensors are batch × channels × length.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(Eigen::ArrayXd::Zero(1)) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Eigen::ArrayXd data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value) { return filled({1}, value); }
  static Tensor from_matrix(const Eigen::MatrixXd& m);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Eigen::ArrayXd& data() { return data_; }
  const Eigen::ArrayXd& data() const { return data_; }
  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }

  /// Row-major matrix view over [offset, offset + rows*cols).
  Eigen::Map<RowMajorMatrix> matrix(Index rows, Index cols, Index offset = 0) {
    return {data_.data() + offset, rows, cols};
  }
  Eigen::Map<const RowMajorMatrix> matrix(Index rows, Index cols, Index offset = 0) const {
    return {data_.data() + offset, rows, cols};
  }

  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && (data_ == other.data_).all();
  }

 private:
  Shape shape_;
  Eigen::ArrayXd data_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape{nullptr};
  std::size_t id{0};

  const Tensor& value() const;
  Tensor grad() const;
  const Shape& shape() const { return value().shape(); }
};

/// Append-only record of primitive applications. Node ids are a topological
/// order, so the reverse sweep visits each node exactly once.
class Tape {
 public:
  /// Propagates grad(self) into the parents' gradients.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor value, std::span<const Var> parents, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  Tensor grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Adds `g` into the gradient of `id`; no-op for constants.
  void accumulate(std::size_t id, const Eigen::ArrayXd& g);
  Eigen::ArrayXd& grad_buffer(std::size_t id);

  /// Reverse sweep from a scalar output (seed 1). Clears previous gradients.
  void backward(Var output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Eigen::ArrayXd grad;
    bool requires_grad{false};
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// Primitives. All shape errors name both operand shapes.

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// w[index] · a, with w a tape value (used to weight mixed operations).
Var scale_by(Var a, Var w, Index index);
Var sigmoid(Var a);
Var relu(Var a);
/// Softmax over the last axis.
Var softmax(Var a);
/// Concatenation along axis 1 (channels for rank 3, features for rank 2).
Var concat(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
/// Mean over the last axis; drops it.
Var mean_last(Var a);
/// Swap the last two axes.
Var transpose(Var a);
/// Contracts a's last axis with b's first non-batch axis: (M×K)(K×N),
/// (B×M×K)(K×N) or batched (B×M×K)(B×K×N).
Var matmul(Var a, Var b);
/// x·W + b over the last axis of x.
Var linear(Var x, Var w, Var b);
/// Mean cross-entropy of rank-2 logits against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);
/// All-zero constant of a's shape.
Var zeros_like(Var a);

// Finite-difference gradient check.

using Program = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_relative_error{0};
  std::size_t checked{0};
  /// (input, coordinate) pairs where one-sided differences disagree, i.e. a
  /// nondifferentiable point lies within one step.
  std::vector<std::pair<std::size_t, Index>> excluded;
};

/// Evaluates `program` on constants and returns its scalar output.
double evaluate(const Program& program, std::span<const Tensor> inputs);

/// Reverse-mode gradient versus central differences, coordinate-wise.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport grad_check(const Program& program, std::vector<Tensor> inputs, double step = 1e-4);

}  // namespace grmc::ad
