#include "grmc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace grmc::ad {

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "×";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Index element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 3) throw ShapeError("tensor rank must be 1-3, got " + to_string(shape));
  for (auto d : shape) {
    if (d < 1) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(fmt::format("{}: incompatible shapes {} and {}", op, to_string(a), to_string(b)));
}

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError("operands recorded on different tapes");
  return *a.tape;
}

Index last(const Shape& s) { return s.back(); }
Index leading(const Shape& s) { return element_count(s) / s.back(); }

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_ = Eigen::ArrayXd::Zero(element_count(shape_));
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != element_count(shape_)) {
    throw ShapeError(fmt::format("tensor data length {} does not match shape {}", data_.size(), to_string(shape_)));
  }
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
  Tensor t({m.rows(), m.cols()});
  t.matrix(m.rows(), m.cols()) = m;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != size()) {
    throw ShapeError(fmt::format("reshape: cannot view {} as {}", to_string(shape_), to_string(shape)));
  }
  return Tensor(std::move(shape), data_);
}

const Tensor& Var::value() const { return tape->value(id); }
Tensor Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape != this) throw ContractError("parent recorded on a different tape");
    needs = needs || nodes_.at(p.id).requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return {this, nodes_.size() - 1};
}

Tensor Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.size() != n.value.size()) return Tensor::zeros(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

Eigen::ArrayXd& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() != n.value.size()) n.grad = Eigen::ArrayXd::Zero(n.value.size());
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Eigen::ArrayXd& g) {
  if (!nodes_.at(id).requires_grad) return;
  grad_buffer(id) += g;
}

void Tape::backward(Var output) {
  if (output.tape != this) throw ContractError("backward: output recorded on a different tape");
  if (value(output.id).size() != 1) {
    throw ContractError("backward: output must be scalar, got shape " + to_string(value(output.id).shape()));
  }
  for (auto& n : nodes_) n.grad.resize(0);
  grad_buffer(output.id).setConstant(1.0);
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() == n.value.size()) n.backward(*this, id);
  }
}

// ---- primitives ------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
  Tensor out(a.shape(), a.value().data() + b.value().data());
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Eigen::ArrayXd g = tp.grad_buffer(self);
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.shape() != b.shape()) mismatch("mul", a.shape(), b.shape());
  Tensor out(a.shape(), a.value().data() * b.value().data());
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Eigen::ArrayXd g = tp.grad_buffer(self);
    tp.accumulate(a.id, g * tp.value(b.id).data());
    tp.accumulate(b.id, g * tp.value(a.id).data());
  });
}

Var scale(Var a, double factor) {
  Tensor out(a.shape(), a.value().data() * factor);
  return a.tape->record(std::move(out), {a}, [a, factor](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.grad_buffer(self) * factor);
  });
}

Var scale_by(Var a, Var w, Index index) {
  Tape& t = tape_of(a, w);
  if (index < 0 || index >= w.value().size()) {
    throw ShapeError(fmt::format("scale_by: index {} outside weight shape {}", index, to_string(w.shape())));
  }
  const double factor = w.value()[index];
  Tensor out(a.shape(), a.value().data() * factor);
  return t.record(std::move(out), {a, w}, [a, w, index](Tape& tp, std::size_t self) {
    const Eigen::ArrayXd g = tp.grad_buffer(self);
    tp.accumulate(a.id, g * tp.value(w.id)[index]);
    if (tp.requires_grad(w.id)) tp.grad_buffer(w.id)[index] += (g * tp.value(a.id).data()).sum();
  });
}

Var sigmoid(Var a) {
  Tensor out(a.shape(), 1.0 / (1.0 + (-a.value().data()).exp()));
  const std::size_t out_id = a.tape->size();
  return a.tape->record(std::move(out), {a}, [a, out_id](Tape& tp, std::size_t self) {
    const Eigen::ArrayXd& s = tp.value(out_id).data();
    tp.accumulate(a.id, tp.grad_buffer(self) * s * (1.0 - s));
  });
}

Var relu(Var a) {
  Tensor out(a.shape(), a.value().data().max(0.0));
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    const Eigen::ArrayXd mask = (tp.value(a.id).data() > 0.0).cast<double>();
    tp.accumulate(a.id, tp.grad_buffer(self) * mask);
  });
}

Var softmax(Var a) {
  const Index cols = last(a.shape());
  const Index rows = leading(a.shape());
  Tensor out(a.shape());
  auto x = a.value().matrix(rows, cols);
  auto y = out.matrix(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const double top = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - top).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  Tape* tape = a.tape;
  const std::size_t out_id = tape->size();
  return tape->record(std::move(out), {a}, [a, rows, cols, out_id](Tape& tp, std::size_t self) {
    const auto s = tp.value(out_id).matrix(rows, cols);
    const Eigen::ArrayXd g = tp.grad_buffer(self);
    Eigen::Map<const RowMajorMatrix> gm(g.data(), rows, cols);
    Eigen::ArrayXd dx(rows * cols);
    Eigen::Map<RowMajorMatrix> dm(dx.data(), rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const double dot = gm.row(r).dot(s.row(r));
      dm.row(r) = (s.row(r).array() * (gm.row(r).array() - dot)).matrix();
    }
    tp.accumulate(a.id, dx);
  });
}

Var concat(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size() || sa[0] != sb[0] ||
      !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2)) {
    mismatch("concat", sa, sb);
  }
  const Index outer = sa[0];
  const Index block_a = a.value().size() / outer;
  const Index block_b = b.value().size() / outer;
  Shape so = sa;
  so[1] = sa[1] + sb[1];
  Tensor out(so);
  for (Index i = 0; i < outer; ++i) {
    out.data().segment(i * (block_a + block_b), block_a) = a.value().data().segment(i * block_a, block_a);
    out.data().segment(i * (block_a + block_b) + block_a, block_b) = b.value().data().segment(i * block_b, block_b);
  }
  return t.record(std::move(out), {a, b}, [a, b, outer, block_a, block_b](Tape& tp, std::size_t self) {
    const Eigen::ArrayXd& g = tp.grad_buffer(self);
    Eigen::ArrayXd ga(outer * block_a), gb(outer * block_b);
    for (Index i = 0; i < outer; ++i) {
      ga.segment(i * block_a, block_a) = g.segment(i * (block_a + block_b), block_a);
      gb.segment(i * block_b, block_b) = g.segment(i * (block_a + block_b) + block_a, block_b);
    }
    tp.accumulate(a.id, ga);
    tp.accumulate(b.id, gb);
  });
}

Var sum(Var a) {
  Tensor out = Tensor::scalar(a.value().data().sum());
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self)[0];
    tp.accumulate(a.id, Eigen::ArrayXd::Constant(tp.value(a.id).size(), g));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mean_last(Var a) {
  const Index cols = last(a.shape());
  const Index rows = leading(a.shape());
  Shape so(a.shape().begin(), a.shape().end() - 1);
  if (so.empty()) so = {1};
  Tensor out(so, a.value().matrix(rows, cols).rowwise().mean().array());
  return a.tape->record(std::move(out), {a}, [a, rows, cols](Tape& tp, std::size_t self) {
    const Eigen::ArrayXd& g = tp.grad_buffer(self);
    Eigen::ArrayXd dx(rows * cols);
    for (Index r = 0; r < rows; ++r) dx.segment(r * cols, cols).setConstant(g[r] / static_cast<double>(cols));
    tp.accumulate(a.id, dx);
  });
}

namespace {

Eigen::ArrayXd transpose_data(const Eigen::ArrayXd& src, Index batch, Index rows, Index cols) {
  Eigen::ArrayXd dst(src.size());
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<const RowMajorMatrix> s(src.data() + b * rows * cols, rows, cols);
    Eigen::Map<RowMajorMatrix> d(dst.data() + b * rows * cols, cols, rows);
    d = s.transpose();
  }
  return dst;
}

}  // namespace

Var transpose(Var a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("transpose: need rank >= 2, got " + to_string(s));
  const Index rows = s[s.size() - 2];
  const Index cols = s.back();
  const Index batch = element_count(s) / (rows * cols);
  Shape so = s;
  std::swap(so[so.size() - 2], so.back());
  Tensor out(so, transpose_data(a.value().data(), batch, rows, cols));
  return a.tape->record(std::move(out), {a}, [a, batch, rows, cols](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, transpose_data(tp.grad_buffer(self), batch, cols, rows));
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa.back() != sb[sb.size() - 2]) mismatch("matmul", sa, sb);

  if (sb.size() == 2) {
    // (..., M, K) flattened against (K, N)
    const Index k = sa.back();
    const Index m = element_count(sa) / k;
    const Index n = sb[1];
    Shape so = sa;
    so.back() = n;
    Tensor out(so);
    out.matrix(m, n) = a.value().matrix(m, k) * b.value().matrix(k, n);
    return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& tp, std::size_t self) {
      Eigen::Map<const RowMajorMatrix> g(tp.grad_buffer(self).data(), m, n);
      if (tp.requires_grad(a.id)) {
        RowMajorMatrix da = g * tp.value(b.id).matrix(k, n).transpose();
        tp.accumulate(a.id, Eigen::Map<const Eigen::ArrayXd>(da.data(), da.size()));
      }
      if (tp.requires_grad(b.id)) {
        RowMajorMatrix db = tp.value(a.id).matrix(m, k).transpose() * g;
        tp.accumulate(b.id, Eigen::Map<const Eigen::ArrayXd>(db.data(), db.size()));
      }
    });
  }

  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0]) mismatch("matmul", sa, sb);
  const Index batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
  Tensor out({batch, m, n});
  for (Index i = 0; i < batch; ++i) {
    out.matrix(m, n, i * m * n) = a.value().matrix(m, k, i * m * k) * b.value().matrix(k, n, i * k * n);
  }
  return t.record(std::move(out), {a, b}, [a, b, batch, m, k, n](Tape& tp, std::size_t self) {
    const Eigen::ArrayXd& gbuf = tp.grad_buffer(self);
    Eigen::ArrayXd da = Eigen::ArrayXd::Zero(batch * m * k);
    Eigen::ArrayXd db = Eigen::ArrayXd::Zero(batch * k * n);
    for (Index i = 0; i < batch; ++i) {
      Eigen::Map<const RowMajorMatrix> g(gbuf.data() + i * m * n, m, n);
      Eigen::Map<RowMajorMatrix>(da.data() + i * m * k, m, k) = g * tp.value(b.id).matrix(k, n, i * k * n).transpose();
      Eigen::Map<RowMajorMatrix>(db.data() + i * k * n, k, n) = tp.value(a.id).matrix(m, k, i * m * k).transpose() * g;
    }
    tp.accumulate(a.id, da);
    tp.accumulate(b.id, db);
  });
}

Var linear(Var x, Var w, Var b) {
  const Shape& sw = w.shape();
  if (sw.size() != 2 || b.value().size() != sw[1] || b.shape().size() != 1) mismatch("linear", sw, b.shape());
  Var y = matmul(x, w);
  Tape& t = tape_of(y, b);
  const Index n = sw[1];
  const Index rows = y.value().size() / n;
  Tensor out = y.value();
  out.matrix(rows, n).rowwise() += b.value().data().matrix().transpose();
  return t.record(std::move(out), {y, b}, [y, b, rows, n](Tape& tp, std::size_t self) {
    const Eigen::ArrayXd g = tp.grad_buffer(self);
    tp.accumulate(y.id, g);
    Eigen::Map<const RowMajorMatrix> gm(g.data(), rows, n);
    tp.accumulate(b.id, gm.colwise().sum().transpose().array());
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != static_cast<Index>(labels.size())) {
    mismatch("cross_entropy", s, Shape{static_cast<Index>(labels.size())});
  }
  const Index rows = s[0], cols = s[1];
  const auto x = logits.value().matrix(rows, cols);
  RowMajorMatrix p(rows, cols);
  double loss = 0.0;
  for (Index r = 0; r < rows; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= cols) throw ShapeError(fmt::format("cross_entropy: label {} outside {} classes", y, cols));
    const double top = x.row(r).maxCoeff();
    p.row(r) = (x.row(r).array() - top).exp().matrix();
    const double z = p.row(r).sum();
    p.row(r) /= z;
    loss += -(x(r, y) - top - std::log(z));
  }
  loss /= static_cast<double>(rows);
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape->record(Tensor::scalar(loss), {logits},
                             [logits, p = std::move(p), ys = std::move(ys), rows, cols](Tape& tp, std::size_t self) {
                               const double g = tp.grad_buffer(self)[0];
                               RowMajorMatrix d = p;
                               for (Index r = 0; r < rows; ++r) d(r, ys[static_cast<std::size_t>(r)]) -= 1.0;
                               d *= g / static_cast<double>(rows);
                               tp.accumulate(logits.id, Eigen::Map<const Eigen::ArrayXd>(d.data(), rows * cols));
                             });
}

Var zeros_like(Var a) { return a.tape->constant(Tensor::zeros(a.shape())); }

// ---- gradient check ----------------------------------------------------------

double evaluate(const Program& program, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.constant(in));
  const Var out = program(tape, vars);
  if (out.value().size() != 1) {
    throw ContractError("grad_check: program output must be scalar, got shape " + to_string(out.shape()));
  }
  return out.value()[0];
}

GradCheckReport grad_check(const Program& program, std::vector<Tensor> inputs, double step) {
  if (!(step > 0.0)) throw DomainError("grad_check: step must be > 0");

  Tape tape;
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(in));
  const Var out = program(tape, vars);
  if (out.value().size() != 1) {
    throw ContractError("grad_check: program output must be scalar, got shape " + to_string(out.shape()));
  }
  tape.backward(out);
  std::vector<Tensor> analytic;
  for (const auto& v : vars) analytic.push_back(v.grad());

  GradCheckReport report;
  const double f0 = out.value()[0];
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Index c = 0; c < inputs[i].size(); ++c) {
      const double x0 = inputs[i][c];
      inputs[i][c] = x0 + step;
      const double fp = evaluate(program, inputs);
      inputs[i][c] = x0 - step;
      const double fm = evaluate(program, inputs);
      inputs[i][c] = x0;

      const double right = (fp - f0) / step;
      const double left = (f0 - fm) / step;
      if (std::abs(right - left) > 1e-2 * std::max({1.0, std::abs(right), std::abs(left)})) {
        report.excluded.emplace_back(i, c);
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[i][c];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      report.max_relative_error = std::max(report.max_relative_error, rel);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace grmc::ad
