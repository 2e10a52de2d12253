#include "grmc/fusion_ops.hpp"

#include <cmath>

#include <fmt/format.h>

namespace grmc {

std::string to_string(Primitive p) {
  switch (p) {
    case Primitive::Identity: return "identity";
    case Primitive::ZeroEdge: return "zero_edge";
    case Primitive::Zero: return "zero";
    case Primitive::Sum: return "sum";
    case Primitive::Attention: return "attention";
    case Primitive::LinearGLU: return "linear_glu";
    case Primitive::ConcatFC: return "concat_fc";
  }
  return "?";
}

Primitive second_level_from_string(const std::string& name) {
  for (auto p : kSecondLevelOps) {
    if (to_string(p) == name) return p;
  }
  throw DomainError("unknown second-level operation '" + name + "'");
}

ad::Index OpDescriptor::parameter_count() const {
  ad::Index n = 0;
  for (const auto& s : weight_shapes) n += ad::element_count(s);
  return n;
}

OpDescriptor describe(Primitive p, ad::Index channels) {
  switch (p) {
    case Primitive::Identity:
    case Primitive::ZeroEdge: return {p, Level::First, {}};
    case Primitive::Zero:
    case Primitive::Sum:
    case Primitive::Attention: return {p, Level::Second, {}};
    case Primitive::LinearGLU: return {p, Level::Second, {{channels, channels}, {channels, channels}}};
    case Primitive::ConcatFC: return {p, Level::Second, {{2 * channels, channels}, {channels}}};
  }
  throw DomainError("describe: unknown primitive");
}

OpInstance instantiate(Primitive p, ad::Index channels, Rng& rng) {
  OpInstance op{describe(p, channels), {}};
  const ad::Index fan_in = op.descriptor.weight_shapes.empty() ? 1 : op.descriptor.weight_shapes.front()[0];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (const auto& shape : op.descriptor.weight_shapes) {
    Tensor w(shape);
    for (ad::Index i = 0; i < w.size(); ++i) w[i] = (2.0 * rng.uniform() - 1.0) * bound;
    op.weights.push_back(std::move(w));
  }
  return op;
}

namespace {

void require_same(const char* op, Var x, Var y) {
  if (x.shape() != y.shape()) {
    throw ShapeError(fmt::format("{}: incompatible shapes {} and {}", op, ad::to_string(x.shape()),
                                 ad::to_string(y.shape())));
  }
}

void require_rank3(const char* op, Var x) {
  if (x.shape().size() != 3) {
    throw ShapeError(fmt::format("{}: expected N×C×L input, got {}", op, ad::to_string(x.shape())));
  }
}

}  // namespace

Var identity(Var x) { return x; }

Var zero(Var x) { return ad::zeros_like(x); }

Var zero(Var x, Var y) {
  require_same("zero", x, y);
  return ad::zeros_like(x);
}

Var sum(Var x, Var y) {
  require_same("sum", x, y);
  return ad::add(x, y);
}

Var attention(Var x, Var y) {
  require_rank3("attention", x);
  require_rank3("attention", y);
  if (x.shape()[0] != y.shape()[0] || x.shape()[1] != y.shape()[1]) {
    throw ShapeError(fmt::format("attention: incompatible shapes {} and {}", ad::to_string(x.shape()),
                                 ad::to_string(y.shape())));
  }
  const double c = static_cast<double>(x.shape()[1]);
  const Var queries = ad::transpose(x);  // N×Lq×C
  const Var values = ad::transpose(y);   // N×Lk×C
  const Var scores = ad::scale(ad::matmul(queries, y), 1.0 / std::sqrt(c));  // N×Lq×Lk
  const Var mixed = ad::matmul(ad::softmax(scores), values);                 // N×Lq×C
  return ad::transpose(mixed);
}

Var linear_glu(Var x, Var y, Var w1, Var w2) {
  require_rank3("linear_glu", x);
  require_same("linear_glu", x, y);
  const Var gate = ad::sigmoid(ad::matmul(ad::transpose(y), w2));
  return ad::transpose(ad::mul(ad::matmul(ad::transpose(x), w1), gate));
}

Var concat_fc(Var x, Var y, Var w, Var b) {
  require_rank3("concat_fc", x);
  require_same("concat_fc", x, y);
  const Var joined = ad::transpose(ad::concat(x, y));  // N×L×2C
  return ad::transpose(ad::relu(ad::linear(joined, w, b)));
}

Var apply_binary(Primitive p, Var x, Var y, std::span<const Var> weights) {
  auto need = [&](std::size_t n) {
    if (weights.size() != n) {
      throw ContractError(fmt::format("{} expects {} weight tensors, got {}", to_string(p), n, weights.size()));
    }
  };
  switch (p) {
    case Primitive::Zero: need(0); return zero(x, y);
    case Primitive::Sum: need(0); return sum(x, y);
    case Primitive::Attention: need(0); return attention(x, y);
    case Primitive::LinearGLU: need(2); return linear_glu(x, y, weights[0], weights[1]);
    case Primitive::ConcatFC: need(2); return concat_fc(x, y, weights[0], weights[1]);
    default: throw ContractError(to_string(p) + " is not a second-level operation");
  }
}

}  // namespace grmc
