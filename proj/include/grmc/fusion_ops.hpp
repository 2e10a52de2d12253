#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "grmc/random.hpp"
#include "grmc/tensor.hpp"

namespace grmc {

using ad::Tensor;
using ad::Var;

/// The seven search-space primitives. First level: Identity, ZeroEdge.
/// Second level: Zero, Sum, Attention, LinearGLU, ConcatFC.
enum class Primitive { Identity, ZeroEdge, Zero, Sum, Attention, LinearGLU, ConcatFC };

enum class Level { First, Second };

inline constexpr std::array<Primitive, 2> kFirstLevelOps{Primitive::Identity, Primitive::ZeroEdge};
inline constexpr std::array<Primitive, 5> kSecondLevelOps{Primitive::Zero, Primitive::Sum, Primitive::Attention,
                                                          Primitive::LinearGLU, Primitive::ConcatFC};

std::string to_string(Primitive p);
/// Second-level names only ("zero", "sum", "attention", "linear_glu", "concat_fc").
Primitive second_level_from_string(const std::string& name);

struct OpDescriptor {
  Primitive primitive;
  Level level;
  std::vector<ad::Shape> weight_shapes;

  bool binary() const { return level == Level::Second; }
  ad::Index parameter_count() const;
};

/// Descriptor for an op acting on tensors with `channels` channels.
OpDescriptor describe(Primitive p, ad::Index channels);

struct OpInstance {
  OpDescriptor descriptor;
  std::vector<Tensor> weights;
};

/// Fresh weights, uniform in ±1/sqrt(fan_in). Biases use the fan-in of
/// their layer.
OpInstance instantiate(Primitive p, ad::Index channels, Rng& rng);

// The ops themselves. Binary ops map (N×C×L, N×C×L) → N×C×L.

Var identity(Var x);
Var zero(Var x);
Var zero(Var x, Var y);
Var sum(Var x, Var y);
/// softmax(x̃ ỹᵀ / sqrt(C)) ỹ per batch element, x̃ = xᵀ (L×C tokens); back to N×C×L.
Var attention(Var x, Var y);
/// (x W1) ⊙ sigmoid(y W2), W acting on the channel axis per position.
Var linear_glu(Var x, Var y, Var w1, Var w2);
/// relu([x, y] W + b), concatenating channels, W: 2C×C, b: C.
Var concat_fc(Var x, Var y, Var w, Var b);

/// Apply a second-level primitive with its weights bound on the tape.
Var apply_binary(Primitive p, Var x, Var y, std::span<const Var> weights);

}  // namespace grmc
