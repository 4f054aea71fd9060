#pragma once

#include <cstdint>

#include "fmtk/autodiff.hpp"
#include "fmtk/kernels.hpp"

// Differentiable tensor operations. Each op computes its forward value
// eagerly and, when any input requires grad, records its backward rule on
// that input's tape.
namespace fmtk {

Var matmul(const Var& a, const Var& b);

// x Wᵀ + b over the last axis; W is [out, in], bias may be omitted.
Var linear(const Var& x, const Var& weight, const Var* bias = nullptr);
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  return linear(x, weight, &bias);
}

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_squares(const Var& a);

Var relu(const Var& x);
Var gelu(const Var& x);
Var softmax(const Var& x);
Var layernorm(const Var& x, const Var& gain, const Var& shift, double eps = 1e-5);

Var reshape(const Var& x, Shape shape);

// x is [S*T, E]; adds rows [0, T) of table (>= T rows) to every length-T
// block of x.
Var add_positional(const Var& x, const Var& table, std::size_t tokens);

// Means of consecutive row blocks of the matrix view.
Var mean_row_groups(const Var& x, std::size_t group);

// Multi-head scaled dot-product attention over independent length-`tokens`
// sequences. q, k, v are [S*tokens, E] with E divisible by heads.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t tokens, std::size_t heads);

// x [B, C_in, L], W [C_out, C_in], bias [C_out] -> [B, C_out, L].
Var channel_mix(const Var& x, const Var& weight, const Var& bias);

// Inverted dropout keyed by (seed, stream, step); identity when p == 0.
Var dropout(const Var& x, double p, std::uint64_t seed, std::uint64_t stream, std::uint64_t step);

}  // namespace fmtk
