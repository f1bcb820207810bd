#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nest/autodiff.hpp"

namespace nest {

// Multiply-add accounting for the matrix-product family of ops. Counts are
// per thread and only cover forward evaluation.
namespace flops {

struct Counts {
    std::uint64_t projection = 0;  // matmul / linear
    std::uint64_t attention = 0;   // QK^T and PV products inside attention
    std::uint64_t total() const { return projection + attention; }
};

void reset();
Counts read();

}  // namespace flops

// Differentiable ops. All operate on matrices (rows x cols); "grouped" ops
// treat a matrix as `groups` stacked blocks of equal row count, which is how
// a batch of samples shares one tape.

/// y = a b
Var matmul(Var a, Var b);
/// y = x W + b, with x [rows, in], W [in, out], b [out].
Var linear(Var x, Var w, Var b);
/// y = x W, no bias.
Var linear(Var x, Var w);

Var add(Var a, Var b);
Var scale(Var a, double s);
/// x [g*n, c] plus t [n, c] repeated over the g blocks.
Var add_tiled(Var x, Var t);
/// x [g*n, c] plus row k of t [g, c] on every row of block k.
Var add_grouped(Var x, Var t);

/// Tanh approximation of GELU.
Var gelu(Var x);

/// softmax(Q K^T / sqrt(d)) V evaluated independently per block. Q is
/// [groups*a, d], K is [groups*b, d], V is [groups*b, dv].
Var scaled_dot_attention(Var q, Var k, Var v, std::size_t groups = 1);

/// Row r of the result is the mean of `table` rows listed in indices[r].
Var embedding_mean(Var table, const std::vector<std::vector<std::size_t>>& indices);

Var sum(Var x);
Var mean(Var x);
/// Scalar sum of weight_i * term_i over scalar terms.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

/// Mean over elements of the Huber penalty on (pred - target).
Var huber_loss(Var pred, const Tensor& target, double delta);
/// Mean over quantile levels and elements of max(tau e, (tau - 1) e) with the
/// residual e = target - pred, so the level-tau prediction is pulled toward
/// the tau-quantile of the target.
Var pinball_loss(std::span<const Var> preds, const Tensor& target, std::span<const double> taus);

// Plain value helpers.

Tensor matmul(const Tensor& a, const Tensor& b);
/// Row-wise softmax with row-max subtraction.
Tensor softmax_rows(const Tensor& logits);
/// Attention weights softmax(Q K^T / sqrt(d)) for one block.
Tensor attention_weights(const Tensor& q, const Tensor& k);

}  // namespace nest
