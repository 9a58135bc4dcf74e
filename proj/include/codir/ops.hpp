#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "codir/tensor.hpp"

namespace codir {

// Matrix products. matmul: [p x q] * [q x r]; bmm batches over the leading axis.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor bmm(const Tensor& a, const Tensor& b);

// Swaps the last two axes (rank 2 or 3).
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
// a[..., q] + bias[q], broadcast over every leading index.
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Softmax / log-softmax along the last axis of logits / temperature.
Tensor softmax_rows(const Tensor& logits, double temperature = 1.0);
Tensor log_softmax_rows(const Tensor& logits, double temperature = 1.0);

// Attention softmax over [G x R x C] scores. Columns at or beyond
// valid_cols[g] receive probability exactly zero and do not enter the max or
// the normalizer.
Tensor masked_softmax_rows(const Tensor& scores, std::span<const std::size_t> valid_cols);

// Per-row normalization over the last axis with learnable gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

// Concatenation along the last axis. All inputs share their leading extents.
Tensor concat(const std::vector<Tensor>& parts);

// Row gather from a [n x d] matrix (also used as embedding lookup).
Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows);
// Rank-1 view of a single row.
Tensor row(const Tensor& a, std::size_t index);

// Arithmetic mean over the first valid_len rows of H[L x d].
Tensor mean_pool_rows(const Tensor& h, std::size_t valid_len);
// Batched form over H[B x L x d]; returns [B x d].
Tensor mean_pool_rows(const Tensor& h, std::span<const std::size_t> valid_lens);

// Cosine similarity of two rank-1 tensors; returns a [1] tensor.
Tensor cosine_sim(const Tensor& u, const Tensor& v);
double cosine_sim_value(std::span<const double> u, std::span<const double> v);

// Mean over rows of -logp[i, targets[i]].
Tensor nll_rows(const Tensor& logp, std::span<const std::size_t> targets);

// Mean over rows of sum_k p_k (target_logp_k - logq_k), with p = exp(target_logp).
// target_logp is treated as a constant.
Tensor kl_rows(const Tensor& target_logp, const Tensor& logq);

// [(B*L) x d] -> [(B*H) x L x d/H] and back.
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads);

}  // namespace codir
