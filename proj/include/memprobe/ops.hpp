// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. All matrices are row-major; "row" operations act
// on the last dimension. Batched sequence tensors are stored flat as
// [batch * seq_len x width], sequence-major.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "memprobe/tensor.hpp"

namespace memprobe {

using TokenId = std::int32_t;

/// [m x k] . [k x n]
template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

/// [m x k] . [n x k]^T
template <typename Scalar>
BasicTensor<Scalar> matmul_nt(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

/// Elementwise product.
template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar factor);

/// Sum of all elements as a rank-0 tensor.
template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a);

template <typename Scalar>
BasicTensor<Scalar> softmax_rows(const BasicTensor<Scalar>& x);

/// Per-row standardization with biased variance, then gamma * xhat + beta.
template <typename Scalar>
BasicTensor<Scalar> layer_norm(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& gamma,
                               const BasicTensor<Scalar>& beta, Scalar eps);

/// tanh-approximated GELU.
template <typename Scalar>
BasicTensor<Scalar> gelu(const BasicTensor<Scalar>& x);

template <typename Scalar>
BasicTensor<Scalar> silu(const BasicTensor<Scalar>& x);

/// Row gather: out[i] = table[ids[i]].
template <typename Scalar>
BasicTensor<Scalar> embedding(const BasicTensor<Scalar>& table, std::span<const TokenId> ids);

/// out[r] = x[r] + table[r mod seq_len] for a flat [batch * seq_len x d] input.
template <typename Scalar>
BasicTensor<Scalar> add_positional(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& table,
                                   std::int64_t seq_len);

template <typename Scalar>
BasicTensor<Scalar> concat_rows(std::span<const BasicTensor<Scalar>> parts);

template <typename Scalar>
BasicTensor<Scalar> concat_cols(std::span<const BasicTensor<Scalar>> parts);

template <typename Scalar>
BasicTensor<Scalar> slice_rows(const BasicTensor<Scalar>& x, std::int64_t begin, std::int64_t count);

template <typename Scalar>
BasicTensor<Scalar> slice_cols(const BasicTensor<Scalar>& x, std::int64_t begin, std::int64_t count);

/// Multi-head scaled dot-product attention over flat [batch * T x d] query,
/// key and value tensors. Heads occupy consecutive column groups of width
/// d / heads; scores are scaled by 1/sqrt(d / heads).
template <typename Scalar>
BasicTensor<Scalar> attention(const BasicTensor<Scalar>& q, const BasicTensor<Scalar>& k,
                              const BasicTensor<Scalar>& v, std::int64_t batch,
                              std::int64_t heads, bool causal);

/// Mean over masked-in rows of -log softmax(logits[r])[targets[r]].
/// Rows with mask[r] == 0 are never read.
template <typename Scalar>
BasicTensor<Scalar> masked_cross_entropy(const BasicTensor<Scalar>& logits,
                                         std::span<const TokenId> targets,
                                         std::span<const std::uint8_t> mask);

}  // namespace memprobe
