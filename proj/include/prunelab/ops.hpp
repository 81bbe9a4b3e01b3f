#pragma once

#include <cstdint>
#include <vector>

#include "prunelab/tensor.hpp"

namespace prunelab {

// Differentiable op suite. All ops treat tensors as 2D (leading dims fold
// into rows, see Tensor::rows/cols) and register their gradient rule when
// some input requires grad. Reductions accumulate in double and round once
// to float.
//
// Broadcasting is limited to the (matrix op row-vector) forms below;
// anything else needs an explicit shape.

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v);
TensorPtr mul_rowvec(const TensorPtr& a, const TensorPtr& v);
TensorPtr scale(const TensorPtr& a, float c);
TensorPtr sum(const TensorPtr& a);
TensorPtr relu(const TensorPtr& a);
TensorPtr gelu(const TensorPtr& a);
TensorPtr softmax_rows(const TensorPtr& a);
TensorPtr layer_norm_rows(const TensorPtr& a, double eps = 1e-5);

// Hadamard product with a binary mask tensor. The mask never receives a
// gradient; the gradient flowing into `a` is itself masked.
TensorPtr hadamard_mask_apply(const TensorPtr& a, const TensorPtr& mask);

// Row lookup (embedding). Backward scatter-adds in ascending output-row
// order.
TensorPtr gather_rows(const TensorPtr& table, const std::vector<int32_t>& ids);

// Fused causal multi-head attention. q, k, v are (batch*seq) x (heads*hd)
// projections of the same token stream; returns the concatenated head
// contexts in the same layout.
TensorPtr causal_attention(const TensorPtr& q, const TensorPtr& k,
                           const TensorPtr& v, int64_t batch, int64_t seq,
                           int64_t heads);

// Mean token negative log-likelihood in nats over positions whose target is
// not ignore_id. logits: N x V, targets: length N.
TensorPtr cross_entropy(const TensorPtr& logits,
                        const std::vector<int32_t>& targets,
                        int32_t ignore_id);

}  // namespace prunelab
