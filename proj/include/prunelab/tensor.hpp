#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "prunelab/common.hpp"

namespace prunelab {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major float32 tensor with an optional gradient buffer and the
// reverse-mode tape edges needed to reach it. Values are immutable once a
// tensor has entered a graph; only `grad` is written afterwards, and only
// inside backward().
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first touched by backward()
    bool requires_grad{false};

    // Tape edges. `inputs` keeps operands alive; `backprop` pulls this
    // node's grad into theirs. Leaves have neither.
    std::vector<TensorPtr> inputs;
    std::function<void()> backprop;
    const char* op{"leaf"};

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    // 2D view used by the op suite: all leading dims fold into rows.
    int64_t cols() const { return shape.empty() ? 1 : shape.back(); }
    int64_t rows() const { return shape.empty() ? 1 : numel() / cols(); }

    bool is_scalar() const { return numel() == 1; }
    float scalar() const { return data.at(0); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
    }
    void zero_grad() { grad.clear(); }

    std::string shape_str() const;
};

TensorPtr make_tensor(std::vector<int64_t> shape, bool requires_grad = false);
TensorPtr full(std::vector<int64_t> shape, float value, bool requires_grad = false);
TensorPtr from_values(std::vector<int64_t> shape, std::vector<float> values,
                      bool requires_grad = false);
TensorPtr randn(std::vector<int64_t> shape, Rng& rng, double stddev,
                bool requires_grad = false);

// Populates grads of every tensor reachable from `loss` that requires one.
// Traversal is exact reverse topological order with a fixed child ordering,
// so two identical graphs backpropagate identically bit for bit.
void backward(const TensorPtr& loss);

// C = A(m x k) . B(k x n), row-major, f32 accumulation in ascending-k order.
void matmul_f32(const float* a, const float* b, float* c, int64_t m, int64_t k,
                int64_t n);

}  // namespace prunelab
