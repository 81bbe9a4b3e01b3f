#include "prunelab/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace prunelab {

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

TensorPtr make_tensor(std::vector<int64_t> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    }
    t->shape = std::move(shape);
    t->data.assign(static_cast<size_t>(t->numel()), 0.0f);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr full(std::vector<int64_t> shape, float value, bool requires_grad) {
    auto t = make_tensor(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr from_values(std::vector<int64_t> shape, std::vector<float> values,
                      bool requires_grad) {
    auto t = make_tensor(std::move(shape), requires_grad);
    if (values.size() != t->data.size()) {
        throw ShapeError("from_values: got " + std::to_string(values.size()) +
                         " values for shape " + t->shape_str());
    }
    t->data = std::move(values);
    return t;
}

TensorPtr randn(std::vector<int64_t> shape, Rng& rng, double stddev,
                bool requires_grad) {
    auto t = make_tensor(std::move(shape), requires_grad);
    for (float& x : t->data) x = static_cast<float>(rng.normal() * stddev);
    return t;
}

void backward(const TensorPtr& loss) {
    if (!loss) throw ContractError("backward: null loss tensor");
    if (!loss->is_scalar()) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            loss->shape_str());
    }

    // Iterative post-order DFS. Children are visited in the order they were
    // recorded, which fixes the topological order and hence the grad
    // accumulation order.
    std::vector<Tensor*> topo;
    std::unordered_set<Tensor*> seen;
    struct Frame {
        Tensor* node;
        size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.get(), 0});
    seen.insert(loss.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.node->inputs.size()) {
            Tensor* child = f.node->inputs[f.next_child++].get();
            if (seen.insert(child).second) stack.push_back({child, 0});
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] = 1.0f;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Tensor* node = *it;
        if (node->backprop && node->requires_grad) node->backprop();
    }
}

void matmul_f32(const float* a, const float* b, float* c, int64_t m, int64_t k,
                int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        float* __restrict__ ci = c + i * n;
        const float* __restrict__ ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const float ap = ai[p];
            if (ap == 0.0f) continue;
            const float* __restrict__ bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += ap * bp[j];
        }
    }
}

}  // namespace prunelab
