#include "prunelab/ops.hpp"

#include <cmath>
#include <string>

namespace prunelab {

namespace {

TensorPtr make_result(std::vector<int64_t> shape, const char* op,
                      std::vector<TensorPtr> inputs) {
    auto out = make_tensor(std::move(shape));
    out->op = op;
    for (const auto& in : inputs) {
        if (in->requires_grad) out->requires_grad = true;
    }
    if (out->requires_grad) out->inputs = std::move(inputs);
    return out;
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a->shape_str() +
                         " vs " + b->shape_str());
    }
}

}  // namespace

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    const int64_t m = a->rows(), k = a->cols();
    const int64_t k2 = b->rows(), n = b->cols();
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions differ, " + a->shape_str() +
                         " x " + b->shape_str());
    }
    auto out = make_result({m, n}, "matmul", {a, b});
    matmul_f32(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, b, o, m, k, n]() {
            // dA = dC . B^T ; dB = A^T . dC
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < m; ++i) {
                    const float* g = o->grad.data() + i * n;
                    float* ga = a->grad.data() + i * k;
                    for (int64_t p = 0; p < k; ++p) {
                        const float* bp = b->data.data() + p * n;
                        double acc = 0.0;
                        for (int64_t j = 0; j < n; ++j) acc += double(g[j]) * bp[j];
                        ga[p] += static_cast<float>(acc);
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < m; ++i) {
                    const float* ai = a->data.data() + i * k;
                    const float* g = o->grad.data() + i * n;
                    for (int64_t p = 0; p < k; ++p) {
                        const float ap = ai[p];
                        if (ap == 0.0f) continue;
                        float* gb = b->grad.data() + p * n;
                        for (int64_t j = 0; j < n; ++j) gb[j] += ap * g[j];
                    }
                }
            }
        };
    }
    return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "add");
    auto out = make_result(a->shape, "add", {a, b});
    const size_t n = a->data.size();
    for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, b, o, n]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < n; ++i) b->grad[i] += o->grad[i];
            }
        };
    }
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "mul");
    auto out = make_result(a->shape, "mul", {a, b});
    const size_t n = a->data.size();
    for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, b, o, n]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < n; ++i) b->grad[i] += o->grad[i] * a->data[i];
            }
        };
    }
    return out;
}

TensorPtr hadamard_mask_apply(const TensorPtr& a, const TensorPtr& mask) {
    check_same_shape(a, mask, "hadamard_mask_apply");
    return mul(a, mask);
}

TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
    const int64_t rows = a->rows(), cols = a->cols();
    if (v->numel() != cols) {
        throw ShapeError("add_rowvec: vector " + v->shape_str() +
                         " does not match row width of " + a->shape_str());
    }
    auto out = make_result(a->shape, "add_rowvec", {a, v});
    for (int64_t i = 0; i < rows; ++i) {
        const float* ai = a->data.data() + i * cols;
        float* oi = out->data.data() + i * cols;
        for (int64_t j = 0; j < cols; ++j) oi[j] = ai[j] + v->data[j];
    }
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, v, o, rows, cols]() {
            if (a->requires_grad) {
                a->ensure_grad();
                const size_t n = a->data.size();
                for (size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i];
            }
            if (v->requires_grad) {
                v->ensure_grad();
                for (int64_t j = 0; j < cols; ++j) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < rows; ++i) acc += o->grad[i * cols + j];
                    v->grad[j] += static_cast<float>(acc);
                }
            }
        };
    }
    return out;
}

TensorPtr mul_rowvec(const TensorPtr& a, const TensorPtr& v) {
    const int64_t rows = a->rows(), cols = a->cols();
    if (v->numel() != cols) {
        throw ShapeError("mul_rowvec: vector " + v->shape_str() +
                         " does not match row width of " + a->shape_str());
    }
    auto out = make_result(a->shape, "mul_rowvec", {a, v});
    for (int64_t i = 0; i < rows; ++i) {
        const float* ai = a->data.data() + i * cols;
        float* oi = out->data.data() + i * cols;
        for (int64_t j = 0; j < cols; ++j) oi[j] = ai[j] * v->data[j];
    }
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, v, o, rows, cols]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < rows; ++i) {
                    for (int64_t j = 0; j < cols; ++j) {
                        a->grad[i * cols + j] += o->grad[i * cols + j] * v->data[j];
                    }
                }
            }
            if (v->requires_grad) {
                v->ensure_grad();
                for (int64_t j = 0; j < cols; ++j) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < rows; ++i) {
                        acc += double(o->grad[i * cols + j]) * a->data[i * cols + j];
                    }
                    v->grad[j] += static_cast<float>(acc);
                }
            }
        };
    }
    return out;
}

TensorPtr scale(const TensorPtr& a, float c) {
    auto out = make_result(a->shape, "scale", {a});
    const size_t n = a->data.size();
    for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * c;
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, o, c, n]() {
            a->ensure_grad();
            for (size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] * c;
        };
    }
    return out;
}

TensorPtr sum(const TensorPtr& a) {
    auto out = make_result({1}, "sum", {a});
    double acc = 0.0;
    for (float x : a->data) acc += x;
    out->data[0] = static_cast<float>(acc);
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, o]() {
            a->ensure_grad();
            const float g = o->grad[0];
            for (float& ga : a->grad) ga += g;
        };
    }
    return out;
}

TensorPtr relu(const TensorPtr& a) {
    auto out = make_result(a->shape, "relu", {a});
    const size_t n = a->data.size();
    for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] > 0.0f ? a->data[i] : 0.0f;
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, o, n]() {
            a->ensure_grad();
            for (size_t i = 0; i < n; ++i) {
                if (a->data[i] > 0.0f) a->grad[i] += o->grad[i];
            }
        };
    }
    return out;
}

TensorPtr gelu(const TensorPtr& a) {
    // tanh approximation
    constexpr double kC = 0.7978845608028654;   // sqrt(2/pi)
    constexpr double kA = 0.044715;
    auto out = make_result(a->shape, "gelu", {a});
    const size_t n = a->data.size();
    for (size_t i = 0; i < n; ++i) {
        const double x = a->data[i];
        const double t = std::tanh(kC * (x + kA * x * x * x));
        out->data[i] = static_cast<float>(0.5 * x * (1.0 + t));
    }
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, o, n]() {
            a->ensure_grad();
            for (size_t i = 0; i < n; ++i) {
                const double x = a->data[i];
                const double u = kC * (x + kA * x * x * x);
                const double t = std::tanh(u);
                const double du = kC * (1.0 + 3.0 * kA * x * x);
                const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                a->grad[i] += static_cast<float>(o->grad[i] * d);
            }
        };
    }
    return out;
}

TensorPtr softmax_rows(const TensorPtr& a) {
    const int64_t rows = a->rows(), cols = a->cols();
    auto out = make_result(a->shape, "softmax_rows", {a});
    for (int64_t i = 0; i < rows; ++i) {
        const float* ai = a->data.data() + i * cols;
        float* oi = out->data.data() + i * cols;
        float m = ai[0];
        for (int64_t j = 1; j < cols; ++j) m = std::max(m, ai[j]);
        double z = 0.0;
        for (int64_t j = 0; j < cols; ++j) z += std::exp(double(ai[j]) - m);
        for (int64_t j = 0; j < cols; ++j) {
            oi[j] = static_cast<float>(std::exp(double(ai[j]) - m) / z);
        }
    }
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, o, rows, cols]() {
            a->ensure_grad();
            for (int64_t i = 0; i < rows; ++i) {
                const float* p = o->data.data() + i * cols;
                const float* g = o->grad.data() + i * cols;
                double dot = 0.0;
                for (int64_t j = 0; j < cols; ++j) dot += double(g[j]) * p[j];
                float* ga = a->grad.data() + i * cols;
                for (int64_t j = 0; j < cols; ++j) {
                    ga[j] += static_cast<float>(p[j] * (double(g[j]) - dot));
                }
            }
        };
    }
    return out;
}

TensorPtr layer_norm_rows(const TensorPtr& a, double eps) {
    const int64_t rows = a->rows(), cols = a->cols();
    auto out = make_result(a->shape, "layer_norm_rows", {a});
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (int64_t i = 0; i < rows; ++i) {
        const float* ai = a->data.data() + i * cols;
        double mean = 0.0;
        for (int64_t j = 0; j < cols; ++j) mean += ai[j];
        mean /= double(cols);
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double d = ai[j] - mean;
            var += d * d;
        }
        var /= double(cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = inv;
        float* oi = out->data.data() + i * cols;
        for (int64_t j = 0; j < cols; ++j) {
            oi[j] = static_cast<float>((ai[j] - mean) * inv);
        }
    }
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [a, o, inv_std, rows, cols]() {
            a->ensure_grad();
            for (int64_t i = 0; i < rows; ++i) {
                const float* y = o->data.data() + i * cols;
                const float* g = o->grad.data() + i * cols;
                double gm = 0.0, gym = 0.0;
                for (int64_t j = 0; j < cols; ++j) {
                    gm += g[j];
                    gym += double(g[j]) * y[j];
                }
                gm /= double(cols);
                gym /= double(cols);
                const double inv = (*inv_std)[i];
                float* ga = a->grad.data() + i * cols;
                for (int64_t j = 0; j < cols; ++j) {
                    ga[j] += static_cast<float>(inv * (double(g[j]) - gm - double(y[j]) * gym));
                }
            }
        };
    }
    return out;
}

TensorPtr gather_rows(const TensorPtr& table, const std::vector<int32_t>& ids) {
    const int64_t v = table->rows(), d = table->cols();
    const int64_t n = static_cast<int64_t>(ids.size());
    for (int32_t id : ids) {
        if (id < 0 || id >= v) {
            throw RangeError("gather_rows: id " + std::to_string(id) +
                             " outside table of " + std::to_string(v) + " rows");
        }
    }
    auto out = make_result({n, d}, "gather_rows", {table});
    for (int64_t i = 0; i < n; ++i) {
        const float* src = table->data.data() + int64_t(ids[i]) * d;
        std::copy(src, src + d, out->data.data() + i * d);
    }
    if (out->requires_grad) {
        Tensor* o = out.get();
        auto ids_copy = std::make_shared<std::vector<int32_t>>(ids);
        out->backprop = [table, o, ids_copy, n, d]() {
            table->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                float* dst = table->grad.data() + int64_t((*ids_copy)[i]) * d;
                const float* g = o->grad.data() + i * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
            }
        };
    }
    return out;
}

TensorPtr causal_attention(const TensorPtr& q, const TensorPtr& k,
                           const TensorPtr& v, int64_t batch, int64_t seq,
                           int64_t heads) {
    check_same_shape(q, k, "causal_attention");
    check_same_shape(q, v, "causal_attention");
    const int64_t rows = q->rows(), width = q->cols();
    if (rows != batch * seq) {
        throw ShapeError("causal_attention: " + std::to_string(rows) +
                         " rows != batch*seq " + std::to_string(batch * seq));
    }
    if (width % heads != 0) {
        throw ShapeError("causal_attention: width " + std::to_string(width) +
                         " not divisible by " + std::to_string(heads) + " heads");
    }
    const int64_t hd = width / heads;
    const double scl = 1.0 / std::sqrt(double(hd));

    auto out = make_result(q->shape, "causal_attention", {q, k, v});
    // Attention probabilities kept for the backward pass, laid out
    // [b][h][t][u] with u <= t meaningful.
    auto probs = std::make_shared<std::vector<float>>(
        static_cast<size_t>(batch * heads * seq * seq), 0.0f);

    std::vector<double> row(seq);
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
            float* pbase = probs->data() + ((b * heads + h) * seq) * seq;
            for (int64_t t = 0; t < seq; ++t) {
                const float* qt = q->data.data() + (b * seq + t) * width + h * hd;
                double mx = -1e300;
                for (int64_t u = 0; u <= t; ++u) {
                    const float* ku = k->data.data() + (b * seq + u) * width + h * hd;
                    double acc = 0.0;
                    for (int64_t j = 0; j < hd; ++j) acc += double(qt[j]) * ku[j];
                    row[u] = acc * scl;
                    mx = std::max(mx, row[u]);
                }
                double z = 0.0;
                for (int64_t u = 0; u <= t; ++u) z += std::exp(row[u] - mx);
                float* pt = pbase + t * seq;
                for (int64_t u = 0; u <= t; ++u) {
                    pt[u] = static_cast<float>(std::exp(row[u] - mx) / z);
                }
                float* ot = out->data.data() + (b * seq + t) * width + h * hd;
                for (int64_t j = 0; j < hd; ++j) {
                    double acc = 0.0;
                    for (int64_t u = 0; u <= t; ++u) {
                        acc += double(pt[u]) * v->data[(b * seq + u) * width + h * hd + j];
                    }
                    ot[j] = static_cast<float>(acc);
                }
            }
        }
    }

    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backprop = [q, k, v, o, probs, batch, seq, heads, hd, width, scl]() {
            q->ensure_grad();
            k->ensure_grad();
            v->ensure_grad();
            std::vector<double> dp(seq), ds(seq);
            for (int64_t b = 0; b < batch; ++b) {
                for (int64_t h = 0; h < heads; ++h) {
                    const float* pbase = probs->data() + ((b * heads + h) * seq) * seq;
                    for (int64_t t = 0; t < seq; ++t) {
                        const float* pt = pbase + t * seq;
                        const float* gt = o->grad.data() + (b * seq + t) * width + h * hd;
                        // dV and dP
                        for (int64_t u = 0; u <= t; ++u) {
                            const float* vu = v->data.data() + (b * seq + u) * width + h * hd;
                            double acc = 0.0;
                            for (int64_t j = 0; j < hd; ++j) acc += double(gt[j]) * vu[j];
                            dp[u] = acc;
                            float* gv = v->grad.data() + (b * seq + u) * width + h * hd;
                            const float p = pt[u];
                            for (int64_t j = 0; j < hd; ++j) gv[j] += p * gt[j];
                        }
                        // softmax backward on the causal row
                        double dot = 0.0;
                        for (int64_t u = 0; u <= t; ++u) dot += dp[u] * pt[u];
                        for (int64_t u = 0; u <= t; ++u) ds[u] = pt[u] * (dp[u] - dot) * scl;
                        // dQ and dK
                        float* gq = q->grad.data() + (b * seq + t) * width + h * hd;
                        for (int64_t u = 0; u <= t; ++u) {
                            const float* ku = k->data.data() + (b * seq + u) * width + h * hd;
                            const float* qt = q->data.data() + (b * seq + t) * width + h * hd;
                            float* gk = k->grad.data() + (b * seq + u) * width + h * hd;
                            const float dsu = static_cast<float>(ds[u]);
                            for (int64_t j = 0; j < hd; ++j) {
                                gq[j] += dsu * ku[j];
                                gk[j] += dsu * qt[j];
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

TensorPtr cross_entropy(const TensorPtr& logits,
                        const std::vector<int32_t>& targets,
                        int32_t ignore_id) {
    const int64_t n = logits->rows(), vsize = logits->cols();
    if (static_cast<int64_t>(targets.size()) != n) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " logit rows");
    }
    int64_t count = 0;
    for (int32_t t : targets) {
        if (t == ignore_id) continue;
        if (t < 0 || t >= vsize) {
            throw RangeError("cross_entropy: target id " + std::to_string(t) +
                             " outside vocabulary of " + std::to_string(vsize));
        }
        ++count;
    }
    if (count == 0) {
        throw ContractError("cross_entropy: no non-ignored targets");
    }

    auto out = make_result({1}, "cross_entropy", {logits});
    auto lse = std::make_shared<std::vector<double>>(n, 0.0);
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (targets[i] == ignore_id) continue;
        const float* li = logits->data.data() + i * vsize;
        double m = li[0];
        for (int64_t j = 1; j < vsize; ++j) m = std::max(m, double(li[j]));
        double z = 0.0;
        for (int64_t j = 0; j < vsize; ++j) z += std::exp(double(li[j]) - m);
        const double l = m + std::log(z);
        (*lse)[i] = l;
        total += l - double(li[targets[i]]);
    }
    out->data[0] = static_cast<float>(total / double(count));

    if (out->requires_grad) {
        Tensor* o = out.get();
        auto tgt = std::make_shared<std::vector<int32_t>>(targets);
        out->backprop = [logits, o, tgt, lse, n, vsize, count, ignore_id]() {
            logits->ensure_grad();
            const double g = double(o->grad[0]) / double(count);
            for (int64_t i = 0; i < n; ++i) {
                const int32_t t = (*tgt)[i];
                if (t == ignore_id) continue;
                const float* li = logits->data.data() + i * vsize;
                float* gi = logits->grad.data() + i * vsize;
                const double l = (*lse)[i];
                for (int64_t j = 0; j < vsize; ++j) {
                    double p = std::exp(double(li[j]) - l);
                    if (j == t) p -= 1.0;
                    gi[j] += static_cast<float>(g * p);
                }
            }
        };
    }
    return out;
}

}  // namespace prunelab
