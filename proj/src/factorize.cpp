#include "prunelab/factorize.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

namespace prunelab {

namespace {

// One-sided Jacobi on a matrix with rows >= cols: orthogonalize column
// pairs of G until convergence, so G = U . diag(sigma) and W = G . Vt.
struct TallSvd {
    std::vector<double> g;   // rows x cols, becomes U * sigma
    std::vector<double> vt;  // cols x cols rotation product, transposed
    std::vector<double> sigma;
};

TallSvd jacobi_tall(std::vector<double> g, int64_t rows, int64_t cols,
                    const std::string& label) {
    TallSvd out;
    out.vt.assign(cols * cols, 0.0);
    for (int64_t i = 0; i < cols; ++i) out.vt[i * cols + i] = 1.0;

    // Relative pair threshold. 1e-15 is unreachable here: the rounding noise
    // in gamma scales with the larger column, so badly scaled pairs would
    // rotate forever. 1e-12 still leaves the residual orders below every
    // tolerance promised downstream.
    const double tol = 1e-12;
    const int max_sweeps = 60;
    // Rotations redistribute mass between columns but never change the
    // Frobenius norm, so it is safe to take once up front. Columns whose
    // norm falls this far below it are rounding residue left behind when
    // the matrix is rank deficient; orthogonalizing residue against
    // anything just trades noise back and forth and stalls the sweep.
    double frobsq = 0.0;
    for (double x : g) frobsq += x * x;
    const double dead = 1e-24 * frobsq;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (int64_t p = 0; p < cols - 1; ++p) {
            for (int64_t q = p + 1; q < cols; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int64_t i = 0; i < rows; ++i) {
                    double gp = g[i * cols + p], gq = g[i * cols + q];
                    alpha += gp * gp;
                    beta += gq * gq;
                    gamma += gp * gq;
                }
                if (alpha <= dead || beta <= dead) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                converged = false;
                double zeta = (beta - alpha) / (2.0 * gamma);
                double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (int64_t i = 0; i < rows; ++i) {
                    double gp = g[i * cols + p], gq = g[i * cols + q];
                    g[i * cols + p] = c * gp - s * gq;
                    g[i * cols + q] = s * gp + c * gq;
                }
                for (int64_t j = 0; j < cols; ++j) {
                    double vp = out.vt[p * cols + j], vq = out.vt[q * cols + j];
                    out.vt[p * cols + j] = c * vp - s * vq;
                    out.vt[q * cols + j] = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) {
        throw NumericError("SVD did not converge for " + label);
    }
    out.sigma.resize(cols);
    for (int64_t j = 0; j < cols; ++j) {
        double ss = 0.0;
        for (int64_t i = 0; i < rows; ++i) {
            double x = g[i * cols + j];
            ss += x * x;
        }
        out.sigma[j] = std::sqrt(ss);
    }
    out.g = std::move(g);
    return out;
}

SvdResult svd_impl(const std::vector<double>& w, int64_t a, int64_t b,
                   const std::string& label) {
    if (a < 1 || b < 1 || static_cast<int64_t>(w.size()) != a * b) {
        throw ShapeError("SVD input shape mismatch for " + label);
    }
    for (double x : w) {
        if (!std::isfinite(x)) {
            throw NumericError("non-finite entry in matrix for " + label);
        }
    }
    int64_t r = std::min(a, b);
    bool transposed = a < b;
    int64_t rows = transposed ? b : a;
    int64_t cols = r;
    std::vector<double> g(rows * cols);
    if (transposed) {
        for (int64_t i = 0; i < a; ++i) {
            for (int64_t j = 0; j < b; ++j) g[j * cols + i] = w[i * b + j];
        }
    } else {
        g = w;
    }
    TallSvd t = jacobi_tall(std::move(g), rows, cols, label);

    std::vector<int64_t> order(cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
        return t.sigma[x] > t.sigma[y];
    });

    // left (rows x cols) and right (cols x cols) factors of the worked
    // matrix, columns normalized, descending sigma.
    std::vector<double> left(rows * cols, 0.0), right(cols * cols, 0.0);
    SvdResult out;
    out.sigma.resize(cols);
    for (int64_t jj = 0; jj < cols; ++jj) {
        int64_t j = order[jj];
        double s = t.sigma[j];
        out.sigma[jj] = s;
        if (s > 0.0) {
            for (int64_t i = 0; i < rows; ++i) left[i * cols + jj] = t.g[i * cols + j] / s;
        }
        for (int64_t k = 0; k < cols; ++k) right[jj * cols + k] = t.vt[j * cols + k];
    }
    // Sign convention on the left factor.
    for (int64_t j = 0; j < cols; ++j) {
        int64_t arg = 0;
        double best = -1.0;
        for (int64_t i = 0; i < rows; ++i) {
            double m = std::abs(left[i * cols + j]);
            if (m > best) {
                best = m;
                arg = i;
            }
        }
        if (left[arg * cols + j] < 0.0) {
            for (int64_t i = 0; i < rows; ++i) left[i * cols + j] = -left[i * cols + j];
            for (int64_t k = 0; k < cols; ++k) right[j * cols + k] = -right[j * cols + k];
        }
    }

    out.a = a;
    out.b = b;
    out.r = r;
    if (!transposed) {
        // W = left . diag . right with right already r x b.
        out.u = std::move(left);
        out.v = std::move(right);
    } else {
        // Worked on W^T = left . diag . right, so W = right^T . diag . left^T.
        out.u.assign(a * r, 0.0);
        for (int64_t i = 0; i < a; ++i) {
            for (int64_t j = 0; j < r; ++j) out.u[i * r + j] = right[j * cols + i];
        }
        out.v.assign(r * b, 0.0);
        for (int64_t j = 0; j < r; ++j) {
            for (int64_t k = 0; k < b; ++k) out.v[j * b + k] = left[k * cols + j];
        }
        // The sign convention must track the FINAL left factor (columns of
        // u), not the worked-matrix factor. Redo it on u/v.
        for (int64_t j = 0; j < r; ++j) {
            int64_t arg = 0;
            double best = -1.0;
            for (int64_t i = 0; i < a; ++i) {
                double m = std::abs(out.u[i * r + j]);
                if (m > best) {
                    best = m;
                    arg = i;
                }
            }
            if (out.u[arg * r + j] < 0.0) {
                for (int64_t i = 0; i < a; ++i) out.u[i * r + j] = -out.u[i * r + j];
                for (int64_t k = 0; k < b; ++k) out.v[j * b + k] = -out.v[j * b + k];
            }
        }
    }
    return out;
}

FactorizedLayer layer_from_svd(const SvdResult& s, int64_t rank) {
    FactorizedLayer f;
    f.origin_a = s.a;
    f.origin_b = s.b;
    std::vector<float> u(s.a * rank), d(rank), v(rank * s.b);
    for (int64_t i = 0; i < s.a; ++i) {
        for (int64_t j = 0; j < rank; ++j) {
            u[i * rank + j] = static_cast<float>(s.u[i * s.r + j]);
        }
    }
    for (int64_t j = 0; j < rank; ++j) d[j] = static_cast<float>(s.sigma[j]);
    for (int64_t j = 0; j < rank; ++j) {
        for (int64_t k = 0; k < s.b; ++k) {
            v[j * s.b + k] = static_cast<float>(s.v[j * s.b + k]);
        }
    }
    f.u = from_values({s.a, rank}, std::move(u), true);
    f.d = from_values({rank}, std::move(d), true);
    f.m = full({rank}, 1.0f, false);
    f.v = from_values({rank, s.b}, std::move(v), true);
    return f;
}

}  // namespace

SvdResult jacobi_svd(const std::vector<double>& w, int64_t a, int64_t b) {
    return svd_impl(w, a, b, "matrix");
}

FactorizedLayer factorize_weights(const std::vector<float>& w, int64_t a, int64_t b,
                                  const std::string& layer_name) {
    std::vector<double> wd(w.begin(), w.end());
    SvdResult s = svd_impl(wd, a, b, layer_name);
    return layer_from_svd(s, s.r);
}

void factorize_layer(TransformerLM& model, const std::string& name) {
    Projection* p = model.find_layer(name);
    if (!p) throw ContractError("no prunable layer named '" + name + "'");
    if (p->state != LayerState::dense) {
        throw ContractError("layer " + name + " is not dense; cannot factorize");
    }
    model.swap_in_factorized(name, factorize_weights(p->w->data, p->a, p->b, name));
}

void factorize_layers(TransformerLM& model, const std::vector<std::string>& names,
                      int threads) {
    std::vector<Projection*> layers;
    for (const std::string& n : names) {
        Projection* p = model.find_layer(n);
        if (!p) throw ContractError("no prunable layer named '" + n + "'");
        if (p->state != LayerState::dense) {
            throw ContractError("layer " + n + " is not dense; cannot factorize");
        }
        layers.push_back(p);
    }
    std::vector<FactorizedLayer> results(layers.size());
    std::vector<std::string> errors(layers.size());
    auto work = [&](size_t idx) {
        try {
            results[idx] = factorize_weights(layers[idx]->w->data, layers[idx]->a,
                                             layers[idx]->b, layers[idx]->name);
        } catch (const std::exception& e) {
            errors[idx] = e.what();
        }
    };
    if (threads <= 1 || layers.size() <= 1) {
        for (size_t i = 0; i < layers.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        size_t n_workers = std::min<size_t>(threads, layers.size());
        for (size_t t = 0; t < n_workers; ++t) {
            pool.emplace_back([&]() {
                for (size_t i = next.fetch_add(1); i < layers.size();
                     i = next.fetch_add(1)) {
                    work(i);
                }
            });
        }
        for (std::thread& th : pool) th.join();
    }
    for (size_t i = 0; i < layers.size(); ++i) {
        if (!errors[i].empty()) throw NumericError(errors[i]);
    }
    for (size_t i = 0; i < layers.size(); ++i) {
        model.swap_in_factorized(layers[i]->name, std::move(results[i]));
    }
}

double adjusted_target_sparsity(int64_t a, int64_t b, double s_t) {
    if (a < 1 || b < 1) throw ConfigError("layer dimensions must be positive");
    if (!(s_t >= 0.0) || s_t >= 1.0) {
        throw RangeError("sparsity target must lie in [0, 1), got " + std::to_string(s_t));
    }
    return 1.0 - static_cast<double>(a) * (1.0 - s_t) / static_cast<double>(a + b);
}

PruneEvent prune_factorized(Projection& layer, const ImportanceMap& diag_scores,
                            double s_hat, int64_t step) {
    if (layer.state != LayerState::factorized) {
        throw ContractError("layer " + layer.name + " is not factorized");
    }
    if (!(s_hat >= 0.0) || s_hat >= 1.0) {
        throw RangeError("adjusted sparsity must lie in [0, 1), got " +
                         std::to_string(s_hat));
    }
    int64_t r = layer.fac.rank();
    if (static_cast<int64_t>(diag_scores.scores.size()) != r) {
        throw ShapeError("diagonal scores length does not match rank of " + layer.name);
    }
    // Kept rank is taken against the origin shape so incremental cycles and
    // one-shot targets agree on what, say, "5% of the layer" means.
    int64_t r0 = std::min(layer.a, layer.b);
    int64_t kept = static_cast<int64_t>(std::floor((1.0 - s_hat) * static_cast<double>(r0)));
    if (kept < 1) {
        throw ConfigError("target would mask every diagonal entry of " + layer.name +
                          "; rank floor is 1");
    }
    int64_t current = layer.fac.unmasked_rank();
    if (kept > current) {
        throw MonotonicityError("layer " + layer.name + " already has unmasked rank " +
                                std::to_string(current) + "; cannot grow to " +
                                std::to_string(kept));
    }

    if (kept < current) {
        std::vector<int64_t> cand;
        for (int64_t j = 0; j < r; ++j) {
            if (layer.fac.m->data[j] != 0.0f) cand.push_back(j);
        }
        std::sort(cand.begin(), cand.end(), [&](int64_t x, int64_t y) {
            double sx = diag_scores.scores[x], sy = diag_scores.scores[y];
            if (sx != sy) return sx < sy;
            return x < y;
        });
        for (int64_t i = 0; i < current - kept; ++i) {
            layer.fac.m->data[cand[i]] = 0.0f;
        }
    }

    PruneEvent ev;
    ev.step = step;
    ev.layer = layer.name;
    ev.target = s_hat;
    ev.zeros = r - layer.fac.unmasked_rank();
    ev.total = r;
    ev.achieved = static_cast<double>(ev.zeros) / static_cast<double>(r);
    ev.method = prune_method_name(PruneMethod::factor_diagonal);
    return ev;
}

PruneEvent prune_factorized_for_target(Projection& layer, Criterion criterion,
                                       double s_t, int64_t step,
                                       const DdAccumulator* dd) {
    ImportanceMap scores;
    if (criterion == Criterion::magnitude) {
        scores = magnitude_scores_factor_diagonal(layer);
    } else {
        if (!dd || dd->batch_count() < 1) {
            throw ContractError("taylor_dd pruning needs at least one scored batch");
        }
        scores = dd->map_for(layer);
    }
    double s_hat = adjusted_target_sparsity(layer.a, layer.b, s_t);
    PruneEvent ev = prune_factorized(layer, scores, s_hat, step);
    ev.criterion = criterion_name(criterion);
    return ev;
}

DensifiedLayer densify(const FactorizedLayer& f) {
    int64_t r = f.rank();
    std::vector<int64_t> kept;
    for (int64_t j = 0; j < r; ++j) {
        if (f.m->data[j] != 0.0f) kept.push_back(j);
    }
    if (kept.empty()) {
        throw ContractError("cannot densify a fully masked factorized layer");
    }
    int64_t k = static_cast<int64_t>(kept.size());
    int64_t a = f.origin_a, b = f.origin_b;

    DensifiedLayer out;
    out.origin_a = a;
    out.origin_b = b;
    std::vector<float> u2(a * k), v2(k * b);
    // Fold D into U with the same single f32 multiply the factorized
    // forward performs, so the two paths stay bit-identical.
    for (int64_t i = 0; i < a; ++i) {
        for (int64_t jj = 0; jj < k; ++jj) {
            int64_t j = kept[jj];
            u2[i * k + jj] = f.u->data[i * r + j] * f.d->data[j];
        }
    }
    for (int64_t jj = 0; jj < k; ++jj) {
        int64_t j = kept[jj];
        for (int64_t col = 0; col < b; ++col) {
            v2[jj * b + col] = f.v->data[j * b + col];
        }
    }
    out.u2 = from_values({a, k}, std::move(u2), true);
    out.v2 = from_values({k, b}, std::move(v2), true);
    return out;
}

void densify_layer(TransformerLM& model, const std::string& name) {
    Projection* p = model.find_layer(name);
    if (!p) throw ContractError("no prunable layer named '" + name + "'");
    if (p->state != LayerState::factorized) {
        throw ContractError("layer " + name + " is not factorized; cannot densify");
    }
    DensifiedLayer den = densify(p->fac);
    p->state = LayerState::densified;
    p->den = std::move(den);
    p->fac = FactorizedLayer{};
}

FactorizedLayer refactorize_for_next_target(const DensifiedLayer& d,
                                            const std::string& layer_name) {
    int64_t a = d.origin_a, b = d.origin_b, k = d.rank();
    std::vector<double> w(a * b, 0.0);
    for (int64_t i = 0; i < a; ++i) {
        for (int64_t j = 0; j < k; ++j) {
            double uij = d.u2->data[i * k + j];
            if (uij == 0.0) continue;
            for (int64_t col = 0; col < b; ++col) {
                w[i * b + col] += uij * d.v2->data[j * b + col];
            }
        }
    }
    SvdResult s = svd_impl(w, a, b, layer_name);
    // The product has rank at most k; storage shrinks to k for the next
    // cycle.
    return layer_from_svd(s, k);
}

void refactorize_layer(TransformerLM& model, const std::string& name) {
    Projection* p = model.find_layer(name);
    if (!p) throw ContractError("no prunable layer named '" + name + "'");
    if (p->state != LayerState::densified) {
        throw ContractError("layer " + name + " is not densified; cannot refactorize");
    }
    model.swap_in_factorized(name, refactorize_for_next_target(p->den, name));
}

}  // namespace prunelab
