#include "prunelab/prune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "prunelab/factorize.hpp"

namespace prunelab {

const char* criterion_name(Criterion c) {
    return c == Criterion::magnitude ? "magnitude" : "taylor_dd";
}

Criterion criterion_from_name(const std::string& s) {
    if (s == "magnitude") return Criterion::magnitude;
    if (s == "taylor_dd") return Criterion::taylor_dd;
    throw ConfigError("unknown criterion '" + s + "' (magnitude, taylor_dd)");
}

const char* prune_method_name(PruneMethod m) {
    switch (m) {
        case PruneMethod::unstructured: return "unstructured";
        case PruneMethod::row_group: return "row_group";
        case PruneMethod::column_group: return "column_group";
        case PruneMethod::factor_diagonal: return "factor_diagonal";
    }
    return "unstructured";
}

PruneMethod prune_method_from_name(const std::string& s) {
    if (s == "unstructured") return PruneMethod::unstructured;
    if (s == "row_group") return PruneMethod::row_group;
    if (s == "column_group") return PruneMethod::column_group;
    if (s == "factor_diagonal") return PruneMethod::factor_diagonal;
    throw ConfigError("unknown prune method '" + s +
                      "' (unstructured, row_group, column_group, factor_diagonal)");
}

void ScheduleConfig::validate() const {
    if (!(s_i >= 0.0) || !(s_f >= s_i) || !(s_f < 1.0)) {
        throw ConfigError("schedule needs 0 <= s_i <= s_f < 1, got s_i=" +
                          std::to_string(s_i) + " s_f=" + std::to_string(s_f));
    }
    if (delta_t < 1) throw ConfigError("delta_t must be at least 1");
    if (n < 1) throw ConfigError("n must be at least 1");
    if (t0 < 0) throw ConfigError("t0 must be non-negative");
}

double target_sparsity(const ScheduleConfig& schedule, int64_t t) {
    schedule.validate();
    if (t < schedule.t0 || t > schedule.end_step()) {
        throw RangeError("step " + std::to_string(t) + " outside schedule window [" +
                         std::to_string(schedule.t0) + ", " +
                         std::to_string(schedule.end_step()) + "]");
    }
    double span = static_cast<double>(schedule.n * schedule.delta_t);
    double c = 1.0 - static_cast<double>(t - schedule.t0) / span;
    double s = schedule.s_f + (schedule.s_i - schedule.s_f) * c * c * c;
    return std::clamp(s, schedule.s_i, schedule.s_f);
}

int64_t PruneMask::zeros() const {
    int64_t z = 0;
    for (uint8_t v : values) z += v == 0;
    return z;
}

double PruneMask::sparsity() const {
    if (values.empty()) return 0.0;
    return static_cast<double>(zeros()) / static_cast<double>(values.size());
}

PruneMask mask_from_tensor(const TensorPtr& t, PruneMask::Kind kind) {
    PruneMask m;
    m.kind = kind;
    m.shape = t->shape;
    m.values.resize(t->data.size());
    for (size_t i = 0; i < m.values.size(); ++i) m.values[i] = t->data[i] != 0.0f;
    return m;
}

void mask_to_tensor(const PruneMask& m, const TensorPtr& t) {
    if (m.shape != t->shape) throw ShapeError("mask shape does not match tensor");
    for (size_t i = 0; i < m.values.size(); ++i) {
        if (m.values[i] && t->data[i] == 0.0f) {
            throw MonotonicityError("mask update would revive a pruned position");
        }
        t->data[i] = m.values[i] ? 1.0f : 0.0f;
    }
}

GroupSpec GroupSpec::per_row(int64_t n_rows) {
    GroupSpec spec;
    spec.axis = Axis::rows;
    spec.groups.resize(n_rows);
    for (int64_t i = 0; i < n_rows; ++i) spec.groups[i] = {i};
    return spec;
}

GroupSpec GroupSpec::per_column(int64_t n_cols) {
    GroupSpec spec;
    spec.axis = Axis::columns;
    spec.groups.resize(n_cols);
    for (int64_t i = 0; i < n_cols; ++i) spec.groups[i] = {i};
    return spec;
}

void GroupSpec::validate(int64_t axis_extent) const {
    std::vector<uint8_t> seen(axis_extent, 0);
    int64_t covered = 0;
    for (const auto& g : groups) {
        if (g.empty()) throw ConfigError("group spec contains an empty group");
        for (int64_t idx : g) {
            if (idx < 0 || idx >= axis_extent) {
                throw ConfigError("group index " + std::to_string(idx) +
                                  " out of range for axis of size " +
                                  std::to_string(axis_extent));
            }
            if (seen[idx]) {
                throw ConfigError("group index " + std::to_string(idx) +
                                  " appears in two groups");
            }
            seen[idx] = 1;
            ++covered;
        }
    }
    if (covered != axis_extent) {
        throw ConfigError("groups cover " + std::to_string(covered) + " of " +
                          std::to_string(axis_extent) + " indices; must partition the axis");
    }
}

ImportanceMap magnitude_scores(const Projection& layer) {
    if (layer.state != LayerState::dense) {
        throw ContractError("magnitude_scores needs a dense-state layer, got " +
                            layer.name);
    }
    ImportanceMap map;
    map.layer = layer.name;
    map.shape = layer.w->shape;
    map.scores.resize(layer.w->data.size());
    map.excluded.resize(layer.w->data.size());
    for (size_t i = 0; i < map.scores.size(); ++i) {
        map.scores[i] = std::abs(static_cast<double>(layer.w->data[i]));
        map.excluded[i] = layer.mask->data[i] == 0.0f;
    }
    return map;
}

ImportanceMap magnitude_scores_factor_diagonal(const Projection& layer) {
    if (layer.state != LayerState::factorized) {
        throw ContractError("diagonal scores need a factorized-state layer, got " +
                            layer.name);
    }
    ImportanceMap map;
    map.layer = layer.name;
    map.shape = layer.fac.d->shape;
    map.scores.resize(layer.fac.d->data.size());
    map.excluded.resize(map.scores.size());
    for (size_t i = 0; i < map.scores.size(); ++i) {
        map.scores[i] = std::abs(static_cast<double>(layer.fac.d->data[i]));
        map.excluded[i] = layer.fac.m->data[i] == 0.0f;
    }
    return map;
}

void DdAccumulator::observe() {
    for (Projection* p : model_.prunable_layers()) {
        const TensorPtr& param =
            p->state == LayerState::dense ? p->w
            : p->state == LayerState::factorized ? p->fac.d
                                                 : nullptr;
        if (!param) continue;  // densified layers are not prunable in place
        std::vector<double>& acc = acc_[p->name];
        acc.resize(param->data.size(), 0.0);
        const std::vector<float>& g = param->grad;
        for (size_t i = 0; i < acc.size(); ++i) {
            double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
            if (!std::isfinite(gi)) {
                throw NumericError("non-finite gradient in layer " + p->name +
                                   "; scoring aborted");
            }
            double term = gi * static_cast<double>(param->data[i]);
            acc[i] += term * term;
        }
    }
    ++count_;
}

void DdAccumulator::reset() {
    acc_.clear();
    count_ = 0;
}

ImportanceMap DdAccumulator::map_for(const Projection& layer) const {
    if (count_ < 1) {
        throw ContractError("no batches observed; cannot build importance map for " +
                            layer.name);
    }
    const TensorPtr& param =
        layer.state == LayerState::dense ? layer.w
        : layer.state == LayerState::factorized ? layer.fac.d
                                                : nullptr;
    if (!param) throw ContractError("layer " + layer.name + " has no scoreable parameter");
    const TensorPtr& mask =
        layer.state == LayerState::dense ? layer.mask : layer.fac.m;

    ImportanceMap map;
    map.layer = layer.name;
    map.shape = param->shape;
    map.batches = count_;
    map.scores.assign(param->data.size(), 0.0);
    map.excluded.resize(param->data.size());
    auto it = acc_.find(layer.name);
    for (size_t i = 0; i < map.scores.size(); ++i) {
        if (it != acc_.end()) {
            map.scores[i] = it->second[i] / static_cast<double>(count_);
        }
        map.excluded[i] = mask->data[i] == 0.0f;
    }
    return map;
}

std::map<std::string, ImportanceMap> taylor_dd_scores(TransformerLM& model,
                                                      const std::vector<Batch>& batches) {
    if (batches.empty()) throw ConfigError("taylor_dd_scores needs at least one batch");
    DdAccumulator acc(model);
    for (const Batch& batch : batches) {
        for (const ParamRef& p : model.parameters()) p.tensor->zero_grad();
        TensorPtr loss = model.loss(batch);
        if (!std::isfinite(loss->scalar())) {
            throw NumericError("non-finite loss while scoring; aborted");
        }
        backward(loss);
        acc.observe();
    }
    std::map<std::string, ImportanceMap> out;
    for (Projection* p : model.prunable_layers()) {
        if (p->state == LayerState::densified) continue;
        out.emplace(p->name, acc.map_for(*p));
    }
    return out;
}

PruneMask select_unstructured(const ImportanceMap& scores, const PruneMask& mask,
                              double target) {
    if (scores.shape != mask.shape) {
        throw ShapeError("importance map and mask shapes differ");
    }
    if (!(target >= 0.0) || target >= 1.0) {
        throw RangeError("sparsity target must lie in [0, 1), got " +
                         std::to_string(target));
    }
    int64_t n = static_cast<int64_t>(mask.values.size());
    int64_t current_zeros = mask.zeros();
    int64_t want_zeros =
        static_cast<int64_t>(std::floor(target * static_cast<double>(n)));
    if (want_zeros < current_zeros) {
        throw MonotonicityError("target sparsity " + std::to_string(target) +
                                " is below current " +
                                std::to_string(mask.sparsity()));
    }
    PruneMask out = mask;
    if (want_zeros == current_zeros) return out;

    std::vector<int64_t> cand;
    cand.reserve(n - current_zeros);
    for (int64_t i = 0; i < n; ++i) {
        if (mask.values[i]) cand.push_back(i);
    }
    std::sort(cand.begin(), cand.end(), [&](int64_t x, int64_t y) {
        double sx = scores.scores[x], sy = scores.scores[y];
        if (sx != sy) return sx < sy;
        return x < y;
    });
    int64_t k_new = want_zeros - current_zeros;
    for (int64_t i = 0; i < k_new; ++i) out.values[cand[i]] = 0;
    return out;
}

namespace {

// Flat cell indices of one group of the spec over an r x c parameter.
std::vector<int64_t> group_cells(const GroupSpec& spec, const std::vector<int64_t>& group,
                                 int64_t rows, int64_t cols) {
    std::vector<int64_t> cells;
    if (spec.axis == GroupSpec::Axis::rows) {
        cells.reserve(group.size() * cols);
        for (int64_t r : group) {
            for (int64_t c = 0; c < cols; ++c) cells.push_back(r * cols + c);
        }
    } else {
        cells.reserve(group.size() * rows);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c : group) cells.push_back(r * cols + c);
        }
    }
    return cells;
}

}  // namespace

std::vector<double> group_scores(const ImportanceMap& scores, const GroupSpec& spec,
                                 Reduction reduction) {
    if (scores.shape.size() != 2) {
        throw ShapeError("group scores need a 2D importance map");
    }
    int64_t rows = scores.shape[0], cols = scores.shape[1];
    spec.validate(spec.axis == GroupSpec::Axis::rows ? rows : cols);

    std::vector<double> out;
    out.reserve(spec.groups.size());
    for (const auto& group : spec.groups) {
        std::vector<int64_t> cells = group_cells(spec, group, rows, cols);
        double acc = reduction == Reduction::min ? std::numeric_limits<double>::infinity()
                     : reduction == Reduction::max
                         ? -std::numeric_limits<double>::infinity()
                         : 0.0;
        int64_t live = 0;
        for (int64_t cell : cells) {
            if (!scores.excluded.empty() && scores.excluded[cell]) continue;
            double s = scores.scores[cell];
            switch (reduction) {
                case Reduction::mean: acc += s; break;
                case Reduction::min: acc = std::min(acc, s); break;
                case Reduction::max: acc = std::max(acc, s); break;
            }
            ++live;
        }
        if (live == 0) {
            out.push_back(0.0);  // fully masked group; never a candidate
        } else if (reduction == Reduction::mean) {
            out.push_back(acc / static_cast<double>(live));
        } else {
            out.push_back(acc);
        }
    }
    return out;
}

PruneMask select_structured(const ImportanceMap& scores, const GroupSpec& spec,
                            const PruneMask& mask, double target, Reduction reduction) {
    if (scores.shape != mask.shape) {
        throw ShapeError("importance map and mask shapes differ");
    }
    if (!(target >= 0.0) || target >= 1.0) {
        throw RangeError("sparsity target must lie in [0, 1), got " +
                         std::to_string(target));
    }
    int64_t rows = scores.shape[0], cols = scores.shape[1];
    int64_t n = rows * cols;
    int64_t current_zeros = mask.zeros();
    double current = static_cast<double>(current_zeros) / static_cast<double>(n);
    // Whole-group removal quantizes sparsity coarsely, so a schedule step
    // finer than one group can hand us a target the previous event already
    // overshot. Keeping the mask as is (the p == 0 prefix below) preserves
    // monotonicity; raising an error here would make every gradual schedule
    // unusable on group grids.
    std::vector<double> gscores = group_scores(scores, spec, reduction);

    // Candidate groups still holding at least one live cell, cheapest first.
    struct Cand {
        int64_t group;
        double score;
        int64_t live_cells;
    };
    std::vector<Cand> cands;
    for (size_t gi = 0; gi < spec.groups.size(); ++gi) {
        std::vector<int64_t> cells = group_cells(spec, spec.groups[gi], rows, cols);
        int64_t live = 0;
        for (int64_t cell : cells) live += mask.values[cell] != 0;
        if (live > 0) cands.push_back({static_cast<int64_t>(gi), gscores[gi], live});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
        if (x.score != y.score) return x.score < y.score;
        return x.group < y.group;
    });

    // Choose the prefix whose resulting sparsity is nearest the target;
    // ties keep fewer groups pruned.
    int64_t best_p = 0;
    double best_gap = std::abs(current - target);
    int64_t zeros = current_zeros;
    for (size_t p = 1; p <= cands.size(); ++p) {
        zeros += cands[p - 1].live_cells;
        double sp = static_cast<double>(zeros) / static_cast<double>(n);
        double gap = std::abs(sp - target);
        if (gap < best_gap) {
            best_gap = gap;
            best_p = static_cast<int64_t>(p);
        }
    }

    PruneMask out = mask;
    out.kind = spec.axis == GroupSpec::Axis::rows ? PruneMask::Kind::row_group
                                                  : PruneMask::Kind::column_group;
    for (int64_t p = 0; p < best_p; ++p) {
        for (int64_t cell : group_cells(spec, spec.groups[cands[p].group], rows, cols)) {
            out.values[cell] = 0;
        }
    }
    return out;
}

ImportanceMap embedding_vocab_grouping(const ImportanceMap& scores) {
    if (scores.shape.size() != 2) {
        throw ShapeError("vocabulary grouping needs a 2D importance map");
    }
    int64_t rows = scores.shape[0], cols = scores.shape[1];
    std::vector<double> colmean(cols, 0.0);
    for (int64_t j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < rows; ++i) acc += scores.scores[i * cols + j];
        colmean[j] = acc / static_cast<double>(rows);
    }
    ImportanceMap out = scores;
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < cols; ++j) out.scores[i * cols + j] = colmean[j];
    }
    return out;
}

std::vector<PruneEvent> prune_step(TransformerLM& model, Criterion criterion,
                                   PruneMethod method, const ScheduleConfig& schedule,
                                   int64_t t, const DdAccumulator* dd) {
    schedule.validate();
    if ((t - schedule.t0) % schedule.delta_t != 0) {
        throw RangeError("step " + std::to_string(t) + " is not aligned to the " +
                         std::to_string(schedule.delta_t) + "-step schedule grid");
    }
    double target = target_sparsity(schedule, t);

    std::vector<PruneEvent> events;
    for (Projection* p : model.prunable_layers()) {
        if (method == PruneMethod::factor_diagonal) {
            PruneEvent ev = prune_factorized_for_target(*p, criterion, target, t, dd);
            events.push_back(ev);
            continue;
        }
        if (p->state != LayerState::dense) {
            throw ContractError("layer " + p->name +
                                " is not dense; use the factor_diagonal method");
        }
        ImportanceMap scores;
        if (criterion == Criterion::magnitude) {
            scores = magnitude_scores(*p);
        } else {
            if (!dd || dd->batch_count() < 1) {
                throw ContractError("taylor_dd pruning needs at least one scored batch");
            }
            scores = dd->map_for(*p);
        }
        if (p->kind == LayerKind::embedding) {
            scores = embedding_vocab_grouping(scores);
        }

        PruneMask mask;
        PruneMask updated;
        if (method == PruneMethod::unstructured) {
            mask = mask_from_tensor(p->mask, PruneMask::Kind::unstructured);
            updated = select_unstructured(scores, mask, target);
        } else {
            // The embedding's groupable axis is the feature dimension; its
            // vocabulary rows are deliberately never group-pruned.
            bool rows_axis = method == PruneMethod::row_group &&
                             p->kind != LayerKind::embedding;
            GroupSpec spec = rows_axis ? GroupSpec::per_row(p->a) : GroupSpec::per_column(p->b);
            mask = mask_from_tensor(p->mask, rows_axis ? PruneMask::Kind::row_group
                                                        : PruneMask::Kind::column_group);
            updated = select_structured(scores, spec, mask, target);
        }
        mask_to_tensor(updated, p->mask);

        PruneEvent ev;
        ev.step = t;
        ev.layer = p->name;
        ev.target = target;
        ev.zeros = updated.zeros();
        ev.total = static_cast<int64_t>(updated.values.size());
        ev.achieved = updated.sparsity();
        ev.criterion = criterion_name(criterion);
        ev.method = prune_method_name(method);
        events.push_back(ev);
    }
    model.apply_masks();
    return events;
}

}  // namespace prunelab
