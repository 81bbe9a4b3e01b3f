#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "prunelab/common.hpp"
#include "prunelab/model.hpp"
#include "prunelab/prune.hpp"

using namespace prunelab;

namespace {

ImportanceMap map_of(std::vector<int64_t> shape, std::vector<double> scores,
                     std::vector<uint8_t> excluded = {}) {
    ImportanceMap m;
    m.layer = "t";
    m.shape = std::move(shape);
    m.scores = std::move(scores);
    if (excluded.empty()) excluded.assign(m.scores.size(), 0);
    m.excluded = std::move(excluded);
    return m;
}

PruneMask ones_mask(std::vector<int64_t> shape,
                    PruneMask::Kind kind = PruneMask::Kind::unstructured) {
    PruneMask m;
    m.kind = kind;
    m.shape = std::move(shape);
    int64_t n = 1;
    for (int64_t d : m.shape) n *= d;
    m.values.assign(static_cast<size_t>(n), 1);
    return m;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 24;
    cfg.embed_dim = 8;
    cfg.num_blocks = 1;
    cfg.num_heads = 2;
    cfg.head_dim = 4;
    cfg.ffn_dim = 12;
    cfg.max_seq_len = 10;
    cfg.seed = 3;
    return cfg;
}

Batch tiny_batch() {
    Batch b;
    b.batch_size = 2;
    b.seq_len = 5;
    b.inputs = {2, 5, 9, 13, 17, 2, 6, 10, 14, 18};
    b.targets = {5, 9, 13, 17, 3, 6, 10, 14, 18, 3};
    b.lengths = {5, 5};
    return b;
}

}  // namespace

TEST_CASE("schedule hits its endpoints and the closed-form midpoint") {
    ScheduleConfig sc;
    sc.s_i = 0.0;
    sc.s_f = 0.9;
    sc.n = 10;
    sc.delta_t = 1;
    sc.t0 = 0;
    CHECK(target_sparsity(sc, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(target_sparsity(sc, 10) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(std::abs(target_sparsity(sc, 5) - 0.7875) <= 1e-12);
    CHECK_THROWS_AS(target_sparsity(sc, -1), RangeError);
    CHECK_THROWS_AS(target_sparsity(sc, 11), RangeError);
}

TEST_CASE("schedule is monotone over random valid configurations") {
    Rng rng(41);
    for (int trial = 0; trial < 1000; ++trial) {
        ScheduleConfig sc;
        sc.s_i = rng.uniform() * 0.5;
        sc.s_f = sc.s_i + rng.uniform() * (0.999 - sc.s_i);
        sc.n = 1 + static_cast<int64_t>(rng.uniform_int(20));
        sc.delta_t = 1 + static_cast<int64_t>(rng.uniform_int(40));
        sc.t0 = static_cast<int64_t>(rng.uniform_int(1000));
        sc.validate();

        double prev = -1.0;
        for (int64_t t = sc.t0; t <= sc.end_step(); ++t) {
            const double s = target_sparsity(sc, t);
            CHECK(s >= prev - 1e-12);
            CHECK(s >= sc.s_i - 1e-12);
            CHECK(s <= sc.s_f + 1e-12);
            prev = s;
        }
        CHECK(std::abs(target_sparsity(sc, sc.t0) - sc.s_i) <= 1e-12);
        CHECK(std::abs(target_sparsity(sc, sc.end_step()) - sc.s_f) <= 1e-12);
    }
}

TEST_CASE("unstructured selection matches exhaustive subset search") {
    // With distinct scores the optimal k-subset to zero is unique, so the
    // selector must find exactly the subset minimizing the kept-away score.
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> scores(6);
        for (double& s : scores) s = rng.uniform();
        const double target = 0.15 + rng.uniform() * 0.8;
        const int64_t want_zeros = static_cast<int64_t>(target * 6);

        PruneMask out = select_unstructured(map_of({6}, scores), ones_mask({6}), target);
        REQUIRE(out.zeros() == want_zeros);

        double best = 1e300;
        uint32_t best_set = 0;
        for (uint32_t set = 0; set < 64; ++set) {
            if (__builtin_popcount(set) != want_zeros) continue;
            double cost = 0.0;
            for (int i = 0; i < 6; ++i) {
                if (set & (1u << i)) cost += scores[static_cast<size_t>(i)];
            }
            if (cost < best) {
                best = cost;
                best_set = set;
            }
        }
        for (int i = 0; i < 6; ++i) {
            CHECK(out.values[static_cast<size_t>(i)] ==
                  ((best_set & (1u << i)) ? 0 : 1));
        }
    }
}

TEST_CASE("unstructured selection zeroes exactly the floor of target times N") {
    Rng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t n = 1 + static_cast<int64_t>(rng.uniform_int(200));
        std::vector<double> scores(static_cast<size_t>(n));
        for (double& s : scores) s = rng.uniform();
        const double target = rng.uniform();
        PruneMask out = select_unstructured(map_of({n}, scores), ones_mask({n}), target);
        CHECK(out.zeros() == static_cast<int64_t>(target * static_cast<double>(n)));
    }
}

TEST_CASE("score ties fall to the lowest flat index") {
    PruneMask out = select_unstructured(map_of({5}, {3.0, 1.0, 1.0, 1.0, 2.0}),
                                        ones_mask({5}), 0.4);
    CHECK(out.values == std::vector<uint8_t>{1, 0, 0, 1, 1});
}

TEST_CASE("selection is equivariant under positive score scaling") {
    Rng rng(44);
    std::vector<double> scores(40);
    for (double& s : scores) s = rng.uniform();
    std::vector<double> scaled = scores;
    for (double& s : scaled) s *= 371.5;
    PruneMask a = select_unstructured(map_of({40}, scores), ones_mask({40}), 0.6);
    PruneMask b = select_unstructured(map_of({40}, scaled), ones_mask({40}), 0.6);
    CHECK(a.values == b.values);
}

TEST_CASE("already-zero positions stay zero as the target grows") {
    Rng rng(45);
    std::vector<double> scores(30);
    for (double& s : scores) s = rng.uniform();
    ImportanceMap m = map_of({30}, scores);
    PruneMask mask = ones_mask({30});
    int64_t prev_zeros = 0;
    for (double target : {0.2, 0.4, 0.6, 0.9}) {
        for (size_t i = 0; i < m.excluded.size(); ++i) {
            m.excluded[i] = mask.values[i] ? 0 : 1;
        }
        PruneMask next = select_unstructured(m, mask, target);
        for (size_t i = 0; i < mask.values.size(); ++i) {
            if (mask.values[i] == 0) CHECK(next.values[i] == 0);
        }
        CHECK(next.zeros() >= prev_zeros);
        prev_zeros = next.zeros();
        mask = next;
    }
}

TEST_CASE("a lowered target cannot revive weights") {
    std::vector<double> scores = {5, 4, 3, 2, 1, 0};
    ImportanceMap m = map_of({6}, scores);
    PruneMask mask = select_unstructured(m, ones_mask({6}), 0.5);
    for (size_t i = 0; i < m.excluded.size(); ++i) {
        m.excluded[i] = mask.values[i] ? 0 : 1;
    }
    CHECK_THROWS_AS(select_unstructured(m, mask, 0.1), MonotonicityError);
}

TEST_CASE("writing a mask that revives a zeroed weight is rejected") {
    TensorPtr t = full({4}, 1.0f);
    t->data[2] = 0.0f;
    PruneMask m = ones_mask({4});
    CHECK_THROWS_AS(mask_to_tensor(m, t), MonotonicityError);
    m.values[2] = 0;
    mask_to_tensor(m, t);  // consistent mask passes
    CHECK(t->data[2] == 0.0f);
}

TEST_CASE("magnitude scores are absolute weights with masked cells excluded") {
    TransformerLM model(tiny_config());
    Projection* p = model.find_layer("block0.ffn.w1");
    REQUIRE(p != nullptr);
    p->mask->data[4] = 0.0f;
    model.apply_masks();
    ImportanceMap m = magnitude_scores(*p);
    REQUIRE(static_cast<int64_t>(m.scores.size()) == p->w->numel());
    for (int64_t i = 0; i < p->w->numel(); ++i) {
        CHECK(m.scores[static_cast<size_t>(i)] ==
              doctest::Approx(std::abs(static_cast<double>(p->w->data[i]))));
    }
    CHECK(m.excluded[4] == 1);
    CHECK(m.excluded[5] == 0);
}

TEST_CASE("gradient-times-weight accumulation matches a hand replay") {
    TransformerLM model(tiny_config());
    DdAccumulator dd(model);
    std::vector<std::map<std::string, std::vector<double>>> per_batch;

    for (int b = 0; b < 3; ++b) {
        Batch batch = tiny_batch();
        batch.inputs[1] = static_cast<int32_t>(5 + b);
        for (const ParamRef& p : model.parameters()) p.tensor->zero_grad();
        TensorPtr loss = model.loss(batch);
        backward(loss);

        std::map<std::string, std::vector<double>> snap;
        for (Projection* p : model.prunable_layers()) {
            std::vector<double> v(static_cast<size_t>(p->w->numel()));
            for (int64_t i = 0; i < p->w->numel(); ++i) {
                const double gw = static_cast<double>(p->w->grad[i]) *
                                  static_cast<double>(p->w->data[i]);
                v[static_cast<size_t>(i)] = gw * gw;
            }
            snap[p->name] = std::move(v);
        }
        per_batch.push_back(std::move(snap));
        dd.observe();
    }

    CHECK(dd.batch_count() == 3);
    for (Projection* p : model.prunable_layers()) {
        ImportanceMap m = dd.map_for(*p);
        for (size_t i = 0; i < m.scores.size(); ++i) {
            double mean = 0.0;
            for (const auto& snap : per_batch) mean += snap.at(p->name)[i];
            mean /= 3.0;
            CHECK(m.scores[i] == doctest::Approx(mean).epsilon(1e-12));
        }
    }

    dd.reset();
    CHECK(dd.batch_count() == 0);
    CHECK_THROWS_AS(dd.map_for(*model.prunable_layers().front()), ContractError);
}

TEST_CASE("group scores reduce per row and per column") {
    // 2 x 3 scores laid out row major.
    ImportanceMap m = map_of({2, 3}, {1, 2, 3, 10, 20, 30});
    GroupSpec rows = GroupSpec::per_row(2);
    GroupSpec cols = GroupSpec::per_column(3);
    std::vector<double> rm = group_scores(m, rows, Reduction::mean);
    CHECK(rm[0] == doctest::Approx(2.0));
    CHECK(rm[1] == doctest::Approx(20.0));
    std::vector<double> cm = group_scores(m, cols, Reduction::mean);
    CHECK(cm[0] == doctest::Approx(5.5));
    CHECK(cm[1] == doctest::Approx(11.0));
    CHECK(cm[2] == doctest::Approx(16.5));
    std::vector<double> cmin = group_scores(m, cols, Reduction::min);
    CHECK(cmin[2] == doctest::Approx(3.0));
    std::vector<double> cmax = group_scores(m, rows, Reduction::max);
    CHECK(cmax[1] == doctest::Approx(30.0));
}

TEST_CASE("masked cells drop out of group means") {
    ImportanceMap m = map_of({2, 2}, {1, 100, 4, 6}, {0, 1, 0, 0});
    std::vector<double> rm = group_scores(m, GroupSpec::per_row(2), Reduction::mean);
    CHECK(rm[0] == doctest::Approx(1.0));  // the 100 is excluded
    CHECK(rm[1] == doctest::Approx(5.0));

    ImportanceMap all_gone = map_of({2, 2}, {1, 2, 3, 4}, {1, 1, 0, 0});
    std::vector<double> z = group_scores(all_gone, GroupSpec::per_row(2), Reduction::mean);
    CHECK(z[0] == 0.0);
}

TEST_CASE("structured selection picks the prefix closest to the target") {
    Rng rng(46);
    for (int trial = 0; trial < 30; ++trial) {
        const int64_t rows = 2 + static_cast<int64_t>(rng.uniform_int(6));
        const int64_t cols = 2 + static_cast<int64_t>(rng.uniform_int(6));
        std::vector<double> scores(static_cast<size_t>(rows * cols));
        for (double& s : scores) s = rng.uniform();
        const double target = rng.uniform();

        ImportanceMap m = map_of({rows, cols}, scores);
        GroupSpec spec = GroupSpec::per_row(rows);
        PruneMask out = select_structured(m, spec, ones_mask({rows, cols},
                                          PruneMask::Kind::row_group), target);

        // Oracle: order rows by mean score and try every prefix length.
        std::vector<double> means = group_scores(m, spec, Reduction::mean);
        std::vector<size_t> order(static_cast<size_t>(rows));
        std::iota(order.begin(), order.end(), size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](size_t a, size_t b) { return means[a] < means[b]; });
        int64_t best_k = 0;
        double best_gap = 1e300;
        for (int64_t k = 0; k <= rows; ++k) {
            const double achieved =
                static_cast<double>(k * cols) / static_cast<double>(rows * cols);
            const double gap = std::abs(achieved - target);
            if (gap < best_gap - 1e-15) {
                best_gap = gap;
                best_k = k;
            }
        }
        CHECK(out.zeros() == best_k * cols);
        for (int64_t k = 0; k < best_k; ++k) {
            const size_t r = order[static_cast<size_t>(k)];
            for (int64_t c = 0; c < cols; ++c) {
                CHECK(out.values[r * static_cast<size_t>(cols) +
                                 static_cast<size_t>(c)] == 0);
            }
        }
    }
}

TEST_CASE("a target the group grid already overshot leaves the mask alone") {
    // Four rows of eight quantize sparsity to steps of 0.25. Asking for 0.4
    // lands on two rows (0.5, the nearest grid point), so a later schedule
    // step asking for 0.45 arrives already satisfied and must not unprune
    // or raise; the mask stays exactly as it was.
    ImportanceMap m = map_of({4, 8}, std::vector<double>(32, 1.0));
    for (int64_t c = 0; c < 8; ++c) {
        m.scores[0 * 8 + static_cast<size_t>(c)] = 0.1;
        m.scores[1 * 8 + static_cast<size_t>(c)] = 0.2;
    }
    GroupSpec spec = GroupSpec::per_row(4);
    PruneMask half = select_structured(m, spec, ones_mask({4, 8},
                                       PruneMask::Kind::row_group), 0.4);
    REQUIRE(half.zeros() == 16);

    PruneMask again = select_structured(m, spec, half, 0.45);
    CHECK(again.zeros() == 16);
    CHECK(again.values == half.values);
}

TEST_CASE("vocabulary grouping replaces scores by their column means") {
    ImportanceMap m = map_of({3, 2}, {1, 10, 2, 20, 3, 30});
    ImportanceMap g = embedding_vocab_grouping(m);
    for (int r = 0; r < 3; ++r) {
        CHECK(g.scores[static_cast<size_t>(r) * 2 + 0] == doctest::Approx(2.0));
        CHECK(g.scores[static_cast<size_t>(r) * 2 + 1] == doctest::Approx(20.0));
    }
}

TEST_CASE("pruning the embedding removes whole feature columns") {
    TransformerLM model(tiny_config());
    ScheduleConfig sc;
    sc.s_i = 0.0;
    sc.s_f = 0.5;
    sc.n = 1;
    sc.delta_t = 1;
    sc.t0 = 0;
    prune_step(model, Criterion::magnitude, PruneMethod::unstructured, sc, 1);

    Projection* emb = model.find_layer("embed.tok");
    REQUIRE(emb != nullptr);
    const int64_t v = emb->a, d = emb->b;
    // Count zeroed cells per feature column: grouping makes the selector
    // consume columns in score order, so at most one column is partial.
    int partial = 0;
    for (int64_t c = 0; c < d; ++c) {
        int64_t zeros = 0;
        for (int64_t r = 0; r < v; ++r) {
            if (emb->mask->data[r * d + c] == 0.0f) ++zeros;
        }
        if (zeros != 0 && zeros != v) ++partial;
    }
    CHECK(partial <= 1);
}

TEST_CASE("prune events record exact per-layer accounting") {
    TransformerLM model(tiny_config());
    ScheduleConfig sc;
    sc.s_i = 0.0;
    sc.s_f = 0.4;
    sc.n = 2;
    sc.delta_t = 5;
    sc.t0 = 10;

    CHECK_THROWS_AS(
        prune_step(model, Criterion::magnitude, PruneMethod::unstructured, sc, 12),
        RangeError);

    std::vector<PruneEvent> ev1 =
        prune_step(model, Criterion::magnitude, PruneMethod::unstructured, sc, 15);
    CHECK(ev1.size() == model.prunable_layers().size());
    for (const PruneEvent& e : ev1) {
        Projection* p = model.find_layer(e.layer);
        REQUIRE(p != nullptr);
        const int64_t n = p->a * p->b;
        CHECK(e.total == n);
        CHECK(e.zeros == static_cast<int64_t>(e.target * static_cast<double>(n)));
        CHECK(e.achieved ==
              doctest::Approx(static_cast<double>(e.zeros) / static_cast<double>(n)));
        for (int64_t i = 0; i < p->w->numel(); ++i) {
            if (p->mask->data[i] == 0.0f) CHECK(p->w->data[i] == 0.0f);
        }
    }

    std::vector<PruneEvent> ev2 =
        prune_step(model, Criterion::magnitude, PruneMethod::unstructured, sc, 20);
    for (const PruneEvent& e : ev2) CHECK(std::abs(e.target - 0.4) <= 1e-12);
}

TEST_CASE("pruned weights stay zero through optimizer-style updates") {
    TransformerLM model(tiny_config());
    ScheduleConfig sc;
    sc.s_i = 0.0;
    sc.s_f = 0.6;
    sc.n = 1;
    sc.delta_t = 1;
    sc.t0 = 0;
    prune_step(model, Criterion::magnitude, PruneMethod::unstructured, sc, 1);

    // Nudge every weight the way an optimizer would, then re-apply masks.
    for (const ParamRef& p : model.parameters()) {
        for (float& v : p.tensor->data) v += 0.01f;
    }
    model.apply_masks();
    for (Projection* p : model.prunable_layers()) {
        for (int64_t i = 0; i < p->w->numel(); ++i) {
            if (p->mask->data[i] == 0.0f) CHECK(p->w->data[i] == 0.0f);
        }
    }
}

TEST_CASE("dense-state methods reject non-dense layers") {
    TransformerLM model(tiny_config());
    Projection* p = model.find_layer("block0.attn.wq");
    REQUIRE(p != nullptr);
    p->state = LayerState::factorized;  // simulate a half-migrated model
    ScheduleConfig sc;
    sc.s_f = 0.3;
    sc.n = 1;
    sc.delta_t = 1;
    CHECK_THROWS_AS(
        prune_step(model, Criterion::magnitude, PruneMethod::unstructured, sc, 1),
        ContractError);
}

TEST_CASE("taylor pruning without observations is rejected") {
    TransformerLM model(tiny_config());
    ScheduleConfig sc;
    sc.s_f = 0.3;
    sc.n = 1;
    sc.delta_t = 1;
    DdAccumulator dd(model);
    CHECK_THROWS_AS(
        prune_step(model, Criterion::taylor_dd, PruneMethod::unstructured, sc, 1, &dd),
        ContractError);
}
