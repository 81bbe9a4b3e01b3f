#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>

#include "prunelab/factorize.hpp"
#include "prunelab/model.hpp"

using namespace prunelab;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 40;
    cfg.embed_dim = 8;
    cfg.num_blocks = 2;
    cfg.num_heads = 2;
    cfg.head_dim = 4;
    cfg.ffn_dim = 16;
    cfg.max_seq_len = 12;
    cfg.seed = 5;
    return cfg;
}

Batch tiny_batch() {
    Batch b;
    b.batch_size = 3;
    b.seq_len = 6;
    b.inputs = {2, 7, 9, 11, 13, 15,   //
                2, 8, 10, 12, 0, 0,    //
                2, 20, 21, 22, 23, 3};
    b.targets = {7, 9, 11, 13, 15, 3,  //
                 8, 10, 12, 3, 0, 0,   //
                 20, 21, 22, 23, 3, 0};
    b.lengths = {6, 4, 6};
    return b;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent dimensions") {
    ModelConfig cfg = tiny_config();
    cfg.num_heads = 3;  // 3 * 4 != 8
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.max_seq_len = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.vocab_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("untrained loss sits near the uniform-distribution bound") {
    TransformerLM model(tiny_config());
    const double loss = model.loss(tiny_batch())->scalar();
    const double uniform = std::log(static_cast<double>(tiny_config().vocab_size));
    CHECK(loss == doctest::Approx(uniform).epsilon(0.05));
}

TEST_CASE("fully masking the output projection forces exactly uniform logits") {
    TransformerLM model(tiny_config());
    Projection* out = model.find_layer("out.proj");
    REQUIRE(out != nullptr);
    for (float& v : out->mask->data) v = 0.0f;
    model.apply_masks();
    const double loss = model.loss(tiny_batch())->scalar();
    CHECK(loss ==
          doctest::Approx(std::log(static_cast<double>(tiny_config().vocab_size)))
              .epsilon(1e-6));
}

TEST_CASE("same config and seed build bit-identical models") {
    TransformerLM a(tiny_config());
    TransformerLM b(tiny_config());
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        REQUIRE(pa[i].tensor->data.size() == pb[i].tensor->data.size());
        CHECK(std::memcmp(pa[i].tensor->data.data(), pb[i].tensor->data.data(),
                          sizeof(float) * pa[i].tensor->data.size()) == 0);
    }
    CHECK(a.loss(tiny_batch())->scalar() == b.loss(tiny_batch())->scalar());
}

TEST_CASE("parameter registry names are unique and mark prunable layers") {
    TransformerLM model(tiny_config());
    std::set<std::string> names;
    int64_t total = 0;
    int prunable = 0;
    for (const ParamRef& p : model.parameters()) {
        CHECK(names.insert(p.name).second);
        total += p.tensor->numel();
        if (p.prunable) ++prunable;
    }
    CHECK(total == model.total_params());
    // embed + 2 blocks x (4 attention + 2 ffn) + output projection
    CHECK(prunable == 14);
    CHECK(model.prunable_layers().size() == 14);
    CHECK(model.find_layer("block0.attn.wq") != nullptr);
    CHECK(model.find_layer("block9.attn.wq") == nullptr);
}

TEST_CASE("masked forward equals a model with weights stored as zero") {
    TransformerLM a(tiny_config());
    TransformerLM b(tiny_config());
    Projection* la = a.find_layer("block0.ffn.w1");
    Projection* lb = b.find_layer("block0.ffn.w1");
    REQUIRE(la != nullptr);
    for (int64_t i = 0; i < la->mask->numel(); i += 2) la->mask->data[i] = 0.0f;
    a.apply_masks();
    for (int64_t i = 0; i < lb->w->numel(); i += 2) lb->w->data[i] = 0.0f;

    TensorPtr fa = a.forward(tiny_batch());
    TensorPtr fb = b.forward(tiny_batch());
    CHECK(std::memcmp(fa->data.data(), fb->data.data(),
                      sizeof(float) * fa->data.size()) == 0);
}

TEST_CASE("effective params track masks, factor ranks, and densified ranks") {
    TransformerLM model(tiny_config());
    const int64_t dense_total = model.total_params();
    CHECK(model.effective_params() == dense_total);

    Projection* l = model.find_layer("block1.ffn.w2");
    REQUIRE(l != nullptr);
    l->mask->data[0] = 0.0f;
    l->mask->data[5] = 0.0f;
    model.apply_masks();
    CHECK(model.effective_params() == dense_total - 2);

    // Factorize one layer: w (a x b) becomes U (a x r) + D (r) + V (r x b).
    factorize_layer(model, "block0.attn.wq");
    Projection* q = model.find_layer("block0.attn.wq");
    REQUIRE(q->state == LayerState::factorized);
    const int64_t r = q->fac.rank();
    const int64_t expect_q = r * (q->a + q->b) + r;
    CHECK(q->effective_params() == expect_q);

    q->fac.m->data[0] = 0.0f;
    model.apply_masks();
    CHECK(q->effective_params() == (r - 1) * (q->a + q->b) + (r - 1));

    densify_layer(model, "block0.attn.wq");
    REQUIRE(q->state == LayerState::densified);
    CHECK(q->den.rank() == r - 1);
    CHECK(q->effective_params() == (r - 1) * (q->a + q->b));
}

TEST_CASE("checkpoint roundtrip preserves every tensor bit") {
    TransformerLM model(tiny_config());
    model.step = 123;
    // Above INT64_MAX on purpose: hashes use the full 64-bit range and a
    // signed parse on the way back in would overflow for half of them.
    model.vocab_hash = 0x9dc6f22acb1b8d44ull;
    Projection* l = model.find_layer("block0.attn.wv");
    l->mask->data[3] = 0.0f;
    model.apply_masks();
    factorize_layer(model, "block1.ffn.w1");

    const std::string path = "model_roundtrip.ckpt";
    model_to_container(model).write(path);
    TransformerLM restored = model_from_container(TensorContainer::read(path));
    std::remove(path.c_str());

    CHECK(restored.step == 123);
    CHECK(restored.vocab_hash == 0x9dc6f22acb1b8d44ull);
    CHECK(restored.find_layer("block1.ffn.w1")->state == LayerState::factorized);
    CHECK(restored.find_layer("block0.attn.wv")->mask->data[3] == 0.0f);

    auto pa = model.parameters();
    auto pb = restored.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(std::memcmp(pa[i].tensor->data.data(), pb[i].tensor->data.data(),
                          sizeof(float) * pa[i].tensor->data.size()) == 0);
    }
    CHECK(model.loss(tiny_batch())->scalar() == restored.loss(tiny_batch())->scalar());
}

TEST_CASE("forward rejects out-of-contract batches") {
    TransformerLM model(tiny_config());
    Batch b = tiny_batch();
    b.seq_len = 20;  // over max_seq_len
    b.inputs.assign(static_cast<size_t>(b.batch_size * b.seq_len), 5);
    b.targets.assign(static_cast<size_t>(b.batch_size * b.seq_len), 5);
    CHECK_THROWS_AS(model.forward(b), RangeError);

    Batch c = tiny_batch();
    c.inputs.pop_back();
    CHECK_THROWS_AS(model.forward(c), ShapeError);
}

TEST_CASE("training step count survives checkpointing through the container") {
    TransformerLM model(tiny_config());
    TensorContainer c = model_to_container(model);
    CHECK(c.meta_int("step") == 0);
    CHECK(c.meta("format") == "prunelab-ckpt");
}
