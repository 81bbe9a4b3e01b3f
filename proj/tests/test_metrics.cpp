#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <vector>

#include "prunelab/factorize.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/tokenizer.hpp"

using namespace prunelab;

namespace {

std::vector<std::string> small_lines() {
    return {
        "the cat sat on the mat",
        "a dog ran over the hill",
        "the cat and the dog met",
        "every mat was flat and wide",
        "dogs chase cats over hills",
        "the hill was wide",
        "cats nap on warm mats",
    };
}

ModelConfig tiny_config(int64_t vocab) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.embed_dim = 8;
    cfg.num_blocks = 1;
    cfg.num_heads = 2;
    cfg.head_dim = 4;
    cfg.ffn_dim = 12;
    cfg.max_seq_len = 16;
    cfg.seed = 13;
    return cfg;
}

}  // namespace

TEST_CASE("eval batches cover the corpus in order with a partial tail") {
    Vocabulary vocab = Vocabulary::train_bpe(small_lines(), 280);
    Corpus corpus;
    corpus.lines = small_lines();
    std::vector<Batch> batches = eval_batches(vocab, corpus, 3, 16);
    REQUIRE(batches.size() == 3);  // 3 + 3 + 1 utterances
    CHECK(batches[0].batch_size == 3);
    CHECK(batches[2].batch_size == 1);

    // First row must be bos + encode(line0) + eos.
    std::vector<int32_t> want = vocab.encode(small_lines()[0]);
    want.insert(want.begin(), Vocabulary::kBos);
    want.push_back(Vocabulary::kEos);
    for (size_t i = 0; i < want.size(); ++i) {
        CHECK(batches[0].inputs[i] == want[i]);
    }
}

TEST_CASE("perplexity matches a per-token log-sum-exp oracle") {
    Vocabulary vocab = Vocabulary::train_bpe(small_lines(), 280);
    Corpus corpus;
    corpus.lines = small_lines();
    TransformerLM model(tiny_config(vocab.size()));
    std::vector<Batch> batches = eval_batches(vocab, corpus, 3, 16);

    double nll = 0.0;
    int64_t tokens = 0;
    const int64_t v = model.config.vocab_size;
    for (Batch& b : batches) {
        TensorPtr logits = model.forward(b);
        for (int64_t pos = 0; pos < b.batch_size * b.seq_len; ++pos) {
            const int32_t target = b.targets[static_cast<size_t>(pos)];
            if (target == Vocabulary::kPad) continue;
            double mx = -1e300;
            for (int64_t j = 0; j < v; ++j) {
                mx = std::max(mx, static_cast<double>(logits->data[pos * v + j]));
            }
            double lse = 0.0;
            for (int64_t j = 0; j < v; ++j) {
                lse += std::exp(static_cast<double>(logits->data[pos * v + j]) - mx);
            }
            nll += mx + std::log(lse) - static_cast<double>(logits->data[pos * v + target]);
            ++tokens;
        }
    }
    const double want = std::exp(nll / static_cast<double>(tokens));

    int64_t got_tokens = 0;
    total_nll(model, batches, &got_tokens);
    CHECK(got_tokens == tokens);
    CHECK(perplexity(model, batches) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("perplexity is invariant to evaluation batch size") {
    Vocabulary vocab = Vocabulary::train_bpe(small_lines(), 280);
    Corpus corpus;
    corpus.lines = small_lines();
    TransformerLM model(tiny_config(vocab.size()));
    const double p1 = perplexity(model, eval_batches(vocab, corpus, 1, 16));
    const double p3 = perplexity(model, eval_batches(vocab, corpus, 3, 16));
    const double p7 = perplexity(model, eval_batches(vocab, corpus, 7, 16));
    CHECK(p1 == p3);
    CHECK(p3 == p7);
}

TEST_CASE("perplexity of empty input is an evaluation error") {
    TransformerLM model(tiny_config(40));
    std::vector<Batch> none;
    CHECK_THROWS_AS(perplexity(model, none), EvalError);
}

TEST_CASE("flop accounting for dense, masked, factorized, and densified layers") {
    TransformerLM model(tiny_config(40));
    FlopReport dense = flops(model);

    // Dense projection: 2ab. Embedding lookup: free.
    std::map<std::string, int64_t> by_name;
    for (const FlopEntry& e : dense.layers) by_name[e.layer] = e.flops;
    CHECK(by_name.at("embed.tok") == 0);
    CHECK(by_name.at("block0.attn.wq") == 2 * 8 * 8);
    CHECK(by_name.at("block0.ffn.w1") == 2 * 8 * 12);
    CHECK(by_name.at("out.proj") == 2 * 8 * 40);
    CHECK(by_name.at("block0.attn.attention") == 4 * 16 * 8);
    int64_t sum = 0;
    for (const FlopEntry& e : dense.layers) sum += e.flops;
    CHECK(sum == dense.total);

    // Element masking leaves the cost unchanged.
    Projection* w1 = model.find_layer("block0.ffn.w1");
    for (int64_t i = 0; i < w1->mask->numel(); i += 2) w1->mask->data[i] = 0.0f;
    model.apply_masks();
    FlopReport masked = flops(model);
    CHECK(masked.total == dense.total);
    CHECK(flop_speedup(dense, masked) == doctest::Approx(1.0));

    // Factorized rank k costs 2k(a+b); masking the diagonal reduces k.
    factorize_layer(model, "block0.ffn.w1");
    w1->fac.m->data[7] = 0.0f;
    model.apply_masks();
    FlopReport fact = flops(model);
    std::map<std::string, int64_t> fact_by_name;
    for (const FlopEntry& e : fact.layers) fact_by_name[e.layer] = e.flops;
    CHECK(fact_by_name.at("block0.ffn.w1") == 2 * 7 * (8 + 12));

    densify_layer(model, "block0.ffn.w1");
    FlopReport densified = flops(model);
    std::map<std::string, int64_t> den_by_name;
    for (const FlopEntry& e : densified.layers) den_by_name[e.layer] = e.flops;
    CHECK(den_by_name.at("block0.ffn.w1") == 2 * 7 * (8 + 12));

    // Factorized embedding: k * (2b + 1) per token.
    factorize_layer(model, "embed.tok");
    Projection* emb = model.find_layer("embed.tok");
    FlopReport with_emb = flops(model);
    std::map<std::string, int64_t> emb_by_name;
    for (const FlopEntry& e : with_emb.layers) emb_by_name[e.layer] = e.flops;
    CHECK(emb_by_name.at("embed.tok") == emb->fac.rank() * (2 * 8 + 1));
}

TEST_CASE("word frequencies count whitespace-separated words") {
    Corpus corpus;
    corpus.lines = {"a b a", "b c", "a"};
    std::map<std::string, int64_t> f = word_frequencies(corpus);
    CHECK(f.at("a") == 3);
    CHECK(f.at("b") == 2);
    CHECK(f.at("c") == 1);
    CHECK(f.size() == 3);
}

TEST_CASE("percentile buckets partition the dev set by familiarity") {
    Corpus train;
    train.lines = {
        "common common common common words here",
        "common words appear often in text",
        "rare tokens hide in corners",
    };
    Corpus dev;
    dev.lines = {
        "common words",            // very familiar
        "common text",             //
        "rare corners",            // unfamiliar
        "unseen vocabulary line",  // fully novel
        "often common words here",
        "tokens hide",
    };
    std::vector<PercentileBucket> buckets =
        percentile_buckets(dev, word_frequencies(train));
    REQUIRE(buckets.size() == 4);
    CHECK(buckets[0].label == 25);
    CHECK(buckets[3].label == 100);

    // Every utterance lands in exactly one bucket.
    std::set<int64_t> seen;
    int64_t words = 0;
    for (const PercentileBucket& b : buckets) {
        for (int64_t u : b.utterances) CHECK(seen.insert(u).second);
        words += b.words;
    }
    CHECK(seen.size() == dev.lines.size());
    int64_t want_words = 0;
    for (const std::string& l : dev.lines) {
        want_words += 1 + static_cast<int64_t>(std::count(l.begin(), l.end(), ' '));
    }
    CHECK(words == want_words);

    // The top bucket must be the most familiar: it should contain the
    // utterance made purely of the most common training words.
    bool found = false;
    for (int64_t u : buckets[0].utterances) found |= (dev.lines[static_cast<size_t>(u)] == "common words");
    CHECK(found);
}

TEST_CASE("percentile perplexity fills every bucket") {
    Vocabulary vocab = Vocabulary::train_bpe(small_lines(), 280);
    Corpus train;
    train.lines = small_lines();
    Corpus dev;
    dev.lines = {"the cat sat", "a dog ran", "cats nap on mats", "wide flat hills",
                 "the dog and the cat", "warm mats", "every hill", "the mat"};
    TransformerLM model(tiny_config(vocab.size()));

    std::vector<PercentileBucket> buckets = percentile_buckets(dev, word_frequencies(train));
    percentile_ppl(model, vocab, dev, buckets, 2);
    for (const PercentileBucket& b : buckets) {
        CHECK(b.tokens > 0);
        CHECK(b.ppl > 0.0);
        CHECK(std::isfinite(b.ppl));
    }
}

TEST_CASE("layer ablation prunes only the named prefix and tracks recovery") {
    Vocabulary vocab = Vocabulary::train_bpe(small_lines(), 280);
    Corpus corpus;
    corpus.lines = small_lines();
    TransformerLM model(tiny_config(vocab.size()));
    BatchStream stream(vocab, corpus, 3, model.config.max_seq_len, 2);
    std::vector<Batch> dev = eval_batches(vocab, corpus, 3, model.config.max_seq_len);

    TrainConfig tc;
    tc.lr = 0.05;
    tc.warmup_steps = 2;
    AblationResult res = layer_ablation(model, "block0.ffn", 0.5, Criterion::magnitude,
                                        stream, dev, tc, 2);
    CHECK(res.layer == "block0.ffn");
    REQUIRE(res.ppl_per_epoch.size() == 3);  // post-prune + 2 epochs

    // Only the ffn layers of block 0 may hold zeros.
    for (Projection* p : model.prunable_layers()) {
        int64_t zeros = 0;
        for (int64_t i = 0; i < p->mask->numel(); ++i) {
            if (p->mask->data[i] == 0.0f) ++zeros;
        }
        if (p->name == "block0.ffn.w1" || p->name == "block0.ffn.w2") {
            CHECK(zeros == p->a * p->b / 2);
        } else {
            CHECK(zeros == 0);
        }
    }

    CHECK_THROWS_AS(layer_ablation(model, "no.such.layer", 0.5, Criterion::magnitude,
                                   stream, dev, tc, 1),
                    ConfigError);
}

TEST_CASE("learning rate ramps up, holds or anneals, and never rebounds") {
    TransformerLM model(tiny_config(300));
    TrainConfig tc;
    tc.lr = 0.2;
    tc.warmup_steps = 4;

    Trainer flat(model, tc);
    CHECK(flat.lr_at(1) == doctest::Approx(0.05));
    CHECK(flat.lr_at(3) == doctest::Approx(0.15));
    CHECK(flat.lr_at(4) == 0.2);
    CHECK(flat.lr_at(500) == 0.2);

    tc.lr_decay_steps = 10;
    tc.lr_min = 0.02;
    Trainer annealed(model, tc);
    CHECK(annealed.lr_at(4) == 0.2);  // anneal starts where the warmup ends
    CHECK(annealed.lr_at(9) == doctest::Approx(0.11));  // halfway down the cosine
    CHECK(annealed.lr_at(14) == 0.02);
    CHECK(annealed.lr_at(500) == 0.02);
    for (int64_t s = 4; s < 20; ++s) {
        CHECK(annealed.lr_at(s + 1) <= annealed.lr_at(s) + 1e-15);
    }

    // An offset run continues the same curve instead of restarting it.
    tc.lr_step_offset = 7;
    Trainer resumed(model, tc);
    CHECK(resumed.lr_at(2) == doctest::Approx(annealed.lr_at(9)));

    tc.lr_step_offset = 0;
    tc.lr_min = 0.5;  // above lr
    CHECK_THROWS_AS(Trainer(model, tc), ConfigError);
    tc.lr_min = 0.0;
    tc.lr_decay_steps = -1;
    CHECK_THROWS_AS(Trainer(model, tc), ConfigError);
}
