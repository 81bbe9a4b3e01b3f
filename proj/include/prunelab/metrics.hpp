#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prunelab/data.hpp"
#include "prunelab/model.hpp"
#include "prunelab/prune.hpp"
#include "prunelab/train.hpp"

namespace prunelab {

// Dev batches in corpus order, final partial batch kept. Evaluation must
// cover every utterance and stay independent of training shuffles.
std::vector<Batch> eval_batches(const Vocabulary& vocab, const Corpus& corpus,
                                int64_t batch_size, int64_t seq_len_cap);

// Sum of per-token negative log-likelihood in nats (f64 accumulation) over
// non-padding targets, plus that token count.
double total_nll(TransformerLM& model, const std::vector<Batch>& batches,
                 int64_t* tokens_out);

// exp(mean token NLL). Empty input or zero scoreable tokens is an
// evaluation error.
double perplexity(TransformerLM& model, const std::vector<Batch>& batches);

// Analytic per-token inference cost with a full cached context: each
// projection of shape a x b costs 2ab FLOPs dense (element masking does not
// reduce it) and 2k(a+b) at unmasked rank k. Attention adds 4 * T * d per
// block for scores and context over T = max_seq_len cached positions. The
// token embedding is a table lookup, so it costs 0 dense and k * (2b + 1)
// factorized (diagonal scale plus the V multiply). Elementwise work and
// normalization are excluded throughout.
struct FlopEntry {
    std::string layer;
    int64_t flops = 0;
};

struct FlopReport {
    std::vector<FlopEntry> layers;
    int64_t total = 0;
};

FlopReport flops(TransformerLM& model);

// Speed-up of `model` relative to `baseline`: baseline.total / model.total.
double flop_speedup(const FlopReport& baseline, const FlopReport& model);

// Word-frequency percentile analysis. Utterances are ranked by mean add-one
// smoothed log frequency of their whitespace words under the training
// corpus, most frequent first, then cut into four buckets holding as close
// to 25% of the dev words each as utterance granularity allows.
struct PercentileBucket {
    int label = 0;  // 25, 50, 75, 100
    std::vector<int64_t> utterances;
    int64_t words = 0;
    int64_t tokens = 0;
    double ppl = 0.0;
};

std::map<std::string, int64_t> word_frequencies(const Corpus& corpus);

std::vector<PercentileBucket> percentile_buckets(
    const Corpus& dev, const std::map<std::string, int64_t>& train_freqs);

// Fills tokens and ppl per bucket. A bucket with no scoreable tokens is an
// evaluation error.
void percentile_ppl(TransformerLM& model, const Vocabulary& vocab, const Corpus& dev,
                    std::vector<PercentileBucket>& buckets, int64_t batch_size);

// Prune only the layers whose name equals or starts with `layer`, one-shot
// to `sparsity`, then fine-tune and record dev perplexity after each epoch.
// Entry 0 is the post-prune, pre-finetune perplexity.
struct AblationResult {
    std::string layer;
    double sparsity = 0.0;
    std::vector<double> ppl_per_epoch;
};

AblationResult layer_ablation(TransformerLM& model, const std::string& layer,
                              double sparsity, Criterion criterion,
                              const BatchStream& train_stream,
                              const std::vector<Batch>& dev_batches,
                              const TrainConfig& tcfg, int64_t epochs);

}  // namespace prunelab
