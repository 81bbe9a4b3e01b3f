#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunelab/common.hpp"
#include "prunelab/tokenizer.hpp"

namespace prunelab {

// One utterance per line; blank lines are dropped at load time.
struct Corpus {
    std::vector<std::string> lines;
};

Corpus load_corpus(const std::string& path);

// Deterministic content-hash split: a line goes to dev iff
// fnv1a(line) % denom < numer. Reordering the corpus file cannot move a
// line between splits.
void split_corpus(const Corpus& corpus, uint64_t dev_numer, uint64_t dev_denom,
                  Corpus* train_out, Corpus* dev_out);

// A rectangular token batch. Rows are per-utterance sequences
// [bos, tokens..., eos] right-padded with pad to the longest row. targets[t]
// is inputs[t + 1]; positions past a row's end hold pad and are excluded
// from the loss.
struct Batch {
    int64_t batch_size = 0;
    int64_t seq_len = 0;
    std::vector<int32_t> inputs;   // batch_size * seq_len, row major
    std::vector<int32_t> targets;  // batch_size * seq_len
    std::vector<int64_t> lengths;  // real token count per row

    int64_t target_count() const;  // positions that enter the loss
};

// Deterministic batching over a tokenized corpus. Batch (epoch, index) is a
// pure function of (corpus, vocabulary, batch_size, cap, seed), so training
// can be resumed mid-epoch by re-deriving the same permutation.
class BatchStream {
public:
    BatchStream(const Vocabulary& vocab, const Corpus& corpus,
                int64_t batch_size, int64_t seq_len_cap, uint64_t seed);

    int64_t batches_per_epoch() const { return batches_per_epoch_; }
    int64_t utterance_count() const { return static_cast<int64_t>(seqs_.size()); }

    // Tokens scheduled in one epoch (the final partial batch is dropped).
    int64_t tokens_per_epoch() const;

    Batch get(int64_t epoch, int64_t index) const;

    // All batches of one epoch in order; used for evaluation sweeps.
    std::vector<Batch> epoch_batches(int64_t epoch) const;

    const std::vector<std::vector<int32_t>>& sequences() const { return seqs_; }

private:
    std::vector<std::vector<int32_t>> seqs_;  // bos ... eos, capped
    int64_t batch_size_;
    int64_t batches_per_epoch_;
    uint64_t seed_;

    std::vector<int64_t> epoch_order(int64_t epoch) const;
};

}  // namespace prunelab
