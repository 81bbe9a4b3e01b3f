#include "prunelab/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace prunelab {

Corpus load_corpus(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open corpus file " + path);
    Corpus corpus;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) corpus.lines.push_back(line);
    }
    if (corpus.lines.empty()) throw IoError("corpus file " + path + " has no non-empty lines");
    return corpus;
}

void split_corpus(const Corpus& corpus, uint64_t dev_numer, uint64_t dev_denom,
                  Corpus* train_out, Corpus* dev_out) {
    if (dev_denom == 0 || dev_numer >= dev_denom) {
        throw ConfigError("dev fraction must satisfy 0 <= numer < denom");
    }
    train_out->lines.clear();
    dev_out->lines.clear();
    for (const std::string& line : corpus.lines) {
        if (fnv1a(line) % dev_denom < dev_numer) {
            dev_out->lines.push_back(line);
        } else {
            train_out->lines.push_back(line);
        }
    }
    if (train_out->lines.empty() || dev_out->lines.empty()) {
        throw IoError("corpus split left an empty side; corpus too small");
    }
}

int64_t Batch::target_count() const {
    int64_t n = 0;
    for (int64_t len : lengths) n += len - 1;  // final real position has no target
    return n;
}

BatchStream::BatchStream(const Vocabulary& vocab, const Corpus& corpus,
                         int64_t batch_size, int64_t seq_len_cap, uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (seq_len_cap < 2) {
        throw ConfigError("seq_len must be at least 2, got " + std::to_string(seq_len_cap));
    }
    seqs_.reserve(corpus.lines.size());
    for (const std::string& line : corpus.lines) {
        std::vector<int32_t> ids = vocab.encode(line);
        std::vector<int32_t> s;
        s.reserve(ids.size() + 2);
        s.push_back(Vocabulary::kBos);
        s.insert(s.end(), ids.begin(), ids.end());
        s.push_back(Vocabulary::kEos);
        if (static_cast<int64_t>(s.size()) > seq_len_cap) {
            s.resize(seq_len_cap);
            s.back() = Vocabulary::kEos;
        }
        seqs_.push_back(std::move(s));
    }
    batches_per_epoch_ = static_cast<int64_t>(seqs_.size()) / batch_size_;
    if (batches_per_epoch_ == 0) {
        throw ConfigError("corpus has " + std::to_string(seqs_.size()) +
                          " utterances, fewer than one batch of " +
                          std::to_string(batch_size_));
    }
}

int64_t BatchStream::tokens_per_epoch() const {
    std::vector<int64_t> order = epoch_order(0);
    int64_t total = 0;
    for (int64_t i = 0; i < batches_per_epoch_ * batch_size_; ++i) {
        total += static_cast<int64_t>(seqs_[order[i]].size());
    }
    return total;
}

std::vector<int64_t> BatchStream::epoch_order(int64_t epoch) const {
    std::vector<int64_t> order(seqs_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed_ ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(epoch + 1)));
    deterministic_shuffle(order, rng);
    return order;
}

Batch BatchStream::get(int64_t epoch, int64_t index) const {
    if (index < 0 || index >= batches_per_epoch_) {
        throw RangeError("batch index " + std::to_string(index) + " out of range [0, " +
                         std::to_string(batches_per_epoch_) + ")");
    }
    std::vector<int64_t> order = epoch_order(epoch);

    Batch b;
    b.batch_size = batch_size_;
    int64_t start = index * batch_size_;
    int64_t max_len = 2;
    for (int64_t r = 0; r < batch_size_; ++r) {
        max_len = std::max(max_len, static_cast<int64_t>(seqs_[order[start + r]].size()));
    }
    b.seq_len = max_len;
    b.inputs.assign(batch_size_ * max_len, Vocabulary::kPad);
    b.targets.assign(batch_size_ * max_len, Vocabulary::kPad);
    b.lengths.resize(batch_size_);
    for (int64_t r = 0; r < batch_size_; ++r) {
        const std::vector<int32_t>& s = seqs_[order[start + r]];
        int64_t len = static_cast<int64_t>(s.size());
        b.lengths[r] = len;
        for (int64_t t = 0; t < len; ++t) b.inputs[r * max_len + t] = s[t];
        for (int64_t t = 0; t + 1 < len; ++t) b.targets[r * max_len + t] = s[t + 1];
    }
    return b;
}

std::vector<Batch> BatchStream::epoch_batches(int64_t epoch) const {
    std::vector<Batch> out;
    out.reserve(batches_per_epoch_);
    for (int64_t i = 0; i < batches_per_epoch_; ++i) out.push_back(get(epoch, i));
    return out;
}

}  // namespace prunelab
