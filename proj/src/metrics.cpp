#include "prunelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace prunelab {

std::vector<Batch> eval_batches(const Vocabulary& vocab, const Corpus& corpus,
                                int64_t batch_size, int64_t seq_len_cap) {
    if (corpus.lines.empty()) throw EvalError("evaluation set is empty");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (seq_len_cap < 2) throw ConfigError("seq_len must be at least 2");

    std::vector<std::vector<int32_t>> seqs;
    seqs.reserve(corpus.lines.size());
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
        seqs.push_back(std::move(s));
    }

    std::vector<Batch> out;
    for (size_t start = 0; start < seqs.size(); start += batch_size) {
        size_t end = std::min(seqs.size(), start + batch_size);
        Batch b;
        b.batch_size = static_cast<int64_t>(end - start);
        int64_t max_len = 2;
        for (size_t i = start; i < end; ++i) {
            max_len = std::max(max_len, static_cast<int64_t>(seqs[i].size()));
        }
        b.seq_len = max_len;
        b.inputs.assign(b.batch_size * max_len, Vocabulary::kPad);
        b.targets.assign(b.batch_size * max_len, Vocabulary::kPad);
        b.lengths.resize(b.batch_size);
        for (size_t i = start; i < end; ++i) {
            const std::vector<int32_t>& s = seqs[i];
            int64_t r = static_cast<int64_t>(i - start);
            int64_t len = static_cast<int64_t>(s.size());
            b.lengths[r] = len;
            for (int64_t t = 0; t < len; ++t) b.inputs[r * max_len + t] = s[t];
            for (int64_t t = 0; t + 1 < len; ++t) b.targets[r * max_len + t] = s[t + 1];
        }
        out.push_back(std::move(b));
    }
    return out;
}

double total_nll(TransformerLM& model, const std::vector<Batch>& batches,
                 int64_t* tokens_out) {
    double nll = 0.0;
    int64_t tokens = 0;
    for (const Batch& batch : batches) {
        TensorPtr logits = model.forward(batch);
        int64_t n = logits->rows(), v = logits->cols();
        for (int64_t i = 0; i < n; ++i) {
            int32_t target = batch.targets[i];
            if (target == Vocabulary::kPad) continue;
            const float* row = logits->data.data() + i * v;
            double mx = row[0];
            for (int64_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double z = 0.0;
            for (int64_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
            nll += mx + std::log(z) - static_cast<double>(row[target]);
            ++tokens;
        }
    }
    if (tokens_out) *tokens_out = tokens;
    return nll;
}

double perplexity(TransformerLM& model, const std::vector<Batch>& batches) {
    if (batches.empty()) throw EvalError("evaluation set is empty");
    int64_t tokens = 0;
    double nll = total_nll(model, batches, &tokens);
    if (tokens == 0) throw EvalError("evaluation set has no scoreable tokens");
    return std::exp(nll / static_cast<double>(tokens));
}

FlopReport flops(TransformerLM& model) {
    FlopReport report;
    int64_t t = model.config.max_seq_len;
    int64_t d = model.config.embed_dim;

    for (Projection* p : model.prunable_layers()) {
        int64_t count = 0;
        bool lookup = p->kind == LayerKind::embedding;
        switch (p->state) {
            case LayerState::dense:
                count = lookup ? 0 : 2 * p->a * p->b;
                break;
            case LayerState::factorized: {
                int64_t k = p->fac.unmasked_rank();
                count = lookup ? k * (2 * p->b + 1) : 2 * k * (p->a + p->b);
                break;
            }
            case LayerState::densified: {
                int64_t k = p->den.rank();
                count = lookup ? 2 * k * p->b : 2 * k * (p->a + p->b);
                break;
            }
        }
        report.layers.push_back({p->name, count});
        // Attention score + context cost rides behind the output projection
        // of its block.
        if (p->name.size() > 8 &&
            p->name.compare(p->name.size() - 8, 8, ".attn.wo") == 0) {
            std::string block = p->name.substr(0, p->name.size() - 8);
            report.layers.push_back({block + ".attn.attention", 4 * t * d});
        }
    }
    for (const FlopEntry& e : report.layers) report.total += e.flops;
    return report;
}

double flop_speedup(const FlopReport& baseline, const FlopReport& model) {
    if (model.total <= 0 || baseline.total <= 0) {
        throw EvalError("FLOP totals must be positive to form a ratio");
    }
    return static_cast<double>(baseline.total) / static_cast<double>(model.total);
}

std::map<std::string, int64_t> word_frequencies(const Corpus& corpus) {
    std::map<std::string, int64_t> freqs;
    for (const std::string& line : corpus.lines) {
        std::istringstream ss(line);
        std::string word;
        while (ss >> word) ++freqs[word];
    }
    return freqs;
}

std::vector<PercentileBucket> percentile_buckets(
    const Corpus& dev, const std::map<std::string, int64_t>& train_freqs) {
    if (dev.lines.empty()) throw EvalError("dev set is empty");

    struct Item {
        int64_t idx;
        double stat;
        int64_t words;
    };
    std::vector<Item> items;
    int64_t total_words = 0;
    for (size_t i = 0; i < dev.lines.size(); ++i) {
        std::istringstream ss(dev.lines[i]);
        std::string word;
        double acc = 0.0;
        int64_t n = 0;
        while (ss >> word) {
            auto it = train_freqs.find(word);
            int64_t count = it == train_freqs.end() ? 0 : it->second;
            acc += std::log(static_cast<double>(count + 1));
            ++n;
        }
        items.push_back({static_cast<int64_t>(i), n > 0 ? acc / n : 0.0, n});
        total_words += n;
    }
    if (total_words == 0) throw EvalError("dev set has no words");

    // Most frequent first; the 25 bucket holds the most common quarter.
    std::sort(items.begin(), items.end(), [](const Item& x, const Item& y) {
        if (x.stat != y.stat) return x.stat > y.stat;
        return x.idx < y.idx;
    });

    std::vector<PercentileBucket> buckets(4);
    for (int k = 0; k < 4; ++k) buckets[k].label = (k + 1) * 25;

    int bucket = 0;
    int64_t cum = 0;
    for (const Item& item : items) {
        // Advance when stopping short of the quarter boundary beats
        // overshooting it, as long as the current bucket is non-empty.
        while (bucket < 3 && !buckets[bucket].utterances.empty()) {
            double boundary = static_cast<double>(total_words) * (bucket + 1) / 4.0;
            double under = std::abs(static_cast<double>(cum) - boundary);
            double over = std::abs(static_cast<double>(cum + item.words) - boundary);
            if (over >= under) {
                ++bucket;
            } else {
                break;
            }
        }
        buckets[bucket].utterances.push_back(item.idx);
        buckets[bucket].words += item.words;
        cum += item.words;
    }
    return buckets;
}

void percentile_ppl(TransformerLM& model, const Vocabulary& vocab, const Corpus& dev,
                    std::vector<PercentileBucket>& buckets, int64_t batch_size) {
    for (PercentileBucket& bucket : buckets) {
        if (bucket.utterances.empty()) {
            throw EvalError("percentile bucket " + std::to_string(bucket.label) +
                            " holds no utterances");
        }
        Corpus sub;
        for (int64_t idx : bucket.utterances) sub.lines.push_back(dev.lines[idx]);
        std::vector<Batch> batches =
            eval_batches(vocab, sub, batch_size, model.config.max_seq_len);
        int64_t tokens = 0;
        double nll = total_nll(model, batches, &tokens);
        if (tokens == 0) {
            throw EvalError("percentile bucket " + std::to_string(bucket.label) +
                            " has no scoreable tokens");
        }
        bucket.tokens = tokens;
        bucket.ppl = std::exp(nll / static_cast<double>(tokens));
    }
}

AblationResult layer_ablation(TransformerLM& model, const std::string& layer,
                              double sparsity, Criterion criterion,
                              const BatchStream& train_stream,
                              const std::vector<Batch>& dev_batches,
                              const TrainConfig& tcfg, int64_t epochs) {
    if (!(sparsity >= 0.0) || sparsity >= 1.0) {
        throw RangeError("ablation sparsity must lie in [0, 1), got " +
                         std::to_string(sparsity));
    }
    if (epochs < 0) throw ConfigError("epochs must be non-negative");

    std::vector<Projection*> targets;
    for (Projection* p : model.prunable_layers()) {
        if (p->name == layer ||
            (p->name.size() > layer.size() && p->name.compare(0, layer.size(), layer) == 0 &&
             p->name[layer.size()] == '.')) {
            targets.push_back(p);
        }
    }
    if (targets.empty()) {
        throw ConfigError("no prunable layer matches '" + layer + "'");
    }

    if (sparsity > 0.0) {
        DdAccumulator dd(model);
        if (criterion == Criterion::taylor_dd) {
            int64_t bpe = train_stream.batches_per_epoch();
            Batch b = train_stream.get(model.step / bpe, model.step % bpe);
            for (const ParamRef& p : model.parameters()) p.tensor->zero_grad();
            TensorPtr loss = model.loss(b);
            if (!std::isfinite(loss->scalar())) {
                throw NumericError("non-finite loss while scoring; aborted");
            }
            backward(loss);
            dd.observe();
        }
        for (Projection* p : targets) {
            if (p->state != LayerState::dense) {
                throw ContractError("layer " + p->name + " is not dense; ablation works on dense layers");
            }
            ImportanceMap scores = criterion == Criterion::magnitude
                                       ? magnitude_scores(*p)
                                       : dd.map_for(*p);
            if (p->kind == LayerKind::embedding) {
                scores = embedding_vocab_grouping(scores);
            }
            PruneMask mask = mask_from_tensor(p->mask, PruneMask::Kind::unstructured);
            mask_to_tensor(select_unstructured(scores, mask, sparsity), p->mask);
        }
        model.apply_masks();
    }

    AblationResult result;
    result.layer = layer;
    result.sparsity = sparsity;
    result.ppl_per_epoch.push_back(perplexity(model, dev_batches));

    Trainer trainer(model, tcfg);
    for (int64_t e = 0; e < epochs; ++e) {
        trainer.run(train_stream, train_stream.batches_per_epoch());
        result.ppl_per_epoch.push_back(perplexity(model, dev_batches));
    }
    return result;
}

}  // namespace prunelab
