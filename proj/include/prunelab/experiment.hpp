#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "prunelab/data.hpp"
#include "prunelab/factorize.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/model.hpp"
#include "prunelab/prune.hpp"
#include "prunelab/train.hpp"

namespace prunelab {

// Pruning method as configured; structured/factorized map onto the
// selection primitives plus the factorization life cycle.
enum class RunMethod { unstructured, structured_rows, structured_cols, factorized };

const char* run_method_name(RunMethod m);
RunMethod run_method_from_name(const std::string& s);

// Whole-experiment configuration, read from a versioned key-value file with
// [section] headers. Unknown sections or keys are errors; the file
// round-trips losslessly through parse/serialize.
struct ExperimentConfig {
    ModelConfig model;

    std::string corpus;       // one utterance per line
    uint64_t dev_numer = 1;   // dev split: hash(line) % denom < numer
    uint64_t dev_denom = 20;
    int64_t batch_size = 16;

    TrainConfig train;
    int64_t train_epochs = 6;
    uint64_t seed = 1;  // batch order; also the default model seed

    ScheduleConfig schedule;  // t0 is set at run time, not configured

    Criterion criterion = Criterion::magnitude;
    RunMethod method = RunMethod::unstructured;
    std::vector<double> target_sizes = {0.5, 0.25, 0.1, 0.05};
    int64_t finetune_epochs = 2;

    std::string out_dir = "runs/default";

    static ExperimentConfig parse_file(const std::string& path);
    static ExperimentConfig parse(std::istream& in, const std::string& label);
    std::string serialize() const;
    void validate() const;
};

struct ReportRow {
    std::string label;
    int64_t effective = 0;
    double ppl = 0.0;
    double delta_pct = 0.0;  // vs the first row, already rounded to 1 decimal
    int64_t flops = 0;
    double speedup = 0.0;    // vs the first row, rounded to 2 decimals
};

// One experiment directory: config copy, vocabulary, checkpoints, event
// log, traces, and report tables all live under cfg.out_dir (prefixed by
// $PRUNELAB_OUT_ROOT when that is set and the directory is relative).
class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg);

    // Load the corpus, split it, and train or load the vocabulary. Called
    // implicitly by every command.
    void prepare();

    const std::string& out_dir() const { return out_dir_; }
    std::string path(const std::string& name) const;
    const ExperimentConfig& config() const { return cfg_; }
    const Vocabulary& vocabulary();
    const Corpus& dev_corpus();

    // Train the baseline for train_epochs epochs (resume continues an
    // existing checkpoint bit-identically). Returns the checkpoint path.
    std::string train(bool resume = false);

    // Starting from `ckpt`, deliver one checkpoint per target size in
    // descending order, each stage continuing from the previous one.
    std::vector<std::string> prune(const std::string& ckpt);

    // Continue training with frozen masks; writes <stem>_ft.ckpt and a
    // (epoch, dev PPL) trace. Entry 0 is the pre-finetune perplexity.
    std::string finetune(const std::string& ckpt, int64_t epochs,
                         std::vector<double>* trace_out = nullptr);

    ReportRow eval_checkpoint(const std::string& ckpt, const std::string& label);

    // First checkpoint is the reference row. Writes report.txt (aligned
    // table) and report.jsonl (same values) under the output directory and
    // returns the rows.
    std::vector<ReportRow> report(const std::vector<std::string>& ckpts);

    AblationResult ablate(const std::string& ckpt, const std::string& layer,
                          double sparsity, int64_t epochs);

    std::vector<PercentileBucket> percentiles(const std::string& ckpt);

    FlopReport flop_report(const std::string& ckpt);

    // Sparsity the prunable layers need so the whole model lands on
    // `fraction` of its dense parameter count.
    double sparsity_for_target_size(TransformerLM& model, double fraction) const;

private:
    ExperimentConfig cfg_;
    std::string out_dir_;
    bool prepared_ = false;
    Corpus train_corpus_, dev_corpus_;
    std::optional<Vocabulary> vocab_;
    int threads_ = 1;

    TransformerLM load_model(const std::string& ckpt);
    void save_model(TransformerLM& model, Trainer* trainer, const std::string& path);
    void append_events(const std::vector<PruneEvent>& events);
    void run_stage(TransformerLM& model, const BatchStream& stream, double s_from,
                   double s_to, Trainer& trainer);
};

}  // namespace prunelab
