#include "prunelab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace prunelab {

const char* run_method_name(RunMethod m) {
    switch (m) {
        case RunMethod::unstructured: return "unstructured";
        case RunMethod::structured_rows: return "structured_rows";
        case RunMethod::structured_cols: return "structured_cols";
        case RunMethod::factorized: return "factorized";
    }
    return "unstructured";
}

RunMethod run_method_from_name(const std::string& s) {
    if (s == "unstructured") return RunMethod::unstructured;
    if (s == "structured_rows") return RunMethod::structured_rows;
    if (s == "structured_cols") return RunMethod::structured_cols;
    if (s == "factorized") return RunMethod::factorized;
    throw ConfigError("unknown method '" + s +
                      "' (unstructured, structured_rows, structured_cols, factorized)");
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double round_to(double v, int decimals) {
    double scale = std::pow(10.0, decimals);
    return std::round(v * scale) / scale;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int64_t parse_int(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' needs an integer, got '" + v + "'");
    }
}

uint64_t parse_uint(const std::string& v, const std::string& key) {
    int64_t r = parse_int(v, key);
    if (r < 0) throw ConfigError("key '" + key + "' must be non-negative");
    return static_cast<uint64_t>(r);
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' needs a number, got '" + v + "'");
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    train.validate();
    schedule.validate();
    if (corpus.empty()) throw ConfigError("corpus path is not set");
    if (dev_denom == 0 || dev_numer == 0 || dev_numer >= dev_denom) {
        throw ConfigError("dev split needs 0 < dev_numer < dev_denom");
    }
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (train_epochs < 0) throw ConfigError("epochs must be non-negative");
    if (finetune_epochs < 0) throw ConfigError("finetune_epochs must be non-negative");
    if (out_dir.empty()) throw ConfigError("output dir is not set");
    for (double f : target_sizes) {
        if (!(f > 0.0) || f >= 1.0) {
            throw ConfigError("target sizes must lie in (0, 1), got " + fmt_double(f));
        }
    }
    for (size_t i = 1; i < target_sizes.size(); ++i) {
        if (!(target_sizes[i] < target_sizes[i - 1])) {
            throw ConfigError("target sizes must be strictly decreasing");
        }
    }
}

ExperimentConfig ExperimentConfig::parse(std::istream& in, const std::string& label) {
    ExperimentConfig cfg;
    std::string line;
    bool saw_header = false;
    std::string section;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (!saw_header) {
            if (t != "prunelab_config 1") {
                throw ConfigError(label + " is not a version-1 experiment config");
            }
            saw_header = true;
            continue;
        }
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("malformed section line '" + t + "'");
            section = t.substr(1, t.size() - 2);
            if (section != "model" && section != "data" && section != "train" &&
                section != "schedule" && section != "prune" && section != "output") {
                throw ConfigError("unknown section [" + section + "] in " + label);
            }
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("expected 'key = value', got '" + t + "'");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        std::string qual = section + "." + key;

        if (qual == "model.vocab_size") cfg.model.vocab_size = parse_int(value, qual);
        else if (qual == "model.embed_dim") cfg.model.embed_dim = parse_int(value, qual);
        else if (qual == "model.num_blocks") cfg.model.num_blocks = parse_int(value, qual);
        else if (qual == "model.num_heads") cfg.model.num_heads = parse_int(value, qual);
        else if (qual == "model.head_dim") cfg.model.head_dim = parse_int(value, qual);
        else if (qual == "model.ffn_dim") cfg.model.ffn_dim = parse_int(value, qual);
        else if (qual == "model.max_seq_len") cfg.model.max_seq_len = parse_int(value, qual);
        else if (qual == "data.corpus") cfg.corpus = value;
        else if (qual == "data.dev_numer") cfg.dev_numer = parse_uint(value, qual);
        else if (qual == "data.dev_denom") cfg.dev_denom = parse_uint(value, qual);
        else if (qual == "data.batch_size") cfg.batch_size = parse_int(value, qual);
        else if (qual == "train.lr") cfg.train.lr = parse_double(value, qual);
        else if (qual == "train.momentum") cfg.train.momentum = parse_double(value, qual);
        else if (qual == "train.warmup_steps") cfg.train.warmup_steps = parse_int(value, qual);
        else if (qual == "train.lr_decay_steps") cfg.train.lr_decay_steps = parse_int(value, qual);
        else if (qual == "train.lr_min") cfg.train.lr_min = parse_double(value, qual);
        else if (qual == "train.epochs") cfg.train_epochs = parse_int(value, qual);
        else if (qual == "train.seed") cfg.seed = parse_uint(value, qual);
        else if (qual == "schedule.s_i") cfg.schedule.s_i = parse_double(value, qual);
        else if (qual == "schedule.s_f") cfg.schedule.s_f = parse_double(value, qual);
        else if (qual == "schedule.delta_t") cfg.schedule.delta_t = parse_int(value, qual);
        else if (qual == "schedule.n") cfg.schedule.n = parse_int(value, qual);
        else if (qual == "prune.criterion") {
            if (value == "magnitude") cfg.criterion = Criterion::magnitude;
            else if (value == "data") cfg.criterion = Criterion::taylor_dd;
            else throw ConfigError("unknown criterion '" + value + "' (magnitude, data)");
        } else if (qual == "prune.method") {
            cfg.method = run_method_from_name(value);
        } else if (qual == "prune.target_sizes") {
            cfg.target_sizes.clear();
            std::istringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) {
                std::string it = trim(item);
                if (!it.empty()) cfg.target_sizes.push_back(parse_double(it, qual));
            }
        } else if (qual == "prune.finetune_epochs") {
            cfg.finetune_epochs = parse_int(value, qual);
        } else if (qual == "output.dir") {
            cfg.out_dir = value;
        } else {
            throw ConfigError("unknown key '" + key + "' in [" + section + "] of " + label);
        }
    }
    if (!saw_header) throw ConfigError(label + " is empty or missing its version header");
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    return parse(f, path);
}

std::string ExperimentConfig::serialize() const {
    std::ostringstream out;
    out << "prunelab_config 1\n\n";
    out << "[model]\n";
    out << "vocab_size = " << model.vocab_size << "\n";
    out << "embed_dim = " << model.embed_dim << "\n";
    out << "num_blocks = " << model.num_blocks << "\n";
    out << "num_heads = " << model.num_heads << "\n";
    out << "head_dim = " << model.head_dim << "\n";
    out << "ffn_dim = " << model.ffn_dim << "\n";
    out << "max_seq_len = " << model.max_seq_len << "\n\n";
    out << "[data]\n";
    out << "corpus = " << corpus << "\n";
    out << "dev_numer = " << dev_numer << "\n";
    out << "dev_denom = " << dev_denom << "\n";
    out << "batch_size = " << batch_size << "\n\n";
    out << "[train]\n";
    out << "lr = " << fmt_double(train.lr) << "\n";
    out << "momentum = " << fmt_double(train.momentum) << "\n";
    out << "warmup_steps = " << train.warmup_steps << "\n";
    out << "lr_decay_steps = " << train.lr_decay_steps << "\n";
    out << "lr_min = " << fmt_double(train.lr_min) << "\n";
    out << "epochs = " << train_epochs << "\n";
    out << "seed = " << seed << "\n\n";
    out << "[schedule]\n";
    out << "s_i = " << fmt_double(schedule.s_i) << "\n";
    out << "s_f = " << fmt_double(schedule.s_f) << "\n";
    out << "delta_t = " << schedule.delta_t << "\n";
    out << "n = " << schedule.n << "\n\n";
    out << "[prune]\n";
    out << "criterion = " << (criterion == Criterion::magnitude ? "magnitude" : "data")
        << "\n";
    out << "method = " << run_method_name(method) << "\n";
    out << "target_sizes = ";
    for (size_t i = 0; i < target_sizes.size(); ++i) {
        if (i) out << ", ";
        out << fmt_double(target_sizes[i]);
    }
    out << "\n";
    out << "finetune_epochs = " << finetune_epochs << "\n\n";
    out << "[output]\n";
    out << "dir = " << out_dir << "\n";
    return out.str();
}

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    out_dir_ = cfg_.out_dir;
    const char* root = std::getenv("PRUNELAB_OUT_ROOT");
    if (root && root[0] != '\0' && !fs::path(out_dir_).is_absolute()) {
        out_dir_ = (fs::path(root) / out_dir_).string();
    }
    const char* threads = std::getenv("PRUNELAB_THREADS");
    if (threads && threads[0] != '\0') {
        threads_ = static_cast<int>(
            std::clamp<int64_t>(parse_int(threads, "PRUNELAB_THREADS"), 1, 64));
    }
}

std::string Experiment::path(const std::string& name) const {
    return (fs::path(out_dir_) / name).string();
}

void Experiment::prepare() {
    if (prepared_) return;
    if (!fs::exists(cfg_.corpus)) {
        throw ConfigError("corpus file not found: " + cfg_.corpus);
    }
    fs::create_directories(out_dir_);

    Corpus full = load_corpus(cfg_.corpus);
    split_corpus(full, cfg_.dev_numer, cfg_.dev_denom, &train_corpus_, &dev_corpus_);

    std::string vocab_path = path("vocab.txt");
    if (fs::exists(vocab_path)) {
        vocab_ = Vocabulary::load(vocab_path);
    } else {
        vocab_ = Vocabulary::train_bpe(train_corpus_.lines, cfg_.model.vocab_size);
        vocab_->save(vocab_path);
    }

    std::ofstream cfg_copy(path("config.txt"));
    cfg_copy << cfg_.serialize();
    prepared_ = true;
}

const Vocabulary& Experiment::vocabulary() {
    prepare();
    return *vocab_;
}

const Corpus& Experiment::dev_corpus() {
    prepare();
    return dev_corpus_;
}

TransformerLM Experiment::load_model(const std::string& ckpt) {
    prepare();
    if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt);
    TransformerLM model = model_from_container(TensorContainer::read(ckpt));
    if (model.vocab_hash != 0 && model.vocab_hash != vocab_->content_hash()) {
        throw EvalError("checkpoint " + ckpt +
                        " was built with a different vocabulary than this experiment");
    }
    return model;
}

void Experiment::save_model(TransformerLM& model, Trainer* trainer, const std::string& p) {
    TensorContainer c = trainer ? trainer->to_container() : model_to_container(model);
    c.write(p);
}

void Experiment::append_events(const std::vector<PruneEvent>& events) {
    std::ofstream f(path("events.jsonl"), std::ios::app);
    for (const PruneEvent& e : events) {
        json j{{"step", e.step},         {"layer", e.layer},
               {"target", e.target},     {"achieved", e.achieved},
               {"criterion", e.criterion}, {"method", e.method},
               {"zeros", e.zeros},       {"total", e.total}};
        f << j.dump() << "\n";
    }
}

std::string Experiment::train(bool resume) {
    prepare();
    std::string ckpt = path("baseline.ckpt");

    ModelConfig mc = cfg_.model;
    mc.seed = cfg_.seed;
    BatchStream stream(*vocab_, train_corpus_, cfg_.batch_size, mc.max_seq_len, cfg_.seed);
    int64_t total_steps = cfg_.train_epochs * stream.batches_per_epoch();

    TrainConfig tc = cfg_.train;
    TransformerLM model(mc);
    if (resume && fs::exists(ckpt)) {
        model = load_model(ckpt);
        if (model.config.vocab_size != mc.vocab_size || model.config.embed_dim != mc.embed_dim ||
            model.config.num_blocks != mc.num_blocks || model.config.max_seq_len != mc.max_seq_len) {
            throw ConfigError("existing checkpoint does not match the configured model");
        }
        tc.lr_step_offset = model.step;
    } else {
        model.vocab_hash = vocab_->content_hash();
    }

    Trainer trainer(model, tc);
    if (resume && fs::exists(ckpt)) {
        trainer.restore_opt_state(TensorContainer::read(ckpt));
    }

    int64_t remaining = total_steps - model.step;
    if (remaining < 0) remaining = 0;
    int64_t start_step = model.step;
    TrainResult result = trainer.run(stream, remaining);

    {
        std::ofstream trace(path("train_trace.txt"), std::ios::app);
        for (size_t i = 0; i < result.losses.size(); ++i) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%lld %.6f\n",
                          static_cast<long long>(start_step + 1 + i),
                          static_cast<double>(result.losses[i]));
            trace << buf;
        }
    }
    save_model(model, &trainer, ckpt);
    return ckpt;
}

double Experiment::sparsity_for_target_size(TransformerLM& model, double fraction) const {
    int64_t fixed = 0;
    for (const ParamRef& p : model.parameters()) {
        if (!p.prunable) fixed += p.tensor->numel();
    }
    int64_t prunable = 0;
    for (Projection* p : model.prunable_layers()) prunable += p->a * p->b;
    int64_t dense_total = fixed + prunable;

    double budget = fraction * static_cast<double>(dense_total) - static_cast<double>(fixed);
    if (budget <= 0.0) {
        throw ConfigError("target size " + fmt_double(fraction) +
                          " is below the model's unprunable parameter floor");
    }
    double s = 1.0 - budget / static_cast<double>(prunable);
    if (s < 0.0) s = 0.0;
    if (s >= 1.0) {
        throw ConfigError("target size " + fmt_double(fraction) + " is unreachable");
    }
    return s;
}

void Experiment::run_stage(TransformerLM& model, const BatchStream& stream,
                           double s_from, double s_to, Trainer& trainer) {
    ScheduleConfig sc = cfg_.schedule;
    sc.s_i = s_from;
    sc.s_f = s_to;
    sc.t0 = model.step;
    sc.validate();

    PruneMethod pm = PruneMethod::unstructured;
    switch (cfg_.method) {
        case RunMethod::unstructured: pm = PruneMethod::unstructured; break;
        case RunMethod::structured_rows: pm = PruneMethod::row_group; break;
        case RunMethod::structured_cols: pm = PruneMethod::column_group; break;
        case RunMethod::factorized: pm = PruneMethod::factor_diagonal; break;
    }

    if (cfg_.method == RunMethod::factorized) {
        std::vector<std::string> dense_names;
        for (Projection* p : model.prunable_layers()) {
            if (p->state == LayerState::dense) dense_names.push_back(p->name);
        }
        if (!dense_names.empty()) factorize_layers(model, dense_names, threads_);
        for (Projection* p : model.prunable_layers()) {
            if (p->state == LayerState::densified) refactorize_layer(model, p->name);
        }
    }

    DdAccumulator dd(model);
    TrainHooks hooks;
    if (cfg_.criterion == Criterion::taylor_dd) {
        hooks.after_backward = [&dd](TransformerLM&, int64_t) { dd.observe(); };
    }
    hooks.interval = sc.delta_t;
    hooks.at_interval = [&](TransformerLM& m, int64_t local) {
        std::vector<PruneEvent> events =
            prune_step(m, cfg_.criterion, pm, sc, sc.t0 + local,
                       cfg_.criterion == Criterion::taylor_dd ? &dd : nullptr);
        append_events(events);
        dd.reset();
    };

    trainer.run(stream, sc.n * sc.delta_t, hooks);

    if (cfg_.method == RunMethod::factorized) {
        for (Projection* p : model.prunable_layers()) {
            if (p->state == LayerState::factorized) densify_layer(model, p->name);
        }
    }
}

namespace {

std::string size_label(double fraction) {
    double pct = fraction * 100.0;
    char buf[32];
    if (std::abs(pct - std::round(pct)) < 1e-9) {
        std::snprintf(buf, sizeof(buf), "%d", static_cast<int>(std::round(pct)));
    } else {
        std::snprintf(buf, sizeof(buf), "%.1f", pct);
    }
    return buf;
}

}  // namespace

std::vector<std::string> Experiment::prune(const std::string& ckpt) {
    prepare();
    if (cfg_.target_sizes.empty()) {
        throw ConfigError("no target sizes configured for pruning");
    }
    TransformerLM model = load_model(ckpt);
    TrainConfig tc = cfg_.train;
    tc.lr_step_offset = model.step;  // continue the ramp rather than restart it
    Trainer trainer(model, tc);
    trainer.restore_opt_state(TensorContainer::read(ckpt));

    BatchStream stream(*vocab_, train_corpus_, cfg_.batch_size, cfg_.model.max_seq_len,
                       cfg_.seed);

    std::vector<std::string> out_paths;
    double s_from = cfg_.schedule.s_i;
    for (double fraction : cfg_.target_sizes) {
        double s_to = sparsity_for_target_size(model, fraction);
        if (s_to < s_from) {
            throw ConfigError("target size " + fmt_double(fraction) +
                              " needs sparsity below the previous stage");
        }
        run_stage(model, stream, s_from, s_to, trainer);
        s_from = s_to;

        std::string p = path("prune_" + size_label(fraction) + "pct.ckpt");
        save_model(model, &trainer, p);
        out_paths.push_back(p);
    }
    return out_paths;
}

std::string Experiment::finetune(const std::string& ckpt, int64_t epochs,
                                 std::vector<double>* trace_out) {
    prepare();
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    TransformerLM model = load_model(ckpt);
    Trainer trainer(model, cfg_.train);
    trainer.restore_opt_state(TensorContainer::read(ckpt));

    BatchStream stream(*vocab_, train_corpus_, cfg_.batch_size, cfg_.model.max_seq_len,
                       cfg_.seed);
    std::vector<Batch> dev =
        eval_batches(*vocab_, dev_corpus_, cfg_.batch_size, cfg_.model.max_seq_len);

    std::vector<double> trace;
    trace.push_back(perplexity(model, dev));
    for (int64_t e = 0; e < epochs; ++e) {
        trainer.run(stream, stream.batches_per_epoch());
        trace.push_back(perplexity(model, dev));
    }

    std::string stem = fs::path(ckpt).stem().string();
    std::string out_ckpt = path(stem + "_ft.ckpt");
    save_model(model, &trainer, out_ckpt);

    std::ofstream tf(path(stem + "_ft_trace.txt"));
    for (size_t i = 0; i < trace.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%zu %.6f\n", i, trace[i]);
        tf << buf;
    }
    if (trace_out) *trace_out = trace;
    return out_ckpt;
}

ReportRow Experiment::eval_checkpoint(const std::string& ckpt, const std::string& label) {
    prepare();
    TransformerLM model = load_model(ckpt);
    std::vector<Batch> dev =
        eval_batches(*vocab_, dev_corpus_, cfg_.batch_size, cfg_.model.max_seq_len);
    ReportRow row;
    row.label = label.empty() ? fs::path(ckpt).stem().string() : label;
    row.effective = model.effective_params();
    row.ppl = perplexity(model, dev);
    row.flops = flops(model).total;
    return row;
}

std::vector<ReportRow> Experiment::report(const std::vector<std::string>& ckpts) {
    prepare();
    if (ckpts.empty()) throw ConfigError("report needs at least one checkpoint");
    std::vector<ReportRow> rows;
    for (const std::string& c : ckpts) rows.push_back(eval_checkpoint(c, ""));

    const ReportRow& ref = rows.front();
    for (ReportRow& r : rows) {
        r.delta_pct = round_to((r.ppl - ref.ppl) / ref.ppl * 100.0, 1);
        r.speedup = round_to(static_cast<double>(ref.flops) / static_cast<double>(r.flops), 2);
    }

    size_t width = 8;
    for (const ReportRow& r : rows) width = std::max(width, r.label.size());
    std::ofstream human(path("report.txt"));
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-*s  %10s  %10s  %8s  %12s  %8s\n",
                  static_cast<int>(width), "model", "params", "ppl", "dppl%",
                  "flops/tok", "speedup");
    human << buf;
    std::ofstream machine(path("report.jsonl"));
    for (const ReportRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s  %10lld  %10.3f  %8.1f  %12lld  %7.2fx\n",
                      static_cast<int>(width), r.label.c_str(),
                      static_cast<long long>(r.effective), round_to(r.ppl, 3),
                      r.delta_pct, static_cast<long long>(r.flops), r.speedup);
        human << buf;
        json j{{"model", r.label},
               {"params", r.effective},
               {"ppl", round_to(r.ppl, 3)},
               {"dppl_pct", r.delta_pct},
               {"flops_per_token", r.flops},
               {"speedup", r.speedup}};
        machine << j.dump() << "\n";
    }
    return rows;
}

AblationResult Experiment::ablate(const std::string& ckpt, const std::string& layer,
                                  double sparsity, int64_t epochs) {
    prepare();
    TransformerLM model = load_model(ckpt);
    BatchStream stream(*vocab_, train_corpus_, cfg_.batch_size, cfg_.model.max_seq_len,
                       cfg_.seed);
    std::vector<Batch> dev =
        eval_batches(*vocab_, dev_corpus_, cfg_.batch_size, cfg_.model.max_seq_len);

    AblationResult result = layer_ablation(model, layer, sparsity, cfg_.criterion,
                                           stream, dev, cfg_.train, epochs);

    std::string safe = layer;
    std::replace(safe.begin(), safe.end(), '.', '_');
    std::ofstream tf(path("ablation_" + safe + ".txt"));
    for (size_t i = 0; i < result.ppl_per_epoch.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%zu %.6f\n", i, result.ppl_per_epoch[i]);
        tf << buf;
    }
    return result;
}

std::vector<PercentileBucket> Experiment::percentiles(const std::string& ckpt) {
    prepare();
    TransformerLM model = load_model(ckpt);
    std::map<std::string, int64_t> freqs = word_frequencies(train_corpus_);
    std::vector<PercentileBucket> buckets = percentile_buckets(dev_corpus_, freqs);
    percentile_ppl(model, *vocab_, dev_corpus_, buckets, cfg_.batch_size);

    std::ofstream human(path("percentiles.txt"));
    std::ofstream machine(path("percentiles.jsonl"));
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-10s  %10s  %10s  %10s\n", "percentile",
                  "words", "tokens", "ppl");
    human << buf;
    for (const PercentileBucket& b : buckets) {
        std::snprintf(buf, sizeof(buf), "%-10d  %10lld  %10lld  %10.3f\n", b.label,
                      static_cast<long long>(b.words), static_cast<long long>(b.tokens),
                      round_to(b.ppl, 3));
        human << buf;
        json j{{"percentile", b.label},
               {"words", b.words},
               {"tokens", b.tokens},
               {"ppl", round_to(b.ppl, 3)}};
        machine << j.dump() << "\n";
    }
    return buckets;
}

FlopReport Experiment::flop_report(const std::string& ckpt) {
    prepare();
    TransformerLM model = load_model(ckpt);
    FlopReport report = flops(model);

    std::ofstream human(path("flops.txt"));
    std::ofstream machine(path("flops.jsonl"));
    size_t width = 5;
    for (const FlopEntry& e : report.layers) width = std::max(width, e.layer.size());
    char buf[256];
    for (const FlopEntry& e : report.layers) {
        std::snprintf(buf, sizeof(buf), "%-*s  %12lld\n", static_cast<int>(width),
                      e.layer.c_str(), static_cast<long long>(e.flops));
        human << buf;
        json j{{"layer", e.layer}, {"flops", e.flops}};
        machine << j.dump() << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%-*s  %12lld\n", static_cast<int>(width), "total",
                  static_cast<long long>(report.total));
    human << buf;
    json j{{"layer", "total"}, {"flops", report.total}};
    machine << j.dump() << "\n";
    return report;
}

}  // namespace prunelab
