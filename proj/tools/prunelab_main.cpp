// Command-line front end. Every failure exits nonzero with a single line on
// stderr of the form "error: E_CODE message"; configuration and usage problems
// exit 2, everything else exits 1.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "prunelab/experiment.hpp"

using namespace prunelab;

namespace {

void print_row(const ReportRow& r) {
    std::printf("%s  params=%lld  ppl=%.3f  flops=%lld\n", r.label.c_str(),
                static_cast<long long>(r.effective), r.ppl,
                static_cast<long long>(r.flops));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pruning laboratory for small transformer language models"};
    app.require_subcommand(1);

    std::string config_path;
    std::string ckpt;
    std::vector<std::string> ckpts;
    bool resume = false;
    bool one_shot = false;
    int64_t epochs = -1;
    std::string layer;
    double sparsity = 0.5;

    CLI::App* train = app.add_subcommand("train", "Train the baseline model");
    train->add_option("config", config_path, "Experiment config file")->required();
    train->add_flag("--resume", resume,
                    "Continue from an existing baseline checkpoint");

    CLI::App* prune = app.add_subcommand(
        "prune", "Prune a checkpoint down through the configured target sizes");
    prune->add_option("config", config_path, "Experiment config file")->required();
    prune->add_option("checkpoint", ckpt, "Checkpoint to start from")->required();
    prune->add_flag("--one-shot", one_shot,
                    "Collapse the schedule to a single prune event per stage, "
                    "keeping the total training budget");

    CLI::App* finetune =
        app.add_subcommand("finetune", "Fine-tune a pruned checkpoint with frozen masks");
    finetune->add_option("config", config_path, "Experiment config file")->required();
    finetune->add_option("checkpoint", ckpt, "Pruned checkpoint")->required();
    finetune->add_option("--epochs", epochs,
                         "Fine-tuning epochs (default: finetune_epochs from config)");

    CLI::App* eval = app.add_subcommand("eval", "Evaluate one checkpoint on the dev split");
    eval->add_option("config", config_path, "Experiment config file")->required();
    eval->add_option("checkpoint", ckpt, "Checkpoint to evaluate")->required();

    CLI::App* report = app.add_subcommand(
        "report", "Evaluate checkpoints and write comparison tables");
    report->add_option("config", config_path, "Experiment config file")->required();
    report->add_option("checkpoints", ckpts, "Checkpoints, reference first")
        ->required()
        ->expected(-1);

    CLI::App* ablate = app.add_subcommand(
        "ablate-layer", "Prune a single layer and track recovery over training");
    ablate->add_option("config", config_path, "Experiment config file")->required();
    ablate->add_option("checkpoint", ckpt, "Checkpoint to ablate")->required();
    ablate->add_option("--layer", layer, "Layer name, e.g. block0.attn.wq")->required();
    ablate->add_option("--sparsity", sparsity, "Fraction of the layer to zero")
        ->capture_default_str();
    ablate->add_option("--epochs", epochs, "Recovery epochs (default 2)");

    CLI::App* percentiles = app.add_subcommand(
        "percentiles", "Per-frequency-quartile perplexity of a checkpoint");
    percentiles->add_option("config", config_path, "Experiment config file")->required();
    percentiles->add_option("checkpoint", ckpt, "Checkpoint to evaluate")->required();

    CLI::App* flops_cmd =
        app.add_subcommand("flops", "Per-layer FLOP counts for a checkpoint");
    flops_cmd->add_option("config", config_path, "Experiment config file")->required();
    flops_cmd->add_option("checkpoint", ckpt, "Checkpoint to analyse")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "error: E_CONFIG %s\n", e.what());
        return 2;
    }

    try {
        ExperimentConfig cfg = ExperimentConfig::parse_file(config_path);
        if (one_shot) {
            cfg.schedule.delta_t *= cfg.schedule.n;
            cfg.schedule.n = 1;
        }
        Experiment exp(cfg);

        if (*train) {
            std::string out = exp.train(resume);
            ReportRow row = exp.eval_checkpoint(out, "baseline");
            print_row(row);
            std::printf("checkpoint %s\n", out.c_str());
        } else if (*prune) {
            std::vector<std::string> outs = exp.prune(ckpt);
            for (size_t i = 0; i < outs.size(); ++i) {
                ReportRow row = exp.eval_checkpoint(outs[i], "");
                print_row(row);
                std::printf("checkpoint %s\n", outs[i].c_str());
            }
        } else if (*finetune) {
            int64_t n = epochs >= 0 ? epochs : cfg.finetune_epochs;
            std::vector<double> trace;
            std::string out = exp.finetune(ckpt, n, &trace);
            for (size_t i = 0; i < trace.size(); ++i) {
                std::printf("epoch %zu ppl %.3f\n", i, trace[i]);
            }
            std::printf("checkpoint %s\n", out.c_str());
        } else if (*eval) {
            print_row(exp.eval_checkpoint(ckpt, ""));
        } else if (*report) {
            exp.report(ckpts);
            std::FILE* f = std::fopen((exp.out_dir() + "/report.txt").c_str(), "rb");
            if (f) {
                char buf[4096];
                size_t n;
                while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) {
                    std::fwrite(buf, 1, n, stdout);
                }
                std::fclose(f);
            }
        } else if (*ablate) {
            int64_t n = epochs >= 0 ? epochs : 2;
            AblationResult res = exp.ablate(ckpt, layer, sparsity, n);
            for (size_t i = 0; i < res.ppl_per_epoch.size(); ++i) {
                std::printf("epoch %zu ppl %.3f\n", i, res.ppl_per_epoch[i]);
            }
        } else if (*percentiles) {
            for (const PercentileBucket& b : exp.percentiles(ckpt)) {
                std::printf("p%d words %lld tokens %lld ppl %.3f\n", b.label,
                            static_cast<long long>(b.words),
                            static_cast<long long>(b.tokens), b.ppl);
            }
        } else if (*flops_cmd) {
            FlopReport rep = exp.flop_report(ckpt);
            for (const FlopEntry& e : rep.layers) {
                std::printf("%s %lld\n", e.layer.c_str(),
                            static_cast<long long>(e.flops));
            }
            std::printf("total %lld\n", static_cast<long long>(rep.total));
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s %s\n", e.code().c_str(), e.what());
        return e.code() == "E_CONFIG" ? 2 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: E_INTERNAL %s\n", e.what());
        return 1;
    }
    return 0;
}
