// Python bindings for the core operations: tokenizer, model, training,
// pruning, factorization, and evaluation. The heavy experiment orchestration
// stays in the CLI; this module exposes the pieces.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <utility>

#include "prunelab/data.hpp"
#include "prunelab/factorize.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/model.hpp"
#include "prunelab/prune.hpp"
#include "prunelab/train.hpp"

namespace py = pybind11;
using namespace prunelab;

namespace {

using Rows = std::vector<std::vector<int32_t>>;

Batch batch_from_rows(const Rows& inputs, const Rows& targets) {
    if (inputs.empty()) throw ConfigError("batch needs at least one row");
    if (!targets.empty() && targets.size() != inputs.size()) {
        throw ShapeError("inputs and targets row counts differ");
    }
    Batch b;
    b.batch_size = static_cast<int64_t>(inputs.size());
    b.seq_len = static_cast<int64_t>(inputs[0].size());
    for (const auto& row : inputs) {
        if (static_cast<int64_t>(row.size()) != b.seq_len) {
            throw ShapeError("all rows in a batch must have equal length");
        }
    }
    b.inputs.reserve(b.batch_size * b.seq_len);
    b.targets.reserve(b.batch_size * b.seq_len);
    for (size_t r = 0; r < inputs.size(); ++r) {
        b.inputs.insert(b.inputs.end(), inputs[r].begin(), inputs[r].end());
        if (targets.empty()) {
            b.targets.insert(b.targets.end(), inputs[r].size(), Vocabulary::kPad);
        } else {
            if (static_cast<int64_t>(targets[r].size()) != b.seq_len) {
                throw ShapeError("all rows in a batch must have equal length");
            }
            b.targets.insert(b.targets.end(), targets[r].begin(), targets[r].end());
        }
        b.lengths.push_back(b.seq_len);
    }
    return b;
}

Criterion criterion_from(const std::string& s) {
    if (s == "magnitude") return Criterion::magnitude;
    if (s == "data") return Criterion::taylor_dd;
    throw ConfigError("unknown criterion '" + s + "' (magnitude, data)");
}

PruneMethod method_from(const std::string& s) {
    if (s == "unstructured") return PruneMethod::unstructured;
    if (s == "rows") return PruneMethod::row_group;
    if (s == "columns") return PruneMethod::column_group;
    if (s == "diagonal") return PruneMethod::factor_diagonal;
    throw ConfigError("unknown method '" + s +
                      "' (unstructured, rows, columns, diagonal)");
}

// Owns the model so python can hold it without worrying about Tensor graphs.
class PyModel {
public:
    explicit PyModel(const ModelConfig& cfg) : model_(std::make_unique<TransformerLM>(cfg)) {}
    explicit PyModel(std::unique_ptr<TransformerLM> m) : model_(std::move(m)) {}

    TransformerLM& ref() { return *model_; }

    std::vector<std::vector<std::vector<float>>> logits(const Rows& inputs) {
        Batch b = batch_from_rows(inputs, {});
        TensorPtr out = model_->forward(b);
        std::vector<std::vector<std::vector<float>>> result(b.batch_size);
        int64_t v = model_->config.vocab_size;
        for (int64_t r = 0; r < b.batch_size; ++r) {
            result[r].resize(b.seq_len);
            for (int64_t t = 0; t < b.seq_len; ++t) {
                const float* base = out->data.data() + (r * b.seq_len + t) * v;
                result[r][t].assign(base, base + v);
            }
        }
        return result;
    }

    double loss(const Rows& inputs, const Rows& targets) {
        Batch b = batch_from_rows(inputs, targets);
        return static_cast<double>(model_->loss(b)->data[0]);
    }

    std::vector<float> train_on(const Vocabulary& vocab,
                                const std::vector<std::string>& lines, int64_t steps,
                                int64_t batch_size, uint64_t seed, double lr,
                                double momentum, int64_t warmup_steps,
                                int64_t lr_decay_steps, double lr_min) {
        Corpus corpus;
        corpus.lines = lines;
        BatchStream stream(vocab, corpus, batch_size, model_->config.max_seq_len, seed);
        TrainConfig tc;
        tc.lr = lr;
        tc.momentum = momentum;
        tc.warmup_steps = warmup_steps;
        tc.lr_decay_steps = lr_decay_steps;
        tc.lr_min = lr_min;
        tc.lr_step_offset = model_->step;
        Trainer trainer(*model_, tc);
        return trainer.run(stream, steps).losses;
    }

    std::vector<py::dict> prune_to(double sparsity, const std::string& criterion,
                                   const std::string& method,
                                   const std::vector<std::pair<Rows, Rows>>& batches) {
        Criterion crit = criterion_from(criterion);
        PruneMethod meth = method_from(method);
        DdAccumulator dd(*model_);
        if (crit == Criterion::taylor_dd) {
            if (batches.empty()) {
                throw ConfigError("the data criterion needs at least one batch");
            }
            for (const auto& [inputs, targets] : batches) {
                Batch b = batch_from_rows(inputs, targets);
                for (const ParamRef& p : model_->parameters()) p.tensor->zero_grad();
                TensorPtr l = model_->loss(b);
                backward(l);
                dd.observe();
            }
        }
        ScheduleConfig sc;
        sc.s_i = 0.0;
        sc.s_f = sparsity;
        sc.delta_t = 1;
        sc.n = 1;
        sc.t0 = model_->step;
        std::vector<PruneEvent> events =
            prune_step(*model_, crit, meth, sc, sc.t0 + 1,
                       crit == Criterion::taylor_dd ? &dd : nullptr);
        std::vector<py::dict> out;
        for (const PruneEvent& e : events) {
            py::dict d;
            d["layer"] = e.layer;
            d["target"] = e.target;
            d["achieved"] = e.achieved;
            d["zeros"] = e.zeros;
            d["total"] = e.total;
            out.push_back(std::move(d));
        }
        return out;
    }

    void factorize(int threads) {
        std::vector<std::string> names;
        for (Projection* p : model_->prunable_layers()) {
            if (p->state == LayerState::dense) names.push_back(p->name);
        }
        factorize_layers(*model_, names, threads);
    }

    void densify() {
        for (Projection* p : model_->prunable_layers()) {
            if (p->state == LayerState::factorized) densify_layer(*model_, p->name);
        }
    }

    double perplexity_on(const Vocabulary& vocab, const std::vector<std::string>& lines,
                         int64_t batch_size) {
        Corpus corpus;
        corpus.lines = lines;
        std::vector<Batch> batches =
            eval_batches(vocab, corpus, batch_size, model_->config.max_seq_len);
        return perplexity(*model_, batches);
    }

    py::dict flop_counts() {
        FlopReport rep = flops(*model_);
        py::dict d;
        for (const FlopEntry& e : rep.layers) d[py::str(e.layer)] = e.flops;
        d["total"] = rep.total;
        return d;
    }

    double layer_sparsity(const std::string& name) {
        Projection* p = model_->find_layer(name);
        if (!p) throw ConfigError("no prunable layer named " + name);
        const double total = static_cast<double>(p->total_params());
        return total == 0.0 ? 0.0
                            : 1.0 - static_cast<double>(p->effective_params()) / total;
    }

    void save(const std::string& path) { model_to_container(*model_).write(path); }

    static PyModel load(const std::string& path) {
        return PyModel(std::make_unique<TransformerLM>(
            model_from_container(TensorContainer::read(path))));
    }

private:
    std::unique_ptr<TransformerLM> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Pruning laboratory core: tokenizer, transformer, pruning, factorization";

    py::register_exception<Error>(m, "PrunelabError");

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("embed_dim", &ModelConfig::embed_dim)
        .def_readwrite("num_blocks", &ModelConfig::num_blocks)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("head_dim", &ModelConfig::head_dim)
        .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("seed", &ModelConfig::seed)
        .def("validate", &ModelConfig::validate);

    py::class_<Vocabulary>(m, "Vocabulary")
        .def_static("train",
                    [](const std::vector<std::string>& lines, int64_t vocab_size) {
                        return Vocabulary::train_bpe(lines, vocab_size);
                    },
                    py::arg("lines"), py::arg("vocab_size"))
        .def_static("load", &Vocabulary::load, py::arg("path"))
        .def("save", &Vocabulary::save, py::arg("path"))
        .def("encode", &Vocabulary::encode, py::arg("text"))
        .def("decode", &Vocabulary::decode, py::arg("ids"))
        .def("size", &Vocabulary::size)
        .def("content_hash", &Vocabulary::content_hash)
        .def_property_readonly_static("pad", [](py::object) { return Vocabulary::kPad; })
        .def_property_readonly_static("unk", [](py::object) { return Vocabulary::kUnk; })
        .def_property_readonly_static("bos", [](py::object) { return Vocabulary::kBos; })
        .def_property_readonly_static("eos", [](py::object) { return Vocabulary::kEos; });

    py::class_<PyModel>(m, "Model")
        .def(py::init<const ModelConfig&>(), py::arg("config"))
        .def_static("load", &PyModel::load, py::arg("path"))
        .def("save", &PyModel::save, py::arg("path"))
        .def("logits", &PyModel::logits, py::arg("inputs"))
        .def("loss", &PyModel::loss, py::arg("inputs"), py::arg("targets"))
        .def("train_on", &PyModel::train_on, py::arg("vocab"), py::arg("lines"),
             py::arg("steps"), py::arg("batch_size") = 16, py::arg("seed") = 1,
             py::arg("lr") = 0.3, py::arg("momentum") = 0.9,
             py::arg("warmup_steps") = 50, py::arg("lr_decay_steps") = 0,
             py::arg("lr_min") = 0.0)
        .def("prune_to", &PyModel::prune_to, py::arg("sparsity"),
             py::arg("criterion") = "magnitude", py::arg("method") = "unstructured",
             py::arg("batches") = std::vector<std::pair<Rows, Rows>>{})
        .def("factorize", &PyModel::factorize, py::arg("threads") = 1)
        .def("densify", &PyModel::densify)
        .def("perplexity", &PyModel::perplexity_on, py::arg("vocab"), py::arg("lines"),
             py::arg("batch_size") = 16)
        .def("flops", &PyModel::flop_counts)
        .def("layer_sparsity", &PyModel::layer_sparsity, py::arg("name"))
        .def("layer_names",
             [](PyModel& self) { return self.ref().prunable_layer_names(); })
        .def("total_params", [](PyModel& self) { return self.ref().total_params(); })
        .def("effective_params",
             [](PyModel& self) { return self.ref().effective_params(); })
        .def_property_readonly("step", [](PyModel& self) { return self.ref().step; });
}
