#include "prunelab/model.hpp"

#include <algorithm>
#include <cmath>

namespace prunelab {

void ModelConfig::validate() const {
    auto positive = [](int64_t v, const char* name) {
        if (v < 1) {
            throw ConfigError(std::string(name) + " must be positive, got " +
                              std::to_string(v));
        }
    };
    positive(vocab_size, "vocab_size");
    positive(embed_dim, "embed_dim");
    positive(num_blocks, "num_blocks");
    positive(num_heads, "num_heads");
    positive(head_dim, "head_dim");
    positive(ffn_dim, "ffn_dim");
    if (max_seq_len < 2) {
        throw ConfigError("max_seq_len must be at least 2, got " +
                          std::to_string(max_seq_len));
    }
    if (num_heads * head_dim != embed_dim) {
        throw ConfigError("num_heads * head_dim must equal embed_dim: " +
                          std::to_string(num_heads) + " * " + std::to_string(head_dim) +
                          " != " + std::to_string(embed_dim));
    }
}

const char* layer_state_name(LayerState s) {
    switch (s) {
        case LayerState::dense: return "dense";
        case LayerState::factorized: return "factorized";
        case LayerState::densified: return "densified";
    }
    return "dense";
}

LayerState layer_state_from_name(const std::string& s) {
    if (s == "dense") return LayerState::dense;
    if (s == "factorized") return LayerState::factorized;
    if (s == "densified") return LayerState::densified;
    throw IoError("unknown layer state '" + s + "'");
}

int64_t FactorizedLayer::unmasked_rank() const {
    if (!m) return 0;
    int64_t k = 0;
    for (float v : m->data) {
        if (v != 0.0f) ++k;
    }
    return k;
}

namespace {

// Diagonal scale shared by the factorized matmul and lookup paths. Keeping
// the scale on U (rather than on the activations) makes densification, which
// folds D into U, bit-identical to the masked factorized forward.
TensorPtr scaled_u(const FactorizedLayer& f) {
    return mul_rowvec(f.u, mul(f.d, f.m));
}

}  // namespace

TensorPtr Projection::matmul_forward(const TensorPtr& x) const {
    switch (state) {
        case LayerState::dense:
            return matmul(x, hadamard_mask_apply(w, mask));
        case LayerState::factorized:
            return matmul(matmul(x, scaled_u(fac)), fac.v);
        case LayerState::densified:
            return matmul(matmul(x, den.u2), den.v2);
    }
    throw ContractError("unreachable layer state");
}

TensorPtr Projection::lookup_forward(const std::vector<int32_t>& ids) const {
    switch (state) {
        case LayerState::dense:
            return gather_rows(hadamard_mask_apply(w, mask), ids);
        case LayerState::factorized: {
            TensorPtr rows = gather_rows(fac.u, ids);
            return matmul(mul_rowvec(rows, mul(fac.d, fac.m)), fac.v);
        }
        case LayerState::densified:
            return matmul(gather_rows(den.u2, ids), den.v2);
    }
    throw ContractError("unreachable layer state");
}

int64_t Projection::total_params() const {
    switch (state) {
        case LayerState::dense:
            return a * b;
        case LayerState::factorized:
            return fac.rank() * (a + b) + fac.rank();
        case LayerState::densified:
            return den.rank() * (a + b);
    }
    return 0;
}

int64_t Projection::effective_params() const {
    switch (state) {
        case LayerState::dense: {
            int64_t n = 0;
            for (float v : mask->data) {
                if (v != 0.0f) ++n;
            }
            return n;
        }
        case LayerState::factorized: {
            int64_t k = fac.unmasked_rank();
            return k * (a + b) + k;
        }
        case LayerState::densified:
            return den.rank() * (a + b);
    }
    return 0;
}

namespace {

Projection make_projection(std::string name, LayerKind kind, int64_t a, int64_t b,
                           Rng& rng, double stddev) {
    Projection p;
    p.name = std::move(name);
    p.kind = kind;
    p.a = a;
    p.b = b;
    p.w = randn({a, b}, rng, stddev, true);
    p.mask = full({a, b}, 1.0f, false);
    return p;
}

}  // namespace

TransformerLM::TransformerLM(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    Rng rng(config.seed);
    int64_t d = config.embed_dim;

    // Embedding scale keeps the residual stream O(1); the output head starts
    // small so an untrained model scores close to the uniform baseline.
    embed_ = make_projection("embed.tok", LayerKind::embedding, config.vocab_size, d,
                             rng, 0.05);
    pos_ = randn({config.max_seq_len, d}, rng, 0.02, true);

    double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
    double ffn_std = 1.0 / std::sqrt(static_cast<double>(config.ffn_dim));
    blocks_.resize(config.num_blocks);
    for (int64_t i = 0; i < config.num_blocks; ++i) {
        Block& blk = blocks_[i];
        std::string base = "block" + std::to_string(i) + ".";
        blk.ln1_g = full({d}, 1.0f, true);
        blk.ln1_b = full({d}, 0.0f, true);
        blk.wq = make_projection(base + "attn.wq", LayerKind::attention_qkvo, d, d, rng, proj_std);
        blk.wk = make_projection(base + "attn.wk", LayerKind::attention_qkvo, d, d, rng, proj_std);
        blk.wv = make_projection(base + "attn.wv", LayerKind::attention_qkvo, d, d, rng, proj_std);
        blk.wo = make_projection(base + "attn.wo", LayerKind::attention_qkvo, d, d, rng, proj_std);
        blk.ln2_g = full({d}, 1.0f, true);
        blk.ln2_b = full({d}, 0.0f, true);
        blk.w1 = make_projection(base + "ffn.w1", LayerKind::ffn, d, config.ffn_dim, rng, proj_std);
        blk.w2 = make_projection(base + "ffn.w2", LayerKind::ffn, config.ffn_dim, d, rng, ffn_std);
    }
    final_ln_g_ = full({d}, 1.0f, true);
    final_ln_b_ = full({d}, 0.0f, true);
    out_ = make_projection("out.proj", LayerKind::output_projection, d, config.vocab_size,
                           rng, 0.02);
}

TensorPtr TransformerLM::forward(const Batch& batch) {
    if (batch.seq_len > config.max_seq_len) {
        throw RangeError("batch seq_len " + std::to_string(batch.seq_len) +
                         " exceeds max_seq_len " + std::to_string(config.max_seq_len));
    }
    if (batch.batch_size < 1 || batch.seq_len < 1 ||
        static_cast<int64_t>(batch.inputs.size()) != batch.batch_size * batch.seq_len) {
        throw ShapeError("batch inputs do not match batch_size * seq_len");
    }
    int64_t bsz = batch.batch_size, t = batch.seq_len;
    int64_t n = bsz * t;

    std::vector<int32_t> pos_ids(n);
    for (int64_t i = 0; i < n; ++i) pos_ids[i] = static_cast<int32_t>(i % t);

    TensorPtr x = add(embed_.lookup_forward(batch.inputs), gather_rows(pos_, pos_ids));

    for (Block& blk : blocks_) {
        TensorPtr h = add_rowvec(mul_rowvec(layer_norm_rows(x), blk.ln1_g), blk.ln1_b);
        TensorPtr att = causal_attention(blk.wq.matmul_forward(h), blk.wk.matmul_forward(h),
                                         blk.wv.matmul_forward(h), bsz, t, config.num_heads);
        x = add(x, blk.wo.matmul_forward(att));

        TensorPtr f = add_rowvec(mul_rowvec(layer_norm_rows(x), blk.ln2_g), blk.ln2_b);
        x = add(x, blk.w2.matmul_forward(relu(blk.w1.matmul_forward(f))));
    }
    TensorPtr y = add_rowvec(mul_rowvec(layer_norm_rows(x), final_ln_g_), final_ln_b_);
    return out_.matmul_forward(y);
}

TensorPtr TransformerLM::loss(const Batch& batch) {
    return cross_entropy(forward(batch), batch.targets, Vocabulary::kPad);
}

namespace {

void collect_projection(Projection& p, std::vector<ParamRef>& out) {
    switch (p.state) {
        case LayerState::dense:
            out.push_back({p.name, p.w, true});
            break;
        case LayerState::factorized:
            out.push_back({p.name + ".U", p.fac.u, true});
            out.push_back({p.name + ".D", p.fac.d, true});
            out.push_back({p.name + ".V", p.fac.v, true});
            break;
        case LayerState::densified:
            out.push_back({p.name + ".U2", p.den.u2, true});
            out.push_back({p.name + ".V2", p.den.v2, true});
            break;
    }
}

}  // namespace

std::vector<ParamRef> TransformerLM::parameters() {
    std::vector<ParamRef> out;
    collect_projection(embed_, out);
    out.push_back({"embed.pos", pos_, false});
    for (size_t i = 0; i < blocks_.size(); ++i) {
        Block& blk = blocks_[i];
        std::string base = "block" + std::to_string(i) + ".";
        out.push_back({base + "ln1.gain", blk.ln1_g, false});
        out.push_back({base + "ln1.bias", blk.ln1_b, false});
        collect_projection(blk.wq, out);
        collect_projection(blk.wk, out);
        collect_projection(blk.wv, out);
        collect_projection(blk.wo, out);
        out.push_back({base + "ln2.gain", blk.ln2_g, false});
        out.push_back({base + "ln2.bias", blk.ln2_b, false});
        collect_projection(blk.w1, out);
        collect_projection(blk.w2, out);
    }
    out.push_back({"final_ln.gain", final_ln_g_, false});
    out.push_back({"final_ln.bias", final_ln_b_, false});
    collect_projection(out_, out);
    return out;
}

std::vector<Projection*> TransformerLM::prunable_layers() {
    std::vector<Projection*> out;
    out.push_back(&embed_);
    for (Block& blk : blocks_) {
        out.push_back(&blk.wq);
        out.push_back(&blk.wk);
        out.push_back(&blk.wv);
        out.push_back(&blk.wo);
        out.push_back(&blk.w1);
        out.push_back(&blk.w2);
    }
    out.push_back(&out_);
    return out;
}

Projection* TransformerLM::find_layer(const std::string& name) {
    for (Projection* p : prunable_layers()) {
        if (p->name == name) return p;
    }
    return nullptr;
}

std::vector<std::string> TransformerLM::prunable_layer_names() {
    std::vector<std::string> out;
    for (Projection* p : prunable_layers()) out.push_back(p->name);
    return out;
}

void TransformerLM::swap_in_factorized(const std::string& name, FactorizedLayer fl) {
    Projection* p = find_layer(name);
    if (!p) throw ContractError("no prunable layer named '" + name + "'");
    if (fl.origin_a != p->a || fl.origin_b != p->b) {
        throw ContractError("factorized origin shape " + std::to_string(fl.origin_a) +
                            "x" + std::to_string(fl.origin_b) + " does not match layer " +
                            name + " (" + std::to_string(p->a) + "x" +
                            std::to_string(p->b) + ")");
    }
    int64_t r = fl.rank();
    if (!fl.u || !fl.d || !fl.m || !fl.v || r < 1 || fl.u->rows() != p->a ||
        fl.u->cols() != r || fl.m->numel() != r || fl.v->rows() != r ||
        fl.v->cols() != p->b) {
        throw ContractError("inconsistent factor shapes for layer " + name);
    }
    p->state = LayerState::factorized;
    p->fac = std::move(fl);
    p->w.reset();
    p->mask.reset();
    p->den = DensifiedLayer{};
}

void TransformerLM::apply_masks() {
    for (Projection* p : prunable_layers()) {
        if (p->state == LayerState::dense) {
            for (size_t i = 0; i < p->w->data.size(); ++i) {
                p->w->data[i] *= p->mask->data[i];
            }
        } else if (p->state == LayerState::factorized) {
            for (int64_t j = 0; j < p->fac.rank(); ++j) {
                p->fac.d->data[j] *= p->fac.m->data[j];
            }
        }
    }
}

int64_t TransformerLM::total_params() {
    int64_t n = 0;
    for (const ParamRef& p : parameters()) n += p.tensor->numel();
    return n;
}

int64_t TransformerLM::effective_params() {
    int64_t n = 0;
    for (const ParamRef& p : parameters()) {
        if (!p.prunable) n += p.tensor->numel();
    }
    for (Projection* p : prunable_layers()) n += p->effective_params();
    return n;
}

TensorContainer model_to_container(TransformerLM& model) {
    TensorContainer c;
    c.set_meta("format", "prunelab-ckpt");
    c.set_meta("version", "1");
    c.set_meta("vocab_size", std::to_string(model.config.vocab_size));
    c.set_meta("embed_dim", std::to_string(model.config.embed_dim));
    c.set_meta("num_blocks", std::to_string(model.config.num_blocks));
    c.set_meta("num_heads", std::to_string(model.config.num_heads));
    c.set_meta("head_dim", std::to_string(model.config.head_dim));
    c.set_meta("ffn_dim", std::to_string(model.config.ffn_dim));
    c.set_meta("max_seq_len", std::to_string(model.config.max_seq_len));
    c.set_meta("model_seed", std::to_string(model.config.seed));
    c.set_meta("step", std::to_string(model.step));
    c.set_meta("vocab_hash", std::to_string(model.vocab_hash));
    for (Projection* p : model.prunable_layers()) {
        c.set_meta("layer_state." + p->name, layer_state_name(p->state));
    }

    for (const ParamRef& p : model.parameters()) {
        c.add_f32(p.name, p.tensor->shape, p.tensor->data);
    }
    for (Projection* p : model.prunable_layers()) {
        if (p->state == LayerState::dense) {
            std::vector<uint8_t> m(p->mask->data.size());
            for (size_t i = 0; i < m.size(); ++i) {
                m[i] = p->mask->data[i] != 0.0f ? 1 : 0;
            }
            c.add_u8(p->name + ".mask", p->mask->shape, m);
        } else if (p->state == LayerState::factorized) {
            std::vector<uint8_t> m(p->fac.m->data.size());
            for (size_t i = 0; i < m.size(); ++i) {
                m[i] = p->fac.m->data[i] != 0.0f ? 1 : 0;
            }
            c.add_u8(p->name + ".M", p->fac.m->shape, m);
        }
    }
    return c;
}

TransformerLM model_from_container(const TensorContainer& c) {
    if (c.meta_or("format", "") != "prunelab-ckpt" || c.meta_or("version", "") != "1") {
        throw IoError("container is not a version-1 model checkpoint");
    }
    ModelConfig cfg;
    cfg.vocab_size = c.meta_int("vocab_size");
    cfg.embed_dim = c.meta_int("embed_dim");
    cfg.num_blocks = c.meta_int("num_blocks");
    cfg.num_heads = c.meta_int("num_heads");
    cfg.head_dim = c.meta_int("head_dim");
    cfg.ffn_dim = c.meta_int("ffn_dim");
    cfg.max_seq_len = c.meta_int("max_seq_len");
    cfg.seed = static_cast<uint64_t>(c.meta_int("model_seed"));

    TransformerLM model(cfg);
    model.step = c.meta_int("step");
    model.vocab_hash = c.meta_uint("vocab_hash");

    // Restore layer states first so the parameter registry matches the
    // stored tensor names.
    for (Projection* p : model.prunable_layers()) {
        LayerState st = layer_state_from_name(c.meta("layer_state." + p->name));
        if (st == LayerState::dense) continue;
        if (st == LayerState::factorized) {
            const auto& u = c.get(p->name + ".U");
            const auto& d = c.get(p->name + ".D");
            const auto& v = c.get(p->name + ".V");
            const auto& m = c.get(p->name + ".M");
            FactorizedLayer fl;
            fl.origin_a = p->a;
            fl.origin_b = p->b;
            fl.u = from_values(u.shape, u.f32, true);
            fl.d = from_values(d.shape, d.f32, true);
            fl.v = from_values(v.shape, v.f32, true);
            std::vector<float> mdata(m.u8.begin(), m.u8.end());
            fl.m = from_values(m.shape, std::move(mdata), false);
            model.swap_in_factorized(p->name, std::move(fl));
        } else {
            const auto& u2 = c.get(p->name + ".U2");
            const auto& v2 = c.get(p->name + ".V2");
            if (u2.shape.size() != 2 || v2.shape.size() != 2 || u2.shape[0] != p->a ||
                v2.shape[1] != p->b || u2.shape[1] != v2.shape[0]) {
                throw IoError("densified factors for " + p->name + " have inconsistent shapes");
            }
            p->state = LayerState::densified;
            p->den.u2 = from_values(u2.shape, u2.f32, true);
            p->den.v2 = from_values(v2.shape, v2.f32, true);
            p->den.origin_a = p->a;
            p->den.origin_b = p->b;
            p->w.reset();
            p->mask.reset();
        }
    }

    for (const ParamRef& pr : model.parameters()) {
        const auto& rec = c.get(pr.name);
        if (rec.shape != pr.tensor->shape) {
            throw IoError("checkpoint tensor " + pr.name + " has unexpected shape");
        }
        pr.tensor->data = rec.f32;
    }
    for (Projection* p : model.prunable_layers()) {
        if (p->state != LayerState::dense) continue;
        const auto& rec = c.get(p->name + ".mask");
        if (rec.shape != p->mask->shape) {
            throw IoError("checkpoint mask " + p->name + " has unexpected shape");
        }
        for (size_t i = 0; i < rec.u8.size(); ++i) {
            p->mask->data[i] = rec.u8[i] ? 1.0f : 0.0f;
        }
    }
    model.apply_masks();
    return model;
}

}  // namespace prunelab
