#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunelab/common.hpp"
#include "prunelab/data.hpp"
#include "prunelab/ops.hpp"
#include "prunelab/serialize.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

struct ModelConfig {
    int64_t vocab_size = 2000;
    int64_t embed_dim = 64;
    int64_t num_blocks = 2;
    int64_t num_heads = 4;
    int64_t head_dim = 16;
    int64_t ffn_dim = 128;
    int64_t max_seq_len = 64;
    uint64_t seed = 1;

    void validate() const;
};

enum class LayerKind {
    embedding,
    attention_qkvo,
    ffn,
    output_projection,
};

enum class LayerState { dense, factorized, densified };

const char* layer_state_name(LayerState s);
LayerState layer_state_from_name(const std::string& s);

// Low-rank replacement for a dense weight: W ~ U diag(D * M) V with
// U (a x r), D and M length r, V (r x b). M is a 0/1 diagonal mask and is
// not trainable.
struct FactorizedLayer {
    TensorPtr u, d, m, v;
    int64_t origin_a = 0, origin_b = 0;

    int64_t rank() const { return d ? d->numel() : 0; }
    int64_t unmasked_rank() const;
};

// Factorized layer with the masked rank dropped and D folded into U:
// U2 (a x k), V2 (k x b).
struct DensifiedLayer {
    TensorPtr u2, v2;
    int64_t origin_a = 0, origin_b = 0;

    int64_t rank() const { return u2 ? u2->cols() : 0; }
};

// One prunable weight matrix plus its life-cycle state. Dense weights carry
// an elementwise 0/1 mask of the same shape; the forward path always
// materializes w * mask so a masked layer computes exactly what the
// corresponding dense layer with zeroed weights would.
struct Projection {
    std::string name;
    LayerKind kind = LayerKind::ffn;
    int64_t a = 0, b = 0;  // logical dense shape, x (n x a) -> out (n x b)
    LayerState state = LayerState::dense;

    TensorPtr w, mask;     // dense state; mask is f32 0/1, no grad
    FactorizedLayer fac;   // factorized state
    DensifiedLayer den;    // densified state

    TensorPtr matmul_forward(const TensorPtr& x) const;
    // Embedding path: rows of the (possibly factorized) table by id.
    TensorPtr lookup_forward(const std::vector<int32_t>& ids) const;

    int64_t total_params() const;      // trainable scalars in current state
    int64_t effective_params() const;  // unmasked scalars
};

// Trainable leaf tensor with its registry name. Diagonal masks and
// elementwise masks are not included.
struct ParamRef {
    std::string name;
    TensorPtr tensor;
    bool prunable = false;
};

// Pre-norm decoder-only transformer LM with learned absolute positional
// embeddings, untied input and output embeddings, and a relu FFN.
class TransformerLM {
public:
    explicit TransformerLM(const ModelConfig& cfg);

    ModelConfig config;
    int64_t step = 0;        // completed optimizer steps
    uint64_t vocab_hash = 0; // bound when a vocabulary is attached

    TensorPtr forward(const Batch& batch);
    TensorPtr loss(const Batch& batch);

    // Fixed enumeration order; repeated calls agree positionally while the
    // layer states are unchanged.
    std::vector<ParamRef> parameters();
    std::vector<Projection*> prunable_layers();
    Projection* find_layer(const std::string& name);
    std::vector<std::string> prunable_layer_names();

    void swap_in_factorized(const std::string& name, FactorizedLayer fl);

    // Re-zero every masked weight and masked diagonal entry in place.
    void apply_masks();

    int64_t total_params();
    int64_t effective_params();

private:
    struct Block {
        TensorPtr ln1_g, ln1_b, ln2_g, ln2_b;
        Projection wq, wk, wv, wo, w1, w2;
    };

    Projection embed_;
    TensorPtr pos_;
    std::vector<Block> blocks_;
    TensorPtr final_ln_g_, final_ln_b_;
    Projection out_;

    friend TensorContainer model_to_container(TransformerLM& model);
    friend TransformerLM model_from_container(const TensorContainer& c);
};

// Checkpoint payload: config and step in metadata, every trainable tensor,
// every elementwise mask as u8, factor stacks under dotted names.
TensorContainer model_to_container(TransformerLM& model);
TransformerLM model_from_container(const TensorContainer& c);

}  // namespace prunelab
