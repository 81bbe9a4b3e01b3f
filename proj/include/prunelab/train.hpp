#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "prunelab/data.hpp"
#include "prunelab/model.hpp"

namespace prunelab {

struct TrainConfig {
    double lr = 0.3;
    double momentum = 0.9;
    int64_t warmup_steps = 50;  // linear ramp, counted from the start of a run

    // Cosine anneal from lr down to lr_min over this many steps after the
    // warmup ends; 0 keeps the rate constant. The horizon is counted in the
    // same phase-step frame as the warmup, so phases resumed mid-anneal
    // continue the curve rather than restarting it.
    int64_t lr_decay_steps = 0;
    double lr_min = 0.0;

    // Steps of this phase already completed by an earlier process. A resumed
    // run passes the checkpoint's step count so the warmup ramp continues
    // where it left off instead of restarting.
    int64_t lr_step_offset = 0;

    void validate() const;
};

// Callbacks into a training run. `after_backward` fires every step while
// gradients are still live, before the optimizer update. `at_interval` fires
// right after the optimizer update at local-step multiples of `interval`,
// so a run of n * interval steps triggers it exactly n times.
struct TrainHooks {
    std::function<void(TransformerLM&, int64_t)> after_backward;
    int64_t interval = 0;
    std::function<void(TransformerLM&, int64_t)> at_interval;
};

struct TrainResult {
    std::vector<float> losses;  // one entry per step
    int64_t steps_run = 0;
};

// Plain SGD with classical momentum. Momentum buffers are keyed by parameter
// name so they survive checkpointing; parameters that appear after a layer
// swap start from zero velocity.
class Trainer {
public:
    Trainer(TransformerLM& model, TrainConfig cfg);

    // Runs num_steps steps starting at the model's current global step.
    // Batches come from stream.get(epoch, index) derived from the global
    // step, so a resumed run consumes exactly the batches the uninterrupted
    // run would have.
    TrainResult run(const BatchStream& stream, int64_t num_steps,
                    const TrainHooks& hooks = {});

    double lr_at(int64_t local_step) const;  // 1-based within the run

    TensorContainer to_container();
    void restore_opt_state(const TensorContainer& c);

    TransformerLM& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }

private:
    TransformerLM& model_;
    TrainConfig cfg_;
    std::unordered_map<std::string, std::vector<float>> velocity_;
};

}  // namespace prunelab
