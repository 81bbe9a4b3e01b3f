#include "prunelab/train.hpp"

#include <cmath>

namespace prunelab {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
    if (lr_decay_steps < 0) throw ConfigError("lr_decay_steps must be non-negative");
    if (lr_min < 0.0 || lr_min > lr) {
        throw ConfigError("lr_min must lie in [0, lr]");
    }
    if (lr_step_offset < 0) throw ConfigError("lr_step_offset must be non-negative");
}

Trainer::Trainer(TransformerLM& model, TrainConfig cfg) : model_(model), cfg_(cfg) {
    cfg_.validate();
}

double Trainer::lr_at(int64_t local_step) const {
    int64_t phase_step = local_step + cfg_.lr_step_offset;
    if (cfg_.warmup_steps > 0 && phase_step < cfg_.warmup_steps) {
        return cfg_.lr * static_cast<double>(phase_step) /
               static_cast<double>(cfg_.warmup_steps);
    }
    if (cfg_.lr_decay_steps <= 0) return cfg_.lr;
    double t = static_cast<double>(phase_step - cfg_.warmup_steps) /
               static_cast<double>(cfg_.lr_decay_steps);
    if (t >= 1.0) return cfg_.lr_min;
    return cfg_.lr_min +
           (cfg_.lr - cfg_.lr_min) * 0.5 * (1.0 + std::cos(kPi * t));
}

TrainResult Trainer::run(const BatchStream& stream, int64_t num_steps,
                         const TrainHooks& hooks) {
    if (num_steps < 0) throw ConfigError("num_steps must be non-negative");
    TrainResult result;
    int64_t bpe = stream.batches_per_epoch();

    for (int64_t local = 1; local <= num_steps; ++local) {
        int64_t global = model_.step;  // completed steps; this one is global+1
        Batch batch = stream.get(global / bpe, global % bpe);

        std::vector<ParamRef> params = model_.parameters();
        for (const ParamRef& p : params) p.tensor->zero_grad();

        TensorPtr loss = model_.loss(batch);
        float lval = loss->scalar();
        if (!std::isfinite(lval)) {
            throw TrainingError("non-finite loss " + std::to_string(lval) +
                                " at step " + std::to_string(global + 1) +
                                "; halting before the update");
        }
        backward(loss);

        if (hooks.after_backward) hooks.after_backward(model_, local);

        double lr = lr_at(local);
        for (const ParamRef& p : params) {
            std::vector<float>& v = velocity_[p.name];
            v.resize(p.tensor->data.size(), 0.0f);
            const std::vector<float>& g = p.tensor->grad;
            float* w = p.tensor->data.data();
            float mu = static_cast<float>(cfg_.momentum);
            float eta = static_cast<float>(lr);
            if (g.empty()) {
                for (size_t i = 0; i < v.size(); ++i) {
                    v[i] = mu * v[i];
                    w[i] -= eta * v[i];
                }
            } else {
                for (size_t i = 0; i < v.size(); ++i) {
                    v[i] = mu * v[i] + g[i];
                    w[i] -= eta * v[i];
                }
            }
        }
        model_.apply_masks();
        model_.step = global + 1;
        result.losses.push_back(lval);
        ++result.steps_run;

        if (hooks.interval > 0 && hooks.at_interval && local % hooks.interval == 0) {
            hooks.at_interval(model_, local);
        }
    }
    return result;
}

TensorContainer Trainer::to_container() {
    TensorContainer c = model_to_container(model_);
    for (const ParamRef& p : model_.parameters()) {
        auto it = velocity_.find(p.name);
        if (it == velocity_.end()) continue;
        c.add_f32("opt." + p.name, p.tensor->shape, it->second);
    }
    return c;
}

void Trainer::restore_opt_state(const TensorContainer& c) {
    velocity_.clear();
    for (const ParamRef& p : model_.parameters()) {
        std::string key = "opt." + p.name;
        if (!c.has(key)) continue;
        const TensorRecord& rec = c.get(key);
        if (rec.shape != p.tensor->shape) {
            throw IoError("optimizer state " + key + " has unexpected shape");
        }
        velocity_[p.name] = rec.f32;
    }
}

}  // namespace prunelab
