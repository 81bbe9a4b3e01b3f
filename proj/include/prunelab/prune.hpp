#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prunelab/model.hpp"

namespace prunelab {

enum class Criterion { magnitude, taylor_dd };
enum class PruneMethod { unstructured, row_group, column_group, factor_diagonal };

const char* criterion_name(Criterion c);
Criterion criterion_from_name(const std::string& s);
const char* prune_method_name(PruneMethod m);
PruneMethod prune_method_from_name(const std::string& s);

// Sparsity schedule: at step t in [t0, t0 + n * delta_t],
//   s_t = s_f + (s_i - s_f) * (1 - (t - t0) / (n * delta_t))^3,
// so pruning is front-loaded and lands exactly on s_f. One-shot pruning is
// the n = 1 instance.
struct ScheduleConfig {
    double s_i = 0.0;
    double s_f = 0.0;
    int64_t delta_t = 1;  // steps between prune events
    int64_t n = 1;        // number of prune events
    int64_t t0 = 0;       // step the schedule starts from

    void validate() const;
    int64_t end_step() const { return t0 + n * delta_t; }
};

double target_sparsity(const ScheduleConfig& schedule, int64_t t);

// Algorithm-side view of a binary mask. The model keeps masks as f32
// tensors; selection works on this exact 0/1 form.
struct PruneMask {
    enum class Kind { unstructured, row_group, column_group, factor_diagonal };

    Kind kind = Kind::unstructured;
    std::vector<int64_t> shape;
    std::vector<uint8_t> values;

    int64_t zeros() const;
    double sparsity() const;
};

PruneMask mask_from_tensor(const TensorPtr& t, PruneMask::Kind kind);
void mask_to_tensor(const PruneMask& m, const TensorPtr& t);

// Per-parameter importance scores. Scores are accumulated and stored in
// double; `excluded` marks positions that are already masked and therefore
// out of the running.
struct ImportanceMap {
    std::string layer;
    std::vector<int64_t> shape;
    std::vector<double> scores;
    std::vector<uint8_t> excluded;
    int64_t batches = 0;  // contributing mini-batches; 0 for static criteria
};

// Disjoint index groups along one axis of a parameter. validate() checks
// the groups partition [0, axis_extent).
struct GroupSpec {
    enum class Axis { rows, columns };

    Axis axis = Axis::rows;
    std::vector<std::vector<int64_t>> groups;

    static GroupSpec per_row(int64_t n_rows);
    static GroupSpec per_column(int64_t n_cols);
    void validate(int64_t axis_extent) const;
};

enum class Reduction { mean, min, max };

// |theta| per weight of a dense-state layer.
ImportanceMap magnitude_scores(const Projection& layer);
// |D_j| per diagonal entry of a factorized-state layer.
ImportanceMap magnitude_scores_factor_diagonal(const Projection& layer);

// Mean squared (gradient * weight) per parameter, accumulated from live
// gradients after backward passes. Feed it from a training hook or from
// taylor_dd_scores below; reset after every prune event so each event
// scores only its own window.
class DdAccumulator {
public:
    explicit DdAccumulator(TransformerLM& model) : model_(model) {}

    void observe();  // reads current grads of every prunable layer
    void reset();
    int64_t batch_count() const { return count_; }

    ImportanceMap map_for(const Projection& layer) const;

private:
    TransformerLM& model_;
    std::map<std::string, std::vector<double>> acc_;
    int64_t count_ = 0;
};

// One forward-backward per batch; scores every prunable layer at once.
std::map<std::string, ImportanceMap> taylor_dd_scores(TransformerLM& model,
                                                      const std::vector<Batch>& batches);

// Zero enough of the lowest-scoring unmasked positions that the mask holds
// exactly floor(target * N) zeros. Ties go to the lowest flat index.
PruneMask select_unstructured(const ImportanceMap& scores, const PruneMask& mask,
                              double target);

std::vector<double> group_scores(const ImportanceMap& scores, const GroupSpec& spec,
                                 Reduction reduction);

// Whole-group variant: zeros entire groups, picking the group count whose
// achieved sparsity is nearest the target (ties toward fewer groups).
PruneMask select_structured(const ImportanceMap& scores, const GroupSpec& spec,
                            const PruneMask& mask, double target,
                            Reduction reduction = Reduction::mean);

// Replace every score by its column mean so all vocabulary rows share the
// per-dimension score; selection then cannot strip any one subword row
// ahead of the others.
ImportanceMap embedding_vocab_grouping(const ImportanceMap& scores);

struct PruneEvent {
    int64_t step = 0;
    std::string layer;
    double target = 0.0;
    double achieved = 0.0;
    std::string criterion;
    std::string method;
    int64_t zeros = 0;
    int64_t total = 0;
};

// Score and re-mask every prunable layer to target_sparsity(schedule, t).
// Each layer is pruned to the same per-layer target. taylor_dd needs an
// accumulator with at least one observed batch. factor_diagonal layers are
// handled by the factorization routines and require factorized state.
std::vector<PruneEvent> prune_step(TransformerLM& model, Criterion criterion,
                                   PruneMethod method, const ScheduleConfig& schedule,
                                   int64_t t, const DdAccumulator* dd = nullptr);

}  // namespace prunelab
