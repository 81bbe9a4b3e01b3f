#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunelab/model.hpp"
#include "prunelab/prune.hpp"

namespace prunelab {

// Double-precision thin SVD, W ~ u . diag(sigma) . v with u (a x r),
// v (r x b), r = min(a, b), sigma descending. Deterministic: one-sided
// Jacobi with fixed sweep order, ties kept in index order, and each left
// singular vector's largest-magnitude component made positive.
struct SvdResult {
    int64_t a = 0, b = 0, r = 0;
    std::vector<double> u;      // a x r
    std::vector<double> sigma;  // length r
    std::vector<double> v;      // r x b
};

SvdResult jacobi_svd(const std::vector<double>& w, int64_t a, int64_t b);

// Dense weight -> UDMV with M all ones at full storage rank min(a, b).
// `layer_name` only labels errors.
FactorizedLayer factorize_weights(const std::vector<float>& w, int64_t a, int64_t b,
                                  const std::string& layer_name);

// Swap a dense-state layer of the model to factorized form in place.
void factorize_layer(TransformerLM& model, const std::string& name);

// Factorize several layers; the SVDs may run on worker threads but results
// are swapped in by position, so the outcome is independent of thread count.
void factorize_layers(TransformerLM& model, const std::vector<std::string>& names,
                      int threads = 1);

// Sparsity target translated to the factorized parameter budget:
//   s_hat = 1 - a * (1 - s_t) / (a + b),
// chosen so rank floor((1 - s_hat) * min(a,b)) costs about (1 - s_t) * a * b
// parameters. Note the numerator uses dimension a only, so the target is
// asymmetric for non-square layers; we keep that form verbatim.
double adjusted_target_sparsity(int64_t a, int64_t b, double s_t);

// Mask the lowest-scoring diagonal entries of a factorized layer so the
// unmasked rank becomes floor((1 - s_hat) * min(a, b)) of the origin shape.
// Keeps at least rank 1; a target that would mask everything is rejected.
PruneEvent prune_factorized(Projection& layer, const ImportanceMap& diag_scores,
                            double s_hat, int64_t step);

// Convenience wrapper: compute diagonal scores for the criterion, derive
// s_hat from the layer's origin shape and s_t, then mask.
PruneEvent prune_factorized_for_target(Projection& layer, Criterion criterion,
                                       double s_t, int64_t step,
                                       const DdAccumulator* dd);

// Drop masked diagonal positions and fold D into U. The result computes
// bit-identically to the masked factorized forward because both scale U's
// columns by D before any accumulation.
DensifiedLayer densify(const FactorizedLayer& f);
void densify_layer(TransformerLM& model, const std::string& name);

// SVD of the densified product at the current (reduced) storage rank,
// giving a fresh all-ones diagonal mask for the next, smaller target.
FactorizedLayer refactorize_for_next_target(const DensifiedLayer& d,
                                            const std::string& layer_name);
void refactorize_layer(TransformerLM& model, const std::string& name);

}  // namespace prunelab
