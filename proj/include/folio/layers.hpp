#pragma once

// Portfolio block: differentiable maps from fitness scores to weight vectors
// that satisfy a declared constraint set by construction.

#include "folio/autodiff.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace folio {

struct ConstraintSpec {
    bool long_only = false;
    std::optional<double> max_position;  // u, fraction in (0, 1]
    std::optional<int> cardinality;      // K
    double leverage = 1.0;               // L >= 1
    bool short_allowed = true;

    static ConstraintSpec long_only_spec() {
        ConstraintSpec spec;
        spec.long_only = true;
        spec.short_allowed = false;
        return spec;
    }

    // Names per side for the long/short cardinality construction.
    int per_side() const { return cardinality ? *cardinality / 2 + 1 : 0; }

    // Throws ContractError for malformed fields and InfeasibleError when no
    // weight vector over `assets` names can satisfy the set.
    void validate(std::size_t assets) const;

    std::string describe() const;

    friend bool operator==(const ConstraintSpec&, const ConstraintSpec&) = default;
};

struct WeightVector {
    std::vector<double> weights;
    ConstraintSpec spec;

    double gross() const;
    std::size_t support(double tol = 0.0) const;
};

namespace layers {

// How score magnitudes enter the exponential/sigmoid terms for the signed
// layers. `absolute` uses |s| throughout; `raw` uses s itself, which is the
// literal single-constraint short-selling form.
enum class Magnitude { absolute, raw };

// Train mode uses NeuralSort-relaxed thresholds for rank selection; eval mode
// uses the exact sort so deployed weights meet the constraint exactly.
enum class Mode { train, eval };

struct LayerOptions {
    Magnitude magnitude = Magnitude::absolute;
    double temperature = 1.0;
    Mode mode = Mode::eval;
};

// Shift a of the generalized sigmoid phi_a(x) = a + sigmoid(x) that caps each
// of `count` normalized weights at `cap`.
double sigmoid_shift(std::size_t count, double cap);

ad::Var signed_simplex(const ad::Var& scores, const LayerOptions& options = {});
ad::Var long_only_softmax(const ad::Var& scores);
ad::Var max_position(const ad::Var& scores, double cap, const LayerOptions& options = {});
ad::Var leverage(const ad::Var& scores, double gross, const LayerOptions& options = {});
ad::Var cardinality(const ad::Var& scores, int k, const LayerOptions& options = {});
ad::Var combined(const ad::Var& scores, const ConstraintSpec& spec,
                 const LayerOptions& options = {});

// Dispatches to the single-constraint layer when only one constraint is
// active and to `combined` otherwise.
ad::Var apply(const ad::Var& scores, const ConstraintSpec& spec, const LayerOptions& options = {});

// Pairwise score matrix whose row-wise argmax yields the descending sort:
// row i, column j holds (N + 1 - 2i) s_j - sum_m |s_j - s_m| (i 1-based).
ad::Tensor sort_scores(std::span<const double> scores);

// Relaxed permutation: row i is softmax(row i of sort_scores / temperature).
ad::Var neural_sort(const ad::Var& scores, double temperature = 1.0);

// Exact permutation P with (P s) sorted descending. Built from the row-wise
// argmax of sort_scores; ties are broken stably by original index.
ad::Tensor hard_sort_permutation(std::span<const double> scores);
// Column index selected in each row of hard_sort_permutation.
std::vector<std::size_t> descending_order(std::span<const double> scores);

// Value-level conveniences on a private tape.
WeightVector apply_weights(std::span<const double> scores, const ConstraintSpec& spec,
                           const LayerOptions& options = {});

}  // namespace layers
}  // namespace folio
