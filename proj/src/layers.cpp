#include "folio/layers.hpp"

#include "folio/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace folio {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

void ConstraintSpec::validate(std::size_t assets) const {
    if (long_only && short_allowed) {
        throw ContractError("constraints: long_only requires short_allowed = false");
    }
    if (!long_only && !short_allowed) {
        throw ContractError("constraints: shorts disallowed but long_only not set");
    }
    if (!(leverage >= 1.0) || !std::isfinite(leverage)) {
        throw ContractError("constraints: leverage L = " + fmt(leverage) + " must be >= 1");
    }
    if (max_position && !(*max_position > 0.0 && *max_position <= 1.0)) {
        throw ContractError("constraints: max position u = " + fmt(*max_position) +
                            " must lie in (0, 1]");
    }
    const auto n_assets = static_cast<long long>(assets);
    std::size_t count = assets;
    double budget = leverage;
    if (cardinality) {
        const int k = *cardinality;
        if (k < 1 || k > n_assets) {
            throw ContractError("constraints: cardinality K = " + std::to_string(k) +
                                " must lie in [1, N = " + std::to_string(assets) + "]");
        }
        if (long_only) {
            count = static_cast<std::size_t>(k);
        } else {
            const long long n = per_side();
            if (2 * n > n_assets) {
                throw InfeasibleError("constraints: cardinality needs 2n <= N, got 2n = " +
                                      std::to_string(2 * n) + " (K = " + std::to_string(k) +
                                      ") > N = " + std::to_string(assets));
            }
            count = static_cast<std::size_t>(n);
            budget = leverage / 2.0;
        }
    } else if (!long_only && assets < 2) {
        throw ContractError("constraints: signed layers need N >= 2, got N = " +
                            std::to_string(assets));
    }
    if (max_position && *max_position < budget) {
        const double u = *max_position;
        if (!(static_cast<double>(count) * u > budget)) {
            std::string lhs = cardinality && !long_only ? "n*u" : (cardinality ? "K*u" : "N*u");
            std::string rhs = cardinality && !long_only ? "L/2" : "L";
            throw InfeasibleError("constraints: infeasible cap: " + lhs + " = " +
                                  fmt(static_cast<double>(count) * u) + " must exceed " + rhs +
                                  " = " + fmt(budget) + " (count = " + std::to_string(count) +
                                  ", u = " + fmt(u) + ", L = " + fmt(leverage) + ")");
        }
    }
}

std::string ConstraintSpec::describe() const {
    std::ostringstream os;
    os << (long_only ? "long-only" : "long-short");
    if (max_position) {
        os << " u=" << *max_position;
    }
    if (cardinality) {
        os << " K=" << *cardinality;
    }
    os << " L=" << leverage;
    return os.str();
}

double WeightVector::gross() const {
    double g = 0.0;
    for (double w : weights) {
        g += std::abs(w);
    }
    return g;
}

std::size_t WeightVector::support(double tol) const {
    return static_cast<std::size_t>(
        std::count_if(weights.begin(), weights.end(), [tol](double w) { return std::abs(w) > tol; }));
}

namespace layers {

using ad::Tensor;
using ad::Var;

namespace {

std::size_t length_of(const Var& s) {
    const Tensor& v = s.value();
    if (v.rank() != 1) {
        throw ShapeError("layer: scores must be a vector, got " + v.shape_string());
    }
    for (double x : v.data()) {
        if (!std::isfinite(x)) {
            throw DomainError("layer: non-finite score");
        }
    }
    return v.size();
}

Var magnitude_of(const Var& s, Magnitude m) { return m == Magnitude::absolute ? ad::abs(s) : s; }

// exp(x - max x); the shift cancels in any normalization over the same vector.
Var shifted_exp(const Var& x) {
    const auto& v = x.value().values();
    const double hi = *std::max_element(v.begin(), v.end());
    return ad::exp(ad::add_scalar(x, -hi));
}

Var normalize(const Var& x) {
    const Var total = ad::sum(x);
    if (total.value().item() == 0.0) {
        throw DomainError("layer: empty selection, normalizer is zero");
    }
    return x / total;
}

// Positive per-asset terms for a group of `count` names sharing `budget`:
// phi_a when the cap binds, exp otherwise.
Var magnitudes(const Var& x, std::size_t count, double budget, std::optional<double> cap) {
    if (cap && *cap < budget) {
        return ad::sigmoid_shifted(x, sigmoid_shift(count, *cap / budget));
    }
    return shifted_exp(x);
}

struct Selection {
    Var top;
    Var bottom;
};

// 0/1 masks for the `top` highest and `bottom` lowest scores. Train mode
// compares scores against midpoints of the NeuralSort-relaxed sorted vector;
// eval mode takes ranks from the exact sort (ties broken by index).
Selection select_ranks(const Var& s, std::size_t top, std::size_t bottom,
                       const LayerOptions& options) {
    const std::size_t n = s.value().size();
    Selection out;
    if (options.mode == Mode::train) {
        const Var sorted = ad::matvec(neural_sort(s, options.temperature), s);
        auto midpoint = [&](std::size_t upper) {
            return (ad::index(sorted, upper) + ad::index(sorted, upper + 1)) * 0.5;
        };
        if (top > 0) {
            out.top = top < n ? ad::indicator_greater(s, midpoint(top - 1))
                              : s.tape().constant(Tensor::vector(std::vector<double>(n, 1.0)));
        }
        if (bottom > 0) {
            out.bottom = bottom < n ? ad::indicator_less(s, midpoint(n - bottom - 1))
                                    : s.tape().constant(Tensor::vector(std::vector<double>(n, 1.0)));
        }
        return out;
    }
    const auto order = descending_order(s.value().values());
    std::vector<double> top_mask(n, 0.0);
    std::vector<double> bottom_mask(n, 0.0);
    for (std::size_t r = 0; r < top; ++r) {
        top_mask[order[r]] = 1.0;
    }
    for (std::size_t r = 0; r < bottom; ++r) {
        bottom_mask[order[n - 1 - r]] = 1.0;
    }
    if (top > 0) {
        out.top = s.tape().constant(Tensor::vector(std::move(top_mask)));
    }
    if (bottom > 0) {
        out.bottom = s.tape().constant(Tensor::vector(std::move(bottom_mask)));
    }
    return out;
}

}  // namespace

double sigmoid_shift(std::size_t count, double cap) {
    const double denom = static_cast<double>(count) * cap - 1.0;
    if (!(denom > 0.0)) {
        throw InfeasibleError("max position: need count*u > 1, got count = " +
                              std::to_string(count) + ", u = " + fmt(cap));
    }
    return std::max(0.0, (1.0 - cap) / denom);
}

Var signed_simplex(const Var& scores, const LayerOptions& options) {
    const std::size_t n = length_of(scores);
    if (n < 2) {
        throw ContractError("signed_simplex: need N >= 2, got N = " + std::to_string(n));
    }
    return ad::sign(scores) * ad::softmax(magnitude_of(scores, options.magnitude));
}

Var long_only_softmax(const Var& scores) {
    length_of(scores);
    return ad::softmax(scores);
}

Var max_position(const Var& scores, double cap, const LayerOptions& options) {
    const std::size_t n = length_of(scores);
    if (!(cap > 0.0 && cap <= 1.0)) {
        throw ContractError("max_position: u = " + fmt(cap) + " must lie in (0, 1]");
    }
    if (!(static_cast<double>(n) * cap > 1.0)) {
        throw InfeasibleError("max_position: infeasible, need N*u > 1, got N = " +
                              std::to_string(n) + ", u = " + fmt(cap));
    }
    const double a = sigmoid_shift(n, cap);
    const Var phi = ad::sigmoid_shifted(magnitude_of(scores, options.magnitude), a);
    return ad::sign(scores) * normalize(phi);
}

Var leverage(const Var& scores, double gross, const LayerOptions& options) {
    if (!(gross >= 1.0)) {
        throw ContractError("leverage: L = " + fmt(gross) + " must be >= 1");
    }
    return signed_simplex(scores, options) * gross;
}

Var cardinality(const Var& scores, int k, const LayerOptions& options) {
    ConstraintSpec spec;
    spec.cardinality = k;
    return combined(scores, spec, options);
}

Var combined(const Var& scores, const ConstraintSpec& spec, const LayerOptions& options) {
    const std::size_t n_assets = length_of(scores);
    spec.validate(n_assets);
    const double gross = spec.leverage;

    if (spec.long_only) {
        Var selected;
        std::size_t count = n_assets;
        if (spec.cardinality && static_cast<std::size_t>(*spec.cardinality) < n_assets) {
            count = static_cast<std::size_t>(*spec.cardinality);
            selected = select_ranks(scores, count, 0, options).top;
        }
        Var m = magnitudes(scores, count, gross, spec.max_position);
        if (selected.valid()) {
            m = m * selected;
        }
        return normalize(m) * gross;
    }

    if (!spec.cardinality) {
        const Var x = magnitude_of(scores, options.magnitude);
        const Var m = magnitudes(x, n_assets, gross, spec.max_position);
        return ad::sign(scores) * normalize(m) * gross;
    }

    // Long the top n names and short the bottom n, each side carrying L/2.
    const auto n = static_cast<std::size_t>(spec.per_side());
    const Selection sel = select_ranks(scores, n, n, options);
    const Var m = magnitudes(ad::abs(scores), n, gross / 2.0, spec.max_position);
    const Var longs = normalize(sel.top * m);
    const Var shorts = normalize(sel.bottom * m);
    return (longs - shorts) * (gross / 2.0);
}

Var apply(const Var& scores, const ConstraintSpec& spec, const LayerOptions& options) {
    const bool capped = spec.max_position.has_value();
    const bool levered = spec.leverage != 1.0;
    const bool sparse = spec.cardinality.has_value();
    if (spec.long_only) {
        if (!capped && !levered && !sparse) {
            spec.validate(length_of(scores));
            return long_only_softmax(scores);
        }
        return combined(scores, spec, options);
    }
    const int active = int{capped} + int{levered} + int{sparse};
    if (active == 0) {
        spec.validate(length_of(scores));
        return signed_simplex(scores, options);
    }
    if (active == 1 && capped) {
        return max_position(scores, *spec.max_position, options);
    }
    if (active == 1 && levered) {
        spec.validate(length_of(scores));
        return leverage(scores, spec.leverage, options);
    }
    return combined(scores, spec, options);
}

Tensor sort_scores(std::span<const double> scores) {
    const std::size_t n = scores.size();
    std::vector<double> spread(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t m = 0; m < n; ++m) {
            spread[j] += std::abs(scores[j] - scores[m]);
        }
    }
    std::vector<double> out(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        const double c = static_cast<double>(n) - 1.0 - 2.0 * static_cast<double>(i);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = c * scores[j] - spread[j];
        }
    }
    return Tensor::matrix(n, n, std::move(out));
}

Var neural_sort(const Var& scores, double temperature) {
    const std::size_t n = length_of(scores);
    if (!(temperature > 0.0)) {
        throw ContractError("neural_sort: temperature must be > 0, got " + fmt(temperature));
    }
    std::vector<double> coeff(n);
    for (std::size_t i = 0; i < n; ++i) {
        coeff[i] = static_cast<double>(n) - 1.0 - 2.0 * static_cast<double>(i);
    }
    ad::Tape& tape = scores.tape();
    const Var c = tape.constant(Tensor::vector(std::move(coeff)));
    const Var spread = ad::row_sum(ad::abs(ad::outer_sub(scores, scores)));
    const Var lambda = ad::outer(c, scores) - ad::broadcast_rows(spread, n);
    return ad::softmax(lambda * (1.0 / temperature));
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
    const std::size_t n = scores.size();
    const Tensor lambda = sort_scores(scores);
    std::vector<std::size_t> order(n);
    std::vector<bool> used(n, false);
    bool valid = true;
    for (std::size_t i = 0; i < n && valid; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j) {
            if (lambda.at(i, j) > lambda.at(i, best)) {
                best = j;
            }
        }
        valid = !used[best];
        used[best] = true;
        order[i] = best;
    }
    if (!valid) {
        // Ties collapse argmax columns; fall back to a stable exact sort.
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    }
    return order;
}

Tensor hard_sort_permutation(std::span<const double> scores) {
    const std::size_t n = scores.size();
    std::vector<double> out(n * n, 0.0);
    const auto order = descending_order(scores);
    for (std::size_t i = 0; i < n; ++i) {
        out[i * n + order[i]] = 1.0;
    }
    return Tensor::matrix(n, n, std::move(out));
}

WeightVector apply_weights(std::span<const double> scores, const ConstraintSpec& spec,
                           const LayerOptions& options) {
    ad::Tape tape;
    const Var s = tape.constant(Tensor::vector({scores.begin(), scores.end()}));
    return WeightVector{apply(s, spec, options).value().values(), spec};
}

}  // namespace layers
}  // namespace folio
