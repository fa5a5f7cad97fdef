#pragma once

// Scalar training objectives over a minibatch of realized portfolio returns.
// Every objective is oriented so that larger is better; the trainer ascends.
// Moments are minibatch sample moments with population normalization and a
// zero risk-free rate.

#include "folio/autodiff.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace folio {

enum class ObjectiveKind { mvp, gmvp, msrp };
enum class MsrpDenominator { variance, stddev };

const char* to_string(ObjectiveKind kind) noexcept;
const char* to_string(MsrpDenominator denom) noexcept;
ObjectiveKind parse_objective_kind(const std::string& text);
MsrpDenominator parse_msrp_denominator(const std::string& text);

struct ObjectiveSpec {
    ObjectiveKind kind = ObjectiveKind::msrp;
    double risk_aversion = 0.0;  // lambda, MVP only
    MsrpDenominator msrp_denominator = MsrpDenominator::variance;

    static ObjectiveSpec mvp(double lambda) { return {ObjectiveKind::mvp, lambda, {}}; }
    static ObjectiveSpec gmvp() { return {ObjectiveKind::gmvp, 0.0, {}}; }
    static ObjectiveSpec msrp(MsrpDenominator d = MsrpDenominator::variance) {
        return {ObjectiveKind::msrp, 0.0, d};
    }

    void validate() const;
    std::string describe() const;

    friend bool operator==(const ObjectiveSpec&, const ObjectiveSpec&) = default;
};

namespace objectives {

// r_p[b] = dot(weights[b], next_returns[b]).
std::vector<double> realized_returns(const Eigen::MatrixXd& weights,
                                     const Eigen::MatrixXd& next_returns);

// Differentiable variant: one weight vector per batch row.
ad::Var realized_returns(std::span<const ad::Var> weights, const Eigen::MatrixXd& next_returns);

ad::Var evaluate(const ObjectiveSpec& spec, const ad::Var& batch);
double evaluate(const ObjectiveSpec& spec, std::span<const double> batch);

}  // namespace objectives
}  // namespace folio
