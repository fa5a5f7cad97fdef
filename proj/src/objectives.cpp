#include "folio/objectives.hpp"

#include "folio/error.hpp"

#include <cmath>
#include <sstream>

namespace folio {

const char* to_string(ObjectiveKind kind) noexcept {
    switch (kind) {
        case ObjectiveKind::mvp: return "mvp";
        case ObjectiveKind::gmvp: return "gmvp";
        case ObjectiveKind::msrp: return "msrp";
    }
    return "unknown";
}

const char* to_string(MsrpDenominator denom) noexcept {
    return denom == MsrpDenominator::variance ? "variance" : "stddev";
}

ObjectiveKind parse_objective_kind(const std::string& text) {
    if (text == "mvp") {
        return ObjectiveKind::mvp;
    }
    if (text == "gmvp") {
        return ObjectiveKind::gmvp;
    }
    if (text == "msrp") {
        return ObjectiveKind::msrp;
    }
    throw ContractError("objective: unknown kind '" + text + "' (expected mvp, gmvp or msrp)");
}

MsrpDenominator parse_msrp_denominator(const std::string& text) {
    if (text == "variance") {
        return MsrpDenominator::variance;
    }
    if (text == "stddev") {
        return MsrpDenominator::stddev;
    }
    throw ContractError("objective: unknown msrp denominator '" + text + "'");
}

void ObjectiveSpec::validate() const {
    if (!std::isfinite(risk_aversion) || risk_aversion < 0.0) {
        throw ContractError("objective: risk aversion must be finite and >= 0");
    }
}

std::string ObjectiveSpec::describe() const {
    std::ostringstream os;
    os << to_string(kind);
    if (kind == ObjectiveKind::mvp) {
        os << "(lambda=" << risk_aversion << ")";
    } else if (kind == ObjectiveKind::msrp) {
        os << "(" << to_string(msrp_denominator) << ")";
    }
    return os.str();
}

namespace objectives {

namespace {

void check_batch_size(std::size_t n) {
    if (n < 2) {
        throw ContractError("objective: batch needs at least 2 returns, got " + std::to_string(n));
    }
}

}  // namespace

std::vector<double> realized_returns(const Eigen::MatrixXd& weights,
                                     const Eigen::MatrixXd& next_returns) {
    if (weights.rows() != next_returns.rows() || weights.cols() != next_returns.cols()) {
        throw ShapeError("realized_returns: weights " + std::to_string(weights.rows()) + "x" +
                         std::to_string(weights.cols()) + " vs returns " +
                         std::to_string(next_returns.rows()) + "x" +
                         std::to_string(next_returns.cols()));
    }
    std::vector<double> out(static_cast<std::size_t>(weights.rows()));
    for (Eigen::Index b = 0; b < weights.rows(); ++b) {
        out[static_cast<std::size_t>(b)] = weights.row(b).dot(next_returns.row(b));
    }
    return out;
}

ad::Var realized_returns(std::span<const ad::Var> weights, const Eigen::MatrixXd& next_returns) {
    if (weights.empty() || static_cast<Eigen::Index>(weights.size()) != next_returns.rows()) {
        throw ShapeError("realized_returns: " + std::to_string(weights.size()) +
                         " weight vectors vs " + std::to_string(next_returns.rows()) +
                         " return rows");
    }
    ad::Tape& tape = weights.front().tape();
    std::vector<ad::Var> parts;
    parts.reserve(weights.size());
    for (std::size_t b = 0; b < weights.size(); ++b) {
        const auto row = next_returns.row(static_cast<Eigen::Index>(b));
        const ad::Var r = tape.constant(ad::Tensor::vector({row.begin(), row.end()}));
        parts.push_back(ad::dot(weights[b], r));
    }
    return ad::stack(parts);
}

ad::Var evaluate(const ObjectiveSpec& spec, const ad::Var& batch) {
    spec.validate();
    check_batch_size(batch.value().size());
    switch (spec.kind) {
        case ObjectiveKind::mvp:
            return ad::mean(batch) - ad::variance(batch) * (spec.risk_aversion / 2.0);
        case ObjectiveKind::gmvp:
            return -ad::variance(batch);
        case ObjectiveKind::msrp: {
            const ad::Var var = ad::variance(batch);
            if (var.value().item() == 0.0) {
                throw DomainError("objective: msrp undefined for a zero-variance batch");
            }
            const ad::Var denom =
                spec.msrp_denominator == MsrpDenominator::variance ? var : ad::sqrt(var);
            return ad::mean(batch) / denom;
        }
    }
    throw ContractError("objective: unknown kind");
}

double evaluate(const ObjectiveSpec& spec, std::span<const double> batch) {
    ad::Tape tape;
    const ad::Var v = tape.constant(ad::Tensor::vector({batch.begin(), batch.end()}));
    return evaluate(spec, v).value().item();
}

}  // namespace objectives
}  // namespace folio
