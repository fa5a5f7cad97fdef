#pragma once

// Score block: maps a lagged-returns window to one fitness score per asset.

#include "folio/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace folio {

// p x N block of simple returns, oldest row first; the last row is r_t.
class InputWindow {
public:
    InputWindow(std::size_t lags, std::size_t assets, std::vector<double> returns);

    std::size_t lags() const noexcept { return lags_; }
    std::size_t assets() const noexcept { return assets_; }
    // Return of `asset` at lag k, where lag 0 is the most recent row.
    double at_lag(std::size_t k, std::size_t asset) const {
        return returns_[(lags_ - 1 - k) * assets_ + asset];
    }
    std::span<const double> values() const noexcept { return returns_; }

private:
    std::size_t lags_;
    std::size_t assets_;
    std::vector<double> returns_;
};

enum class ModelKind { linear, mlp };

// shared: one parameter set applied to every asset's own lag vector.
// full_panel: the whole flattened window feeds every score.
enum class ParameterSharing { shared, full_panel };

const char* to_string(ModelKind kind) noexcept;
const char* to_string(ParameterSharing sharing) noexcept;
ModelKind parse_model_kind(const std::string& text);
ParameterSharing parse_sharing(const std::string& text);

struct ModelShape {
    ModelKind kind = ModelKind::linear;
    ParameterSharing sharing = ParameterSharing::shared;
    std::size_t assets = 0;
    std::size_t lags = 50;
    std::size_t hidden = 64;  // mlp only
    bool zscore = false;      // standardize each window before scoring

    std::size_t input_width() const;
    std::size_t parameter_count() const;

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

class ScoreModel {
public:
    // Parameter views sliced once per tape and reused across samples.
    struct Bound {
        ad::Var w1;
        ad::Var b1;
        ad::Var w2;
        ad::Var b2;
    };

    ScoreModel(ModelShape shape, std::vector<double> parameters, std::uint64_t seed = 0);

    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every layer's weights and bias.
    static ScoreModel init(ModelShape shape, std::uint64_t seed);

    const ModelShape& shape() const noexcept { return shape_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<double>& parameters() const noexcept { return parameters_; }
    ScoreModel with_parameters(std::vector<double> parameters) const;

    Bound bind(const ad::Var& parameters) const;
    ad::Var forward(const Bound& bound, const InputWindow& window) const;

    // Convenience forward pass on a private tape.
    std::vector<double> score(const InputWindow& window) const;

    nlohmann::json to_json() const;
    static ScoreModel from_json(const nlohmann::json& doc);

private:
    void check_window(const InputWindow& window) const;
    std::vector<double> features(const InputWindow& window) const;

    ModelShape shape_;
    std::vector<double> parameters_;
    std::uint64_t seed_ = 0;
};

}  // namespace folio
