#include "folio/models.hpp"

#include "folio/error.hpp"
#include "folio/random.hpp"

#include <cmath>
#include <numeric>

namespace folio {

InputWindow::InputWindow(std::size_t lags, std::size_t assets, std::vector<double> returns)
    : lags_(lags), assets_(assets), returns_(std::move(returns)) {
    if (lags_ == 0 || assets_ == 0 || returns_.size() != lags_ * assets_) {
        throw ShapeError("input window: expected " + std::to_string(lags_) + "x" +
                         std::to_string(assets_) + " returns, got " +
                         std::to_string(returns_.size()));
    }
    for (double r : returns_) {
        if (!std::isfinite(r)) {
            throw DataError("input window: non-finite return");
        }
    }
}

const char* to_string(ModelKind kind) noexcept {
    return kind == ModelKind::linear ? "linear" : "mlp";
}

const char* to_string(ParameterSharing sharing) noexcept {
    return sharing == ParameterSharing::shared ? "shared" : "full_panel";
}

ModelKind parse_model_kind(const std::string& text) {
    if (text == "linear" || text == "lm") {
        return ModelKind::linear;
    }
    if (text == "mlp") {
        return ModelKind::mlp;
    }
    throw ContractError("model: unknown kind '" + text + "' (expected linear or mlp)");
}

ParameterSharing parse_sharing(const std::string& text) {
    if (text == "shared") {
        return ParameterSharing::shared;
    }
    if (text == "full_panel") {
        return ParameterSharing::full_panel;
    }
    throw ContractError("model: unknown sharing '" + text + "' (expected shared or full_panel)");
}

std::size_t ModelShape::input_width() const {
    return sharing == ParameterSharing::shared ? lags : lags * assets;
}

std::size_t ModelShape::parameter_count() const {
    const std::size_t in = input_width();
    const std::size_t out = sharing == ParameterSharing::shared ? 1 : assets;
    if (kind == ModelKind::linear) {
        return in * out + out;
    }
    return in * hidden + hidden + hidden * out + out;
}

namespace {

void check_shape(const ModelShape& shape) {
    if (shape.assets == 0 || shape.lags == 0) {
        throw ContractError("model: assets and lags must be positive");
    }
    if (shape.kind == ModelKind::mlp && shape.hidden == 0) {
        throw ContractError("model: hidden width must be >= 1");
    }
}

}  // namespace

ScoreModel::ScoreModel(ModelShape shape, std::vector<double> parameters, std::uint64_t seed)
    : shape_(shape), parameters_(std::move(parameters)), seed_(seed) {
    check_shape(shape_);
    if (parameters_.size() != shape_.parameter_count()) {
        throw ContractError("model: expected " + std::to_string(shape_.parameter_count()) +
                            " parameters, got " + std::to_string(parameters_.size()));
    }
}

ScoreModel ScoreModel::init(ModelShape shape, std::uint64_t seed) {
    check_shape(shape);
    Rng rng(seed);
    std::vector<double> p;
    p.reserve(shape.parameter_count());
    auto fill = [&](std::size_t count, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < count; ++i) {
            p.push_back(rng.uniform(-bound, bound));
        }
    };
    const std::size_t in = shape.input_width();
    const std::size_t out = shape.sharing == ParameterSharing::shared ? 1 : shape.assets;
    if (shape.kind == ModelKind::linear) {
        fill(in * out + out, in);
    } else {
        fill(in * shape.hidden + shape.hidden, in);
        fill(shape.hidden * out + out, shape.hidden);
    }
    return ScoreModel(shape, std::move(p), seed);
}

ScoreModel ScoreModel::with_parameters(std::vector<double> parameters) const {
    return ScoreModel(shape_, std::move(parameters), seed_);
}

ScoreModel::Bound ScoreModel::bind(const ad::Var& parameters) const {
    if (parameters.value().size() != shape_.parameter_count()) {
        throw ContractError("model: parameter vector has " +
                            std::to_string(parameters.value().size()) + " entries, expected " +
                            std::to_string(shape_.parameter_count()));
    }
    const std::size_t in = shape_.input_width();
    const bool shared = shape_.sharing == ParameterSharing::shared;
    const std::size_t out = shared ? 1 : shape_.assets;
    Bound b;
    std::size_t offset = 0;
    auto take = [&](std::size_t n) {
        const ad::Var v = ad::slice(parameters, offset, n);
        offset += n;
        return v;
    };
    if (shape_.kind == ModelKind::linear) {
        b.w1 = shared ? take(in) : ad::reshape(take(out * in), {out, in});
        b.b1 = take(out);
    } else {
        const std::size_t h = shape_.hidden;
        b.w1 = ad::reshape(take(h * in), {h, in});
        b.b1 = take(h);
        b.w2 = shared ? take(h) : ad::reshape(take(out * h), {out, h});
        b.b2 = take(out);
    }
    return b;
}

void ScoreModel::check_window(const InputWindow& window) const {
    if (window.lags() != shape_.lags || window.assets() != shape_.assets) {
        throw ShapeError("model: window is " + std::to_string(window.lags()) + "x" +
                         std::to_string(window.assets()) + ", model expects " +
                         std::to_string(shape_.lags) + "x" + std::to_string(shape_.assets));
    }
}

// Shared: N x p rows of per-asset lags. Full panel: lag-major flat vector
// (entry k*N + i is asset i at lag k).
std::vector<double> ScoreModel::features(const InputWindow& window) const {
    const std::size_t p = shape_.lags;
    const std::size_t n = shape_.assets;
    double center = 0.0;
    double spread = 1.0;
    if (shape_.zscore) {
        const auto v = window.values();
        center = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) {
            ss += (x - center) * (x - center);
        }
        const double sd = std::sqrt(ss / static_cast<double>(v.size()));
        spread = sd > 0.0 ? sd : 1.0;
    }
    std::vector<double> out(p * n);
    for (std::size_t k = 0; k < p; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            const double x = (window.at_lag(k, i) - center) / spread;
            if (shape_.sharing == ParameterSharing::shared) {
                out[i * p + k] = x;
            } else {
                out[k * n + i] = x;
            }
        }
    }
    return out;
}

ad::Var ScoreModel::forward(const Bound& bound, const InputWindow& window) const {
    check_window(window);
    ad::Tape& tape = bound.w1.tape();
    const std::size_t p = shape_.lags;
    const std::size_t n = shape_.assets;
    auto x = features(window);

    if (shape_.sharing == ParameterSharing::full_panel) {
        const ad::Var input = tape.constant(ad::Tensor::vector(std::move(x)));
        if (shape_.kind == ModelKind::linear) {
            return ad::matvec(bound.w1, input) + bound.b1;
        }
        const ad::Var hidden = ad::tanh(ad::matvec(bound.w1, input) + bound.b1);
        return ad::matvec(bound.w2, hidden) + bound.b2;
    }

    if (shape_.kind == ModelKind::linear) {
        const ad::Var input = tape.constant(ad::Tensor::matrix(n, p, std::move(x)));
        return ad::matvec(input, bound.w1) + bound.b1;
    }
    std::vector<ad::Var> scores;
    scores.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(x.begin() + static_cast<std::ptrdiff_t>(i * p),
                                x.begin() + static_cast<std::ptrdiff_t>((i + 1) * p));
        const ad::Var input = tape.constant(ad::Tensor::vector(std::move(row)));
        const ad::Var hidden = ad::tanh(ad::matvec(bound.w1, input) + bound.b1);
        scores.push_back(ad::dot(bound.w2, hidden) + bound.b2);
    }
    return ad::stack(scores);
}

std::vector<double> ScoreModel::score(const InputWindow& window) const {
    ad::Tape tape;
    const ad::Var params = tape.constant(ad::Tensor::vector(parameters_));
    return forward(bind(params), window).value().values();
}

nlohmann::json ScoreModel::to_json() const {
    return {
        {"kind", to_string(shape_.kind)},
        {"sharing", to_string(shape_.sharing)},
        {"assets", shape_.assets},
        {"lags", shape_.lags},
        {"hidden", shape_.hidden},
        {"zscore", shape_.zscore},
        {"seed", seed_},
        {"parameters", parameters_},
    };
}

ScoreModel ScoreModel::from_json(const nlohmann::json& doc) {
    try {
        ModelShape shape;
        shape.kind = parse_model_kind(doc.at("kind").get<std::string>());
        shape.sharing = parse_sharing(doc.value("sharing", std::string("shared")));
        shape.assets = doc.at("assets").get<std::size_t>();
        shape.lags = doc.at("lags").get<std::size_t>();
        shape.hidden = doc.value("hidden", std::size_t{64});
        shape.zscore = doc.value("zscore", false);
        return ScoreModel(shape, doc.at("parameters").get<std::vector<double>>(),
                          doc.value("seed", std::uint64_t{0}));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model checkpoint: ") + e.what());
    }
}

}  // namespace folio
