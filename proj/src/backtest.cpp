#include "folio/backtest.hpp"

#include "folio/error.hpp"
#include "folio/random.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>

namespace folio {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ContractError("train: learning rate must be positive");
    }
    if (batch_size < 2) {
        throw ContractError("train: batch size must be >= 2");
    }
    if (epochs < 1) {
        throw ContractError("train: epochs must be >= 1");
    }
    if (!(cost_bp >= 0.0) || !std::isfinite(cost_bp)) {
        throw ContractError("train: cost must be >= 0 basis points");
    }
}

SampleRange samples_for_targets(RowRange targets, std::size_t lags) {
    const std::size_t first_target = std::max(targets.begin, lags);
    if (targets.end <= first_target) {
        return {};
    }
    return {first_target - 1, targets.end - 1};
}

InputWindow window_at(const Eigen::MatrixXd& returns, std::size_t row, std::size_t lags) {
    if (row + 1 < lags || row >= static_cast<std::size_t>(returns.rows())) {
        throw ContractError("window: row " + std::to_string(row) + " lacks " +
                            std::to_string(lags) + " rows of history");
    }
    const auto n = static_cast<std::size_t>(returns.cols());
    std::vector<double> values(lags * n);
    for (std::size_t k = 0; k < lags; ++k) {
        const auto r = static_cast<Eigen::Index>(row + 1 - lags + k);
        for (std::size_t i = 0; i < n; ++i) {
            values[k * n + i] = returns(r, static_cast<Eigen::Index>(i));
        }
    }
    return InputWindow(lags, n, std::move(values));
}

namespace {

// Objective of one batch of decision rows, recorded on the bound tape.
using BatchObjective = std::function<ad::Var(const ScoreModel&, const ScoreModel::Bound&,
                                             std::span<const std::size_t>, layers::Mode)>;

Eigen::MatrixXd targets_of(const Eigen::MatrixXd& returns, std::span<const std::size_t> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), returns.cols());
    for (std::size_t b = 0; b < rows.size(); ++b) {
        out.row(static_cast<Eigen::Index>(b)) = returns.row(static_cast<Eigen::Index>(rows[b] + 1));
    }
    return out;
}

BatchObjective portfolio_objective(const ConstraintSpec& constraints,
                                   const ObjectiveSpec& objective,
                                   const Eigen::MatrixXd& returns) {
    return [&constraints, &objective, &returns](const ScoreModel& model,
                                                const ScoreModel::Bound& bound,
                                                std::span<const std::size_t> rows,
                                                layers::Mode mode) {
        layers::LayerOptions opts;
        opts.mode = mode;
        std::vector<ad::Var> weights;
        weights.reserve(rows.size());
        for (std::size_t t : rows) {
            const ad::Var scores =
                model.forward(bound, window_at(returns, t, model.shape().lags));
            weights.push_back(layers::apply(scores, constraints, opts));
        }
        return objectives::evaluate(objective,
                                    objectives::realized_returns(weights, targets_of(returns, rows)));
    };
}

// Negative mean squared forecast error, so that ascent fits the predictor.
BatchObjective forecast_objective(const Eigen::MatrixXd& returns) {
    return [&returns](const ScoreModel& model, const ScoreModel::Bound& bound,
                      std::span<const std::size_t> rows, layers::Mode) {
        ad::Tape& tape = bound.w1.tape();
        std::vector<ad::Var> errors;
        errors.reserve(rows.size());
        for (std::size_t t : rows) {
            const ad::Var scores =
                model.forward(bound, window_at(returns, t, model.shape().lags));
            const Eigen::VectorXd next = returns.row(static_cast<Eigen::Index>(t + 1)).transpose();
            const ad::Var diff =
                scores - tape.constant(ad::Tensor::vector({next.data(), next.data() + next.size()}));
            errors.push_back(ad::mean(diff * diff));
        }
        return -ad::mean(ad::stack(errors));
    };
}

std::vector<std::size_t> rows_of(SampleRange range) {
    std::vector<std::size_t> rows(range.size());
    std::iota(rows.begin(), rows.end(), range.first);
    return rows;
}

double value_of(const ScoreModel& model, const BatchObjective& f, SampleRange range,
                layers::Mode mode) {
    ad::Tape tape;
    const ad::Var params = tape.constant(ad::Tensor::vector(model.parameters()));
    const auto rows = rows_of(range);
    return f(model, model.bind(params), rows, mode).value().item();
}

void check_samples(const Eigen::MatrixXd& returns, const ScoreModel& model, SampleRange range,
                   const char* what) {
    if (static_cast<std::size_t>(returns.cols()) != model.shape().assets) {
        throw ShapeError(std::string("train: panel has ") + std::to_string(returns.cols()) +
                         " assets, model expects " + std::to_string(model.shape().assets));
    }
    if (range.size() > 0 && (range.first + 1 < model.shape().lags ||
                             range.last >= static_cast<std::size_t>(returns.rows()))) {
        throw ContractError(std::string("train: ") + what + " samples fall outside the panel");
    }
}

std::uint64_t shuffle_seed(std::uint64_t seed) {
    // splitmix64 finalizer, so shuffling and initialization streams differ.
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

TrainResult gradient_ascent(const ScoreModel& initial, const BatchObjective& objective,
                            const Eigen::MatrixXd& returns, SampleRange train_samples,
                            const TrainConfig& config,
                            std::optional<SampleRange> validation_samples) {
    config.validate();
    check_samples(returns, initial, train_samples, "training");
    if (train_samples.size() < config.batch_size) {
        throw ContractError("train: batch size " + std::to_string(config.batch_size) +
                            " exceeds the " + std::to_string(train_samples.size()) +
                            " available samples");
    }
    if (validation_samples && validation_samples->size() < 2) {
        throw ContractError("train: validation range needs at least 2 samples");
    }
    if (validation_samples) {
        check_samples(returns, initial, *validation_samples, "validation");
    }

    Rng rng(shuffle_seed(config.seed));
    std::vector<std::size_t> order = rows_of(train_samples);
    std::vector<double> theta = initial.parameters();
    ScoreModel current = initial;

    auto checked = [&](SampleRange range, layers::Mode mode, std::size_t epoch) {
        const std::string where = epoch == 0 ? std::string("before epoch 1")
                                             : "after epoch " + std::to_string(epoch);
        double v = 0.0;
        try {
            v = value_of(current, objective, range, mode);
        } catch (const DomainError& e) {
            throw DomainError("training aborted " + where + ": " + e.what());
        }
        if (!std::isfinite(v)) {
            throw DomainError("training aborted " + where + ": objective is NaN/inf");
        }
        return v;
    };

    TrainResult result{initial, {}, {}, 0};
    result.train_curve.push_back(checked(train_samples, layers::Mode::train, 0));
    double best = -std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, order.size() - start);
            if (len < 2) {
                break;  // a single trailing sample has no variance
            }
            ++batch_no;
            const std::span<const std::size_t> rows(order.data() + start, len);
            ad::Tape tape;
            const ad::Var params = tape.leaf(ad::Tensor::vector(theta));
            const std::string where = "epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_no);
            ad::Var value;
            try {
                value = objective(current, current.bind(params), rows, layers::Mode::train);
            } catch (const DomainError& e) {
                throw DomainError(std::string("training aborted at ") + where + ": " + e.what());
            }
            if (!std::isfinite(value.value().item())) {
                throw DomainError("training aborted at " + where + ": objective is NaN/inf");
            }
            const ad::Tensor grad = tape.backward(value)[params];
            for (std::size_t i = 0; i < theta.size(); ++i) {
                if (!std::isfinite(grad[i])) {
                    throw DomainError("training aborted at " + where + ": non-finite gradient");
                }
            }
            for (std::size_t i = 0; i < theta.size(); ++i) {
                theta[i] += config.learning_rate * grad[i];
            }
            current = current.with_parameters(theta);
        }

        result.train_curve.push_back(checked(train_samples, layers::Mode::train, epoch));
        if (validation_samples) {
            const double v = checked(*validation_samples, layers::Mode::eval, epoch);
            result.validation_curve.push_back(v);
            if (v > best) {
                best = v;
                result.model = current;
                result.selected_epoch = epoch;
            }
        }
    }
    if (!validation_samples || result.selected_epoch == 0) {
        result.model = current;
        result.selected_epoch = config.epochs;
    }
    return result;
}

}  // namespace

TrainResult train(const ScoreModel& model, const ConstraintSpec& constraints,
                  const ObjectiveSpec& objective, const Eigen::MatrixXd& returns,
                  SampleRange train_samples, const TrainConfig& config,
                  std::optional<SampleRange> validation_samples) {
    constraints.validate(model.shape().assets);
    objective.validate();
    return gradient_ascent(model, portfolio_objective(constraints, objective, returns), returns,
                           train_samples, config, validation_samples);
}

TrainResult train_predictor(const ScoreModel& model, const Eigen::MatrixXd& returns,
                            SampleRange train_samples, const TrainConfig& config,
                            std::optional<SampleRange> validation_samples) {
    return gradient_ascent(model, forecast_objective(returns), returns, train_samples, config,
                           validation_samples);
}

double evaluate_objective(const ScoreModel& model, const ConstraintSpec& constraints,
                          const ObjectiveSpec& objective, const Eigen::MatrixXd& returns,
                          SampleRange samples, layers::Mode mode) {
    check_samples(returns, model, samples, "evaluation");
    return value_of(model, portfolio_objective(constraints, objective, returns), samples, mode);
}

Eigen::MatrixXd emit_weights(const ScoreModel& model, const ConstraintSpec& constraints,
                             const Eigen::MatrixXd& returns, RowRange rows) {
    const std::size_t n = model.shape().assets;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
    for (std::size_t t = rows.begin; t < rows.end; ++t) {
        const auto scores = model.score(window_at(returns, t, model.shape().lags));
        const auto w = layers::apply_weights(scores, constraints).weights;
        for (std::size_t i = 0; i < n; ++i) {
            out(static_cast<Eigen::Index>(t - rows.begin), static_cast<Eigen::Index>(i)) = w[i];
        }
    }
    return out;
}

std::vector<double> net_returns(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& returns,
                                double cost_bp) {
    if (weights.rows() != returns.rows() || weights.cols() != returns.cols()) {
        throw ShapeError("net_returns: weights are " + std::to_string(weights.rows()) + "x" +
                         std::to_string(weights.cols()) + ", returns are " +
                         std::to_string(returns.rows()) + "x" + std::to_string(returns.cols()));
    }
    if (!(cost_bp >= 0.0)) {
        throw ContractError("net_returns: cost must be >= 0 basis points");
    }
    const double c = cost_bp * 1e-4;
    std::vector<double> out(static_cast<std::size_t>(weights.rows()));
    for (Eigen::Index t = 0; t < weights.rows(); ++t) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < weights.cols(); ++i) {
            const double prev = t > 0 ? weights(t - 1, i) : 0.0;
            const double r = returns(t, i);
            double term = prev * r;
            if (c != 0.0) {
                term -= c * std::abs(weights(t, i) * (1.0 + prev * r) - prev);
            }
            total += term;
        }
        out[static_cast<std::size_t>(t)] = total;
    }
    return out;
}

std::vector<double> daily_turnover(const Eigen::MatrixXd& weights) {
    std::vector<double> out(static_cast<std::size_t>(weights.rows()), 0.0);
    for (Eigen::Index t = 1; t < weights.rows(); ++t) {
        out[static_cast<std::size_t>(t)] = (weights.row(t) - weights.row(t - 1)).lpNorm<1>();
    }
    return out;
}

namespace {

double mean_of(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double population_std(std::span<const double> x) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    if (*lo == *hi) {
        return 0.0;  // exact, whatever the rounding of the mean
    }
    const double m = mean_of(x);
    double ss = 0.0;
    for (double v : x) {
        ss += (v - m) * (v - m);
    }
    return std::sqrt(ss / static_cast<double>(x.size()));
}

double population_cov(std::span<const double> x, std::span<const double> y) {
    const double mx = mean_of(x);
    const double my = mean_of(y);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        s += (x[i] - mx) * (y[i] - my);
    }
    return s / static_cast<double>(x.size());
}

}  // namespace

Metrics compute_metrics(std::span<const double> returns, const Eigen::MatrixXd& weights,
                        std::optional<std::span<const double>> index_returns,
                        const Eigen::MatrixXd* oracle) {
    if (returns.size() < 2) {
        throw ContractError("metrics: need at least 2 returns, got " +
                            std::to_string(returns.size()));
    }
    if (static_cast<std::size_t>(weights.rows()) != returns.size()) {
        throw ShapeError("metrics: " + std::to_string(weights.rows()) + " weight rows for " +
                         std::to_string(returns.size()) + " returns");
    }
    Metrics m;
    const double annual = std::sqrt(trading_days);
    m.expected_return = mean_of(returns) * trading_days;
    m.volatility = population_std(returns) * annual;
    if (m.volatility > 0.0) {
        m.sharpe = m.expected_return / m.volatility;
    }

    std::vector<double> negatives;
    for (double r : returns) {
        if (r < 0.0) {
            negatives.push_back(r);
        }
    }
    if (!negatives.empty()) {
        m.downside_deviation = population_std(negatives) * annual;
        if (*m.downside_deviation > 0.0) {
            m.sortino = m.expected_return / *m.downside_deviation;
        }
    }

    double equity = 1.0;
    double peak = 1.0;
    for (double r : returns) {
        equity *= 1.0 + r;
        peak = std::max(peak, equity);
        m.max_drawdown = std::max(m.max_drawdown, (peak - equity) / peak);
    }
    m.pct_positive = static_cast<double>(std::count_if(returns.begin(), returns.end(),
                                                       [](double r) { return r > 0.0; })) /
                     static_cast<double>(returns.size());

    const auto turnover = daily_turnover(weights);
    double total = 0.0;
    for (std::size_t t = 1; t < turnover.size(); ++t) {
        total += turnover[t];
    }
    m.turnover = total / static_cast<double>(turnover.size() - 1);

    if (index_returns) {
        if (index_returns->size() != returns.size()) {
            throw ShapeError("metrics: index series has " + std::to_string(index_returns->size()) +
                             " entries for " + std::to_string(returns.size()) + " returns");
        }
        const double var = population_cov(*index_returns, *index_returns);
        if (var > 0.0) {
            m.beta = population_cov(returns, *index_returns) / var;
        }
    }
    if (oracle) {
        if (oracle->rows() != weights.rows() || oracle->cols() != weights.cols()) {
            throw ShapeError("metrics: oracle weights do not match the weight history shape");
        }
        m.frobenius = (weights - *oracle).norm();
    }
    return m;
}

nlohmann::json to_json(const Metrics& m) {
    auto opt = [](const std::optional<double>& v) -> nlohmann::json {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return {
        {"expected_return", m.expected_return},
        {"volatility", m.volatility},
        {"sharpe", opt(m.sharpe)},
        {"downside_deviation", opt(m.downside_deviation)},
        {"sortino", opt(m.sortino)},
        {"max_drawdown", m.max_drawdown},
        {"pct_positive", m.pct_positive},
        {"turnover", m.turnover},
        {"beta", opt(m.beta)},
        {"frobenius", opt(m.frobenius)},
    };
}

Metrics metrics_from_json(const nlohmann::json& doc) {
    auto opt = [&](const char* key) -> std::optional<double> {
        if (!doc.contains(key) || doc.at(key).is_null()) {
            return std::nullopt;
        }
        return doc.at(key).get<double>();
    };
    try {
        Metrics m;
        m.expected_return = doc.at("expected_return").get<double>();
        m.volatility = doc.at("volatility").get<double>();
        m.sharpe = opt("sharpe");
        m.downside_deviation = opt("downside_deviation");
        m.sortino = opt("sortino");
        m.max_drawdown = doc.at("max_drawdown").get<double>();
        m.pct_positive = doc.at("pct_positive").get<double>();
        m.turnover = doc.at("turnover").get<double>();
        m.beta = opt("beta");
        m.frobenius = opt("frobenius");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("metrics: ") + e.what());
    }
}

std::vector<double> cumulative_returns(std::span<const double> returns) {
    std::vector<double> out;
    out.reserve(returns.size());
    double equity = 1.0;
    for (double r : returns) {
        equity *= 1.0 + r;
        out.push_back(equity - 1.0);
    }
    return out;
}

std::vector<double> drawdown_series(std::span<const double> returns) {
    std::vector<double> out;
    out.reserve(returns.size());
    double equity = 1.0;
    double peak = 1.0;
    for (double r : returns) {
        equity *= 1.0 + r;
        peak = std::max(peak, equity);
        out.push_back(equity >= peak ? 0.0 : equity / peak - 1.0);
    }
    return out;
}

std::vector<double> rolling_sharpe(std::span<const double> returns, std::size_t window) {
    std::vector<double> out(returns.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t t = 1; t < returns.size(); ++t) {
        const std::size_t start = t + 1 > window ? t + 1 - window : 0;
        const auto w = returns.subspan(start, t + 1 - start);
        const double sd = population_std(w);
        if (sd > 0.0) {
            out[t] = mean_of(w) / sd * std::sqrt(trading_days);
        }
    }
    return out;
}

std::vector<double> rolling_beta(std::span<const double> returns, std::span<const double> index,
                                 std::size_t window) {
    if (returns.size() != index.size()) {
        throw ShapeError("rolling_beta: series lengths differ");
    }
    std::vector<double> out(returns.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t t = 1; t < returns.size(); ++t) {
        const std::size_t start = t + 1 > window ? t + 1 - window : 0;
        const std::size_t len = t + 1 - start;
        const auto x = index.subspan(start, len);
        const double var = population_cov(x, x);
        if (var > 0.0) {
            out[t] = population_cov(returns.subspan(start, len), x) / var;
        }
    }
    return out;
}

Eigen::VectorXd oracle_weights(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
    if (sigma.rows() != mu.size() || sigma.cols() != mu.size() || mu.size() == 0) {
        throw ShapeError("oracle_weights: mu has " + std::to_string(mu.size()) +
                         " entries, sigma is " + std::to_string(sigma.rows()) + "x" +
                         std::to_string(sigma.cols()));
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(sigma);
    if (!lu.isInvertible()) {
        throw DomainError("oracle_weights: sigma is singular");
    }
    const Eigen::VectorXd x = lu.solve(mu);
    const double l1 = x.lpNorm<1>();
    if (!(l1 > 0.0) || !std::isfinite(l1)) {
        throw DomainError("oracle_weights: inv(sigma) mu is zero; direction undefined");
    }
    return x / l1;
}

Eigen::VectorXd tangency_weights(const Eigen::VectorXd& mu_hat, const Eigen::MatrixXd& sigma_hat) {
    return oracle_weights(mu_hat, sigma_hat);
}

Eigen::VectorXd min_variance_weights(const Eigen::MatrixXd& sigma_hat) {
    if (sigma_hat.rows() != sigma_hat.cols() || sigma_hat.rows() == 0) {
        throw ShapeError("min_variance_weights: sigma must be square");
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(sigma_hat);
    if (!lu.isInvertible()) {
        throw DomainError("min_variance_weights: estimated covariance is singular; use delta > 0");
    }
    const Eigen::VectorXd x = lu.solve(Eigen::VectorXd::Ones(sigma_hat.rows()));
    const double total = x.sum();
    if (!(std::abs(total) > 0.0) || !std::isfinite(total)) {
        throw DomainError("min_variance_weights: 1' inv(sigma) 1 is zero");
    }
    return x / total;
}

const Eigen::VectorXd& OracleSchedule::at(Date date) const {
    const int year = static_cast<int>(date.year());
    if (const auto it = by_year.find(year); it != by_year.end()) {
        return it->second;
    }
    if (constant) {
        return *constant;
    }
    throw DataError("oracle: no regime for " + std::to_string(year));
}

Eigen::MatrixXd OracleSchedule::stacked(std::span<const Date> dates) const {
    Eigen::MatrixXd out;
    for (std::size_t t = 0; t < dates.size(); ++t) {
        const Eigen::VectorXd& w = at(dates[t]);
        if (t == 0) {
            out.resize(static_cast<Eigen::Index>(dates.size()), w.size());
        }
        out.row(static_cast<Eigen::Index>(t)) = w.transpose();
    }
    return out;
}

const char* to_string(BaselineKind kind) noexcept {
    switch (kind) {
        case BaselineKind::ewp:
            return "ewp";
        case BaselineKind::gmvp:
            return "gmvp";
        case BaselineKind::cs_sample:
            return "cs_sample";
        case BaselineKind::cs_predictor:
            return "cs_predictor";
    }
    return "?";
}

BaselineKind parse_baseline(const std::string& text) {
    for (BaselineKind k : {BaselineKind::ewp, BaselineKind::gmvp, BaselineKind::cs_sample,
                           BaselineKind::cs_predictor}) {
        if (text == to_string(k)) {
            return k;
        }
    }
    throw ContractError("unknown baseline '" + text +
                        "' (expected ewp, gmvp, cs_sample or cs_predictor)");
}

WeightSeries baseline_ewp(std::size_t assets, RowRange rows) {
    if (assets == 0) {
        throw ContractError("ewp: no assets");
    }
    return {rows,
            Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(rows.size()),
                                      static_cast<Eigen::Index>(assets),
                                      1.0 / static_cast<double>(assets)),
            0};
}

namespace {

// Drives a rolling estimator over `rows`; rows lacking `history` prior rows
// (inclusive of the current one) are skipped from the front.
template <typename Fn>
WeightSeries rolling(const Eigen::MatrixXd& returns, RowRange rows, std::size_t history, Fn fn) {
    if (rows.end > static_cast<std::size_t>(returns.rows())) {
        throw ContractError("baseline: rows outside the panel");
    }
    WeightSeries out;
    const std::size_t first = std::max(rows.begin, history > 0 ? history - 1 : 0);
    out.rows = {std::min(first, rows.end), rows.end};
    out.skipped = out.rows.begin - rows.begin;
    out.weights.resize(static_cast<Eigen::Index>(out.rows.size()), returns.cols());
    Eigen::VectorXd prev = Eigen::VectorXd::Zero(returns.cols());
    for (std::size_t t = out.rows.begin; t < out.rows.end; ++t) {
        prev = fn(t, prev);
        out.weights.row(static_cast<Eigen::Index>(t - out.rows.begin)) = prev.transpose();
    }
    return out;
}

Eigen::MatrixXd lookback_block(const Eigen::MatrixXd& returns, std::size_t t,
                               std::size_t lookback) {
    return returns.middleRows(static_cast<Eigen::Index>(t + 1 - lookback),
                              static_cast<Eigen::Index>(lookback));
}

void check_lookback(const RollingOptions& o) {
    if (o.lookback < 2) {
        throw ContractError("baseline: lookback must be >= 2");
    }
}

}  // namespace

WeightSeries baseline_gmvp(const Eigen::MatrixXd& returns, RowRange rows,
                           const RollingOptions& options) {
    check_lookback(options);
    if (options.lookback < static_cast<std::size_t>(returns.cols()) && options.shrinkage <= 0.0) {
        throw ContractError("gmvp: lookback below the asset count needs shrinkage > 0");
    }
    return rolling(returns, rows, options.lookback, [&](std::size_t t, const Eigen::VectorXd&) {
        const Eigen::MatrixXd block = lookback_block(returns, t, options.lookback);
        return min_variance_weights(shrink_covariance(sample_covariance(block), options.shrinkage));
    });
}

WeightSeries baseline_cs_sample(const Eigen::MatrixXd& returns, RowRange rows,
                                const RollingOptions& options) {
    check_lookback(options);
    return rolling(returns, rows, options.lookback,
                   [&](std::size_t t, const Eigen::VectorXd& prev) -> Eigen::VectorXd {
                       const Eigen::MatrixXd block = lookback_block(returns, t, options.lookback);
                       const Eigen::VectorXd mu = block.colwise().mean().transpose();
                       if ((mu.array() == 0.0).all()) {
                           return prev;
                       }
                       return tangency_weights(
                           mu, shrink_covariance(sample_covariance(block), options.shrinkage));
                   });
}

WeightSeries baseline_cs_predictor(const ScoreModel& predictor, const Eigen::MatrixXd& returns,
                                   RowRange rows, const RollingOptions& options) {
    check_lookback(options);
    const std::size_t history = std::max(options.lookback, predictor.shape().lags);
    return rolling(returns, rows, history,
                   [&](std::size_t t, const Eigen::VectorXd& prev) -> Eigen::VectorXd {
                       const auto s = predictor.score(window_at(returns, t, predictor.shape().lags));
                       const Eigen::VectorXd mu =
                           Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
                       if ((mu.array() == 0.0).all()) {
                           return prev;
                       }
                       const Eigen::MatrixXd block = lookback_block(returns, t, options.lookback);
                       return tangency_weights(
                           mu, shrink_covariance(sample_covariance(block), options.shrinkage));
                   });
}

std::size_t worker_count(std::size_t jobs, std::size_t requested) {
    std::size_t n = requested;
    if (n == 0) {
        if (const char* env = std::getenv("FOLIO_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v > 0) {
                n = static_cast<std::size_t>(v);
            }
        }
    }
    if (n == 0) {
        n = std::max(1u, std::thread::hardware_concurrency());
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

namespace {

struct SplitWeights {
    RowRange test_rows;
    Eigen::MatrixXd weights;
    std::vector<double> train_curve;
    std::vector<double> validation_curve;
    std::size_t selected_epoch = 0;
    std::optional<ScoreModel> model;
};

RowRange require_rows(const ReturnsPanel& panel, int first, int last, const char* what) {
    const RowRange r = panel.years(first, last);
    if (r.empty()) {
        throw DataError(std::string("walk-forward: no ") + what + " rows for " +
                        std::to_string(first) + (first == last ? "" : "-" + std::to_string(last)));
    }
    return r;
}

Eigen::MatrixXd fill_series(const WeightSeries& s, RowRange rows, std::size_t n) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                                                static_cast<Eigen::Index>(n));
    out.bottomRows(static_cast<Eigen::Index>(s.rows.size())) = s.weights;
    return out;
}

SplitWeights run_split(const ReturnsPanel& panel, const WalkForwardSplit& split,
                       const Strategy& strategy, TrainConfig config, std::size_t index) {
    const RowRange train_rows = require_rows(panel, split.train.first, split.train.last, "training");
    const RowRange val_rows = require_rows(panel, split.validation, split.validation, "validation");
    SplitWeights out;
    out.test_rows = require_rows(panel, split.test, split.test, "test");
    config.seed += index;
    const std::size_t n = panel.width();

    if (strategy.baseline == BaselineKind::ewp) {
        out.weights = baseline_ewp(n, out.test_rows).weights;
        return out;
    }
    if (strategy.baseline == BaselineKind::gmvp) {
        out.weights = fill_series(baseline_gmvp(panel.returns, out.test_rows, strategy.rolling),
                                  out.test_rows, n);
        return out;
    }
    if (strategy.baseline == BaselineKind::cs_sample) {
        out.weights = fill_series(baseline_cs_sample(panel.returns, out.test_rows, strategy.rolling),
                                  out.test_rows, n);
        return out;
    }

    ModelShape shape = strategy.model;
    shape.assets = n;
    const ScoreModel init = ScoreModel::init(shape, config.seed);
    const SampleRange train_samples = samples_for_targets(train_rows, shape.lags);
    const SampleRange val_samples = samples_for_targets(val_rows, shape.lags);
    if (out.test_rows.begin + 1 < shape.lags) {
        throw DataError("walk-forward: test period of " + split.label() + " starts before " +
                        std::to_string(shape.lags) + " rows of history");
    }

    TrainResult trained =
        strategy.baseline == BaselineKind::cs_predictor
            ? train_predictor(init, panel.returns, train_samples, config, val_samples)
            : train(init, strategy.constraints, strategy.objective, panel.returns, train_samples,
                    config, val_samples);
    out.train_curve = std::move(trained.train_curve);
    out.validation_curve = std::move(trained.validation_curve);
    out.selected_epoch = trained.selected_epoch;
    out.model = trained.model;
    if (strategy.baseline == BaselineKind::cs_predictor) {
        out.weights = fill_series(
            baseline_cs_predictor(trained.model, panel.returns, out.test_rows, strategy.rolling),
            out.test_rows, n);
    } else {
        out.weights = emit_weights(trained.model, strategy.constraints, panel.returns, out.test_rows);
    }
    return out;
}

BacktestReport make_report(const ReturnsPanel& panel, std::span<const std::size_t> rows,
                           Eigen::MatrixXd weights, std::vector<double> net,
                           std::vector<double> turnover, const RunOptions& options) {
    BacktestReport r;
    r.assets = panel.assets;
    std::vector<double> index;
    for (std::size_t t : rows) {
        r.dates.push_back(panel.dates[t]);
        if (options.index_returns) {
            index.push_back((*options.index_returns)[static_cast<Eigen::Index>(t)]);
        }
    }
    std::optional<Eigen::MatrixXd> oracle;
    if (options.oracle) {
        oracle = options.oracle->stacked(r.dates);
    }
    r.metrics = compute_metrics(
        net, weights,
        options.index_returns ? std::optional<std::span<const double>>(index) : std::nullopt,
        oracle ? &*oracle : nullptr);
    r.weights = std::move(weights);
    r.net_returns = std::move(net);
    r.turnover = std::move(turnover);
    return r;
}

}  // namespace

WalkForwardResult run_walk_forward(const ReturnsPanel& panel,
                                   std::span<const WalkForwardSplit> splits,
                                   const Strategy& strategy, const TrainConfig& config,
                                   const RunOptions& options) {
    panel.validate();
    config.validate();
    if (splits.empty()) {
        throw ContractError("walk-forward: no splits");
    }
    if (!strategy.baseline) {
        strategy.constraints.validate(panel.width());
        strategy.objective.validate();
    }
    if (options.index_returns &&
        static_cast<std::size_t>(options.index_returns->size()) != panel.periods()) {
        throw ShapeError("walk-forward: index series has " +
                         std::to_string(options.index_returns->size()) + " entries for " +
                         std::to_string(panel.periods()) + " panel rows");
    }

    std::vector<SplitWeights> parts(splits.size());
    std::vector<std::exception_ptr> errors(splits.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < splits.size(); k = next++) {
            try {
                parts[k] = run_split(panel, splits[k], strategy, config, k);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    const std::size_t workers = worker_count(splits.size(), options.threads);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }

    std::vector<std::size_t> rows;
    Eigen::Index total = 0;
    for (const auto& p : parts) {
        total += static_cast<Eigen::Index>(p.test_rows.size());
    }
    Eigen::MatrixXd weights(total, static_cast<Eigen::Index>(panel.width()));
    Eigen::MatrixXd realized(total, static_cast<Eigen::Index>(panel.width()));
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        const auto len = static_cast<Eigen::Index>(p.test_rows.size());
        weights.middleRows(at, len) = p.weights;
        realized.middleRows(at, len) =
            panel.returns.middleRows(static_cast<Eigen::Index>(p.test_rows.begin), len);
        for (std::size_t t = p.test_rows.begin; t < p.test_rows.end; ++t) {
            rows.push_back(t);
        }
        at += len;
    }
    const std::vector<double> net = net_returns(weights, realized, config.cost_bp);
    const std::vector<double> turnover = daily_turnover(weights);

    WalkForwardResult result;
    at = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto len = static_cast<std::size_t>(parts[k].test_rows.size());
        const auto from = static_cast<std::ptrdiff_t>(at);
        const auto to = from + static_cast<std::ptrdiff_t>(len);
        SplitResult s;
        s.split = splits[k];
        s.test_rows = parts[k].test_rows;
        s.train_curve = std::move(parts[k].train_curve);
        s.validation_curve = std::move(parts[k].validation_curve);
        s.selected_epoch = parts[k].selected_epoch;
        s.model = std::move(parts[k].model);
        s.report = make_report(panel, std::span(rows).subspan(at, len),
                               weights.middleRows(static_cast<Eigen::Index>(at),
                                                  static_cast<Eigen::Index>(len)),
                               std::vector<double>(net.begin() + from, net.begin() + to),
                               std::vector<double>(turnover.begin() + from, turnover.begin() + to),
                               options);
        result.splits.push_back(std::move(s));
        at += len;
    }
    result.aggregate = make_report(panel, rows, std::move(weights), net, turnover, options);
    return result;
}

}  // namespace folio
