#pragma once

// Training loop, cost-aware backtesting, metrics, oracle weights and the
// classical baselines, tied together by a walk-forward driver.

#include "folio/data.hpp"
#include "folio/layers.hpp"
#include "folio/models.hpp"
#include "folio/objectives.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace folio {

inline constexpr double trading_days = 252.0;

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 64;
    std::size_t epochs = 1000;
    double cost_bp = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Samples are addressed by decision row t: the window covers rows
// t-p+1..t and the target is row t+1.
struct SampleRange {
    std::size_t first = 0;  // first decision row
    std::size_t last = 0;   // one past the last decision row

    std::size_t size() const noexcept { return last > first ? last - first : 0; }
};

// Decision rows whose targets fall inside `targets`, clipped so every window
// has p rows of history.
SampleRange samples_for_targets(RowRange targets, std::size_t lags);

InputWindow window_at(const Eigen::MatrixXd& returns, std::size_t row, std::size_t lags);

struct TrainResult {
    ScoreModel model;
    // Full training-set objective before the first epoch (index 0) and after
    // each epoch.
    std::vector<double> train_curve;
    // Validation objective after each epoch (index e-1 for epoch e); empty
    // when no validation range was given.
    std::vector<double> validation_curve;
    std::size_t selected_epoch = 0;
};

// Plain minibatch gradient ascent on the objective of the constrained
// weights. With a validation range, the returned model is the epoch with the
// best validation objective (eval-mode weights); otherwise the last epoch.
TrainResult train(const ScoreModel& model, const ConstraintSpec& constraints,
                  const ObjectiveSpec& objective, const Eigen::MatrixXd& returns,
                  SampleRange train_samples, const TrainConfig& config,
                  std::optional<SampleRange> validation_samples = std::nullopt);

// Return predictor fitted by gradient descent on mean squared error against
// next-day returns (the forecasting half of the two-step approach).
TrainResult train_predictor(const ScoreModel& model, const Eigen::MatrixXd& returns,
                            SampleRange train_samples, const TrainConfig& config,
                            std::optional<SampleRange> validation_samples = std::nullopt);

// Objective of eval-mode weights over the given samples.
double evaluate_objective(const ScoreModel& model, const ConstraintSpec& constraints,
                          const ObjectiveSpec& objective, const Eigen::MatrixXd& returns,
                          SampleRange samples, layers::Mode mode = layers::Mode::eval);

// Row t holds the weights chosen at the close of day t, held over day t+1.
Eigen::MatrixXd emit_weights(const ScoreModel& model, const ConstraintSpec& constraints,
                             const Eigen::MatrixXd& returns, RowRange rows);

// R_t = sum_i [w_{i,t-1} r_{i,t} - C |w_{i,t} (1 + w_{i,t-1} r_{i,t}) - w_{i,t-1}|]
// with C = cost_bp * 1e-4 and a zero (all-cash) weight before row 0.
std::vector<double> net_returns(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& returns,
                                double cost_bp);

// sum_i |w_{i,t} - w_{i,t-1}|, with 0 on row 0.
std::vector<double> daily_turnover(const Eigen::MatrixXd& weights);

struct Metrics {
    double expected_return = 0.0;  // annualized mean
    double volatility = 0.0;       // annualized std
    std::optional<double> sharpe;
    std::optional<double> downside_deviation;
    std::optional<double> sortino;
    double max_drawdown = 0.0;
    double pct_positive = 0.0;
    double turnover = 0.0;
    std::optional<double> beta;
    std::optional<double> frobenius;
};

// Population moments scaled by 252 (mean) and sqrt(252) (std). Frobenius
// needs `oracle` with the same shape as `weights`.
Metrics compute_metrics(std::span<const double> returns, const Eigen::MatrixXd& weights,
                        std::optional<std::span<const double>> index_returns = std::nullopt,
                        const Eigen::MatrixXd* oracle = nullptr);

nlohmann::json to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& doc);

struct BacktestReport {
    std::vector<Date> dates;
    std::vector<std::string> assets;
    std::vector<double> net_returns;
    std::vector<double> turnover;
    Eigen::MatrixXd weights;
    Metrics metrics;
};

// Plot-ready series; each has one entry per day.
std::vector<double> cumulative_returns(std::span<const double> returns);
std::vector<double> drawdown_series(std::span<const double> returns);
// Trailing windows of up to `window` days; entries with fewer than two days
// or zero dispersion are NaN.
std::vector<double> rolling_sharpe(std::span<const double> returns, std::size_t window = 252);
std::vector<double> rolling_beta(std::span<const double> returns, std::span<const double> index,
                                 std::size_t window = 252);

// w* = inv(Sigma) mu / ||inv(Sigma) mu||_1.
Eigen::VectorXd oracle_weights(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma);

// Oracle vector per calendar year, or one vector for every date.
struct OracleSchedule {
    std::map<int, Eigen::VectorXd> by_year;
    std::optional<Eigen::VectorXd> constant;

    const Eigen::VectorXd& at(Date date) const;
    Eigen::MatrixXd stacked(std::span<const Date> dates) const;
};

// Plug-in tangency and minimum-variance weights from estimated moments.
Eigen::VectorXd tangency_weights(const Eigen::VectorXd& mu_hat, const Eigen::MatrixXd& sigma_hat);
Eigen::VectorXd min_variance_weights(const Eigen::MatrixXd& sigma_hat);

enum class BaselineKind { ewp, gmvp, cs_sample, cs_predictor };
const char* to_string(BaselineKind kind) noexcept;
BaselineKind parse_baseline(const std::string& text);

struct WeightSeries {
    RowRange rows;            // panel rows covered by `weights`
    Eigen::MatrixXd weights;  // rows.size() x N
    std::size_t skipped = 0;  // requested rows dropped for lack of history
};

struct RollingOptions {
    std::size_t lookback = 252;
    double shrinkage = default_shrinkage;

    friend bool operator==(const RollingOptions&, const RollingOptions&) = default;
};

WeightSeries baseline_ewp(std::size_t assets, RowRange rows);
WeightSeries baseline_gmvp(const Eigen::MatrixXd& returns, RowRange rows,
                           const RollingOptions& options = {});
// Rows where the rolling mean is exactly zero repeat the previous weights
// (cash before any position exists).
WeightSeries baseline_cs_sample(const Eigen::MatrixXd& returns, RowRange rows,
                                const RollingOptions& options = {});
WeightSeries baseline_cs_predictor(const ScoreModel& predictor, const Eigen::MatrixXd& returns,
                                   RowRange rows, const RollingOptions& options = {});

struct Strategy {
    // Either an end-to-end model or a baseline.
    std::optional<BaselineKind> baseline;
    ModelShape model;
    ConstraintSpec constraints;
    ObjectiveSpec objective;
    RollingOptions rolling;
};

struct SplitResult {
    WalkForwardSplit split;
    RowRange test_rows;
    std::vector<double> train_curve;
    std::vector<double> validation_curve;
    std::size_t selected_epoch = 0;
    std::optional<ScoreModel> model;  // selected model; absent for the closed-form baselines
    BacktestReport report;
};

struct WalkForwardResult {
    std::vector<SplitResult> splits;
    BacktestReport aggregate;
};

struct RunOptions {
    const Eigen::VectorXd* index_returns = nullptr;  // one entry per panel row
    const OracleSchedule* oracle = nullptr;
    std::size_t threads = 0;  // 0: FOLIO_THREADS or hardware concurrency
};

// Splits run as independent jobs; split k trains with seed config.seed + k.
// Test weights are eval-mode; net returns are computed on the concatenated
// test period and each split's report is its slice of that series.
WalkForwardResult run_walk_forward(const ReturnsPanel& panel,
                                   std::span<const WalkForwardSplit> splits,
                                   const Strategy& strategy, const TrainConfig& config,
                                   const RunOptions& options = {});

std::size_t worker_count(std::size_t jobs, std::size_t requested = 0);

}  // namespace folio
