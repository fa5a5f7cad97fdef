#pragma once

// Returns panels: CSV ingestion, covariance shrinkage, calibration of
// multivariate-normal regimes, synthetic simulation, walk-forward splits.

#include <Eigen/Dense>

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace folio {

using Date = std::chrono::year_month_day;

// ISO-8601 yyyy-mm-dd. Throws DataError on malformed input.
Date parse_date(const std::string& text);
std::string format_date(Date date);

// Half-open row interval [begin, end).
struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - begin; }
    bool empty() const noexcept { return end <= begin; }
    friend bool operator==(const RowRange&, const RowRange&) = default;
};

struct ReturnsPanel {
    std::vector<Date> dates;
    std::vector<std::string> assets;
    Eigen::MatrixXd returns;  // T x N simple returns

    std::size_t periods() const noexcept { return dates.size(); }
    std::size_t width() const noexcept { return assets.size(); }

    // Strictly increasing dates, unique asset names, finite cells.
    void validate() const;

    int first_year() const;
    int last_year() const;
    // Rows whose calendar year lies in [first, last].
    RowRange years(int first, int last) const;
    ReturnsPanel rows(RowRange range) const;
};

ReturnsPanel read_panel(std::istream& in, const std::string& source = "<stream>");
ReturnsPanel load_panel(const std::string& path);
void write_panel(std::ostream& out, const ReturnsPanel& panel);

inline constexpr double default_shrinkage = 0.1;

// Unbiased (n - 1) sample covariance of the rows.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& returns);

// (1 - delta) S + delta (tr S / N) I.
Eigen::MatrixXd shrink_covariance(const Eigen::MatrixXd& sample_cov, double delta);

struct MvnCalibration {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    std::string period;
};

MvnCalibration calibrate(const ReturnsPanel& panel, RowRange period,
                         double delta = default_shrinkage);
// One calibration per calendar year present in the panel.
std::vector<MvnCalibration> calibrate_yearly(const ReturnsPanel& panel,
                                             double delta = default_shrinkage);

// Lower Cholesky factor; DataError when sigma is not positive definite.
Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& sigma, const std::string& name = "sigma");

// Weekdays from `start` (inclusive) onward.
std::vector<Date> business_days(Date start, std::size_t count);
std::vector<Date> business_days_in_year(int year);

// T i.i.d. draws mu + L z on consecutive business days.
ReturnsPanel simulate_mvn(const MvnCalibration& calib, std::size_t periods, std::uint64_t seed,
                          std::optional<Date> start = std::nullopt,
                          std::vector<std::string> assets = {});

struct Regime {
    int year = 0;
    MvnCalibration calib;
};

// One regime per calendar year, drawn on that year's business days and
// concatenated in order from a single seeded stream.
ReturnsPanel simulate_regimes(std::span<const Regime> regimes, std::uint64_t seed,
                              std::vector<std::string> assets = {});

std::vector<std::string> default_asset_names(std::size_t count);

struct YearRange {
    int first = 0;
    int last = 0;
    friend bool operator==(const YearRange&, const YearRange&) = default;
};

struct WalkForwardSplit {
    YearRange train;
    int validation = 0;
    int test = 0;

    std::string label() const;  // "test-<year>"
    friend bool operator==(const WalkForwardSplit&, const WalkForwardSplit&) = default;
};

// Expanding-window splits: train [first year, end], validate end+1, test end+2,
// with end advancing by `step` years until the test year passes the panel.
// Returns an empty list (and writes a line to `warn`) when the span is short.
std::vector<WalkForwardSplit> walk_forward(const ReturnsPanel& panel, int first_train_end,
                                           int step = 1, std::ostream* warn = nullptr);

}  // namespace folio
