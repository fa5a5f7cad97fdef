#include "folio/data.hpp"

#include "folio/error.hpp"
#include "folio/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace folio {

namespace {

namespace chr = std::chrono;

int year_of(Date d) { return static_cast<int>(d.year()); }

bool parse_int(std::string_view s, int& out) {
    if (s.empty()) {
        return false;
    }
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::string row_prefix(const std::string& source, std::size_t line) {
    return source + ": row " + std::to_string(line) + ": ";
}

}  // namespace

Date parse_date(const std::string& text) {
    int y = 0;
    int m = 0;
    int d = 0;
    const std::string_view s = text;
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || !parse_int(s.substr(0, 4), y) ||
        !parse_int(s.substr(5, 2), m) || !parse_int(s.substr(8, 2), d)) {
        throw DataError("malformed date '" + text + "' (expected yyyy-mm-dd)");
    }
    const Date date{chr::year{y}, chr::month{static_cast<unsigned>(m)},
                    chr::day{static_cast<unsigned>(d)}};
    if (!date.ok()) {
        throw DataError("invalid calendar date '" + text + "'");
    }
    return date;
}

std::string format_date(Date date) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(date.year()),
                  static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
    return buf;
}

void ReturnsPanel::validate() const {
    if (static_cast<std::size_t>(returns.rows()) != dates.size() ||
        static_cast<std::size_t>(returns.cols()) != assets.size()) {
        throw ShapeError("panel: returns are " + std::to_string(returns.rows()) + "x" +
                         std::to_string(returns.cols()) + " but there are " +
                         std::to_string(dates.size()) + " dates and " +
                         std::to_string(assets.size()) + " assets");
    }
    std::set<std::string> seen;
    for (const auto& a : assets) {
        if (a.empty() || !seen.insert(a).second) {
            throw DataError("panel: asset names must be non-empty and unique ('" + a + "')");
        }
    }
    for (std::size_t t = 1; t < dates.size(); ++t) {
        if (!(dates[t - 1] < dates[t])) {
            throw DataError("panel: dates not strictly increasing at " + format_date(dates[t]));
        }
    }
    if (!returns.allFinite()) {
        throw DataError("panel: non-finite return");
    }
}

int ReturnsPanel::first_year() const {
    if (dates.empty()) {
        throw DataError("panel: empty");
    }
    return year_of(dates.front());
}

int ReturnsPanel::last_year() const {
    if (dates.empty()) {
        throw DataError("panel: empty");
    }
    return year_of(dates.back());
}

RowRange ReturnsPanel::years(int first, int last) const {
    const auto lo = std::lower_bound(dates.begin(), dates.end(), first, [](Date d, int y) {
        return year_of(d) < y;
    });
    const auto hi = std::upper_bound(dates.begin(), dates.end(), last, [](int y, Date d) {
        return y < year_of(d);
    });
    RowRange r{static_cast<std::size_t>(lo - dates.begin()),
               static_cast<std::size_t>(hi - dates.begin())};
    if (r.end < r.begin) {
        r.end = r.begin;
    }
    return r;
}

ReturnsPanel ReturnsPanel::rows(RowRange range) const {
    if (range.end > periods() || range.begin > range.end) {
        throw ContractError("panel: row range [" + std::to_string(range.begin) + ", " +
                            std::to_string(range.end) + ") outside " +
                            std::to_string(periods()) + " rows");
    }
    ReturnsPanel out;
    out.dates.assign(dates.begin() + static_cast<std::ptrdiff_t>(range.begin),
                     dates.begin() + static_cast<std::ptrdiff_t>(range.end));
    out.assets = assets;
    out.returns = returns.middleRows(static_cast<Eigen::Index>(range.begin),
                                     static_cast<Eigen::Index>(range.size()));
    return out;
}

ReturnsPanel read_panel(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) {
        throw DataError(source + ": missing header (expected date,ASSET1,...)");
    }
    ++line_no;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
        line.erase(0, 3);
    }
    const auto header = split_commas(line);
    if (header.size() < 2 || trim(header[0]) != "date") {
        throw DataError(row_prefix(source, 1) + "missing header (expected date,ASSET1,...)");
    }
    ReturnsPanel panel;
    for (std::size_t j = 1; j < header.size(); ++j) {
        panel.assets.emplace_back(trim(header[j]));
    }
    const std::size_t n = panel.assets.size();
    std::vector<double> values;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto cells = split_commas(line);
        const std::string where = row_prefix(source, line_no);
        if (cells.size() != n + 1) {
            throw DataError(where + "expected " + std::to_string(n + 1) + " cells, found " +
                            std::to_string(cells.size()));
        }
        Date date;
        try {
            date = parse_date(std::string(trim(cells[0])));
        } catch (const DataError& e) {
            throw DataError(where + e.what());
        }
        if (!panel.dates.empty() && !(panel.dates.back() < date)) {
            throw DataError(where + "date " + format_date(date) + " does not follow " +
                            format_date(panel.dates.back()));
        }
        panel.dates.push_back(date);
        for (std::size_t j = 1; j <= n; ++j) {
            const std::string_view cell = trim(cells[j]);
            if (cell.empty()) {
                throw DataError(where + "blank cell for " + panel.assets[j - 1]);
            }
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
                throw DataError(where + "unparseable return '" + std::string(cell) + "' for " +
                                panel.assets[j - 1]);
            }
            values.push_back(v);
        }
    }
    if (panel.dates.empty()) {
        throw DataError(source + ": no data rows");
    }
    panel.returns = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                   Eigen::RowMajor>>(
        values.data(), static_cast<Eigen::Index>(panel.dates.size()),
        static_cast<Eigen::Index>(n));
    panel.validate();
    return panel;
}

ReturnsPanel load_panel(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open returns file '" + path + "'");
    }
    return read_panel(in, path);
}

void write_panel(std::ostream& out, const ReturnsPanel& panel) {
    panel.validate();
    out << "date";
    for (const auto& a : panel.assets) {
        out << ',' << a;
    }
    out << '\n';
    char buf[32];
    for (std::size_t t = 0; t < panel.periods(); ++t) {
        out << format_date(panel.dates[t]);
        for (std::size_t j = 0; j < panel.width(); ++j) {
            const auto res = std::to_chars(buf, buf + sizeof buf,
                                           panel.returns(static_cast<Eigen::Index>(t),
                                                         static_cast<Eigen::Index>(j)));
            out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& returns) {
    if (returns.rows() < 2) {
        throw DataError("sample covariance needs at least 2 rows, got " +
                        std::to_string(returns.rows()));
    }
    const Eigen::MatrixXd centered = returns.rowwise() - returns.colwise().mean();
    return (centered.transpose() * centered) / static_cast<double>(returns.rows() - 1);
}

Eigen::MatrixXd shrink_covariance(const Eigen::MatrixXd& sample_cov, double delta) {
    if (sample_cov.rows() != sample_cov.cols() || sample_cov.rows() == 0) {
        throw ShapeError("shrink_covariance: expected a square matrix, got " +
                         std::to_string(sample_cov.rows()) + "x" +
                         std::to_string(sample_cov.cols()));
    }
    if (!(delta >= 0.0 && delta <= 1.0)) {
        throw ContractError("shrink_covariance: intensity must lie in [0, 1], got " +
                            std::to_string(delta));
    }
    const double tol = 1e-12 * std::max(1.0, sample_cov.cwiseAbs().maxCoeff());
    if ((sample_cov - sample_cov.transpose()).cwiseAbs().maxCoeff() > tol) {
        throw ContractError("shrink_covariance: input is not symmetric");
    }
    const auto n = sample_cov.rows();
    const double target = sample_cov.trace() / static_cast<double>(n);
    Eigen::MatrixXd out = (1.0 - delta) * sample_cov;
    out.diagonal().array() += delta * target;
    return out;
}

Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& sigma, const std::string& name) {
    if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
        throw ShapeError(name + ": expected a square matrix");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success || !llt.matrixL().toDenseMatrix().allFinite() ||
        (llt.matrixL().toDenseMatrix().diagonal().array() <= 0.0).any()) {
        throw DataError(name + " is not positive definite; raise the shrinkage intensity delta");
    }
    return llt.matrixL();
}

MvnCalibration calibrate(const ReturnsPanel& panel, RowRange period, double delta) {
    if (period.empty()) {
        throw DataError("calibrate: empty period");
    }
    const ReturnsPanel slice = panel.rows(period);
    MvnCalibration out;
    out.mu = slice.returns.colwise().mean().transpose();
    out.sigma = shrink_covariance(sample_covariance(slice.returns), delta);
    out.period = format_date(slice.dates.front()) + "/" + format_date(slice.dates.back());
    if (!(out.sigma.trace() > 0.0)) {
        throw DataError("calibrate: degenerate period " + out.period +
                        " (zero sample variance in every asset)");
    }
    cholesky_factor(out.sigma, "calibrated sigma for " + out.period);
    return out;
}

std::vector<MvnCalibration> calibrate_yearly(const ReturnsPanel& panel, double delta) {
    std::vector<MvnCalibration> out;
    for (int y = panel.first_year(); y <= panel.last_year(); ++y) {
        const RowRange r = panel.years(y, y);
        if (r.empty()) {
            continue;
        }
        MvnCalibration c = calibrate(panel, r, delta);
        c.period = std::to_string(y);
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<Date> business_days(Date start, std::size_t count) {
    std::vector<Date> out;
    out.reserve(count);
    chr::sys_days day{start};
    while (out.size() < count) {
        const chr::weekday wd{day};
        if (wd != chr::Saturday && wd != chr::Sunday) {
            out.emplace_back(day);
        }
        day += chr::days{1};
    }
    return out;
}

std::vector<Date> business_days_in_year(int year) {
    std::vector<Date> out;
    const chr::sys_days end{chr::year{year + 1} / chr::January / 1};
    for (chr::sys_days day{chr::year{year} / chr::January / 1}; day < end; day += chr::days{1}) {
        const chr::weekday wd{day};
        if (wd != chr::Saturday && wd != chr::Sunday) {
            out.emplace_back(day);
        }
    }
    return out;
}

std::vector<std::string> default_asset_names(std::size_t count) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back("A" + std::to_string(i + 1));
    }
    return out;
}

namespace {

void check_calibration(const MvnCalibration& c) {
    if (c.mu.size() == 0 || c.sigma.rows() != c.mu.size() || c.sigma.cols() != c.mu.size()) {
        throw ShapeError("calibration: mu has " + std::to_string(c.mu.size()) +
                         " entries but sigma is " + std::to_string(c.sigma.rows()) + "x" +
                         std::to_string(c.sigma.cols()));
    }
}

void draw_rows(const MvnCalibration& c, const Eigen::MatrixXd& chol, Rng& rng,
               Eigen::MatrixXd& out, Eigen::Index first, Eigen::Index count) {
    const Eigen::Index n = c.mu.size();
    Eigen::VectorXd z(n);
    for (Eigen::Index t = 0; t < count; ++t) {
        for (Eigen::Index j = 0; j < n; ++j) {
            z[j] = rng.normal();
        }
        out.row(first + t) = (c.mu + chol.triangularView<Eigen::Lower>() * z).transpose();
    }
}

std::vector<std::string> names_or_default(std::vector<std::string> assets, std::size_t n) {
    if (assets.empty()) {
        return default_asset_names(n);
    }
    if (assets.size() != n) {
        throw ContractError("simulate: " + std::to_string(assets.size()) +
                            " asset names for " + std::to_string(n) + " assets");
    }
    return assets;
}

}  // namespace

ReturnsPanel simulate_mvn(const MvnCalibration& calib, std::size_t periods, std::uint64_t seed,
                          std::optional<Date> start, std::vector<std::string> assets) {
    check_calibration(calib);
    const Eigen::MatrixXd chol = cholesky_factor(calib.sigma, "sigma");
    const auto n = static_cast<std::size_t>(calib.mu.size());
    ReturnsPanel panel;
    panel.assets = names_or_default(std::move(assets), n);
    panel.dates = business_days(start.value_or(Date{chr::year{2000}, chr::January, chr::day{3}}),
                                periods);
    panel.returns.resize(static_cast<Eigen::Index>(periods), static_cast<Eigen::Index>(n));
    Rng rng(seed);
    draw_rows(calib, chol, rng, panel.returns, 0, static_cast<Eigen::Index>(periods));
    return panel;
}

ReturnsPanel simulate_regimes(std::span<const Regime> regimes, std::uint64_t seed,
                              std::vector<std::string> assets) {
    if (regimes.empty()) {
        throw ContractError("simulate: no regimes");
    }
    const auto n = static_cast<std::size_t>(regimes.front().calib.mu.size());
    std::vector<Eigen::MatrixXd> factors;
    std::size_t total = 0;
    for (std::size_t k = 0; k < regimes.size(); ++k) {
        const Regime& r = regimes[k];
        check_calibration(r.calib);
        if (static_cast<std::size_t>(r.calib.mu.size()) != n) {
            throw ShapeError("simulate: regime " + std::to_string(r.year) +
                             " has a different asset count");
        }
        if (k > 0 && r.year <= regimes[k - 1].year) {
            throw ContractError("simulate: regime years must be strictly increasing");
        }
        factors.push_back(cholesky_factor(r.calib.sigma, "sigma for " + std::to_string(r.year)));
        total += business_days_in_year(r.year).size();
    }
    ReturnsPanel panel;
    panel.assets = names_or_default(std::move(assets), n);
    panel.returns.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(n));
    Rng rng(seed);
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < regimes.size(); ++k) {
        const auto days = business_days_in_year(regimes[k].year);
        draw_rows(regimes[k].calib, factors[k], rng, panel.returns, row,
                  static_cast<Eigen::Index>(days.size()));
        panel.dates.insert(panel.dates.end(), days.begin(), days.end());
        row += static_cast<Eigen::Index>(days.size());
    }
    return panel;
}

std::string WalkForwardSplit::label() const { return "test-" + std::to_string(test); }

std::vector<WalkForwardSplit> walk_forward(const ReturnsPanel& panel, int first_train_end,
                                           int step, std::ostream* warn) {
    if (step < 1) {
        throw ContractError("walk_forward: step must be >= 1");
    }
    std::vector<WalkForwardSplit> out;
    const int first = panel.first_year();
    const int last = panel.last_year();
    if (first_train_end < first || first_train_end + 2 > last) {
        if (warn) {
            *warn << "warning: panel spans " << first << "-" << last
                  << ", too short for a first training window ending " << first_train_end
                  << " plus a validation and a test year; no splits\n";
        }
        return out;
    }
    for (int end = first_train_end; end + 2 <= last; end += step) {
        out.push_back({{first, end}, end + 1, end + 2});
    }
    return out;
}

}  // namespace folio
