#include "folio/cli.hpp"

#include "folio/random.hpp"

#include <CLI11.hpp>

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <unistd.h>

namespace folio::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string number(double v) {
    if (!std::isfinite(v)) {
        return "";
    }
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <typename T>
json nullable(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

// Copies keys from `doc` into a setter table; unknown keys are usage errors.
void read_object(const json& doc, const std::string& where,
                 const std::map<std::string, std::function<void(const json&)>>& fields) {
    if (!doc.is_object()) {
        throw UsageError("config: '" + where + "' must be an object");
    }
    for (const auto& [key, value] : doc.items()) {
        const auto it = fields.find(key);
        if (it == fields.end()) {
            throw UsageError("config: unknown key '" + where + (where.empty() ? "" : ".") + key +
                             "'");
        }
        try {
            it->second(value);
        } catch (const json::exception& e) {
            throw UsageError("config: bad value for '" + where + (where.empty() ? "" : ".") + key +
                             "': " + e.what());
        } catch (const ContractError& e) {
            throw UsageError("config: bad value for '" + where + (where.empty() ? "" : ".") + key +
                             "': " + e.what());
        }
    }
}

json read_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) {
        throw DataError(std::string("cannot open ") + what + " '" + path + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed ") + what + " '" + path + "': " + e.what());
    }
}

}  // namespace

std::string RunConfig::resolved_run_id() const {
    if (!run_id.empty()) {
        return run_id;
    }
    if (baseline) {
        return std::string("baseline-") + to_string(*baseline);
    }
    return std::string("e2e-") + to_string(model.kind) + "-" + to_string(objective.kind);
}

json to_json(const RunConfig& c) {
    return {
        {"data", c.data},
        {"oracle", c.oracle},
        {"index_returns", c.index_returns},
        {"simulate",
         {{"source", c.simulate.source},
          {"moments", c.simulate.moments},
          {"periods", c.simulate.periods},
          {"shrinkage", c.simulate.shrinkage},
          {"start", c.simulate.start},
          {"name", c.simulate.name}}},
        {"model",
         {{"kind", to_string(c.model.kind)},
          {"sharing", to_string(c.model.sharing)},
          {"lags", c.model.lags},
          {"hidden", c.model.hidden},
          {"zscore", c.model.zscore}}},
        {"constraints",
         {{"long_only", c.constraints.long_only},
          {"short_allowed", c.constraints.short_allowed},
          {"max_position", nullable(c.constraints.max_position)},
          {"cardinality", nullable(c.constraints.cardinality)},
          {"leverage", c.constraints.leverage}}},
        {"objective",
         {{"kind", to_string(c.objective.kind)},
          {"risk_aversion", c.objective.risk_aversion},
          {"msrp_denominator", to_string(c.objective.msrp_denominator)}}},
        {"train",
         {{"learning_rate", c.train.learning_rate},
          {"batch_size", c.train.batch_size},
          {"epochs", c.train.epochs},
          {"cost_bp", c.train.cost_bp},
          {"seed", c.train.seed}}},
        {"baseline", c.baseline ? json(to_string(*c.baseline)) : json(nullptr)},
        {"rolling", {{"lookback", c.rolling.lookback}, {"shrinkage", c.rolling.shrinkage}}},
        {"split", {{"first_train_end", nullable(c.first_train_end)}, {"step", c.step}}},
        {"threads", c.threads},
        {"output", c.output},
        {"run_id", c.run_id},
    };
}

RunConfig config_from_json(const json& doc, RunConfig c) {
    auto str = [](std::string& dst) { return [&dst](const json& v) { dst = v.get<std::string>(); }; };
    auto opt_double = [](std::optional<double>& dst) {
        return [&dst](const json& v) {
            dst = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
        };
    };
    read_object(doc, "",
                {
                    {"data", str(c.data)},
                    {"oracle", str(c.oracle)},
                    {"index_returns", str(c.index_returns)},
                    {"simulate",
                     [&](const json& v) {
                         read_object(v, "simulate",
                                     {
                                         {"source", str(c.simulate.source)},
                                         {"moments", str(c.simulate.moments)},
                                         {"periods",
                                          [&](const json& x) { c.simulate.periods = x.get<std::size_t>(); }},
                                         {"shrinkage",
                                          [&](const json& x) { c.simulate.shrinkage = x.get<double>(); }},
                                         {"start", str(c.simulate.start)},
                                         {"name", str(c.simulate.name)},
                                     });
                     }},
                    {"model",
                     [&](const json& v) {
                         read_object(
                             v, "model",
                             {
                                 {"kind",
                                  [&](const json& x) { c.model.kind = parse_model_kind(x.get<std::string>()); }},
                                 {"sharing",
                                  [&](const json& x) { c.model.sharing = parse_sharing(x.get<std::string>()); }},
                                 {"lags", [&](const json& x) { c.model.lags = x.get<std::size_t>(); }},
                                 {"hidden", [&](const json& x) { c.model.hidden = x.get<std::size_t>(); }},
                                 {"zscore", [&](const json& x) { c.model.zscore = x.get<bool>(); }},
                             });
                     }},
                    {"constraints",
                     [&](const json& v) {
                         read_object(
                             v, "constraints",
                             {
                                 {"long_only", [&](const json& x) { c.constraints.long_only = x.get<bool>(); }},
                                 {"short_allowed",
                                  [&](const json& x) { c.constraints.short_allowed = x.get<bool>(); }},
                                 {"max_position", opt_double(c.constraints.max_position)},
                                 {"cardinality",
                                  [&](const json& x) {
                                      c.constraints.cardinality =
                                          x.is_null() ? std::nullopt : std::optional<int>(x.get<int>());
                                  }},
                                 {"leverage", [&](const json& x) { c.constraints.leverage = x.get<double>(); }},
                             });
                     }},
                    {"objective",
                     [&](const json& v) {
                         read_object(v, "objective",
                                     {
                                         {"kind",
                                          [&](const json& x) {
                                              c.objective.kind = parse_objective_kind(x.get<std::string>());
                                          }},
                                         {"risk_aversion",
                                          [&](const json& x) { c.objective.risk_aversion = x.get<double>(); }},
                                         {"msrp_denominator",
                                          [&](const json& x) {
                                              c.objective.msrp_denominator =
                                                  parse_msrp_denominator(x.get<std::string>());
                                          }},
                                     });
                     }},
                    {"train",
                     [&](const json& v) {
                         read_object(v, "train",
                                     {
                                         {"learning_rate",
                                          [&](const json& x) { c.train.learning_rate = x.get<double>(); }},
                                         {"batch_size",
                                          [&](const json& x) { c.train.batch_size = x.get<std::size_t>(); }},
                                         {"epochs", [&](const json& x) { c.train.epochs = x.get<std::size_t>(); }},
                                         {"cost_bp", [&](const json& x) { c.train.cost_bp = x.get<double>(); }},
                                         {"seed", [&](const json& x) { c.train.seed = x.get<std::uint64_t>(); }},
                                     });
                     }},
                    {"baseline",
                     [&](const json& v) {
                         c.baseline = v.is_null() ? std::nullopt
                                                  : std::optional(parse_baseline(v.get<std::string>()));
                     }},
                    {"rolling",
                     [&](const json& v) {
                         read_object(v, "rolling",
                                     {
                                         {"lookback",
                                          [&](const json& x) { c.rolling.lookback = x.get<std::size_t>(); }},
                                         {"shrinkage",
                                          [&](const json& x) { c.rolling.shrinkage = x.get<double>(); }},
                                     });
                     }},
                    {"split",
                     [&](const json& v) {
                         read_object(v, "split",
                                     {
                                         {"first_train_end",
                                          [&](const json& x) {
                                              c.first_train_end =
                                                  x.is_null() ? std::nullopt : std::optional<int>(x.get<int>());
                                          }},
                                         {"step", [&](const json& x) { c.step = x.get<int>(); }},
                                     });
                     }},
                    {"threads", [&](const json& v) { c.threads = v.get<std::size_t>(); }},
                    {"output", str(c.output)},
                    {"run_id", str(c.run_id)},
                });
    return c;
}

RunConfig load_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open config '" + path + "'");
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("malformed config '" + path + "': " + e.what());
    }
    return config_from_json(doc, std::move(base));
}

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::usage:
        case ErrorKind::contract:
            return 1;
        case ErrorKind::data:
        case ErrorKind::feasibility:
            return 2;
        case ErrorKind::numerical:
            return 3;
    }
    return 1;
}

void write_atomic(const std::string& path, const std::string& contents) {
    const fs::path target(path);
    if (target.has_parent_path()) {
        fs::create_directories(target.parent_path());
    }
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write '" + tmp + "'");
        }
        out << contents;
        out.flush();
        if (!out) {
            throw DataError("write failed for '" + tmp + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw DataError("cannot rename into '" + path + "': " + ec.message());
    }
}

// ------------------------------------------------------------------ simulate

namespace {

Eigen::VectorXd vector_from(const json& v) {
    const auto x = v.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

Eigen::MatrixXd matrix_from(const json& v) {
    const auto rows = v.get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.empty() ? 0 : rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != static_cast<std::size_t>(m.cols())) {
            throw DataError("sigma: ragged row " + std::to_string(i));
        }
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

json vector_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        rows.push_back(vector_json(m.row(i).transpose()));
    }
    return rows;
}

json regime_json(const MvnCalibration& c, std::optional<int> year) {
    json r = {{"period", c.period}, {"mu", vector_json(c.mu)}, {"sigma", matrix_json(c.sigma)}};
    if (year) {
        r["year"] = *year;
    }
    try {
        r["oracle"] = vector_json(oracle_weights(c.mu, c.sigma));
    } catch (const DomainError&) {
        r["oracle"] = nullptr;
    }
    return r;
}

std::string panel_csv(const ReturnsPanel& panel) {
    std::ostringstream out;
    write_panel(out, panel);
    return out.str();
}

}  // namespace

void cmd_simulate(const RunConfig& config, std::uint64_t seed, std::ostream& log) {
    const SimulateSpec& spec = config.simulate;
    if (spec.source.empty() == spec.moments.empty()) {
        throw UsageError("simulate: set exactly one of simulate.source (returns CSV) or "
                         "simulate.moments (mu/sigma JSON)");
    }
    ReturnsPanel panel;
    json regimes = json::array();
    if (!spec.source.empty()) {
        const ReturnsPanel real = load_panel(spec.source);
        std::vector<Regime> list;
        for (MvnCalibration& c : calibrate_yearly(real, spec.shrinkage)) {
            const int year = std::stoi(c.period);
            regimes.push_back(regime_json(c, year));
            list.push_back({year, std::move(c)});
        }
        panel = simulate_regimes(list, seed, real.assets);
    } else {
        const json doc = read_json_file(spec.moments, "moments file");
        const std::string where = "moments file '" + spec.moments + "'";
        try {
            std::vector<std::string> assets;
            if (doc.contains("assets")) {
                assets = doc.at("assets").get<std::vector<std::string>>();
            }
            if (doc.contains("regimes")) {
                std::vector<Regime> list;
                for (const json& r : doc.at("regimes")) {
                    const int year = r.at("year").get<int>();
                    MvnCalibration c{vector_from(r.at("mu")), matrix_from(r.at("sigma")),
                                     std::to_string(year)};
                    regimes.push_back(regime_json(c, year));
                    list.push_back({year, std::move(c)});
                }
                panel = simulate_regimes(list, seed, assets);
            } else {
                if (spec.periods == 0) {
                    throw UsageError("simulate: simulate.periods must be > 0 for explicit moments");
                }
                const MvnCalibration c{vector_from(doc.at("mu")), matrix_from(doc.at("sigma")),
                                       "explicit"};
                panel = simulate_mvn(c, spec.periods, seed, parse_date(spec.start), assets);
                regimes.push_back(regime_json(c, std::nullopt));
            }
        } catch (const json::exception& e) {
            throw DataError(where + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(where + ": " + e.what());
        } catch (const ShapeError& e) {
            throw DataError(where + ": " + e.what());
        }
    }
    const json sidecar = {
        {"algorithm", Rng::algorithm},
        {"seed", seed},
        {"assets", panel.assets},
        {"periods", panel.periods()},
        {"regimes", regimes},
    };
    const std::string base = (fs::path(config.output) / spec.name).string();
    write_atomic(base + ".csv", panel_csv(panel));
    write_atomic(base + ".json", sidecar.dump(2) + "\n");
    log << "wrote " << base << ".csv (" << panel.periods() << " days x " << panel.width()
        << " assets) and " << base << ".json\n";
}

// ------------------------------------------------------------------ backtest

namespace {

OracleSchedule load_oracle(const std::string& path) {
    const json doc = read_json_file(path, "oracle sidecar");
    OracleSchedule s;
    try {
        for (const json& r : doc.at("regimes")) {
            if (r.at("oracle").is_null()) {
                continue;
            }
            const Eigen::VectorXd w = vector_from(r.at("oracle"));
            if (r.contains("year")) {
                s.by_year[r.at("year").get<int>()] = w;
            } else {
                s.constant = w;
            }
        }
    } catch (const json::exception& e) {
        throw DataError("oracle sidecar '" + path + "': " + e.what());
    }
    return s;
}

Eigen::VectorXd load_index(const std::string& path, const ReturnsPanel& panel) {
    const ReturnsPanel index = load_panel(path);
    if (index.width() != 1) {
        throw DataError("index returns '" + path + "' must have exactly one column");
    }
    std::map<int, double> by_day;
    for (std::size_t t = 0; t < index.periods(); ++t) {
        by_day[std::chrono::sys_days(index.dates[t]).time_since_epoch().count()] =
            index.returns(static_cast<Eigen::Index>(t), 0);
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(panel.periods()));
    for (std::size_t t = 0; t < panel.periods(); ++t) {
        const auto it = by_day.find(std::chrono::sys_days(panel.dates[t]).time_since_epoch().count());
        out[static_cast<Eigen::Index>(t)] =
            it == by_day.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
    }
    return out;
}

std::string daily_csv(const BacktestReport& r, const Eigen::VectorXd* index,
                      const std::vector<std::size_t>& rows) {
    std::ostringstream out;
    out << "date,net_return,turnover";
    if (index) {
        out << ",index_return";
    }
    for (const auto& a : r.assets) {
        out << ",w_" << a;
    }
    out << '\n';
    for (std::size_t t = 0; t < r.dates.size(); ++t) {
        out << format_date(r.dates[t]) << ',' << number(r.net_returns[t]) << ','
            << number(r.turnover[t]);
        if (index) {
            out << ',' << number((*index)[static_cast<Eigen::Index>(rows[t])]);
        }
        for (Eigen::Index i = 0; i < r.weights.cols(); ++i) {
            out << ',' << number(r.weights(static_cast<Eigen::Index>(t), i));
        }
        out << '\n';
    }
    return out.str();
}

std::string strategy_label(const RunConfig& c) {
    if (c.baseline) {
        return std::string("baseline ") + to_string(*c.baseline);
    }
    return std::string("e2e ") + to_string(c.model.kind) + "/" + to_string(c.model.sharing) +
           " " + c.objective.describe() + " " + c.constraints.describe();
}

}  // namespace

std::string cmd_backtest(const RunConfig& config, std::ostream& log) {
    if (config.data.empty()) {
        throw UsageError("backtest: no returns file (set \"data\" or pass --data)");
    }
    config.train.validate();
    const ReturnsPanel panel = load_panel(config.data);
    if (!config.baseline) {
        // Feasibility is settled before any training starts.
        config.constraints.validate(panel.width());
        config.objective.validate();
    }
    std::optional<OracleSchedule> oracle;
    if (!config.oracle.empty()) {
        oracle = load_oracle(config.oracle);
    }
    std::optional<Eigen::VectorXd> index;
    if (!config.index_returns.empty()) {
        index = load_index(config.index_returns, panel);
    }

    const int first_train_end = config.first_train_end.value_or(panel.last_year() - 2);
    const auto splits = walk_forward(panel, first_train_end, config.step, &log);
    if (splits.empty()) {
        throw DataError("backtest: panel " + std::to_string(panel.first_year()) + "-" +
                        std::to_string(panel.last_year()) + " yields no walk-forward splits");
    }
    if (index) {
        for (const auto& s : splits) {
            const RowRange test = panel.years(s.test, s.test);
            for (std::size_t t = test.begin; t < test.end; ++t) {
                if (!std::isfinite((*index)[static_cast<Eigen::Index>(t)])) {
                    throw DataError("index returns: no value for " + format_date(panel.dates[t]));
                }
            }
        }
    }

    Strategy strategy;
    strategy.baseline = config.baseline;
    strategy.model = config.model;
    strategy.constraints = config.constraints;
    strategy.objective = config.objective;
    strategy.rolling = config.rolling;
    RunOptions options;
    options.index_returns = index ? &*index : nullptr;
    options.oracle = oracle ? &*oracle : nullptr;
    options.threads = config.threads;

    log << "backtest: " << strategy_label(config) << ", " << splits.size() << " split(s)\n";
    const WalkForwardResult result = run_walk_forward(panel, splits, strategy, config.train, options);

    const std::string id = config.resolved_run_id();
    const fs::path dir = fs::path(config.output) / id;
    std::vector<std::size_t> all_rows;
    json labels = json::array();
    for (const SplitResult& s : result.splits) {
        std::vector<std::size_t> rows;
        for (std::size_t t = s.test_rows.begin; t < s.test_rows.end; ++t) {
            rows.push_back(t);
        }
        all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        const std::string label = s.split.label();
        labels.push_back(label);
        const json doc = {
            {"label", label},
            {"train", {s.split.train.first, s.split.train.last}},
            {"validation", s.split.validation},
            {"test", s.split.test},
            {"test_days", s.report.net_returns.size()},
            {"selected_epoch", s.selected_epoch},
            {"train_curve", s.train_curve},
            {"validation_curve", s.validation_curve},
            {"metrics", to_json(s.report.metrics)},
        };
        write_atomic((dir / (label + ".csv")).string(),
                     daily_csv(s.report, index ? &*index : nullptr, rows));
        write_atomic((dir / (label + ".json")).string(), doc.dump(2) + "\n");
        if (s.model) {
            write_atomic((dir / (label + ".model.json")).string(), s.model->to_json().dump(2) + "\n");
        }
    }
    const json aggregate = {
        {"run_id", id},
        {"strategy", strategy_label(config)},
        {"cost_bp", config.train.cost_bp},
        {"test_days", result.aggregate.net_returns.size()},
        {"splits", labels},
        {"metrics", to_json(result.aggregate.metrics)},
    };
    write_atomic((dir / "aggregate.csv").string(),
                 daily_csv(result.aggregate, index ? &*index : nullptr, all_rows));
    write_atomic((dir / "aggregate.json").string(), aggregate.dump(2) + "\n");
    write_atomic((dir / "config.json").string(), to_json(config).dump(2) + "\n");
    log << "wrote " << dir.string() << "\n";
    return dir.string();
}

// -------------------------------------------------------------------- report

namespace {

struct DailySeries {
    std::vector<std::string> dates;
    std::vector<double> returns;
    std::vector<double> index;
};

DailySeries read_daily(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("report: missing '" + path.string() + "'");
    }
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            header.push_back(cell);
        }
    }
    const auto col = [&](const std::string& name) -> std::ptrdiff_t {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : it - header.begin();
    };
    const auto ret_col = col("net_return");
    const auto idx_col = col("index_return");
    if (header.empty() || header[0] != "date" || ret_col < 0) {
        throw DataError("report: '" + path.string() + "' is not a daily report");
    }
    DailySeries s;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() < header.size() - (line.back() == ',' ? 1 : 0)) {
            throw DataError("report: '" + path.string() + "' row " + std::to_string(line_no) +
                            " is short");
        }
        auto value = [&](std::ptrdiff_t c) {
            const std::string& v = cells.at(static_cast<std::size_t>(c));
            if (v.empty()) {
                return std::numeric_limits<double>::quiet_NaN();
            }
            double x = 0.0;
            std::from_chars(v.data(), v.data() + v.size(), x);
            return x;
        };
        s.dates.push_back(cells[0]);
        s.returns.push_back(value(ret_col));
        if (idx_col >= 0) {
            s.index.push_back(value(idx_col));
        }
    }
    return s;
}

std::string cell(const std::optional<double>& v) {
    if (!v) {
        return "-";
    }
    std::ostringstream s;
    s << std::fixed << std::setprecision(3) << *v;
    return s.str();
}

std::string series_csv(const std::vector<std::string>& dates, const std::vector<double>& values,
                       const char* name) {
    std::ostringstream out;
    out << "date," << name << '\n';
    for (std::size_t t = 0; t < dates.size(); ++t) {
        out << dates[t] << ',' << number(values[t]) << '\n';
    }
    return out.str();
}

}  // namespace

void cmd_report(const std::string& run_dir, bool series, std::ostream& out) {
    const fs::path dir(run_dir);
    const json aggregate = read_json_file((dir / "aggregate.json").string(), "report");
    std::vector<std::pair<std::string, Metrics>> rows;
    try {
        for (const json& label : aggregate.at("splits")) {
            const std::string name = label.get<std::string>();
            const json doc = read_json_file((dir / (name + ".json")).string(), "split report");
            rows.emplace_back(name, metrics_from_json(doc.at("metrics")));
        }
        rows.emplace_back("aggregate", metrics_from_json(aggregate.at("metrics")));
    } catch (const json::exception& e) {
        throw DataError("report: malformed '" + (dir / "aggregate.json").string() + "': " + e.what());
    }

    out << aggregate.value("strategy", std::string("?")) << "  (cost "
        << aggregate.value("cost_bp", 0.0) << " bp)\n";
    const char* headers[] = {"E(R)", "Std(R)", "Sharpe", "DD(R)",     "Sortino",
                             "MDD",  "%+Ret",  "Beta",   "Frobenius", "Turnover"};
    out << std::left << std::setw(12) << "";
    for (const char* h : headers) {
        out << std::right << std::setw(10) << h;
    }
    out << '\n';
    for (const auto& [name, m] : rows) {
        const std::optional<double> values[] = {m.expected_return, m.volatility, m.sharpe,
                                                m.downside_deviation, m.sortino, m.max_drawdown,
                                                m.pct_positive, m.beta, m.frobenius, m.turnover};
        out << std::left << std::setw(12) << name;
        for (const auto& v : values) {
            out << std::right << std::setw(10) << cell(v);
        }
        out << '\n';
    }

    if (series) {
        const DailySeries daily = read_daily(dir / "aggregate.csv");
        std::vector<double> beta(daily.returns.size(), std::numeric_limits<double>::quiet_NaN());
        if (!daily.index.empty()) {
            beta = rolling_beta(daily.returns, daily.index, 252);
        }
        const std::pair<const char*, std::vector<double>> outputs[] = {
            {"cumulative_return", cumulative_returns(daily.returns)},
            {"rolling_sharpe", rolling_sharpe(daily.returns, 252)},
            {"rolling_beta", beta},
            {"drawdown", drawdown_series(daily.returns)},
        };
        for (const auto& [name, values] : outputs) {
            const fs::path path = dir / (std::string("series_") + name + ".csv");
            write_atomic(path.string(), series_csv(daily.dates, values, name));
            out << "wrote " << path.string() << '\n';
        }
    }
}

// ----------------------------------------------------------------------- run

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"End-to-end portfolio optimization: simulate, backtest, report"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    double cost_bp = 0.0;
    std::string out_dir;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--seed", seed, "Random seed (overrides train.seed)");
        sub->add_option("--cost-bp", cost_bp, "Transaction cost in basis points");
        sub->add_option("--out", out_dir, "Output directory");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "Write a synthetic returns panel");
    common(simulate);
    std::string moments;
    std::string source;
    std::size_t periods = 0;
    simulate->add_option("--moments", moments, "Explicit mu/sigma JSON");
    simulate->add_option("--source", source, "Returns CSV to calibrate per-year regimes from");
    simulate->add_option("--periods", periods, "Days to draw (explicit moments)");

    CLI::App* backtest = app.add_subcommand("backtest", "Walk-forward train and evaluate");
    common(backtest);
    std::string data;
    std::string baseline;
    std::string run_id;
    backtest->add_option("--data", data, "Returns CSV");
    backtest->add_option("--baseline", baseline, "ewp, gmvp, cs_sample or cs_predictor");
    backtest->add_option("--run-id", run_id, "Run directory name under --out");

    CLI::App* report = app.add_subcommand("report", "Print metrics for a run directory");
    std::string run_dir;
    bool series = false;
    report->add_option("run_dir", run_dir, "Run directory")->required();
    report->add_flag("--series", series, "Export plot-ready series CSVs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "error:usage: " << e.what() << '\n';
        return 1;
    }

    try {
        auto resolve = [&](CLI::App* sub) {
            RunConfig c;
            if (!config_path.empty()) {
                c = load_config(config_path, c);
            }
            if (sub->count("--seed")) {
                c.train.seed = seed;
            }
            if (sub->count("--cost-bp")) {
                c.train.cost_bp = cost_bp;
            }
            if (sub->count("--out")) {
                c.output = out_dir;
            }
            return c;
        };
        if (*simulate) {
            RunConfig c = resolve(simulate);
            if (simulate->count("--moments")) {
                c.simulate.moments = moments;
                c.simulate.source.clear();
            }
            if (simulate->count("--source")) {
                c.simulate.source = source;
                c.simulate.moments.clear();
            }
            if (simulate->count("--periods")) {
                c.simulate.periods = periods;
            }
            cmd_simulate(c, c.train.seed, out);
        } else if (*backtest) {
            RunConfig c = resolve(backtest);
            if (backtest->count("--data")) {
                c.data = data;
            }
            if (backtest->count("--baseline")) {
                try {
                    c.baseline = parse_baseline(baseline);
                } catch (const ContractError& e) {
                    throw UsageError(e.what());
                }
            }
            if (backtest->count("--run-id")) {
                c.run_id = run_id;
            }
            cmd_backtest(c, out);
        } else if (*report) {
            cmd_report(run_dir, series, out);
        }
    } catch (const Error& e) {
        err << "error:" << to_string(e.kind()) << ": " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error:data: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error:numerical: " << e.what() << '\n';
        return 3;
    }
    return 0;
}

}  // namespace folio::cli
