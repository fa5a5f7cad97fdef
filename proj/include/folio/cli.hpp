#pragma once

// Config-driven command line: simulate, backtest, report.
//
// Precedence: built-in defaults < --config JSON document < command-line flags.

#include "folio/backtest.hpp"
#include "folio/data.hpp"
#include "folio/error.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace folio::cli {

struct SimulateSpec {
    std::string source;   // returns CSV to calibrate one regime per year from
    std::string moments;  // or an explicit (mu, Sigma) JSON file
    std::size_t periods = 0;  // days, single explicit regime only
    double shrinkage = default_shrinkage;
    std::string start = "2000-01-03";
    std::string name = "synthetic";

    friend bool operator==(const SimulateSpec&, const SimulateSpec&) = default;
};

struct RunConfig {
    std::string data;           // returns CSV
    std::string oracle;         // simulate sidecar JSON, enables Frobenius
    std::string index_returns;  // CSV date,<name>; enables beta
    SimulateSpec simulate;

    ModelShape model;  // assets comes from the panel
    ConstraintSpec constraints;
    ObjectiveSpec objective;
    TrainConfig train;
    std::optional<BaselineKind> baseline;
    RollingOptions rolling;

    std::optional<int> first_train_end;  // default: last year - 2
    int step = 1;
    std::size_t threads = 0;

    std::string output = "runs";
    std::string run_id;  // default derived from the strategy

    std::string resolved_run_id() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json to_json(const RunConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& doc, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

// Usage errors (bad flags, malformed config documents).
class UsageError : public Error {
public:
    explicit UsageError(const std::string& message) : Error(ErrorKind::usage, message) {}
};

int exit_code(ErrorKind kind) noexcept;

// Writes `<output>/<name>.csv` and the sidecar `<output>/<name>.json`.
void cmd_simulate(const RunConfig& config, std::uint64_t seed, std::ostream& log);
// Writes `<output>/<run_id>/{<split>,aggregate}.{csv,json}` and config.json.
// Returns the run directory.
std::string cmd_backtest(const RunConfig& config, std::ostream& log);
void cmd_report(const std::string& run_dir, bool series, std::ostream& out);

// Whole program: parse argv, dispatch, map failures to exit codes with a
// one-line "error:<kind>: <message>" on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Write-to-temporary then rename, so readers never see partial files.
void write_atomic(const std::string& path, const std::string& contents);

}  // namespace folio::cli
