#ifndef SEPFX_CLI_HPP
#define SEPFX_CLI_HPP

#include "sepfx/config.hpp"
#include "sepfx/io.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace sepfx {

/// Settings that come from flags rather than the config document.
struct RunContext {
    std::string out_dir = "out";
    std::string config_dir;  ///< relative data paths resolve here
    int threads = 1;
    bool strict = false;
};

/// Dataset named by [data], or simulated from [law] and [simulate].
TrialDataset acquire_dataset(const RunConfig& cfg, const RunContext& ctx);

/// [models] formulas, or the default suite when the section is absent.
NuisanceSpecSuite model_specs(const RunConfig& cfg, const TrialDataset& ds);

int cmd_simulate(const RunConfig& cfg, const RunContext& ctx, std::ostream& out);
int cmd_estimate(const RunConfig& cfg, const RunContext& ctx, std::ostream& out);
int cmd_bootstrap(const RunConfig& cfg, const RunContext& ctx, std::ostream& out);
int cmd_diagnose(const RunConfig& cfg, const RunContext& ctx, std::ostream& out);

struct SwogReplication {
    std::vector<TableRow> rows;
    std::vector<EstimateReport> reports;
    OracleEstimate oracle_11, oracle_00, oracle_01;
    bool self_check = false;  ///< oracle nu(0,1) inside the DR interval
    nlohmann::ordered_json document;
};

/// The five-row table of the prostate cancer analysis on a synthetic trial
/// drawn from the swog preset (or the config's law).
SwogReplication replicate_swog(const RunConfig& cfg, const RunContext& ctx);
int cmd_replicate_swog(const RunConfig& cfg, const RunContext& ctx, std::ostream& out);

/// Parses argv-style arguments (without the program name) and runs the
/// command. Returns 0 ok, 2 data error, 3 numeric failure, 4 diagnostics
/// rejection under --strict.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sepfx

#endif  // SEPFX_CLI_HPP
