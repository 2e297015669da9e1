#ifndef SEPFX_CONFIG_HPP
#define SEPFX_CONFIG_HPP

#include "sepfx/core_data.hpp"
#include "sepfx/estimators.hpp"
#include "sepfx/inference.hpp"
#include "sepfx/sim_engine.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sepfx {

/// A parsed run configuration (TOML). Every section is optional; commands
/// check for what they need.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string source;  ///< raw document text, hashed into provenance

    // [grid]
    std::optional<int> K;
    Ordering ordering = Ordering::StandardCDL;

    // [data]
    std::optional<std::string> data_path;

    // [law]
    std::optional<StructuralLaw> law;
    std::optional<std::string> law_preset;

    // [simulate]
    std::optional<std::size_t> n;  ///< default depends on the command
    Design design = Design::TwoArm;
    std::optional<InjectedViolation> violation;

    // [models]
    std::optional<std::string> event_model, censoring_model, outcome_model, propensity_model;
    std::vector<std::string> covariate_models;

    // [partition]
    std::vector<std::string> ay_block;

    // [estimate]
    std::vector<EstimandTarget> targets;
    std::vector<Estimator> estimators;
    EstimatorOptions options;

    // [bootstrap]
    int n_boot = 500;
    double ci_level = 0.95;
    std::optional<std::uint64_t> bootstrap_seed;
    double max_failure_fraction = 0.10;

    // [diagnose]
    double alpha = 0.05;
    std::vector<std::string> checks;

    // [oracle]
    std::size_t n_mc = 1000000;

    // [output]
    std::string out_dir = "out";
    bool dump_replicates = false;
};

RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);

/// "a_y,a_d" or "a_y,a_d - a_y,a_d".
EstimandTarget parse_target(const std::string& s);

StructuralLaw law_preset(const std::string& name);

/// TOML rendering of a law as [law] tables; parse_config reads it back.
std::string law_to_toml(const StructuralLaw& law);

/// FNV-1a of the bytes, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace sepfx

#endif  // SEPFX_CONFIG_HPP
