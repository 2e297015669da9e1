#ifndef SEPFX_SIM_ENGINE_HPP
#define SEPFX_SIM_ENGINE_HPP

#include "sepfx/core_data.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sepfx {

/// Which treatment component drives a time-varying covariate.
enum class Channel { AY, AD };

struct BaselineCovariate {
    enum class Kind { Bernoulli, Gaussian };
    std::string name;
    Kind kind = Kind::Bernoulli;
    double p = 0.5;
    double mean = 0.0;
    double sd = 1.0;
};

/// logit P(L_{k+1,j} = 1 | ...) = intercept + beta_treatment * a_channel
///   + beta_l0'L0 + beta_lag'L_k + sum_{j'<j} beta_same[j'] L_{k+1,j'} + beta_time * k
struct CovariateEquation {
    std::string name;
    Channel channel = Channel::AD;
    double intercept = 0.0;
    double beta_treatment = 0.0;
    Eigen::VectorXd beta_l0;
    Eigen::VectorXd beta_lag;
    Eigen::VectorXd beta_same;
    double beta_time = 0.0;
};

/// Logistic hazard for D_{k+1} or C_{k+1}. For the event hazard beta_ay must
/// be zero: the A_Y component has no path into D.
struct HazardEquation {
    double intercept = 0.0;
    double beta_ay = 0.0;
    double beta_ad = 0.0;
    Eigen::VectorXd beta_l0;
    Eigen::VectorXd beta_l;
    double beta_time = 0.0;
};

/// Y = intercept + beta_ay * a_Y + beta_l0'L0 + beta_l'L_K + sigma * eps.
struct OutcomeEquation {
    double intercept = 0.0;
    double beta_ay = 0.0;
    Eigen::VectorXd beta_l0;
    Eigen::VectorXd beta_l;
    double sigma = 1.0;
};

/// Two-arm assignment: P(A = 1 | L0) = 1/2, or expit(intercept + beta_l0'L0).
struct AssignmentModel {
    bool depends_on_l0 = false;
    double intercept = 0.0;
    Eigen::VectorXd beta_l0;
};

struct StructuralLaw {
    TimeGrid grid;
    std::vector<BaselineCovariate> baseline;
    std::vector<CovariateEquation> covariates;
    HazardEquation event;
    std::optional<HazardEquation> censoring;
    bool censor_terminal_only = false;
    OutcomeEquation outcome;
    AssignmentModel assignment;
    bool monotone = false;

    std::size_t n_baseline() const { return baseline.size(); }
    std::size_t n_covariates() const { return covariates.size(); }
    bool all_binary() const;
    Partition natural_partition() const;  ///< AD block = AD-channel covariates
};

enum class ViolationKind { BreakAyIsolation, BreakDismissible1, BreakDismissible3, BreakModifiedTreatment };

struct InjectedViolation {
    ViolationKind kind;
    double strength = 2.0;
};

/// One uniform per structural node, laid out by NoiseLayout.
struct ExogenousNoise {
    std::vector<double> u;
};

struct NoiseLayout {
    std::size_t p0 = 0, p = 0;
    int K = 0;

    std::size_t size() const { return p0 + 1 + (K + 1) * (2 + p) + 1; }
    std::size_t baseline(std::size_t j) const { return j; }
    std::size_t arm() const { return p0; }
    std::size_t censor(int k) const { return p0 + 1 + k * (2 + p); }
    std::size_t event(int k) const { return censor(k) + 1; }
    std::size_t covariate(int k, std::size_t j) const { return censor(k) + 2 + j; }
    std::size_t outcome() const { return size() - 1; }
};

struct CounterfactualDraw {
    int a_y = 0, a_d = 0;
    Eigen::VectorXd L0;
    std::vector<std::uint8_t> D;                          // K+1
    std::vector<std::vector<std::optional<double>>> L;    // K x p
    std::optional<double> Y;

    bool survived() const { return D.back() == 0; }
    bool operator==(const CounterfactualDraw&) const = default;
};

struct OracleEstimate {
    double mean = 0.0;
    double mc_se = 0.0;
    std::size_t n_used = 0;
};

NoiseLayout noise_layout(const StructuralLaw& law);

/// Throws InvalidLaw on dimension errors, a_Y dependence in the event hazard,
/// an unsupported monotone construction, or success probabilities that can
/// leave (0,1) numerically on the reachable covariate range.
void validate_law(const StructuralLaw& law, const std::optional<InjectedViolation>& violation = {});

ExogenousNoise draw_noise(const StructuralLaw& law, std::uint64_t seed, std::uint64_t individual);

/// Evaluates the structural equations under (a_Y, a_D) with censoring removed.
CounterfactualDraw draw_counterfactual(const StructuralLaw& law, const ExogenousNoise& noise, int a_y,
                                       int a_d, const std::optional<InjectedViolation>& violation = {});

TrialDataset simulate(const StructuralLaw& law, std::size_t n, std::uint64_t seed, Design design,
                      const std::optional<InjectedViolation>& violation = {}, int threads = 1);

/// Monte-Carlo E(Y^{a_Y,a_D} | D^{a_Y,a_D}_{K+1} = 0) with censoring removed.
OracleEstimate oracle_conditional_mean(const StructuralLaw& law, int a_y, int a_d, std::size_t n_mc,
                                       std::uint64_t seed,
                                       const std::optional<InjectedViolation>& violation = {},
                                       int threads = 1);

/// Monte-Carlo survivor average causal effect with shared noise across arms.
OracleEstimate oracle_sace(const StructuralLaw& law, std::size_t n_mc, std::uint64_t seed,
                           const std::optional<InjectedViolation>& violation = {}, int threads = 1);

/// Ready-made laws used by tests, the acceptance suite and the CLI.
namespace presets {
StructuralLaw null_law(int K = 1);
/// K = 1, binary L0 "x" and binary AD-channel covariate "prog".
StructuralLaw default_k1();
/// K = 11 law calibrated to the prostate cancer trial summaries.
StructuralLaw swog_like();
}  // namespace presets

}  // namespace sepfx

#endif  // SEPFX_SIM_ENGINE_HPP
