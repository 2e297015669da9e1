#ifndef SEPFX_NUISANCE_HPP
#define SEPFX_NUISANCE_HPP

#include "sepfx/core_data.hpp"
#include "sepfx/glm.hpp"

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sepfx {

enum class Response { Event, Censoring, Covariate, Outcome, Propensity };

/// A variable reference inside a model term.
struct Variable {
    enum class Kind { A, AY, AD, Time, Baseline, Covariate };
    Kind kind = Kind::A;
    std::size_t index = 0;  ///< baseline or covariate column
    std::string name;
};

/// Product of variables; an empty product is the intercept.
struct Term {
    std::vector<Variable> factors;
    std::string label() const;
};

/// Parsed model formula:  resp ~ 1 + A + L0_age + prog + a:b + a*b | A, T @terminal
///
/// Right-hand variables: A (two-arm treatment), AY, AD, T (stage index k of
/// the response at k+1), L0_<name> (baseline), <name> (latest time-varying
/// value preceding the response; L_K for Y). "L0_*" expands to every baseline
/// covariate. The intercept is implicit; "0" removes it.
struct ModelSpec {
    std::string formula;
    Response response = Response::Event;
    std::size_t covariate = 0;  ///< response column when response == Covariate
    std::vector<Term> terms;
    std::vector<Variable> strata;
    bool terminal_only = false;

    Link link() const { return response == Response::Outcome ? Link::Identity : Link::Logit; }
    bool stratified_by_arm() const;
};

/// Parses against a schema; throws ConfigError on grammar errors or unknown variables.
ModelSpec parse_formula(const std::string& formula, const std::vector<std::string>& baseline_names,
                        const std::vector<std::string>& covariate_names, int K);

struct NuisanceFit {
    struct Stratum {
        std::vector<double> key;
        Eigen::VectorXd coef;        ///< aligned with spec.terms; dropped columns are 0
        std::vector<bool> dropped;   ///< columns identically zero on the stratum risk set
        bool converged = false;
        int iterations = 0;
        double loglik = 0.0;
        double sigma = 0.0;
        std::size_t n_used = 0;
    };

    ModelSpec spec;
    std::vector<Stratum> strata;

    bool converged() const;
    int iterations() const;
    double loglik() const;
    std::size_t n_used() const;
    /// Coefficients of the single stratum (throws if stratified).
    const Eigen::VectorXd& coefficients() const;
    const Stratum& stratum_for(const std::vector<double>& key) const;
};

NuisanceFit fit_glm(const TrialDataset& ds, const ModelSpec& spec, const GlmControl& control = GlmControl());

/// Named predictor values: "A", "AY", "AD", "T", "L0_<name>", "<name>".
using NamedRow = std::map<std::string, double>;

double predict(const NuisanceFit& fit, const NamedRow& row);

/// Prediction for a record at stage k (response at k+1; k = K for Y), with
/// treatment variables set to `a`. Returns a probability for logit models and
/// the mean for the outcome model.
double predict_at(const NuisanceFit& fit, const LongitudinalRecord& rec, int k, int a);

struct NuisanceSpecSuite {
    std::optional<ModelSpec> event;
    std::optional<ModelSpec> censoring;
    std::vector<std::optional<ModelSpec>> covariates;  ///< one slot per time-varying covariate
    std::optional<ModelSpec> outcome;
    std::optional<ModelSpec> propensity;
};

struct NuisanceSuiteFit {
    std::optional<NuisanceFit> event;
    std::optional<NuisanceFit> censoring;
    std::vector<std::optional<NuisanceFit>> covariates;
    std::optional<NuisanceFit> outcome;
    std::optional<NuisanceFit> propensity;
    std::vector<std::string> coverage_gaps;  ///< channels that need a model and have none
};

NuisanceSuiteFit fit_nuisance_suite(const TrialDataset& ds, const NuisanceSpecSuite& specs,
                                    const GlmControl& control = GlmControl());

/// Formulas in the layout of the trial analysis: arm-stratified event hazard,
/// pooled covariate densities with an A main effect, outcome regression with A,
/// and a censoring model when the data contain censoring.
NuisanceSpecSuite default_specs(const TrialDataset& ds);

NuisanceSpecSuite parse_specs(const TrialDataset& ds, const std::optional<std::string>& event,
                              const std::optional<std::string>& censoring,
                              const std::vector<std::string>& covariates, const std::optional<std::string>& outcome,
                              const std::optional<std::string>& propensity);

}  // namespace sepfx

#endif  // SEPFX_NUISANCE_HPP
