#ifndef SEPFX_ESTIMATORS_HPP
#define SEPFX_ESTIMATORS_HPP

#include "sepfx/core_data.hpp"
#include "sepfx/nuisance.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sepfx {

struct Target {
    int a_y = 0;
    int a_d = 0;
    bool operator==(const Target&) const = default;
};

/// nu(a_Y, a_D), or the contrast primary - reference when reference is set.
struct EstimandTarget {
    Target primary;
    std::optional<Target> reference;

    static EstimandTarget single(int a_y, int a_d) { return {{a_y, a_d}, std::nullopt}; }
    static EstimandTarget contrast(Target t1, Target t0) { return {t1, t0}; }
    std::string label() const;
};

enum class Estimator { OR, IPW, DR };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

struct WeightSummary {
    double min = 0.0, max = 0.0, mean = 0.0, p99 = 0.0;
};

struct ConfidenceInterval {
    double lo = 0.0, hi = 0.0;
    std::string method = "percentile";
    int n_boot = 0;
    int n_failed = 0;
    double level = 0.95;
};

struct NuisanceSummary {
    std::string channel;
    std::string formula;
    bool converged = false;
    int iterations = 0;
    std::size_t n_used = 0;
    double loglik = 0.0;
};

struct EstimateReport {
    EstimandTarget target;
    Estimator estimator = Estimator::OR;
    bool complete_case = false;
    double point = 0.0;
    double n_effective = 0.0;  ///< Kish effective sample size of the realized weights
    WeightSummary weights;
    std::optional<double> if_mean;  ///< DR only: empirical mean of the estimated influence function
    std::vector<NuisanceSummary> nuisance;
    std::optional<ConfidenceInterval> ci;
};

struct EstimatorOptions {
    /// Outcome regression averaged over uncensored survivors only, with no
    /// censoring adjustment. For comparison runs.
    bool complete_case = false;
    /// Clip weights at this quantile of their realized distribution. Off by default.
    std::optional<double> weight_cap_quantile;
};

EstimateReport estimate_or(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t,
                           const EstimatorOptions& opt = {});
EstimateReport estimate_ipw(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t,
                            const EstimatorOptions& opt = {});
EstimateReport estimate_dr(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t,
                           const EstimatorOptions& opt = {});

EstimateReport estimate(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t, Estimator e,
                        const EstimatorOptions& opt = {});

/// Difference of two targets sharing a_D, using the same nuisance fits.
EstimateReport estimate_effect(const TrialDataset& ds, const NuisanceSuiteFit& suite, const EstimandTarget& pair,
                               Estimator e, const EstimatorOptions& opt = {});

/// Single target or contrast, whichever `target` describes.
EstimateReport estimate_target(const TrialDataset& ds, const NuisanceSuiteFit& suite, const EstimandTarget& target,
                               Estimator e, const EstimatorOptions& opt = {});

std::vector<NuisanceSummary> summarize(const NuisanceSuiteFit& suite, const std::vector<std::string>& covariate_names);

/// Residual of the DR estimating equation at nu, averaged over individuals.
double dr_estimating_function(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t, double nu);

}  // namespace sepfx

#endif  // SEPFX_ESTIMATORS_HPP
