#ifndef SEPFX_INFERENCE_HPP
#define SEPFX_INFERENCE_HPP

#include "sepfx/core_data.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sepfx {

/// Linear interpolation between order statistics (Hyndman-Fan type 7).
/// `sorted` must be ascending and non-empty.
double quantile_sorted(const std::vector<double>& sorted, double q);
double quantile(std::vector<double> x, double q);

struct BootstrapPlan {
    int n_boot = 500;
    std::uint64_t seed = 1;
    double ci_level = 0.95;
    double max_failure_fraction = 0.10;
    int threads = 1;
};

/// Statistic(s) recomputed on each resample, nuisance fits included.
using Procedure = std::function<std::vector<double>(const TrialDataset&)>;

struct BootstrapResult {
    std::vector<double> lo, hi;                   ///< per statistic
    std::vector<std::vector<double>> replicates;  ///< [replicate][statistic]; empty when failed
    std::vector<bool> failed;
    std::vector<std::string> failure_reasons;     ///< one per failed replicate, in index order
    int n_failed = 0;

    std::vector<double> column(std::size_t s) const;  ///< successful replicates of statistic s
    double se(std::size_t s) const;                   ///< bootstrap standard deviation
};

/// Resample i of size n: indices drawn with replacement from a stream that
/// depends only on (seed, i).
std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed, std::uint64_t replicate);

TrialDataset resample(const TrialDataset& ds, const std::vector<std::size_t>& idx);

/// Percentile bootstrap. Replicates failing with a library error are excluded
/// and counted; throws TooManyFailures when their share exceeds the plan's limit.
BootstrapResult bootstrap_ci(const TrialDataset& ds, const Procedure& procedure, const BootstrapPlan& plan);

}  // namespace sepfx

#endif  // SEPFX_INFERENCE_HPP
