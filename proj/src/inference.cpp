#include "sepfx/inference.hpp"

#include "sepfx/error.hpp"
#include "sepfx/parallel.hpp"
#include "sepfx/rng.hpp"

#include <algorithm>
#include <cmath>

namespace sepfx {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw EmptySubset("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::vector<double> x, double q) {
    std::sort(x.begin(), x.end());
    return quantile_sorted(x, q);
}

std::vector<double> BootstrapResult::column(std::size_t s) const {
    std::vector<double> out;
    for (std::size_t b = 0; b < replicates.size(); ++b)
        if (!failed[b]) out.push_back(replicates[b][s]);
    return out;
}

double BootstrapResult::se(std::size_t s) const {
    const auto x = column(s);
    if (x.size() < 2) return 0.0;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed, std::uint64_t replicate) {
    std::vector<std::size_t> idx(n);
    const std::uint64_t stream = hash_combine(seed, 0x626f6f74ULL, replicate);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = counter_uniform(stream, replicate, i);
        idx[i] = std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
    }
    return idx;
}

TrialDataset resample(const TrialDataset& ds, const std::vector<std::size_t>& idx) {
    TrialDataset out = empty_like(ds);
    out.records.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.records.push_back(ds.records[idx[i]]);
        out.records.back().id = ds.records[idx[i]].id + "#" + std::to_string(i);
    }
    return out;
}

BootstrapResult bootstrap_ci(const TrialDataset& ds, const Procedure& procedure, const BootstrapPlan& plan) {
    if (plan.n_boot < 2) throw ConfigError("bootstrap needs n_boot >= 2");
    if (!(plan.ci_level > 0.0 && plan.ci_level < 1.0)) throw ConfigError("ci_level must lie in (0,1)");

    const std::size_t B = static_cast<std::size_t>(plan.n_boot);
    BootstrapResult res;
    res.replicates.resize(B);
    res.failed.assign(B, false);
    std::vector<std::string> reasons(B);

    parallel_for(B, plan.threads, [&](std::size_t b) {
        try {
            res.replicates[b] = procedure(resample(ds, resample_indices(ds.size(), plan.seed, b)));
        } catch (const Error& e) {
            res.failed[b] = true;
            reasons[b] = e.what();
        }
    });

    std::size_t n_stat = 0;
    for (std::size_t b = 0; b < B; ++b) {
        if (res.failed[b]) {
            ++res.n_failed;
            res.failure_reasons.push_back(reasons[b]);
        } else {
            n_stat = res.replicates[b].size();
        }
    }
    if (static_cast<double>(res.n_failed) > plan.max_failure_fraction * static_cast<double>(B))
        throw TooManyFailures(std::to_string(res.n_failed) + " of " + std::to_string(B) + " replicates failed" +
                              (res.failure_reasons.empty() ? "" : "; first: " + res.failure_reasons.front()));

    const double alpha = 1.0 - plan.ci_level;
    for (std::size_t s = 0; s < n_stat; ++s) {
        auto x = res.column(s);
        std::sort(x.begin(), x.end());
        res.lo.push_back(quantile_sorted(x, alpha / 2));
        res.hi.push_back(quantile_sorted(x, 1 - alpha / 2));
    }
    return res;
}

}  // namespace sepfx
