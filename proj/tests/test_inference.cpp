#include <doctest.h>

#include "sepfx/error.hpp"
#include "sepfx/inference.hpp"
#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

using namespace sepfx;

namespace {

double mean_y(const TrialDataset& ds) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : ds.records)
        if (r.Y) {
            s += *r.Y;
            ++n;
        }
    return s / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("type-7 quantiles") {
    CHECK(quantile({1, 3, 4, 10}, 0.9) == doctest::Approx(8.2).epsilon(1e-14));
    CHECK(quantile({5, 1, 4, 2, 3}, 0.25) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(quantile({2, 7, 1}, 0.975) == doctest::Approx(6.75).epsilon(1e-14));
    CHECK(quantile({4}, 0.3) == 4.0);
    CHECK(quantile({1, 2}, 0.0) == 1.0);
    CHECK(quantile({1, 2}, 1.0) == 2.0);
    CHECK_THROWS_AS(quantile({}, 0.5), EmptySubset);
}

TEST_CASE("resample indices depend only on seed and replicate") {
    const auto a = resample_indices(50, 9, 3);
    CHECK(a == resample_indices(50, 9, 3));
    CHECK(a != resample_indices(50, 9, 4));
    CHECK(a != resample_indices(50, 10, 3));
    CHECK(std::all_of(a.begin(), a.end(), [](std::size_t i) { return i < 50; }));
}

TEST_CASE("resample copies records and keeps ids unique") {
    const TrialDataset ds = testsupport::tiny_dataset();
    const TrialDataset r = resample(ds, {2, 2, 0});
    REQUIRE(r.size() == 3);
    CHECK(r.records[0].id != r.records[1].id);
    CHECK(r.records[0].D == ds.records[2].D);
    CHECK(r.grid.K == ds.grid.K);
    CHECK(r.baseline_names == ds.baseline_names);
}

TEST_CASE("bootstrap is invariant to thread count") {
    const TrialDataset ds = simulate(presets::default_k1(), 400, 3, Design::TwoArm);
    const Procedure proc = [](const TrialDataset& d) { return std::vector<double>{mean_y(d), double(d.size())}; };
    BootstrapPlan plan;
    plan.n_boot = 60;
    plan.seed = 17;
    const auto one = bootstrap_ci(ds, proc, plan);
    plan.threads = 4;
    const auto four = bootstrap_ci(ds, proc, plan);
    CHECK(one.replicates == four.replicates);
    CHECK(one.lo == four.lo);
    CHECK(one.hi == four.hi);
    CHECK(one.lo[1] == 400.0);
    CHECK(one.lo[0] < mean_y(ds));
    CHECK(one.hi[0] > mean_y(ds));
    CHECK(one.se(0) > 0.0);
}

TEST_CASE("percentile interval from the replicate columns") {
    const TrialDataset ds = simulate(presets::default_k1(), 200, 8, Design::TwoArm);
    const Procedure proc = [](const TrialDataset& d) { return std::vector<double>{mean_y(d)}; };
    BootstrapPlan plan;
    plan.n_boot = 40;
    plan.ci_level = 0.8;
    const auto res = bootstrap_ci(ds, proc, plan);
    CHECK(res.lo[0] == quantile(res.column(0), 0.1));
    CHECK(res.hi[0] == quantile(res.column(0), 0.9));
}

TEST_CASE("failed replicates are counted and capped") {
    const TrialDataset ds = simulate(presets::default_k1(), 100, 2, Design::TwoArm);
    std::atomic<int> calls{0};
    const Procedure flaky = [&](const TrialDataset& d) {
        // fails on roughly one replicate in twenty, depending on its content
        if (std::stoul(d.records.front().id.substr(0, d.records.front().id.find('#'))) % 20 == 0)
            throw NoSurvivors("synthetic failure");
        ++calls;
        return std::vector<double>{mean_y(d)};
    };
    BootstrapPlan plan;
    plan.n_boot = 100;
    plan.max_failure_fraction = 1.0;
    const auto res = bootstrap_ci(ds, flaky, plan);
    CHECK(res.n_failed + calls.load() == 100);
    CHECK(res.failure_reasons.size() == static_cast<std::size_t>(res.n_failed));
    CHECK(res.column(0).size() == static_cast<std::size_t>(100 - res.n_failed));

    const Procedure broken = [](const TrialDataset&) -> std::vector<double> { throw NoSurvivors("always"); };
    plan.max_failure_fraction = 0.1;
    CHECK_THROWS_AS(bootstrap_ci(ds, broken, plan), TooManyFailures);
    plan.n_boot = 1;
    CHECK_THROWS_AS(bootstrap_ci(ds, flaky, plan), ConfigError);
}

}
