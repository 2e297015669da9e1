#include <doctest.h>

#include "sepfx/error.hpp"
#include "sepfx/estimators.hpp"
#include "support.hpp"

#include <cmath>

using namespace sepfx;

namespace {

NuisanceSuiteFit tiny_fit(const TrialDataset& ds, const char* outcome) {
    const NuisanceSpecSuite specs = parse_specs(ds, std::string("D ~ 1 + L0_x | A, T"), std::nullopt,
                                                {"l ~ 1 + A + L0_x"}, std::string(outcome), std::nullopt);
    return fit_nuisance_suite(ds, specs);
}

NuisanceSpecSuite saturated_specs(const TrialDataset& ds) {
    return parse_specs(ds, std::string("D ~ 1 + L0_x*prog | A, T"), std::nullopt, {"prog ~ 1 + L0_x | A"},
                       std::string("Y ~ 1 + L0_x*prog | A"), std::string("A ~ 1 + L0_x"));
}

}  // namespace

TEST_SUITE("estimators") {

TEST_CASE("factual target is the arm's survivor mean") {
    const TrialDataset ds = testsupport::tiny_dataset();
    const auto suite = tiny_fit(ds, "Y ~ 1 + L0_x | A");
    // arm 1 survivors: Y = 1.5, 2.5, 0.5
    CHECK(estimate_ipw(ds, suite, {1, 1}).point == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(estimate_or(ds, suite, {1, 1}).point == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(estimate_dr(ds, suite, {1, 1}).point == doctest::Approx(1.5).epsilon(1e-12));
    // arm 0 survivors: Y = -1, 0.25, 3
    CHECK(estimate_ipw(ds, suite, {0, 0}).point == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("outcome regression transports the a_Y model to a_D survivors") {
    const TrialDataset ds = testsupport::tiny_dataset();
    const auto suite = tiny_fit(ds, "Y ~ 1 + L0_x | A");
    // arm-0 cell means: x = 0 -> 1.625, x = 1 -> -1; arm-1 survivors have x = 0, 1, 0
    CHECK(estimate_or(ds, suite, {0, 1}).point == doctest::Approx((1.625 - 1.0 + 1.625) / 3).epsilon(1e-12));
}

TEST_CASE("unit weights when a_Y equals a_D without censoring") {
    const TrialDataset ds = testsupport::tiny_dataset();
    const auto suite = tiny_fit(ds, "Y ~ 1 + L0_x | A");
    const auto r = estimate_ipw(ds, suite, {1, 1});
    CHECK(r.weights.min == 1.0);
    CHECK(r.weights.max == 1.0);
    CHECK(r.n_effective == doctest::Approx(3.0));
}

TEST_CASE("saturated models make the three estimators coincide") {
    const TrialDataset ds = simulate(presets::default_k1(), 4000, 11, Design::TwoArm);
    const auto suite = fit_nuisance_suite(ds, saturated_specs(ds));
    for (Target t : {Target{0, 1}, Target{1, 0}}) {
        const double o = estimate_or(ds, suite, t).point;
        const double i = estimate_ipw(ds, suite, t).point;
        const double d = estimate_dr(ds, suite, t).point;
        CHECK(std::abs(o - i) < 1e-9);
        CHECK(std::abs(o - d) < 1e-9);
    }
}

TEST_CASE("DR influence function is centred at the estimate") {
    const TrialDataset ds = simulate(testsupport::censored_outcome_law(), 3000, 5, Design::TwoArm);
    const auto suite = fit_nuisance_suite(ds, default_specs(ds));
    for (Target t : {Target{0, 1}, Target{1, 0}, Target{1, 1}}) {
        const auto r = estimate_dr(ds, suite, t);
        REQUIRE(r.if_mean.has_value());
        CHECK(std::abs(*r.if_mean) < 1e-8);
        CHECK(std::abs(dr_estimating_function(ds, suite, t, r.point)) < 1e-8);
        CHECK(std::abs(dr_estimating_function(ds, suite, t, r.point + 1.0)) > 0.1);
    }
}

TEST_CASE("contrasts need a shared a_D") {
    const TrialDataset ds = testsupport::tiny_dataset();
    const auto suite = tiny_fit(ds, "Y ~ 1 + L0_x | A");
    CHECK_THROWS_AS(estimate_effect(ds, suite, EstimandTarget::contrast({1, 1}, {0, 0}), Estimator::OR),
                    MismatchedAD);
    const auto r = estimate_effect(ds, suite, EstimandTarget::contrast({1, 1}, {0, 1}), Estimator::OR);
    CHECK(r.point == doctest::Approx(1.5 - 0.75).epsilon(1e-12));
    CHECK(r.target.label() == "nu(1,1) - nu(0,1)");
}

TEST_CASE("missing nuisance models are reported") {
    const TrialDataset ds = testsupport::tiny_dataset();
    NuisanceSpecSuite specs = parse_specs(ds, std::nullopt, std::nullopt, {}, std::string("Y ~ 1 + L0_x | A"),
                                          std::nullopt);
    const auto suite = fit_nuisance_suite(ds, specs);
    CHECK_THROWS_AS(estimate_ipw(ds, suite, {0, 1}), MissingNuisance);
    CHECK_NOTHROW(estimate_or(ds, suite, {0, 1}));
    NuisanceSpecSuite no_y = parse_specs(ds, std::string("D ~ 1 + L0_x | A, T"), std::nullopt, {"l ~ 1 + A"},
                                         std::nullopt, std::nullopt);
    CHECK_THROWS_AS(estimate_or(ds, fit_nuisance_suite(ds, no_y), {0, 1}), MissingNuisance);
}

TEST_CASE("censored data need a censoring model") {
    const TrialDataset ds = simulate(testsupport::censored_outcome_law(), 500, 3, Design::TwoArm);
    REQUIRE(ds.has_censoring());
    auto specs = default_specs(ds);
    specs.censoring.reset();
    CHECK_THROWS_AS(estimate_ipw(ds, fit_nuisance_suite(ds, specs), {0, 1}), MissingNuisance);
}

TEST_CASE("complete-case OR equals OR when nobody is censored") {
    const TrialDataset ds = simulate(presets::default_k1(), 1000, 2, Design::TwoArm);
    const auto suite = fit_nuisance_suite(ds, default_specs(ds));
    EstimatorOptions cc;
    cc.complete_case = true;
    CHECK(estimate_or(ds, suite, {0, 1}, cc).point == doctest::Approx(estimate_or(ds, suite, {0, 1}).point));
}

TEST_CASE("weight cap clips at the requested quantile") {
    const TrialDataset ds = simulate(presets::default_k1(), 2000, 4, Design::TwoArm);
    const auto suite = fit_nuisance_suite(ds, default_specs(ds));
    EstimatorOptions cap;
    cap.weight_cap_quantile = 0.5;
    const auto raw = estimate_ipw(ds, suite, {0, 1});
    const auto capped = estimate_ipw(ds, suite, {0, 1}, cap);
    CHECK(capped.weights.max <= raw.weights.max);
    CHECK(capped.weights.max < raw.weights.max);
}

TEST_CASE("estimator names") {
    CHECK(estimator_from_string("dr") == Estimator::DR);
    CHECK(to_string(Estimator::IPW) == "IPW");
    CHECK_THROWS_AS(estimator_from_string("tmle"), ConfigError);
}

}
