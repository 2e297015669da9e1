#include <doctest.h>

#include "sepfx/error.hpp"
#include "sepfx/rng.hpp"
#include "support.hpp"

#include <cmath>

using namespace sepfx;
using testsupport::vec;

TEST_SUITE("sim_engine") {

TEST_CASE("simulated data always validate") {
    const std::vector<StructuralLaw> laws = {presets::default_k1(), presets::null_law(3), presets::swog_like(),
                                             testsupport::censored_outcome_law(), testsupport::monotone_law()};
    for (const auto& law : laws)
        for (Design d : {Design::TwoArm, Design::FourArm, Design::SixArm})
            for (std::uint64_t seed : {1u, 2u, 99u}) {
                const TrialDataset ds = simulate(law, 400, seed, d);
                CHECK(validate_dataset(ds).empty());
            }
    StructuralLaw interior = presets::null_law(2);
    HazardEquation c;
    c.intercept = -2.0;
    c.beta_l = vec({0.7});
    interior.censoring = c;
    CHECK(validate_dataset(simulate(interior, 400, 5, Design::TwoArm)).empty());
}

TEST_CASE("simulation does not depend on the thread count") {
    const StructuralLaw law = presets::swog_like();
    const TrialDataset a = simulate(law, 700, 17, Design::TwoArm, std::nullopt, 1);
    const TrialDataset b = simulate(law, 700, 17, Design::TwoArm, std::nullopt, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.records[i].D == b.records[i].D);
        CHECK(a.records[i].C == b.records[i].C);
        CHECK(a.records[i].Y == b.records[i].Y);
        CHECK(a.records[i].L == b.records[i].L);
    }
}

TEST_CASE("observed records equal the counterfactual under the assigned arm") {
    const StructuralLaw law = presets::default_k1();
    const TrialDataset ds = simulate(law, 300, 4, Design::TwoArm);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& r = ds.records[i];
        const CounterfactualDraw d = draw_counterfactual(law, draw_noise(law, 4, i), r.arm.a(), r.arm.a());
        CHECK(d.D == r.D);
        CHECK(d.L == r.L);
        CHECK(d.Y == r.Y);
    }
}

TEST_CASE("a_Y never reaches the event unless isolation is broken") {
    const StructuralLaw law = presets::default_k1();
    std::size_t differ = 0, differ_broken = 0;
    const InjectedViolation v{ViolationKind::BreakAyIsolation, 2.0};
    for (std::size_t i = 0; i < 2000; ++i) {
        const ExogenousNoise n = draw_noise(law, 8, i);
        for (int a_d = 0; a_d <= 1; ++a_d) {
            differ += draw_counterfactual(law, n, 0, a_d).D != draw_counterfactual(law, n, 1, a_d).D;
            differ_broken += draw_counterfactual(law, n, 0, a_d, v).D != draw_counterfactual(law, n, 1, a_d, v).D;
        }
    }
    CHECK(differ == 0);
    CHECK(differ_broken > 100);
}

TEST_CASE("monotone law: a_D = 1 never causes an event") {
    const StructuralLaw law = testsupport::monotone_law();
    for (std::size_t i = 0; i < 3000; ++i) {
        const ExogenousNoise n = draw_noise(law, 21, i);
        const auto d1 = draw_counterfactual(law, n, 1, 1), d0 = draw_counterfactual(law, n, 1, 0);
        for (std::size_t k = 0; k < d1.D.size(); ++k) CHECK(d1.D[k] <= d0.D[k]);
    }
}

TEST_CASE("oracle of a covariate-free law matches its closed form") {
    StructuralLaw law;
    law.grid.K = 0;
    law.event.intercept = -1.0;
    law.outcome.intercept = 2.0;
    law.outcome.beta_ay = -0.75;
    law.outcome.sigma = 1.5;
    const OracleEstimate o1 = oracle_conditional_mean(law, 1, 0, 200000, 3);
    const OracleEstimate o0 = oracle_conditional_mean(law, 0, 1, 200000, 3);
    CHECK(std::abs(o1.mean - 1.25) < 4.0 * o1.mc_se);
    CHECK(std::abs(o0.mean - 2.0) < 4.0 * o0.mc_se);
    // survival probability 1 - expit(-1)
    const double surv = 1.0 - 1.0 / (1.0 + std::exp(1.0));
    CHECK(std::abs(static_cast<double>(o1.n_used) / 200000.0 - surv) < 0.005);
}

TEST_CASE("oracle is thread-count invariant") {
    const StructuralLaw law = presets::default_k1();
    const OracleEstimate a = oracle_conditional_mean(law, 0, 1, 50000, 9, std::nullopt, 1);
    const OracleEstimate b = oracle_conditional_mean(law, 0, 1, 50000, 9, std::nullopt, 4);
    CHECK(a.mean == b.mean);
    CHECK(a.mc_se == b.mc_se);
}

TEST_CASE("four- and six-arm assignment proportions") {
    const TrialDataset four = simulate(presets::default_k1(), 8000, 6, Design::FourArm);
    int counts[2][2] = {{0, 0}, {0, 0}};
    for (const auto& r : four.records) counts[r.arm.a_y][r.arm.a_d]++;
    for (auto& row : counts)
        for (int c : row) CHECK(std::abs(c - 2000) < 200);
    const TrialDataset six = simulate(presets::default_k1(), 6000, 6, Design::SixArm);
    int two = 0;
    for (const auto& r : six.records) two += r.arm.kind == ArmAssignment::Kind::TwoArm;
    CHECK(std::abs(two - 2000) < 200);
}

TEST_CASE("invalid laws are rejected") {
    StructuralLaw law = presets::default_k1();
    law.event.beta_ay = 0.5;
    CHECK_THROWS_AS(validate_law(law), InvalidLaw);
    law = presets::default_k1();
    law.event.beta_l0 = vec({0.1, 0.2});
    CHECK_THROWS_AS(validate_law(law), InvalidLaw);
    law = presets::default_k1();
    law.outcome.beta_l = vec({1.0});
    law.event.intercept = 40.0;
    CHECK_THROWS_AS(simulate(law, 10, 1, Design::TwoArm), InvalidLaw);
}

TEST_CASE("random number helpers") {
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const double u = counter_uniform(3, i, 7);
        CHECK(u > 0.0);
        CHECK(u < 1.0);
    }
    CHECK(counter_uniform(3, 4, 5) == counter_uniform(3, 4, 5));
    CHECK(counter_uniform(3, 4, 5) != counter_uniform(3, 5, 4));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-10));
    CHECK(normal_cdf(normal_quantile(0.3)) == doctest::Approx(0.3).epsilon(1e-13));
}

}  // TEST_SUITE
