// Shared fixtures for the unit and acceptance tests.
#ifndef SEPFX_TESTS_SUPPORT_HPP
#define SEPFX_TESTS_SUPPORT_HPP

#include "sepfx/core_data.hpp"
#include "sepfx/identification.hpp"
#include "sepfx/sim_engine.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace testsupport {

using namespace sepfx;

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

/// Random DiscreteLaw with every cell defined. Hazards stay inside
/// [0.02, 0.6], densities are strictly positive.
inline DiscreteLaw random_discrete_law(std::uint64_t seed, int K, std::size_t p0, std::size_t p) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * unif(gen); };
    DiscreteLaw law;
    law.grid = TimeGrid{K, unif(gen) < 0.5 ? Ordering::StandardCDL : Ordering::TerminalDBeforeC};
    law.p0 = p0;
    law.p = p;
    for (int k = 1; k <= K; ++k) {
        std::vector<bool> row(p);
        for (std::size_t j = 0; j < p; ++j) row[j] = unif(gen) < 0.5;
        law.partition.in_ad.push_back(row);
    }
    const std::size_t h0 = law.n_histories(0);
    double total = 0.0;
    for (std::size_t h = 0; h < h0; ++h) {
        law.f_l0.push_back(u(0.2, 1.0));
        total += law.f_l0.back();
        law.prop.push_back(u(0.25, 0.75));
    }
    for (double& f : law.f_l0) f /= total;
    for (int k = 0; k <= K; ++k) {
        std::vector<double> hd, hc;
        for (std::size_t i = 0; i < 2 * law.n_histories(k); ++i) {
            hd.push_back(u(0.02, 0.6));
            hc.push_back(u(0.0, 0.4));
        }
        law.hazard_d.push_back(hd);
        law.hazard_c.push_back(hc);
    }
    const std::size_t m = law.n_levels();
    for (int k = 1; k <= K; ++k) {
        std::vector<double> t;
        for (std::size_t r = 0; r < 2 * law.n_histories(k - 1); ++r) {
            std::vector<double> row(m);
            double s = 0.0;
            for (auto& x : row) s += (x = u(0.05, 1.0));
            for (auto& x : row) t.push_back(x / s);
        }
        law.dens_l.push_back(t);
    }
    std::normal_distribution<double> z(0.0, 2.0);
    for (std::size_t i = 0; i < 2 * law.n_histories(K); ++i) law.mean_y.push_back(z(gen));
    return law;
}

/// Direct sum over all complete histories of the censoring-free g-formula,
/// written independently of the library's recursion.
inline double brute_force_gformula(const DiscreteLaw& law, int a_y, int a_d) {
    const int K = law.grid.K;
    const std::size_t p0 = law.p0, p = law.p, m = law.n_levels();
    double num = 0.0, den = 0.0;
    for (std::size_t full = 0; full < law.n_histories(K); ++full) {
        const std::size_t h0 = full & ((std::size_t{1} << p0) - 1);
        double mass = law.f_l0[h0];
        for (int k = 0; k <= K; ++k) {
            const std::size_t hk = full & ((std::size_t{1} << (p0 + k * p)) - 1);
            mass *= 1.0 - law.hazard_d[k][hk * 2 + a_d];
            if (k == K) break;
            const std::size_t l = (full >> (p0 + k * p)) & (m - 1);
            const double* rd = &law.dens_l[k][(hk * 2 + a_d) * m];
            const double* ry = &law.dens_l[k][(hk * 2 + a_y) * m];
            std::size_t ad = 0;
            for (std::size_t j = 0; j < p; ++j)
                if (law.partition.in_ad[k][j]) ad |= std::size_t{1} << j;
            double f_ad = 0.0, f_ad_y = 0.0;
            for (std::size_t x = 0; x < m; ++x)
                if ((x & ad) == (l & ad)) {
                    f_ad += rd[x];
                    f_ad_y += ry[x];
                }
            mass *= f_ad * ry[l] / f_ad_y;
        }
        num += mass * law.mean_y[full * 2 + a_y];
        den += mass;
    }
    return num / den;
}

/// K = 1 law with a strong progression effect on the outcome, used for the
/// double-robustness checks.
inline StructuralLaw strong_progression_law() {
    StructuralLaw law;
    law.grid.K = 1;
    law.baseline = {{"x", BaselineCovariate::Kind::Bernoulli, 0.5}};
    CovariateEquation prog;
    prog.name = "prog";
    prog.channel = Channel::AD;
    prog.intercept = 0.0;
    prog.beta_treatment = -1.5;
    prog.beta_l0 = vec({0.5});
    law.covariates = {prog};
    law.event.intercept = -1.0;
    law.event.beta_ad = -0.5;
    law.event.beta_l0 = vec({0.3});
    law.event.beta_l = vec({1.5});
    law.outcome.intercept = 1.0;
    law.outcome.beta_ay = 1.0;
    law.outcome.beta_l0 = vec({0.5});
    law.outcome.beta_l = vec({4.0});
    law.outcome.sigma = 1.0;
    return law;
}

/// K = 1 law with outcome missingness at the last interval driven by the
/// covariates that also drive the outcome.
inline StructuralLaw censored_outcome_law() {
    StructuralLaw law = strong_progression_law();
    law.grid.ordering = Ordering::TerminalDBeforeC;
    HazardEquation c;
    c.intercept = -2.0;
    c.beta_ay = 0.3;
    c.beta_l0 = vec({0.8});
    c.beta_l = vec({2.5});
    law.censoring = c;
    law.censor_terminal_only = true;
    return law;
}

/// Monotone law: a_D lowers the hazard and the A_D-channel covariate ignores
/// treatment. The A_Y-channel covariate m makes individual effects vary.
inline StructuralLaw monotone_law() {
    StructuralLaw law;
    law.grid.K = 1;
    law.monotone = true;
    law.baseline = {{"x", BaselineCovariate::Kind::Bernoulli, 0.5}};
    CovariateEquation l;
    l.name = "l";
    l.channel = Channel::AD;
    l.intercept = -0.4;
    l.beta_l0 = vec({0.9});
    CovariateEquation m;
    m.name = "m";
    m.channel = Channel::AY;
    m.intercept = -0.2;
    m.beta_treatment = 1.5;
    m.beta_l0 = vec({-0.8});
    law.covariates = {l, m};
    law.event.intercept = -1.0;
    law.event.beta_ad = -1.2;
    law.event.beta_l0 = vec({0.6});
    law.event.beta_l = vec({1.0, 0.0});
    law.outcome.intercept = 0.5;
    law.outcome.beta_ay = 1.3;
    law.outcome.beta_l0 = vec({1.0});
    law.outcome.beta_l = vec({-1.5, 2.0});
    law.outcome.sigma = 1.0;
    return law;
}

/// Tiny two-arm dataset without censoring, K = 1, one baseline and one
/// time-varying covariate.
inline TrialDataset tiny_dataset() {
    TrialDataset ds;
    ds.grid = TimeGrid{1, Ordering::StandardCDL};
    ds.baseline_names = {"x"};
    ds.covariate_names = {"l"};
    ds.partition = Partition::all_ad(1, 1);
    auto add = [&](int a, double x, int d1, std::optional<double> l1, int d2, std::optional<double> y) {
        LongitudinalRecord r;
        r.id = std::to_string(ds.records.size() + 1);
        r.L0 = vec({x});
        r.arm = ArmAssignment::two_arm(a);
        r.D = {static_cast<std::uint8_t>(d1), static_cast<std::uint8_t>(d2)};
        r.C = {0, 0};
        r.L = {{l1}};
        r.Y = y;
        ds.records.push_back(r);
    };
    add(1, 0, 0, 0.0, 0, 1.5);
    add(1, 1, 0, 1.0, 0, 2.5);
    add(1, 1, 1, std::nullopt, 1, std::nullopt);
    add(1, 0, 0, 1.0, 1, std::nullopt);
    add(1, 0, 0, 0.0, 0, 0.5);
    add(0, 1, 0, 1.0, 0, -1.0);
    add(0, 0, 0, 0.0, 0, 0.25);
    add(0, 1, 1, std::nullopt, 1, std::nullopt);
    add(0, 0, 0, 1.0, 0, 3.0);
    add(0, 1, 0, 0.0, 1, std::nullopt);
    return ds;
}

}  // namespace testsupport

#endif  // SEPFX_TESTS_SUPPORT_HPP
