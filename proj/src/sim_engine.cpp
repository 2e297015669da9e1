#include "sepfx/sim_engine.hpp"

#include "sepfx/error.hpp"
#include "sepfx/parallel.hpp"
#include "sepfx/rng.hpp"

#include <cmath>
#include <sstream>

namespace sepfx {

namespace {

constexpr double kMaxLogit = 35.0;

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double dot_or_zero(const Eigen::VectorXd& beta, const Eigen::VectorXd& x) {
    return beta.size() == 0 ? 0.0 : beta.dot(x);
}

template <typename Get>
double dot_lagged(const Eigen::VectorXd& beta, std::size_t p, Get&& get) {
    double s = 0.0;
    for (std::size_t j = 0; j < static_cast<std::size_t>(beta.size()) && j < p; ++j) s += beta[j] * get(j);
    return s;
}

bool has(const std::optional<InjectedViolation>& v, ViolationKind k) { return v && v->kind == k; }

struct Realized {
    Eigen::VectorXd L0;
    std::vector<std::uint8_t> D, C;
    std::vector<std::vector<std::optional<double>>> L;
    std::optional<double> Y;
};

Eigen::VectorXd draw_baseline(const StructuralLaw& law, const ExogenousNoise& noise, const NoiseLayout& lay) {
    Eigen::VectorXd L0(law.n_baseline());
    for (std::size_t j = 0; j < law.n_baseline(); ++j) {
        const auto& b = law.baseline[j];
        const double u = noise.u[lay.baseline(j)];
        if (b.kind == BaselineCovariate::Kind::Bernoulli)
            L0[j] = u < b.p ? 1.0 : 0.0;
        else
            L0[j] = b.mean + b.sd * normal_quantile(u);
    }
    return L0;
}

// Evaluates the structural equations. `censor` toggles the censoring nodes;
// `joint_arm` marks a four-arm record assigned (a, a), used only by the
// modified-treatment violation.
Realized realize(const StructuralLaw& law, const ExogenousNoise& noise, const Eigen::VectorXd& L0, int a_y,
                 int a_d, bool censor, bool joint_arm, const std::optional<InjectedViolation>& violation) {
    const NoiseLayout lay = noise_layout(law);
    const int K = law.grid.K;
    const std::size_t p = law.n_covariates();
    const double s = violation ? violation->strength : 0.0;
    const bool mt_shift = joint_arm && has(violation, ViolationKind::BreakModifiedTreatment);

    Realized out;
    out.L0 = L0;
    out.D.assign(K + 1, 0);
    out.C.assign(K + 1, 0);
    out.L.assign(K, std::vector<std::optional<double>>(p));

    std::vector<double> prev(p, 0.0), cur(p, 0.0);
    bool dead = false, cens = false;

    auto censor_logit = [&](int k) {
        const HazardEquation& h = *law.censoring;
        return h.intercept + h.beta_ay * a_y + h.beta_ad * a_d + dot_or_zero(h.beta_l0, L0) +
               dot_lagged(h.beta_l, p, [&](std::size_t j) { return prev[j]; }) + h.beta_time * k;
    };
    auto draw_censor = [&](int k) {
        if (!censor || !law.censoring || dead || cens) return;
        if (law.censor_terminal_only && k < K) return;
        if (noise.u[lay.censor(k)] < expit(censor_logit(k))) cens = true;
    };

    for (int k = 0; k <= K; ++k) {
        const bool terminal_after = law.grid.ordering == Ordering::TerminalDBeforeC && k == K;
        if (!terminal_after) draw_censor(k);
        if (!dead && !cens) {
            const HazardEquation& h = law.event;
            double eta = h.intercept + h.beta_ad * a_d + dot_or_zero(h.beta_l0, L0) +
                         dot_lagged(h.beta_l, p, [&](std::size_t j) { return prev[j]; }) + h.beta_time * k;
            if (has(violation, ViolationKind::BreakAyIsolation)) eta += s * a_y;
            if (mt_shift) eta += s;
            if (noise.u[lay.event(k)] < expit(eta)) dead = true;
        }
        if (terminal_after) draw_censor(k);
        out.D[k] = dead;
        out.C[k] = cens;

        if (k == K) break;
        if (dead || cens) continue;
        for (std::size_t j = 0; j < p; ++j) {
            const CovariateEquation& c = law.covariates[j];
            const int trt = c.channel == Channel::AY ? a_y : a_d;
            double eta = c.intercept + c.beta_treatment * trt + dot_or_zero(c.beta_l0, L0) +
                         dot_lagged(c.beta_lag, p, [&](std::size_t i) { return prev[i]; }) + c.beta_time * k;
            for (std::size_t i = 0; i < j && i < static_cast<std::size_t>(c.beta_same.size()); ++i)
                eta += c.beta_same[i] * cur[i];
            if (c.channel == Channel::AD && has(violation, ViolationKind::BreakDismissible3)) eta += s * a_y;
            cur[j] = noise.u[lay.covariate(k, j)] < expit(eta) ? 1.0 : 0.0;
            out.L[k][j] = cur[j];
        }
        prev = cur;
    }

    if (!dead && !cens) {
        const OutcomeEquation& o = law.outcome;
        double y = o.intercept + o.beta_ay * a_y + dot_or_zero(o.beta_l0, L0) +
                   dot_lagged(o.beta_l, p, [&](std::size_t j) { return prev[j]; });
        if (has(violation, ViolationKind::BreakDismissible1)) y += s * a_d;
        if (mt_shift) y += s;
        y += o.sigma * normal_quantile(noise.u[lay.outcome()]);
        out.Y = y;
    }
    return out;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidLaw(what);
}

void check_length(const Eigen::VectorXd& v, std::size_t n, const std::string& what) {
    require(v.size() == 0 || static_cast<std::size_t>(v.size()) == n, what + ": expected length " + std::to_string(n));
}

// Interval bound on |eta|: sum of per-term maxima of |beta * x| over the range of x.
struct Range {
    double lo, hi;
};

double term_bound(double beta, Range r) { return std::max(std::abs(beta * r.lo), std::abs(beta * r.hi)); }

double bound(double intercept, const Eigen::VectorXd& b0, const std::vector<Range>& r0, const Eigen::VectorXd& bl,
             double extra) {
    double m = std::abs(intercept) + extra;
    for (Eigen::Index j = 0; j < b0.size(); ++j) m += term_bound(b0[j], r0[j]);
    for (Eigen::Index j = 0; j < bl.size(); ++j) m += std::abs(bl[j]);
    return m;
}

// Covariates whose value can depend on a_Y (directly or through lagged/same-time inputs).
std::vector<bool> ay_reachable(const StructuralLaw& law, const std::optional<InjectedViolation>& violation) {
    const std::size_t p = law.n_covariates();
    std::vector<bool> reach(p, false);
    for (std::size_t j = 0; j < p; ++j) {
        const auto& c = law.covariates[j];
        if (c.channel == Channel::AY && c.beta_treatment != 0.0) reach[j] = true;
        if (c.channel == Channel::AD && has(violation, ViolationKind::BreakDismissible3)) reach[j] = true;
    }
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t j = 0; j < p; ++j) {
            if (reach[j]) continue;
            const auto& c = law.covariates[j];
            for (std::size_t i = 0; i < p && !reach[j]; ++i) {
                if (!reach[i]) continue;
                const bool lag = static_cast<std::size_t>(c.beta_lag.size()) > i && c.beta_lag[i] != 0.0;
                const bool same = static_cast<std::size_t>(c.beta_same.size()) > i && i < j && c.beta_same[i] != 0.0;
                if (lag || same) reach[j] = changed = true;
            }
        }
    }
    return reach;
}

}  // namespace

bool StructuralLaw::all_binary() const {
    for (const auto& b : baseline)
        if (b.kind != BaselineCovariate::Kind::Bernoulli) return false;
    return true;
}

Partition StructuralLaw::natural_partition() const {
    Partition part;
    std::vector<bool> row(n_covariates());
    for (std::size_t j = 0; j < n_covariates(); ++j) row[j] = covariates[j].channel == Channel::AD;
    part.in_ad.assign(grid.K, row);
    return part;
}

NoiseLayout noise_layout(const StructuralLaw& law) {
    NoiseLayout lay;
    lay.p0 = law.n_baseline();
    lay.p = law.n_covariates();
    lay.K = law.grid.K;
    return lay;
}

void validate_law(const StructuralLaw& law, const std::optional<InjectedViolation>& violation) {
    const std::size_t p0 = law.n_baseline(), p = law.n_covariates();
    const int K = law.grid.K;
    require(K >= 0, "K must be nonnegative");

    std::vector<Range> r0;
    for (const auto& b : law.baseline) {
        if (b.kind == BaselineCovariate::Kind::Bernoulli) {
            require(b.p > 0.0 && b.p < 1.0, "baseline " + b.name + ": p must lie in (0,1)");
            r0.push_back({0.0, 1.0});
        } else {
            require(b.sd > 0.0, "baseline " + b.name + ": sd must be positive");
            r0.push_back({b.mean - 8.0 * b.sd, b.mean + 8.0 * b.sd});
        }
    }
    const double s = violation ? std::abs(violation->strength) : 0.0;
    const double tmax = K;

    auto check_hazard = [&](const HazardEquation& h, const std::string& name) {
        check_length(h.beta_l0, p0, name + ".beta_l0");
        check_length(h.beta_l, p, name + ".beta_l");
        const double m = bound(h.intercept, h.beta_l0, r0, h.beta_l,
                               std::abs(h.beta_ay) + std::abs(h.beta_ad) + std::abs(h.beta_time) * tmax + s);
        require(m <= kMaxLogit, name + ": success probability not bounded away from 0 and 1");
    };
    check_hazard(law.event, "event");
    require(law.event.beta_ay == 0.0, "event hazard must not depend on a_Y");
    if (law.censoring) check_hazard(*law.censoring, "censoring");

    for (std::size_t j = 0; j < p; ++j) {
        const auto& c = law.covariates[j];
        check_length(c.beta_l0, p0, c.name + ".beta_l0");
        check_length(c.beta_lag, p, c.name + ".beta_lag");
        require(c.beta_same.size() == 0 || static_cast<std::size_t>(c.beta_same.size()) <= j ||
                    static_cast<std::size_t>(c.beta_same.size()) == p,
                c.name + ".beta_same: bad length");
        double same = 0.0;
        for (Eigen::Index i = 0; i < c.beta_same.size(); ++i) {
            if (static_cast<std::size_t>(i) >= j) {
                require(c.beta_same[i] == 0.0, c.name + ": same-time dependence must point to earlier components");
                continue;
            }
            same += std::abs(c.beta_same[i]);
            if (c.channel == Channel::AD && c.beta_same[i] != 0.0)
                require(law.covariates[i].channel == Channel::AD,
                        c.name + ": AD-channel covariate cannot depend on a same-time AY-channel covariate");
        }
        const double m = bound(c.intercept, c.beta_l0, r0, c.beta_lag,
                               std::abs(c.beta_treatment) + std::abs(c.beta_time) * tmax + same + s);
        require(m <= kMaxLogit, c.name + ": success probability not bounded away from 0 and 1");
    }
    check_length(law.outcome.beta_l0, p0, "outcome.beta_l0");
    check_length(law.outcome.beta_l, p, "outcome.beta_l");
    require(law.outcome.sigma >= 0.0, "outcome.sigma must be nonnegative");
    if (law.assignment.depends_on_l0) {
        check_length(law.assignment.beta_l0, p0, "assignment.beta_l0");
        const double m = bound(law.assignment.intercept, law.assignment.beta_l0, r0, Eigen::VectorXd(), 0.0);
        require(m <= kMaxLogit, "assignment: probability not bounded away from 0 and 1");
    }

    const auto reach = ay_reachable(law, violation);
    for (std::size_t j = 0; j < p; ++j)
        if (reach[j] && static_cast<std::size_t>(law.event.beta_l.size()) > j)
            require(law.event.beta_l[j] == 0.0,
                    "a_Y reaches the event hazard through covariate " + law.covariates[j].name);

    if (law.monotone) {
        require(law.event.beta_ad <= 0.0, "monotone law requires beta_ad <= 0 in the event hazard");
        // covariates that carry treatment, directly or through other covariates
        const std::size_t p = law.n_covariates();
        std::vector<bool> carries(p, false);
        for (bool changed = true; changed;) {
            changed = false;
            for (std::size_t j = 0; j < p; ++j) {
                const auto& c = law.covariates[j];
                bool v = c.beta_treatment != 0.0;
                for (std::size_t i = 0; i < p; ++i) {
                    v = v || (carries[i] && i < static_cast<std::size_t>(c.beta_lag.size()) && c.beta_lag[i] != 0.0);
                    v = v || (carries[i] && i < static_cast<std::size_t>(c.beta_same.size()) && c.beta_same[i] != 0.0);
                }
                if (v && !carries[j]) carries[j] = changed = true;
            }
        }
        for (std::size_t j = 0; j < p; ++j)
            require(!(carries[j] && j < static_cast<std::size_t>(law.event.beta_l.size()) && law.event.beta_l[j] != 0.0),
                    "monotone law: covariate " + law.covariates[j].name +
                        " depends on treatment and enters the event hazard");
    }
}

ExogenousNoise draw_noise(const StructuralLaw& law, std::uint64_t seed, std::uint64_t individual) {
    const NoiseLayout lay = noise_layout(law);
    ExogenousNoise noise;
    noise.u.resize(lay.size());
    for (std::size_t j = 0; j < noise.u.size(); ++j) noise.u[j] = counter_uniform(seed, individual, j);
    return noise;
}

CounterfactualDraw draw_counterfactual(const StructuralLaw& law, const ExogenousNoise& noise, int a_y, int a_d,
                                       const std::optional<InjectedViolation>& violation) {
    const NoiseLayout lay = noise_layout(law);
    if (noise.u.size() != lay.size())
        throw InvalidLaw("noise record has " + std::to_string(noise.u.size()) + " entries, law needs " +
                         std::to_string(lay.size()));
    Realized r = realize(law, noise, draw_baseline(law, noise, lay), a_y, a_d, false, false, violation);
    CounterfactualDraw out;
    out.a_y = a_y;
    out.a_d = a_d;
    out.L0 = std::move(r.L0);
    out.D = std::move(r.D);
    out.L = std::move(r.L);
    out.Y = r.Y;
    return out;
}

TrialDataset simulate(const StructuralLaw& law, std::size_t n, std::uint64_t seed, Design design,
                      const std::optional<InjectedViolation>& violation, int threads) {
    if (n < 1) throw ConfigError("simulate: n must be at least 1");
    validate_law(law, violation);
    const NoiseLayout lay = noise_layout(law);

    TrialDataset ds;
    ds.grid = law.grid;
    ds.design = design;
    for (const auto& b : law.baseline) ds.baseline_names.push_back(b.name);
    for (const auto& c : law.covariates) ds.covariate_names.push_back(c.name);
    ds.partition = law.natural_partition();
    ds.records.resize(n);

    parallel_for(n, threads, [&](std::size_t i) {
        const ExogenousNoise noise = draw_noise(law, seed, i);
        const Eigen::VectorXd L0 = draw_baseline(law, noise, lay);
        const double u = noise.u[lay.arm()];
        ArmAssignment arm;
        switch (design) {
            case Design::TwoArm: {
                double pi = 0.5;
                if (law.assignment.depends_on_l0)
                    pi = expit(law.assignment.intercept + dot_or_zero(law.assignment.beta_l0, L0));
                arm = ArmAssignment::two_arm(u < pi ? 1 : 0);
                break;
            }
            case Design::FourArm: {
                const int idx = std::min(3, static_cast<int>(u * 4.0));
                arm = ArmAssignment::four_arm(idx >> 1, idx & 1);
                break;
            }
            case Design::SixArm: {
                const int idx = std::min(5, static_cast<int>(u * 6.0));
                arm = idx < 2 ? ArmAssignment::two_arm(idx) : ArmAssignment::four_arm((idx - 2) >> 1, (idx - 2) & 1);
                break;
            }
        }
        const bool joint = arm.kind == ArmAssignment::Kind::FourArm && arm.a_y == arm.a_d;
        Realized r = realize(law, noise, L0, arm.a_y, arm.a_d, true, joint, violation);
        LongitudinalRecord& rec = ds.records[i];
        rec.id = std::to_string(i + 1);
        rec.L0 = std::move(r.L0);
        rec.arm = arm;
        rec.D = std::move(r.D);
        rec.C = std::move(r.C);
        rec.L = std::move(r.L);
        rec.Y = r.Y;
    });
    return ds;
}

namespace {

struct Moments {
    std::size_t n = 0;
    double mean = 0.0, m2 = 0.0;

    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    void merge(const Moments& o) {
        if (o.n == 0) return;
        const double na = static_cast<double>(n), nb = static_cast<double>(o.n);
        const double d = o.mean - mean;
        const double nt = na + nb;
        mean += d * nb / nt;
        m2 += o.m2 + d * d * na * nb / nt;
        n += o.n;
    }
};

constexpr std::size_t kBlock = 4096;

template <typename PerDraw>
OracleEstimate mc_oracle(std::size_t n_mc, int threads, PerDraw&& per_draw) {
    const std::size_t n_blocks = (n_mc + kBlock - 1) / kBlock;
    std::vector<Moments> blocks(n_blocks);
    parallel_for(n_blocks, threads, [&](std::size_t b) {
        const std::size_t end = std::min(n_mc, (b + 1) * kBlock);
        for (std::size_t i = b * kBlock; i < end; ++i) {
            double y;
            if (per_draw(i, y)) blocks[b].add(y);
        }
    });
    Moments total;
    for (const auto& m : blocks) total.merge(m);
    if (total.n < 50)
        throw DegenerateOracle("only " + std::to_string(total.n) + " qualifying draws (need at least 50)");
    OracleEstimate out;
    out.mean = total.mean;
    out.n_used = total.n;
    out.mc_se = std::sqrt(total.m2 / static_cast<double>(total.n - 1) / static_cast<double>(total.n));
    return out;
}

}  // namespace

OracleEstimate oracle_conditional_mean(const StructuralLaw& law, int a_y, int a_d, std::size_t n_mc,
                                       std::uint64_t seed, const std::optional<InjectedViolation>& violation,
                                       int threads) {
    validate_law(law, violation);
    return mc_oracle(n_mc, threads, [&](std::size_t i, double& y) {
        const CounterfactualDraw d = draw_counterfactual(law, draw_noise(law, seed, i), a_y, a_d, violation);
        if (!d.survived()) return false;
        y = *d.Y;
        return true;
    });
}

OracleEstimate oracle_sace(const StructuralLaw& law, std::size_t n_mc, std::uint64_t seed,
                           const std::optional<InjectedViolation>& violation, int threads) {
    validate_law(law, violation);
    return mc_oracle(n_mc, threads, [&](std::size_t i, double& y) {
        const ExogenousNoise noise = draw_noise(law, seed, i);
        const CounterfactualDraw d1 = draw_counterfactual(law, noise, 1, 1, violation);
        const CounterfactualDraw d0 = draw_counterfactual(law, noise, 0, 0, violation);
        if (!d1.survived() || !d0.survived()) return false;
        y = *d1.Y - *d0.Y;
        return true;
    });
}

namespace presets {

namespace {
Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(v.size());
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}
}  // namespace

StructuralLaw null_law(int K) {
    StructuralLaw law;
    law.grid.K = K;
    law.baseline = {{"x", BaselineCovariate::Kind::Bernoulli, 0.5}};
    CovariateEquation l;
    l.name = "l";
    l.channel = Channel::AD;
    l.intercept = -0.3;
    l.beta_l0 = vec({0.6});
    l.beta_lag = vec({1.0});
    law.covariates = {l};
    law.event.intercept = -2.0;
    law.event.beta_l0 = vec({0.4});
    law.event.beta_l = vec({0.5});
    law.outcome.intercept = 1.0;
    law.outcome.beta_l0 = vec({0.5});
    law.outcome.beta_l = vec({1.0});
    law.outcome.sigma = 1.0;
    return law;
}

StructuralLaw default_k1() {
    StructuralLaw law;
    law.grid.K = 1;
    law.baseline = {{"x", BaselineCovariate::Kind::Bernoulli, 0.4}};
    CovariateEquation prog;
    prog.name = "prog";
    prog.channel = Channel::AD;
    prog.intercept = -0.5;
    prog.beta_treatment = -0.8;
    prog.beta_l0 = vec({0.7});
    law.covariates = {prog};
    law.event.intercept = -1.2;
    law.event.beta_ad = -0.7;
    law.event.beta_l0 = vec({0.4});
    law.event.beta_l = vec({0.9});
    law.outcome.intercept = 1.0;
    law.outcome.beta_ay = 1.5;
    law.outcome.beta_l0 = vec({0.8});
    law.outcome.beta_l = vec({-2.0});
    law.outcome.sigma = 1.0;
    return law;
}

StructuralLaw swog_like() {
    StructuralLaw law;
    law.grid.K = 11;
    law.grid.ordering = Ordering::TerminalDBeforeC;
    using K = BaselineCovariate::Kind;
    law.baseline = {{"age", K::Gaussian, 0.5, 0.0, 1.0},
                    {"race", K::Bernoulli, 0.25},
                    {"prognosis", K::Bernoulli, 0.5},
                    {"bone_pain", K::Bernoulli, 0.4},
                    {"perf_status", K::Bernoulli, 0.3}};
    CovariateEquation prog;
    prog.name = "prog";
    prog.channel = Channel::AD;
    prog.intercept = -3.2;
    prog.beta_treatment = -0.7;
    prog.beta_l0 = vec({0.1, 0.1, 0.4, 0.3, 0.3});
    prog.beta_lag = vec({7.0});
    law.covariates = {prog};
    law.event.intercept = -4.3;
    law.event.beta_ad = -0.2;
    law.event.beta_l0 = vec({0.15, 0.1, 0.3, 0.2, 0.3});
    law.event.beta_l = vec({1.0});
    HazardEquation cens;
    cens.intercept = -0.05;
    cens.beta_l0 = vec({0.2, 0.2, 0.0, 0.1, 0.3});
    cens.beta_l = vec({0.8});
    law.censoring = cens;
    law.censor_terminal_only = true;
    law.outcome.intercept = 0.2;
    law.outcome.beta_ay = 2.3;
    law.outcome.beta_l0 = vec({-1.0, 0.0, -3.0, -3.0, -4.0});
    law.outcome.beta_l = vec({-14.0});
    law.outcome.sigma = 20.0;
    return law;
}

}  // namespace presets

}  // namespace sepfx
