#include "sepfx/estimators.hpp"

#include "sepfx/error.hpp"
#include "sepfx/inference.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sepfx {

namespace {

constexpr double kMinProb = 1e-6;

std::string target_label(Target t) {
    std::ostringstream os;
    os << "nu(" << t.a_y << "," << t.a_d << ")";
    return os.str();
}

double guarded(double p, const std::string& what) {
    if (p < kMinProb) {
        std::ostringstream os;
        os << what << " probability " << p << " below " << kMinProb;
        throw ExtremePositivity(os.str());
    }
    return p;
}

// Per-record ingredients of the three estimators for one target.
struct Prepared {
    struct Row {
        const LongitudinalRecord* rec = nullptr;
        int a = 0;
        bool survived = false;
        bool uncensored = false;  ///< C_{K+1} = 0
        bool pre_d_uncensored = false;
        double omega = 1.0;  ///< inverse probability of staying uncensored before D_{K+1}, at own arm, times r_d
        double r_d = 1.0;    ///< P(A = a_D) / P(A = a_D | L0); 1 without a propensity model
        double w = 1.0;      ///< W_C(a_Y) W_D W_LAD for uncensored survivors in arm a_Y
        double ehat = 0.0;   ///< E(Y | survivor, L history, A = a_Y)
    };
    std::vector<Row> rows;
    std::size_t n = 0, n_ay = 0, n_ad = 0;
};

std::vector<int> censor_stages(const NuisanceFit& c, int K) {
    std::vector<int> out;
    for (int k = c.spec.terminal_only ? K : 0; k <= K; ++k) out.push_back(k);
    return out;
}

bool needs_pre_d_adjustment(const TrialDataset& ds) {
    const int K = ds.grid.K;
    const bool tdbc = ds.grid.ordering == Ordering::TerminalDBeforeC;
    for (const auto& r : ds.records)
        if (r.arm.kind == ArmAssignment::Kind::TwoArm && (tdbc ? r.censored(K) : r.censored(K + 1))) return true;
    return false;
}

Prepared prepare(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t, bool need_outcome,
                 bool need_weights, bool need_omega) {
    const int K = ds.grid.K;
    const bool tdbc = ds.grid.ordering == Ordering::TerminalDBeforeC;
    const bool any_censoring = ds.has_censoring();
    const bool pre_d = needs_pre_d_adjustment(ds);

    if (need_outcome && !suite.outcome) throw MissingNuisance("outcome model required");
    if (need_weights && t.a_y != t.a_d) {
        if (!suite.event) throw MissingNuisance("event hazard model required");
        for (int k = 1; k <= K; ++k)
            for (std::size_t j = 0; j < ds.n_covariates(); ++j)
                if (ds.partition.ad(k, j) && !(j < suite.covariates.size() && suite.covariates[j]))
                    throw MissingNuisance("density model required for AD-block covariate " + ds.covariate_names[j]);
    }
    if ((need_weights && any_censoring) || (need_omega && pre_d)) {
        if (!suite.censoring) throw MissingNuisance("censoring model required: the data contain censoring");
        if (suite.censoring->spec.terminal_only) {
            const bool interior = std::any_of(ds.records.begin(), ds.records.end(), [&](const LongitudinalRecord& r) {
                return r.censored(K) != 0;
            });
            if (interior) throw MissingNuisance("censoring model covers only the last interval but data censor earlier");
        }
    }
    std::vector<int> c_stages;
    if (suite.censoring && any_censoring) c_stages = censor_stages(*suite.censoring, K);

    Prepared out;
    for (const auto& r : ds.records) {
        if (r.arm.kind != ArmAssignment::Kind::TwoArm) continue;
        Prepared::Row row;
        row.rec = &r;
        row.a = r.arm.a();
        row.survived = r.D[K] == 0;
        row.uncensored = r.C[K] == 0;
        row.pre_d_uncensored = tdbc ? r.censored(K) == 0 : r.censored(K + 1) == 0;
        ++out.n;
        out.n_ay += row.a == t.a_y;
        out.n_ad += row.a == t.a_d;

        const bool or_member = row.a == t.a_d && row.survived && row.pre_d_uncensored;
        const bool ipw_member = row.a == t.a_y && row.survived && row.uncensored;

        if (need_omega && pre_d && or_member)
            for (int k : c_stages) {
                if (tdbc && k == K) continue;
                row.omega /= guarded(1.0 - predict_at(*suite.censoring, r, k, row.a), "uncensored");
            }
        if (need_outcome && (or_member || ipw_member)) row.ehat = predict_at(*suite.outcome, r, K, t.a_y);

        if (need_weights && ipw_member) {
            double logw = 0.0;
            for (int k : c_stages) logw -= std::log(guarded(1.0 - predict_at(*suite.censoring, r, k, t.a_y), "uncensored"));
            if (t.a_y != t.a_d) {
                for (int k = 0; k <= K; ++k) {
                    const double sd = 1.0 - predict_at(*suite.event, r, k, t.a_d);
                    const double sy = guarded(1.0 - predict_at(*suite.event, r, k, t.a_y), "survival");
                    logw += std::log(sd) - std::log(sy);
                }
                for (int k = 1; k <= K; ++k)
                    for (std::size_t j = 0; j < ds.n_covariates(); ++j) {
                        if (!ds.partition.ad(k, j)) continue;
                        const bool one = *r.L[k - 1][j] != 0.0;
                        const double pd = predict_at(*suite.covariates[j], r, k - 1, t.a_d);
                        const double py = predict_at(*suite.covariates[j], r, k - 1, t.a_y);
                        logw += std::log(one ? pd : 1.0 - pd) -
                                std::log(guarded(one ? py : 1.0 - py, "covariate density"));
                    }
            }
            row.w = std::exp(logw);
        }
        out.rows.push_back(row);
    }
    if (suite.propensity) {
        // Standardize both arms to the marginal L0 law: f(l0) / f(l0 | a) = P(a) / P(a | l0).
        const double n = static_cast<double>(out.n);
        for (auto& row : out.rows) {
            const double p1 = predict_at(*suite.propensity, *row.rec, 0, 0);
            const double pa = guarded(row.a ? p1 : 1.0 - p1, "treatment");
            const double ratio = static_cast<double>(row.a == t.a_d ? out.n_ad : out.n_ay) / n / pa;
            if (row.a == t.a_d) {
                row.r_d = ratio;
                row.omega *= ratio;
            }
            if (row.a == t.a_y) row.w *= ratio;
        }
    }
    return out;
}

WeightSummary summarize_weights(const std::vector<double>& w) {
    WeightSummary s;
    if (w.empty()) return s;
    auto sorted = w;
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    double sum = 0.0;
    for (double v : w) sum += v;
    s.mean = sum / static_cast<double>(w.size());
    s.p99 = quantile_sorted(sorted, 0.99);
    return s;
}

double kish(const std::vector<double>& w) {
    double s = 0.0, s2 = 0.0;
    for (double v : w) {
        s += v;
        s2 += v * v;
    }
    return s2 > 0.0 ? s * s / s2 : 0.0;
}

void apply_cap(Prepared& prep, Target t, const EstimatorOptions& opt) {
    if (!opt.weight_cap_quantile) return;
    std::vector<double> w;
    for (const auto& r : prep.rows)
        if (r.a == t.a_y && r.survived && r.uncensored) w.push_back(r.w);
    if (w.empty()) return;
    const double cap = quantile(w, *opt.weight_cap_quantile);
    for (auto& r : prep.rows) r.w = std::min(r.w, cap);
}

EstimateReport make_report(Target t, Estimator e, const NuisanceSuiteFit& suite, const TrialDataset& ds) {
    EstimateReport rep;
    rep.target = EstimandTarget::single(t.a_y, t.a_d);
    rep.estimator = e;
    rep.nuisance = summarize(suite, ds.covariate_names);
    return rep;
}

void require_two_arm(const TrialDataset& ds) {
    if (ds.design == Design::FourArm) throw ConfigError("estimators need two-arm data");
}

struct DrParts {
    double t1 = 0.0, t2 = 0.0, beta = 0.0;
    double p_ad = 0.0, p_ay = 0.0;
};

DrParts dr_parts(const Prepared& prep, Target t) {
    DrParts d;
    if (prep.n_ad == 0) throw NoSurvivors("no records in arm " + std::to_string(t.a_d));
    if (prep.n_ay == 0) throw NoSurvivors("no records in arm " + std::to_string(t.a_y));
    for (const auto& r : prep.rows) {
        if (r.a == t.a_d && r.survived && r.pre_d_uncensored) {
            d.beta += r.omega;
            d.t1 += r.omega * r.ehat;
        }
        if (r.a == t.a_y && r.survived && r.uncensored) d.t2 += r.w * (*r.rec->Y - r.ehat);
    }
    d.beta /= static_cast<double>(prep.n_ad);
    d.t1 /= static_cast<double>(prep.n_ad);
    d.t2 /= static_cast<double>(prep.n_ay);
    d.p_ad = static_cast<double>(prep.n_ad) / static_cast<double>(prep.n);
    d.p_ay = static_cast<double>(prep.n_ay) / static_cast<double>(prep.n);
    return d;
}

double if_mean(const Prepared& prep, Target t, const DrParts& d, double nu) {
    double s = 0.0;
    for (const auto& r : prep.rows) {
        double v = 0.0;
        if (r.a == t.a_d && r.survived && r.pre_d_uncensored) v += r.omega * (r.ehat - nu) / d.p_ad;
        if (r.a == t.a_y && r.survived && r.uncensored) v += r.w * (*r.rec->Y - r.ehat) / d.p_ay;
        s += v / d.beta;
    }
    return s / static_cast<double>(prep.n);
}

}  // namespace

std::string EstimandTarget::label() const {
    if (!reference) return target_label(primary);
    return target_label(primary) + " - " + target_label(*reference);
}

std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::OR: return "OR";
        case Estimator::IPW: return "IPW";
        case Estimator::DR: return "DR";
    }
    return "?";
}

Estimator estimator_from_string(const std::string& s) {
    if (s == "OR" || s == "or") return Estimator::OR;
    if (s == "IPW" || s == "ipw") return Estimator::IPW;
    if (s == "DR" || s == "dr") return Estimator::DR;
    throw ConfigError("unknown estimator '" + s + "' (expected OR, IPW or DR)");
}

std::vector<NuisanceSummary> summarize(const NuisanceSuiteFit& suite, const std::vector<std::string>& covariate_names) {
    std::vector<NuisanceSummary> out;
    auto add = [&](const std::string& ch, const std::optional<NuisanceFit>& f) {
        if (!f) return;
        out.push_back({ch, f->spec.formula, f->converged(), f->iterations(), f->n_used(), f->loglik()});
    };
    add("D", suite.event);
    add("C", suite.censoring);
    for (std::size_t j = 0; j < suite.covariates.size(); ++j)
        add("L:" + (j < covariate_names.size() ? covariate_names[j] : std::to_string(j)), suite.covariates[j]);
    add("Y", suite.outcome);
    add("A", suite.propensity);
    return out;
}

EstimateReport estimate_or(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t,
                           const EstimatorOptions& opt) {
    require_two_arm(ds);
    const Prepared prep = prepare(ds, suite, t, true, false, !opt.complete_case);
    EstimateReport rep = make_report(t, Estimator::OR, suite, ds);
    rep.complete_case = opt.complete_case;
    double num = 0.0, den = 0.0;
    std::vector<double> w;
    for (const auto& r : prep.rows) {
        if (r.a != t.a_d || !r.survived) continue;
        if (opt.complete_case ? !r.uncensored : !r.pre_d_uncensored) continue;
        const double om = opt.complete_case ? r.r_d : r.omega;
        num += om * r.ehat;
        den += om;
        w.push_back(om);
    }
    if (w.empty()) throw NoSurvivors("no survivors in arm " + std::to_string(t.a_d));
    rep.point = num / den;
    rep.weights = summarize_weights(w);
    rep.n_effective = kish(w);
    return rep;
}

EstimateReport estimate_ipw(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t,
                            const EstimatorOptions& opt) {
    require_two_arm(ds);
    Prepared prep = prepare(ds, suite, t, false, true, false);
    apply_cap(prep, t, opt);
    EstimateReport rep = make_report(t, Estimator::IPW, suite, ds);
    double num = 0.0, den = 0.0;
    std::vector<double> w;
    for (const auto& r : prep.rows) {
        if (r.a != t.a_y || !r.survived || !r.uncensored) continue;
        num += r.w * *r.rec->Y;
        den += r.w;
        w.push_back(r.w);
    }
    if (w.empty()) throw NoSurvivors("no uncensored survivors in arm " + std::to_string(t.a_y));
    if (!(den > 0.0)) throw ExtremePositivity("weights sum to zero");
    rep.point = num / den;
    rep.weights = summarize_weights(w);
    rep.n_effective = kish(w);
    return rep;
}

EstimateReport estimate_dr(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t,
                           const EstimatorOptions& opt) {
    require_two_arm(ds);
    Prepared prep = prepare(ds, suite, t, true, true, true);
    apply_cap(prep, t, opt);
    EstimateReport rep = make_report(t, Estimator::DR, suite, ds);
    std::vector<double> w;
    for (const auto& r : prep.rows)
        if (r.a == t.a_y && r.survived && r.uncensored) w.push_back(r.w);
    if (w.empty()) throw NoSurvivors("no uncensored survivors in arm " + std::to_string(t.a_y));
    const DrParts d = dr_parts(prep, t);
    if (!(d.beta > 0.0)) throw NoSurvivors("no survivors in arm " + std::to_string(t.a_d));
    rep.point = (d.t1 + d.t2) / d.beta;
    rep.if_mean = if_mean(prep, t, d, rep.point);
    rep.weights = summarize_weights(w);
    rep.n_effective = kish(w);
    return rep;
}

double dr_estimating_function(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t, double nu) {
    const Prepared prep = prepare(ds, suite, t, true, true, true);
    return if_mean(prep, t, dr_parts(prep, t), nu);
}

EstimateReport estimate(const TrialDataset& ds, const NuisanceSuiteFit& suite, Target t, Estimator e,
                        const EstimatorOptions& opt) {
    switch (e) {
        case Estimator::OR: return estimate_or(ds, suite, t, opt);
        case Estimator::IPW: return estimate_ipw(ds, suite, t, opt);
        case Estimator::DR: return estimate_dr(ds, suite, t, opt);
    }
    throw ConfigError("unknown estimator");
}

EstimateReport estimate_effect(const TrialDataset& ds, const NuisanceSuiteFit& suite, const EstimandTarget& pair,
                               Estimator e, const EstimatorOptions& opt) {
    if (!pair.reference) throw ConfigError("estimate_effect needs two targets");
    if (pair.primary.a_d != pair.reference->a_d)
        throw MismatchedAD("contrast targets have a_D = " + std::to_string(pair.primary.a_d) + " and " +
                           std::to_string(pair.reference->a_d));
    const EstimateReport r1 = estimate(ds, suite, pair.primary, e, opt);
    const EstimateReport r0 = estimate(ds, suite, *pair.reference, e, opt);
    EstimateReport rep = r1;
    rep.target = pair;
    rep.point = r1.point - r0.point;
    if (r1.if_mean && r0.if_mean) rep.if_mean = std::max(std::abs(*r1.if_mean), std::abs(*r0.if_mean));
    return rep;
}

EstimateReport estimate_target(const TrialDataset& ds, const NuisanceSuiteFit& suite, const EstimandTarget& target,
                               Estimator e, const EstimatorOptions& opt) {
    if (target.reference) return estimate_effect(ds, suite, target, e, opt);
    return estimate(ds, suite, target.primary, e, opt);
}

}  // namespace sepfx
