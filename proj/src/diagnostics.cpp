#include "sepfx/diagnostics.hpp"

#include "sepfx/error.hpp"
#include "sepfx/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace sepfx {

namespace {

constexpr double kMinAtRisk = 10;

double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

void finish(DiagnosticReport& rep) {
    std::size_t m = 0;
    for (const auto& r : rep.rows)
        if (r.p_value) {
            ++m;
            rep.min_p = rep.min_p ? std::min(*rep.min_p, *r.p_value) : *r.p_value;
        }
    if (m == 0) return;
    rep.threshold = rep.alpha / static_cast<double>(m);
    for (auto& r : rep.rows) r.flagged = r.p_value && *r.p_value < *rep.threshold;
    rep.rejected = *rep.min_p < *rep.threshold;
}

struct Tally {
    double at_risk = 0, events = 0;
};

// D_{k+1} among rows with D_k = 0 and the censoring step before it clear.
template <typename Pred>
Tally event_tally(const TrialDataset& ds, int k, Pred&& in_group) {
    Tally t;
    for (const auto& r : ds.records) {
        if (!in_group(r)) continue;
        if (r.event(k) != 0 || r.censored(ds.grid.censor_before_event(k)) != 0) continue;
        t.at_risk += 1;
        t.events += r.D[k];
    }
    return t;
}

void require_at_risk(double n, const std::string& where) {
    if (n < kMinAtRisk)
        throw InsufficientData(where + ": " + fmt(n) + " at risk (need " + fmt(kMinAtRisk) + ")");
}

DiagnosticRow proportion_row(const std::string& label, const Tally& g1, const Tally& g0, const char* n1,
                             const char* n0) {
    DiagnosticRow row;
    row.stratum = label;
    row.stats = {{std::string("at_risk_") + n1, g1.at_risk},
                 {std::string("events_") + n1, g1.events},
                 {std::string("at_risk_") + n0, g0.at_risk},
                 {std::string("events_") + n0, g0.events}};
    const auto [z, p] = two_proportion_test(g1.events, g1.at_risk, g0.events, g0.at_risk);
    row.statistic = z;
    row.p_value = p;
    return row;
}

}  // namespace

std::pair<double, double> two_proportion_test(double x1, double n1, double x0, double n0) {
    const double p1 = x1 / n1, p0 = x0 / n0;
    const double pooled = (x1 + x0) / (n1 + n0);
    const double var = pooled * (1 - pooled) * (1 / n1 + 1 / n0);
    const double diff = std::abs(p1 - p0) - 0.5 * (1 / n1 + 1 / n0);
    if (!(var > 0.0) || diff <= 0.0) return {0.0, 1.0};
    const double z = diff / std::sqrt(var);
    return {p1 >= p0 ? z : -z, std::min(1.0, two_sided_p(z))};
}

std::pair<double, double> two_mean_test(const std::vector<double>& y1, const std::vector<double>& y0) {
    auto moments = [](const std::vector<double>& y) {
        double m = 0.0;
        for (double v : y) m += v;
        m /= static_cast<double>(y.size());
        double ss = 0.0;
        for (double v : y) ss += (v - m) * (v - m);
        return std::pair<double, double>{m, y.size() > 1 ? ss / static_cast<double>(y.size() - 1) : 0.0};
    };
    const auto [m1, v1] = moments(y1);
    const auto [m0, v0] = moments(y0);
    const double se = std::sqrt(v1 / static_cast<double>(y1.size()) + v0 / static_cast<double>(y0.size()));
    if (!(se > 0.0)) return {0.0, m1 == m0 ? 1.0 : 0.0};
    const double z = (m1 - m0) / se;
    return {z, std::min(1.0, two_sided_p(z))};
}

DiagnosticReport check_positivity(const TrialDataset& ds) {
    DiagnosticReport rep;
    rep.check = "positivity";
    const int K = ds.grid.K;
    // (k, history label) -> counts by arm; std::map keeps output order stable
    std::map<std::pair<int, std::string>, std::pair<double, double>> cells;
    for (const auto& r : ds.records) {
        if (r.arm.kind != ArmAssignment::Kind::TwoArm) continue;
        std::string hist;
        for (std::size_t j = 0; j < ds.n_baseline(); ++j)
            hist += (j ? "," : "") + std::string("L0_") + ds.baseline_names[j] + "=" + fmt(r.L0[j]);
        for (int k = 0; k <= K; ++k) {
            if (k > 0) {
                if (r.event(k) != 0 || r.censored(k) != 0) break;
                for (std::size_t j = 0; j < ds.n_covariates(); ++j)
                    hist += (hist.empty() ? "" : ",") + std::string("L") + std::to_string(k) + "_" +
                            ds.covariate_names[j] + "=" + fmt(*r.L[k - 1][j]);
            }
            auto& c = cells[{k, hist}];
            (r.arm.a() ? c.first : c.second) += 1;
        }
    }
    for (const auto& [key, counts] : cells) {
        DiagnosticRow row;
        row.stratum = "k=" + std::to_string(key.first) + (key.second.empty() ? "" : " " + key.second);
        row.stats = {{"n_A1", counts.first}, {"n_A0", counts.second}};
        row.flagged = counts.first == 0 || counts.second == 0;
        rep.rejected |= row.flagged;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

DiagnosticReport falsify_ay_isolation(const TrialDataset& ds, double alpha) {
    if (ds.design != Design::FourArm) throw ConfigError("A_Y isolation test needs four-arm data");
    DiagnosticReport rep;
    rep.check = "ay_isolation";
    rep.alpha = alpha;
    for (int k = 0; k <= ds.grid.K; ++k)
        for (int a_d = 0; a_d <= 1; ++a_d) {
            auto group = [&](int a_y) {
                return event_tally(ds, k, [&](const LongitudinalRecord& r) {
                    return r.arm.kind == ArmAssignment::Kind::FourArm && r.arm.a_y == a_y && r.arm.a_d == a_d;
                });
            };
            const Tally g1 = group(1), g0 = group(0);
            const std::string label = "D_" + std::to_string(k + 1) + " | AD=" + std::to_string(a_d);
            require_at_risk(g1.at_risk, label + ", AY=1");
            require_at_risk(g0.at_risk, label + ", AY=0");
            rep.rows.push_back(proportion_row(label, g1, g0, "AY1", "AY0"));
        }
    finish(rep);
    return rep;
}

DiagnosticReport falsify_modified_treatment(const TrialDataset& ds, double alpha) {
    if (ds.design != Design::SixArm) throw ConfigError("modified treatment test needs six-arm data");
    DiagnosticReport rep;
    rep.check = "modified_treatment";
    rep.alpha = alpha;
    const int K = ds.grid.K;
    for (int a = 0; a <= 1; ++a) {
        auto joint = [&](const LongitudinalRecord& r) {
            return r.arm.kind == ArmAssignment::Kind::FourArm && r.arm.a_y == a && r.arm.a_d == a;
        };
        auto single = [&](const LongitudinalRecord& r) {
            return r.arm.kind == ArmAssignment::Kind::TwoArm && r.arm.a() == a;
        };
        for (int k = 0; k <= K; ++k) {
            const Tally g1 = event_tally(ds, k, joint), g0 = event_tally(ds, k, single);
            const std::string label = "D_" + std::to_string(k + 1) + " | a=" + std::to_string(a);
            require_at_risk(g1.at_risk, label + ", joint arm");
            require_at_risk(g0.at_risk, label + ", single arm");
            rep.rows.push_back(proportion_row(label, g1, g0, "joint", "single"));
        }
        std::vector<double> y1, y0;
        for (const auto& r : ds.records) {
            if (!r.Y) continue;
            if (joint(r)) y1.push_back(*r.Y);
            if (single(r)) y0.push_back(*r.Y);
        }
        const std::string label = "Y | a=" + std::to_string(a);
        require_at_risk(static_cast<double>(y1.size()), label + ", joint arm");
        require_at_risk(static_cast<double>(y0.size()), label + ", single arm");
        DiagnosticRow row;
        row.stratum = label;
        auto mean = [](const std::vector<double>& y) {
            double s = 0.0;
            for (double v : y) s += v;
            return s / static_cast<double>(y.size());
        };
        row.stats = {{"n_joint", static_cast<double>(y1.size())},
                     {"mean_joint", mean(y1)},
                     {"n_single", static_cast<double>(y0.size())},
                     {"mean_single", mean(y0)}};
        const auto [z, p] = two_mean_test(y1, y0);
        row.statistic = z;
        row.p_value = p;
        rep.rows.push_back(std::move(row));
    }
    finish(rep);
    return rep;
}

}  // namespace sepfx
