#include "sepfx/identification.hpp"

#include "sepfx/error.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace sepfx {

namespace {

constexpr double kPosFloor = 1e-12;
constexpr std::size_t kMaxCells = 1000000;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Kahan {
    double sum = 0.0, c = 0.0;
    void add(double x) {
        const double y = x - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
};

std::string cell(const char* what, int k, std::size_t h, int a) {
    std::ostringstream os;
    os << what << " at k=" << k << ", history=" << h << ", A=" << a;
    return os.str();
}

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

unsigned ad_mask(const DiscreteLaw& law, int k) {
    unsigned m = 0;
    for (std::size_t j = 0; j < law.p; ++j)
        if (law.partition.ad(k, j)) m |= 1u << j;
    return m;
}

// P(L_k restricted to `mask` equals l restricted to `mask` | row).
double block_marginal(const double* row, std::size_t levels, unsigned mask, unsigned l) {
    double s = 0.0;
    for (unsigned x = 0; x < levels; ++x)
        if ((x & mask) == (l & mask)) s += row[x];
    return s;
}

const double* dens_row(const DiscreteLaw& law, int k, std::size_t h, int a) {
    return &law.dens_l[k - 1][(h * 2 + a) * law.n_levels()];
}

void require_defined(double v, const std::string& what) {
    if (std::isnan(v)) throw PositivityViolation("undefined " + what);
}

void check_dims(const DiscreteLaw& law) {
    const int K = law.grid.K;
    auto fail = [](const std::string& m) { throw InvalidLaw(m); };
    if (law.p0 + static_cast<std::size_t>(K) * law.p > 40) fail("history too wide");
    if (law.partition.in_ad.size() != static_cast<std::size_t>(K)) fail("partition must cover k = 1..K");
    for (const auto& row : law.partition.in_ad)
        if (row.size() != law.p) fail("partition width must equal p");
    if (law.f_l0.size() != law.n_histories(0) || law.prop.size() != law.n_histories(0)) fail("baseline table size");
    if (law.hazard_d.size() != static_cast<std::size_t>(K + 1) || law.hazard_c.size() != static_cast<std::size_t>(K + 1))
        fail("hazard tables must cover k = 0..K");
    for (int k = 0; k <= K; ++k)
        if (law.hazard_d[k].size() != 2 * law.n_histories(k) || law.hazard_c[k].size() != 2 * law.n_histories(k))
            fail("hazard table size at k=" + std::to_string(k));
    if (law.dens_l.size() != static_cast<std::size_t>(K)) fail("density tables must cover k = 1..K");
    for (int k = 1; k <= K; ++k)
        if (law.dens_l[k - 1].size() != 2 * law.n_histories(k - 1) * law.n_levels())
            fail("density table size at k=" + std::to_string(k));
    if (law.mean_y.size() != 2 * law.n_histories(K)) fail("outcome table size");
}

}  // namespace

double DiscreteLaw::baseline_given(std::size_t h0, int a) const {
    double norm = 0.0;
    for (std::size_t h = 0; h < f_l0.size(); ++h) {
        const double pa = a ? prop[h] : 1.0 - prop[h];
        if (f_l0[h] > 0.0 && !std::isnan(pa)) norm += f_l0[h] * pa;
    }
    if (norm < kPosFloor) return kNaN;
    if (f_l0[h0] == 0.0) return 0.0;
    const double pa = a ? prop[h0] : 1.0 - prop[h0];
    return std::isnan(pa) ? kNaN : f_l0[h0] * pa / norm;
}

void check_discrete_law(const DiscreteLaw& law) {
    check_dims(law);
    auto prob = [](double v, const std::string& what) {
        if (!std::isnan(v) && (v < 0.0 || v > 1.0)) throw InvalidLaw(what + " outside [0,1]");
    };
    double total = 0.0;
    for (double v : law.f_l0) {
        prob(v, "P(L0)");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidLaw("P(L0) does not sum to 1");
    for (double v : law.prop) prob(v, "P(A=1|L0)");
    for (const auto& t : law.hazard_d)
        for (double v : t) prob(v, "D hazard");
    for (const auto& t : law.hazard_c)
        for (double v : t) prob(v, "C hazard");
    const std::size_t m = law.n_levels();
    for (int k = 1; k <= law.grid.K; ++k) {
        const auto& t = law.dens_l[k - 1];
        for (std::size_t r = 0; r < t.size() / m; ++r) {
            if (std::isnan(t[r * m])) continue;
            double s = 0.0;
            for (std::size_t l = 0; l < m; ++l) {
                prob(t[r * m + l], "L density");
                s += t[r * m + l];
            }
            if (std::abs(s - 1.0) > 1e-12) throw InvalidLaw("L density row does not sum to 1 at k=" + std::to_string(k));
        }
    }
}

double gformula_exact(const DiscreteLaw& law, int a_y, int a_d) {
    check_dims(law);
    const int K = law.grid.K;
    const std::size_t levels = law.n_levels();
    const std::size_t full = levels - 1;
    Kahan num, den;

    // History h_k fixed, log-mass covers L0..L_k and survival through D_k.
    auto recurse = [&](auto&& self, int k, std::size_t h, double logm) -> void {
        const double hd = law.hazard_d[k][h * 2 + a_d];
        require_defined(hd, cell("D hazard", k, h, a_d));
        if (1.0 - hd <= 0.0) return;
        logm += std::log1p(-hd);
        if (k == K) {
            const double y = law.mean_y[h * 2 + a_y];
            require_defined(y, cell("outcome mean", k, h, a_y));
            const double m = std::exp(logm);
            num.add(m * y);
            den.add(m);
            return;
        }
        const unsigned mask = ad_mask(law, k + 1);
        const bool ay_block = mask != full;
        const bool ad_block = mask != 0;
        const double* row_d = ad_block ? dens_row(law, k + 1, h, a_d) : nullptr;
        const double* row_y = ay_block ? dens_row(law, k + 1, h, a_y) : nullptr;
        if (row_d) require_defined(row_d[0], cell("L density", k + 1, h, a_d));
        if (row_y) require_defined(row_y[0], cell("L density", k + 1, h, a_y));
        for (unsigned l = 0; l < levels; ++l) {
            double q;
            if (!ay_block) {
                q = row_d[l];
            } else if (!ad_block) {
                q = row_y[l];
            } else {
                const double p_ad = block_marginal(row_d, levels, mask, l);
                if (p_ad <= 0.0) continue;
                const double p_ad_y = block_marginal(row_y, levels, mask, l);
                if (p_ad_y < kPosFloor)
                    throw PositivityViolation("AD-block level " + std::to_string(l & mask) + " has no mass under " +
                                              cell("L density", k + 1, h, a_y));
                q = p_ad * row_y[l] / p_ad_y;
            }
            if (q <= 0.0) continue;
            self(self, k + 1, h | (static_cast<std::size_t>(l) << (law.p0 + k * law.p)), logm + std::log(q));
        }
    };

    // L0 precedes treatment: its marginal law is the same under every intervention.
    for (std::size_t h0 = 0; h0 < law.n_histories(0); ++h0) {
        if (law.f_l0[h0] <= 0.0) continue;
        for (int a : {a_y, a_d}) {
            const double pa = a ? law.prop[h0] : 1.0 - law.prop[h0];
            require_defined(pa, cell("treatment probability", 0, h0, a));
            if (pa < kPosFloor) throw PositivityViolation("no treated mass, " + cell("treatment probability", 0, h0, a));
        }
        recurse(recurse, 0, h0, std::log(law.f_l0[h0]));
    }
    if (den.sum < kPosFloor) throw PositivityViolation("no survival mass under the intervention");
    return num.sum / den.sum;
}

double weighted_repr_exact(const DiscreteLaw& law, int a_y, int a_d) {
    check_dims(law);
    const int K = law.grid.K;
    const std::size_t levels = law.n_levels();
    Kahan num, den;

    // Observed arm-a_Y mass and the weight are carried separately.
    auto recurse = [&](auto&& self, int k, std::size_t h, double log_obs, double log_w) -> void {
        const double hc = law.hazard_c[k][h * 2 + a_y];
        require_defined(hc, cell("C hazard", k, h, a_y));
        const double hy = law.hazard_d[k][h * 2 + a_y];
        const double hd = law.hazard_d[k][h * 2 + a_d];
        require_defined(hy, cell("D hazard", k, h, a_y));
        require_defined(hd, cell("D hazard", k, h, a_d));
        if (1.0 - hd <= 0.0) return;
        if (1.0 - hc < kPosFloor) throw PositivityViolation("no uncensored mass, " + cell("C hazard", k, h, a_y));
        if (1.0 - hy < kPosFloor) throw PositivityViolation("no surviving mass, " + cell("D hazard", k, h, a_y));
        log_obs += std::log1p(-hc) + std::log1p(-hy);
        log_w += -std::log1p(-hc) + std::log1p(-hd) - std::log1p(-hy);
        if (k == K) {
            const double y = law.mean_y[h * 2 + a_y];
            require_defined(y, cell("outcome mean", k, h, a_y));
            const double m = std::exp(log_obs) * std::exp(log_w);
            num.add(m * y);
            den.add(m);
            return;
        }
        const unsigned mask = ad_mask(law, k + 1);
        const double* row_y = dens_row(law, k + 1, h, a_y);
        const double* row_d = dens_row(law, k + 1, h, a_d);
        require_defined(row_y[0], cell("L density", k + 1, h, a_y));
        if (mask) require_defined(row_d[0], cell("L density", k + 1, h, a_d));
        for (unsigned l = 0; l < levels; ++l) {
            double w = 0.0;
            if (mask) {
                const double num_w = block_marginal(row_d, levels, mask, l);
                if (num_w <= 0.0) continue;
                const double den_w = block_marginal(row_y, levels, mask, l);
                if (den_w < kPosFloor)
                    throw PositivityViolation("AD-block level " + std::to_string(l & mask) + " has no mass under " +
                                              cell("L density", k + 1, h, a_y));
                w = std::log(num_w) - std::log(den_w);
            }
            if (row_y[l] <= 0.0) continue;
            self(self, k + 1, h | (static_cast<std::size_t>(l) << (law.p0 + k * law.p)), log_obs + std::log(row_y[l]),
                 log_w + w);
        }
    };

    for (std::size_t h0 = 0; h0 < law.n_histories(0); ++h0) {
        if (law.f_l0[h0] <= 0.0) continue;
        const double fy = law.baseline_given(h0, a_y);
        require_defined(fy, cell("baseline distribution", 0, h0, a_y));
        if (fy < kPosFloor) throw PositivityViolation("no mass, " + cell("baseline distribution", 0, h0, a_y));
        // f(l0) / f(l0 | a_Y) = P(A = a_Y) / P(A = a_Y | l0)
        recurse(recurse, 0, h0, std::log(fy), std::log(law.f_l0[h0]) - std::log(fy));
    }
    if (den.sum < kPosFloor) throw PositivityViolation("no weighted survival mass");
    return num.sum / den.sum;
}

std::size_t history_index(const LongitudinalRecord& rec, int k, std::size_t p0, std::size_t p) {
    std::size_t h = 0;
    for (std::size_t j = 0; j < p0; ++j)
        if (rec.L0[j] != 0.0) h |= std::size_t{1} << j;
    for (int s = 1; s <= k; ++s)
        for (std::size_t j = 0; j < p; ++j)
            if (rec.covariate(s, j) != 0.0) h |= std::size_t{1} << (p0 + (s - 1) * p + j);
    return h;
}

namespace {

DiscreteLaw empty_law(const TimeGrid& grid, std::size_t p0, std::size_t p, const Partition& part) {
    const std::size_t width = p0 + static_cast<std::size_t>(grid.K) * p;
    if (width > 20 || (std::size_t{2} << width) * (std::size_t{1} << p) > kMaxCells)
        throw TooLarge("discrete law needs 2^" + std::to_string(width) + " histories");
    DiscreteLaw law;
    law.grid = grid;
    law.p0 = p0;
    law.p = p;
    law.partition = part;
    law.f_l0.assign(law.n_histories(0), 0.0);
    law.prop.assign(law.n_histories(0), kNaN);
    for (int k = 0; k <= grid.K; ++k) {
        law.hazard_d.emplace_back(2 * law.n_histories(k), kNaN);
        law.hazard_c.emplace_back(2 * law.n_histories(k), kNaN);
    }
    for (int k = 1; k <= grid.K; ++k) law.dens_l.emplace_back(2 * law.n_histories(k - 1) * law.n_levels(), kNaN);
    law.mean_y.assign(2 * law.n_histories(grid.K), kNaN);
    return law;
}

double bit(std::size_t h, std::size_t pos) { return (h >> pos) & 1u ? 1.0 : 0.0; }

}  // namespace

DiscreteLaw law_from_structural(const StructuralLaw& s, const std::optional<InjectedViolation>& violation) {
    if (!s.all_binary()) throw InvalidLaw("law_from_structural needs binary baseline covariates");
    validate_law(s, violation);
    const std::size_t p0 = s.n_baseline(), p = s.n_covariates();
    const int K = s.grid.K;
    DiscreteLaw law = empty_law(s.grid, p0, p, s.natural_partition());
    const double str = violation ? violation->strength : 0.0;
    auto is = [&](ViolationKind k) { return violation && violation->kind == k; };

    auto l0_of = [&](std::size_t h) {
        Eigen::VectorXd v(p0);
        for (std::size_t j = 0; j < p0; ++j) v[j] = bit(h, j);
        return v;
    };
    auto lk_of = [&](std::size_t h, int k) {
        std::vector<double> v(p, 0.0);
        if (k > 0)
            for (std::size_t j = 0; j < p; ++j) v[j] = bit(h, p0 + (k - 1) * p + j);
        return v;
    };
    auto dot = [](const Eigen::VectorXd& b, const Eigen::VectorXd& x) { return b.size() ? b.dot(x) : 0.0; };
    auto dotv = [](const Eigen::VectorXd& b, const std::vector<double>& x) {
        double r = 0.0;
        for (Eigen::Index j = 0; j < b.size(); ++j) r += b[j] * x[j];
        return r;
    };

    for (std::size_t h0 = 0; h0 < law.n_histories(0); ++h0) {
        double f = 1.0;
        for (std::size_t j = 0; j < p0; ++j) f *= bit(h0, j) ? s.baseline[j].p : 1.0 - s.baseline[j].p;
        law.f_l0[h0] = f;
        law.prop[h0] = s.assignment.depends_on_l0 ? expit(s.assignment.intercept + dot(s.assignment.beta_l0, l0_of(h0)))
                                                  : 0.5;
    }
    for (int k = 0; k <= K; ++k)
        for (std::size_t h = 0; h < law.n_histories(k); ++h) {
            const auto L0 = l0_of(h & ((std::size_t{1} << p0) - 1));
            const auto lk = lk_of(h, k);
            for (int a = 0; a <= 1; ++a) {
                const auto& e = s.event;
                double eta = e.intercept + e.beta_ad * a + dot(e.beta_l0, L0) + dotv(e.beta_l, lk) + e.beta_time * k;
                if (is(ViolationKind::BreakAyIsolation)) eta += str * a;
                law.hazard_d[k][h * 2 + a] = expit(eta);
                double hc = 0.0;
                if (s.censoring && (!s.censor_terminal_only || k == K)) {
                    const auto& c = *s.censoring;
                    hc = expit(c.intercept + (c.beta_ay + c.beta_ad) * a + dot(c.beta_l0, L0) + dotv(c.beta_l, lk) +
                               c.beta_time * k);
                }
                law.hazard_c[k][h * 2 + a] = hc;
            }
        }
    const std::size_t levels = law.n_levels();
    for (int k = 1; k <= K; ++k)
        for (std::size_t h = 0; h < law.n_histories(k - 1); ++h) {
            const auto L0 = l0_of(h & ((std::size_t{1} << p0) - 1));
            const auto lag = lk_of(h, k - 1);
            for (int a = 0; a <= 1; ++a)
                for (unsigned l = 0; l < levels; ++l) {
                    double prob = 1.0;
                    for (std::size_t j = 0; j < p; ++j) {
                        const auto& c = s.covariates[j];
                        double eta = c.intercept + c.beta_treatment * a + dot(c.beta_l0, L0) + dotv(c.beta_lag, lag) +
                                     c.beta_time * (k - 1);
                        for (std::size_t i = 0; i < j && i < static_cast<std::size_t>(c.beta_same.size()); ++i)
                            eta += c.beta_same[i] * ((l >> i) & 1u);
                        if (c.channel == Channel::AD && is(ViolationKind::BreakDismissible3)) eta += str * a;
                        const double pj = expit(eta);
                        prob *= (l >> j) & 1u ? pj : 1.0 - pj;
                    }
                    law.dens_l[k - 1][(h * 2 + a) * levels + l] = prob;
                }
        }
    for (std::size_t h = 0; h < law.n_histories(K); ++h) {
        const auto L0 = l0_of(h & ((std::size_t{1} << p0) - 1));
        const auto lk = lk_of(h, K);
        for (int a = 0; a <= 1; ++a) {
            const auto& o = s.outcome;
            double y = o.intercept + o.beta_ay * a + dot(o.beta_l0, L0) + dotv(o.beta_l, lk);
            if (is(ViolationKind::BreakDismissible1)) y += str * a;
            law.mean_y[h * 2 + a] = y;
        }
    }
    return law;
}

DiscreteLaw empirical_law(const TrialDataset& ds) {
    const std::size_t p0 = ds.n_baseline(), p = ds.n_covariates();
    const int K = ds.grid.K;
    const bool tdbc = ds.grid.ordering == Ordering::TerminalDBeforeC;
    DiscreteLaw law = empty_law(ds.grid, p0, p, ds.partition);

    auto binary = [](double v) { return v == 0.0 || v == 1.0; };
    std::vector<double> n0(law.n_histories(0), 0.0), n0a(law.n_histories(0), 0.0);
    std::vector<std::vector<double>> nd_at(K + 1), nd_ev(K + 1), nc_at(K + 1), nc_ev(K + 1), nl_at(K), nl_cnt(K);
    for (int k = 0; k <= K; ++k) {
        nd_at[k].assign(law.hazard_d[k].size(), 0.0);
        nd_ev[k] = nc_at[k] = nc_ev[k] = nd_at[k];
    }
    for (int k = 1; k <= K; ++k) {
        nl_at[k - 1].assign(2 * law.n_histories(k - 1), 0.0);
        nl_cnt[k - 1].assign(law.dens_l[k - 1].size(), 0.0);
    }
    std::vector<double> ny(law.mean_y.size(), 0.0), sy(law.mean_y.size(), 0.0);
    std::size_t n = 0;

    for (const auto& r : ds.records) {
        if (r.arm.kind != ArmAssignment::Kind::TwoArm) continue;
        for (std::size_t j = 0; j < p0; ++j)
            if (!binary(r.L0[j])) throw InvalidLaw("empirical law needs binary baseline covariates");
        const int a = r.arm.a();
        ++n;
        const std::size_t h0 = history_index(r, 0, p0, p);
        n0[h0] += 1.0;
        n0a[h0] += a;
        for (int k = 0; k <= K; ++k) {
            const bool c_at_risk = (tdbc && k == K) ? r.event(K + 1) == 0 && r.censored(K) == 0
                                                    : r.event(k) == 0 && r.censored(k) == 0;
            const bool d_at_risk = r.event(k) == 0 && r.censored(ds.grid.censor_before_event(k)) == 0;
            if (!c_at_risk && !d_at_risk) continue;
            const std::size_t h = history_index(r, k, p0, p);
            if (c_at_risk) {
                nc_at[k][h * 2 + a] += 1.0;
                nc_ev[k][h * 2 + a] += r.C[k];
            }
            if (d_at_risk) {
                nd_at[k][h * 2 + a] += 1.0;
                nd_ev[k][h * 2 + a] += r.D[k];
            }
        }
        for (int k = 1; k <= K; ++k) {
            if (r.event(k) != 0 || r.censored(k) != 0) break;
            const std::size_t h = history_index(r, k - 1, p0, p);
            unsigned l = 0;
            for (std::size_t j = 0; j < p; ++j) {
                const double v = *r.L[k - 1][j];
                if (!binary(v)) throw InvalidLaw("empirical law needs binary time-varying covariates");
                if (v != 0.0) l |= 1u << j;
            }
            nl_at[k - 1][h * 2 + a] += 1.0;
            nl_cnt[k - 1][(h * 2 + a) * law.n_levels() + l] += 1.0;
        }
        if (r.event(K + 1) == 0 && r.censored(K + 1) == 0) {
            const std::size_t h = history_index(r, K, p0, p);
            ny[h * 2 + a] += 1.0;
            sy[h * 2 + a] += *r.Y;
        }
    }
    if (n == 0) throw EmptySubset("no two-arm records");

    for (std::size_t h = 0; h < n0.size(); ++h) {
        law.f_l0[h] = n0[h] / static_cast<double>(n);
        if (n0[h] > 0) law.prop[h] = n0a[h] / n0[h];
    }
    for (int k = 0; k <= K; ++k)
        for (std::size_t c = 0; c < nd_at[k].size(); ++c) {
            if (nd_at[k][c] > 0) law.hazard_d[k][c] = nd_ev[k][c] / nd_at[k][c];
            if (nc_at[k][c] > 0) law.hazard_c[k][c] = nc_ev[k][c] / nc_at[k][c];
        }
    const std::size_t m = law.n_levels();
    for (int k = 1; k <= K; ++k)
        for (std::size_t r = 0; r < nl_at[k - 1].size(); ++r)
            if (nl_at[k - 1][r] > 0)
                for (std::size_t l = 0; l < m; ++l)
                    law.dens_l[k - 1][r * m + l] = nl_cnt[k - 1][r * m + l] / nl_at[k - 1][r];
    for (std::size_t c = 0; c < ny.size(); ++c)
        if (ny[c] > 0) law.mean_y[c] = sy[c] / ny[c];
    return law;
}

}  // namespace sepfx
