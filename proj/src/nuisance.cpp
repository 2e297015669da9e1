#include "sepfx/nuisance.hpp"

#include "sepfx/error.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <set>
#include <sstream>

namespace sepfx {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

Variable resolve(const std::string& tok, const std::vector<std::string>& baseline_names,
                 const std::vector<std::string>& covariate_names, const std::string& formula) {
    Variable v;
    v.name = tok;
    if (tok == "A") v.kind = Variable::Kind::A;
    else if (tok == "AY") v.kind = Variable::Kind::AY;
    else if (tok == "AD") v.kind = Variable::Kind::AD;
    else if (tok == "T") v.kind = Variable::Kind::Time;
    else if (tok.rfind("L0_", 0) == 0) {
        auto it = std::find(baseline_names.begin(), baseline_names.end(), tok.substr(3));
        if (it == baseline_names.end())
            throw ConfigError("unknown baseline covariate '" + tok + "' in formula '" + formula + "'");
        v.kind = Variable::Kind::Baseline;
        v.index = static_cast<std::size_t>(it - baseline_names.begin());
    } else {
        auto it = std::find(covariate_names.begin(), covariate_names.end(), tok);
        if (it == covariate_names.end())
            throw ConfigError("unknown variable '" + tok + "' in formula '" + formula + "'");
        v.kind = Variable::Kind::Covariate;
        v.index = static_cast<std::size_t>(it - covariate_names.begin());
    }
    return v;
}

bool same_term(const Term& a, const Term& b) {
    if (a.factors.size() != b.factors.size()) return false;
    std::multiset<std::string> x, y;
    for (const auto& f : a.factors) x.insert(f.name);
    for (const auto& f : b.factors) y.insert(f.name);
    return x == y;
}

void add_term(std::vector<Term>& terms, Term t) {
    for (const auto& u : terms)
        if (same_term(u, t)) return;
    terms.push_back(std::move(t));
}

struct Ctx {
    const LongitudinalRecord* rec;
    int k;
    int a_y, a_d;
};

double value(const Variable& v, const Ctx& c) {
    switch (v.kind) {
        case Variable::Kind::A: return c.a_y;
        case Variable::Kind::AY: return c.a_y;
        case Variable::Kind::AD: return c.a_d;
        case Variable::Kind::Time: return c.k;
        case Variable::Kind::Baseline: return c.rec->L0[v.index];
        case Variable::Kind::Covariate: return c.rec->covariate(c.k, v.index);
    }
    return 0.0;
}

double term_value(const Term& t, const Ctx& c) {
    double x = 1.0;
    for (const auto& f : t.factors) x *= value(f, c);
    return x;
}

std::vector<double> stratum_key(const ModelSpec& spec, const Ctx& c) {
    std::vector<double> key;
    for (const auto& v : spec.strata) key.push_back(value(v, c));
    return key;
}

std::string key_label(const ModelSpec& spec, const std::vector<double>& key) {
    std::ostringstream os;
    for (std::size_t i = 0; i < key.size(); ++i) os << (i ? "," : "") << spec.strata[i].name << "=" << key[i];
    return os.str();
}

struct RiskRow {
    Ctx ctx;
    double y;
};

// Rows on which the response is defined, in record-then-time order.
std::vector<RiskRow> risk_set(const TrialDataset& ds, const ModelSpec& spec) {
    const int K = ds.grid.K;
    const bool tdbc = ds.grid.ordering == Ordering::TerminalDBeforeC;
    std::vector<RiskRow> rows;
    for (const auto& r : ds.records) {
        if (r.arm.kind != ArmAssignment::Kind::TwoArm) continue;
        auto push = [&](int k, double y) { rows.push_back({{&r, k, r.arm.a_y, r.arm.a_d}, y}); };
        switch (spec.response) {
            case Response::Event:
                for (int k = spec.terminal_only ? K : 0; k <= K; ++k)
                    if (r.event(k) == 0 && r.censored(ds.grid.censor_before_event(k)) == 0) push(k, r.D[k]);
                break;
            case Response::Censoring:
                for (int k = spec.terminal_only ? K : 0; k <= K; ++k) {
                    const bool at_risk = (tdbc && k == K) ? r.event(K + 1) == 0 && r.censored(K) == 0
                                                          : r.event(k) == 0 && r.censored(k) == 0;
                    if (at_risk) push(k, r.C[k]);
                }
                break;
            case Response::Covariate:
                for (int k = 0; k < K; ++k)
                    if (r.event(k + 1) == 0 && r.censored(k + 1) == 0) push(k, *r.L[k][spec.covariate]);
                break;
            case Response::Outcome:
                if (r.event(K + 1) == 0 && r.censored(K + 1) == 0) push(K, *r.Y);
                break;
            case Response::Propensity:
                push(0, r.arm.a());
                break;
        }
    }
    return rows;
}

template <typename E>
bool rethrow_as(const std::exception& e, const std::string& context) {
    if (!dynamic_cast<const E*>(&e)) return false;
    std::string msg = e.what();
    const auto pos = msg.find(": ");
    throw E(context + (pos == std::string::npos ? msg : msg.substr(pos + 2)));
}

[[noreturn]] void relabel(const std::exception& e, const std::string& context) {
    rethrow_as<RankDeficient>(e, context) || rethrow_as<Separation>(e, context) ||
        rethrow_as<NoRiskSet>(e, context) || rethrow_as<MissingPredictor>(e, context);
    throw;
}

template <typename F>
auto with_context(const std::string& context, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::exception& e) {
        relabel(e, context);
    }
}

}  // namespace

std::string Term::label() const {
    if (factors.empty()) return "1";
    std::string s;
    for (std::size_t i = 0; i < factors.size(); ++i) s += (i ? ":" : "") + factors[i].name;
    return s;
}

bool ModelSpec::stratified_by_arm() const {
    return std::any_of(strata.begin(), strata.end(), [](const Variable& v) {
        return v.kind == Variable::Kind::A || v.kind == Variable::Kind::AY || v.kind == Variable::Kind::AD;
    });
}

ModelSpec parse_formula(const std::string& formula, const std::vector<std::string>& baseline_names,
                        const std::vector<std::string>& covariate_names, int K) {
    ModelSpec spec;
    spec.formula = trim(formula);
    std::string text = spec.formula;

    const auto at = text.find('@');
    if (at != std::string::npos) {
        const std::string flag = trim(text.substr(at + 1));
        if (flag != "terminal") throw ConfigError("unknown formula flag '@" + flag + "' in '" + formula + "'");
        spec.terminal_only = true;
        text = text.substr(0, at);
    }
    const auto tilde = text.find('~');
    if (tilde == std::string::npos) throw ConfigError("formula '" + formula + "' has no '~'");
    const std::string lhs = trim(text.substr(0, tilde));
    std::string rhs = text.substr(tilde + 1);
    std::string strata;
    if (const auto bar = rhs.find('|'); bar != std::string::npos) {
        strata = rhs.substr(bar + 1);
        rhs = rhs.substr(0, bar);
    }

    if (lhs == "D") spec.response = Response::Event;
    else if (lhs == "C") spec.response = Response::Censoring;
    else if (lhs == "Y") spec.response = Response::Outcome;
    else if (lhs == "A") spec.response = Response::Propensity;
    else {
        auto it = std::find(covariate_names.begin(), covariate_names.end(), lhs);
        if (it == covariate_names.end()) throw ConfigError("unknown response '" + lhs + "' in '" + formula + "'");
        spec.response = Response::Covariate;
        spec.covariate = static_cast<std::size_t>(it - covariate_names.begin());
    }
    if (spec.terminal_only && spec.response != Response::Censoring && spec.response != Response::Event)
        throw ConfigError("@terminal applies only to D and C models: '" + formula + "'");

    auto check_temporal = [&](const Variable& v) {
        if (spec.response == Response::Propensity && v.kind != Variable::Kind::Baseline)
            throw ConfigError("propensity model may use baseline covariates only: '" + formula + "'");
    };

    bool intercept = true;
    std::vector<Term> terms;
    for (const auto& raw : split(rhs, '+')) {
        if (raw.empty()) throw ConfigError("empty term in formula '" + formula + "'");
        if (raw == "1") continue;
        if (raw == "0" || raw == "-1") {
            intercept = false;
            continue;
        }
        if (raw == "L0_*") {
            for (const auto& b : baseline_names) {
                Term t;
                t.factors.push_back(resolve("L0_" + b, baseline_names, covariate_names, formula));
                check_temporal(t.factors.back());
                add_term(terms, t);
            }
            continue;
        }
        const bool star = raw.find('*') != std::string::npos;
        const auto parts = split(raw, star ? '*' : ':');
        std::vector<Variable> vars;
        for (const auto& tok : parts) {
            if (tok.empty()) throw ConfigError("malformed term '" + raw + "' in '" + formula + "'");
            vars.push_back(resolve(tok, baseline_names, covariate_names, formula));
            check_temporal(vars.back());
        }
        if (!star) {
            add_term(terms, Term{vars});
            continue;
        }
        // a*b*c expands to every non-empty product, lower orders first
        const std::size_t m = vars.size();
        for (std::size_t order = 1; order <= m; ++order)
            for (unsigned mask = 1; mask < (1u << m); ++mask) {
                if (static_cast<std::size_t>(__builtin_popcount(mask)) != order) continue;
                Term t;
                for (std::size_t i = 0; i < m; ++i)
                    if (mask & (1u << i)) t.factors.push_back(vars[i]);
                add_term(terms, t);
            }
    }
    if (!trim(strata).empty())
        for (const auto& tok : split(strata, ',')) {
            if (tok.empty()) throw ConfigError("empty stratum in '" + formula + "'");
            spec.strata.push_back(resolve(tok, baseline_names, covariate_names, formula));
            check_temporal(spec.strata.back());
        }

    const bool pooled = spec.response == Response::Event || spec.response == Response::Censoring ||
                        spec.response == Response::Covariate;
    auto mentions_time = [](const std::vector<Variable>& vs) {
        return std::any_of(vs.begin(), vs.end(), [](const Variable& v) { return v.kind == Variable::Kind::Time; });
    };
    bool has_time = mentions_time(spec.strata);
    for (const auto& t : terms) has_time |= mentions_time(t.factors);
    if (pooled && K > 1 && !spec.terminal_only && !has_time) {
        Term t;
        t.factors.push_back(resolve("T", baseline_names, covariate_names, formula));
        terms.push_back(t);
    }
    if (intercept) spec.terms.push_back(Term{});
    for (auto& t : terms) spec.terms.push_back(std::move(t));
    if (spec.terms.empty()) throw ConfigError("formula '" + formula + "' has no terms");
    return spec;
}

bool NuisanceFit::converged() const {
    return std::all_of(strata.begin(), strata.end(), [](const Stratum& s) { return s.converged; });
}

int NuisanceFit::iterations() const {
    int m = 0;
    for (const auto& s : strata) m = std::max(m, s.iterations);
    return m;
}

double NuisanceFit::loglik() const {
    double ll = 0.0;
    for (const auto& s : strata) ll += s.loglik;
    return ll;
}

std::size_t NuisanceFit::n_used() const {
    std::size_t n = 0;
    for (const auto& s : strata) n += s.n_used;
    return n;
}

const Eigen::VectorXd& NuisanceFit::coefficients() const {
    if (strata.size() != 1) throw MissingNuisance("model '" + spec.formula + "' is stratified");
    return strata.front().coef;
}

const NuisanceFit::Stratum& NuisanceFit::stratum_for(const std::vector<double>& key) const {
    for (const auto& s : strata)
        if (s.key == key) return s;
    throw MissingNuisance("model '" + spec.formula + "' has no fit for stratum " + key_label(spec, key));
}

NuisanceFit fit_glm(const TrialDataset& ds, const ModelSpec& spec, const GlmControl& control) {
    const std::string context = "model '" + spec.formula + "': ";
    return with_context(context, [&] {
        const auto rows = risk_set(ds, spec);
        if (rows.empty()) throw NoRiskSet("empty risk set");

        std::map<std::vector<double>, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < rows.size(); ++i) groups[stratum_key(spec, rows[i].ctx)].push_back(i);

        NuisanceFit fit;
        fit.spec = spec;
        const std::size_t p = spec.terms.size();
        for (const auto& [key, idx] : groups) {
            Eigen::MatrixXd X(idx.size(), p);
            Eigen::VectorXd y(idx.size());
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const RiskRow& row = rows[idx[r]];
                for (std::size_t j = 0; j < p; ++j) X(r, j) = term_value(spec.terms[j], row.ctx);
                y[r] = row.y;
            }
            NuisanceFit::Stratum s;
            s.key = key;
            s.dropped.assign(p, false);
            std::vector<Eigen::Index> keep;
            for (std::size_t j = 0; j < p; ++j) {
                if (X.col(j).isZero(0.0)) s.dropped[j] = true;
                else keep.push_back(static_cast<Eigen::Index>(j));
            }
            if (keep.empty()) throw RankDeficient("every column is zero in stratum " + key_label(spec, key));
            Eigen::MatrixXd Xk(X.rows(), keep.size());
            for (std::size_t j = 0; j < keep.size(); ++j) Xk.col(j) = X.col(keep[j]);

            GlmResult<double> res;
            try {
                res = sepfx::fit_glm<double>(Xk, y, spec.link(), control);
            } catch (const std::exception& e) {
                relabel(e, spec.strata.empty() ? "" : "stratum " + key_label(spec, key) + ": ");
            }
            s.coef = Eigen::VectorXd::Zero(p);
            for (std::size_t j = 0; j < keep.size(); ++j) s.coef[keep[j]] = res.coef[j];
            s.converged = res.converged;
            s.iterations = res.iterations;
            s.loglik = res.loglik;
            s.sigma = res.sigma;
            s.n_used = idx.size();
            fit.strata.push_back(std::move(s));
        }
        return fit;
    });
}

namespace {

double apply_link(const ModelSpec& spec, double eta) {
    return spec.link() == Link::Logit ? expit(eta) : eta;
}

}  // namespace

double predict(const NuisanceFit& fit, const NamedRow& row) {
    auto get = [&](const Variable& v) {
        auto it = row.find(v.name);
        if (it == row.end())
            throw MissingPredictor("model '" + fit.spec.formula + "' needs predictor '" + v.name + "'");
        return it->second;
    };
    std::vector<double> key;
    for (const auto& v : fit.spec.strata) key.push_back(get(v));
    const auto& s = fit.stratum_for(key);
    double eta = 0.0;
    for (std::size_t j = 0; j < fit.spec.terms.size(); ++j) {
        double x = 1.0;
        for (const auto& f : fit.spec.terms[j].factors) x *= get(f);
        eta += s.coef[j] * x;
    }
    return apply_link(fit.spec, eta);
}

double predict_at(const NuisanceFit& fit, const LongitudinalRecord& rec, int k, int a) {
    const Ctx c{&rec, k, a, a};
    const auto& s = fit.stratum_for(stratum_key(fit.spec, c));
    double eta = 0.0;
    for (std::size_t j = 0; j < fit.spec.terms.size(); ++j)
        if (s.coef[j] != 0.0) eta += s.coef[j] * term_value(fit.spec.terms[j], c);
    return apply_link(fit.spec, eta);
}

NuisanceSuiteFit fit_nuisance_suite(const TrialDataset& ds, const NuisanceSpecSuite& specs,
                                    const GlmControl& control) {
    NuisanceSuiteFit out;
    auto label = [&](const std::string& channel, const ModelSpec& spec) {
        return "channel " + channel + " ('" + spec.formula + "'): ";
    };
    auto fit_one = [&](const std::string& channel, const ModelSpec& spec) {
        try {
            return fit_glm(ds, spec, control);
        } catch (const std::exception& e) {
            relabel(e, label(channel, spec));
        }
    };

    if (specs.event) out.event = fit_one("D", *specs.event);
    else out.coverage_gaps.push_back("D");

    // Without censoring in the data the C channel is vacuous and W_C = 1.
    if (ds.has_censoring()) {
        if (specs.censoring) out.censoring = fit_one("C", *specs.censoring);
        else out.coverage_gaps.push_back("C");
    }

    out.covariates.resize(ds.n_covariates());
    for (std::size_t j = 0; j < ds.n_covariates(); ++j) {
        if (j < specs.covariates.size() && specs.covariates[j])
            out.covariates[j] = fit_one("L:" + ds.covariate_names[j], *specs.covariates[j]);
        else if (ds.grid.K > 0)
            out.coverage_gaps.push_back("L:" + ds.covariate_names[j]);
    }

    if (specs.outcome) out.outcome = fit_one("Y", *specs.outcome);
    else out.coverage_gaps.push_back("Y");

    if (specs.propensity) out.propensity = fit_one("A", *specs.propensity);
    return out;
}

NuisanceSpecSuite default_specs(const TrialDataset& ds) {
    std::string base;
    for (const auto& b : ds.baseline_names) base += " + L0_" + b;
    std::string tv;
    if (ds.grid.K > 0)
        for (const auto& c : ds.covariate_names) tv += " + " + c;

    bool terminal = true;
    for (const auto& r : ds.records)
        for (int k = 0; k < ds.grid.K; ++k) terminal &= r.C[k] == 0;

    std::optional<std::string> cens;
    if (ds.has_censoring()) cens = "C ~ 1 + A" + base + tv + (terminal ? " @terminal" : "");
    std::vector<std::string> covs;
    for (const auto& c : ds.covariate_names) covs.push_back(c + " ~ 1 + A" + base + " + " + c);
    return parse_specs(ds, "D ~ 1" + base + tv + " | A", cens, covs, "Y ~ 1 + A" + base + tv, std::nullopt);
}

NuisanceSpecSuite parse_specs(const TrialDataset& ds, const std::optional<std::string>& event,
                              const std::optional<std::string>& censoring,
                              const std::vector<std::string>& covariates, const std::optional<std::string>& outcome,
                              const std::optional<std::string>& propensity) {
    auto parse = [&](const std::string& f) {
        return parse_formula(f, ds.baseline_names, ds.covariate_names, ds.grid.K);
    };
    NuisanceSpecSuite s;
    if (event) s.event = parse(*event);
    if (censoring) s.censoring = parse(*censoring);
    s.covariates.resize(ds.n_covariates());
    for (const auto& f : covariates) {
        ModelSpec m = parse(f);
        if (m.response != Response::Covariate) throw ConfigError("covariate model '" + f + "' has a non-covariate response");
        if (s.covariates[m.covariate]) throw ConfigError("two models for covariate " + ds.covariate_names[m.covariate]);
        s.covariates[m.covariate] = std::move(m);
    }
    if (outcome) s.outcome = parse(*outcome);
    if (propensity) s.propensity = parse(*propensity);
    auto expect = [](const std::optional<ModelSpec>& m, Response r, const char* what) {
        if (m && m->response != r) throw ConfigError(std::string(what) + " model has the wrong response: '" + m->formula + "'");
    };
    expect(s.event, Response::Event, "event");
    expect(s.censoring, Response::Censoring, "censoring");
    expect(s.outcome, Response::Outcome, "outcome");
    expect(s.propensity, Response::Propensity, "propensity");
    return s;
}

}  // namespace sepfx
