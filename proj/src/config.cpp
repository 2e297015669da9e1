#include "sepfx/config.hpp"

#include "sepfx/error.hpp"

#include <toml.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace sepfx {

namespace {

std::string line_of(const toml::source_region& src) {
    return src.begin.line ? " (line " + std::to_string(src.begin.line) + ")" : "";
}

[[noreturn]] void bad(const std::string& section, const std::string& key, const std::string& what,
                      const toml::node* node = nullptr) {
    throw ConfigError("[" + section + "] " + key + ": " + what + (node ? line_of(node->source()) : ""));
}

void expect_keys(const toml::table& t, const std::string& section, const std::set<std::string>& allowed) {
    for (auto&& [k, v] : t)
        if (!allowed.count(std::string(k.str())))
            throw ConfigError("unknown key '" + std::string(k.str()) + "' in [" + section + "]" + line_of(k.source()));
}

const toml::table* sub_table(const toml::table& t, const std::string& key, const std::string& section) {
    const toml::node* n = t.get(key);
    if (!n) return nullptr;
    if (!n->is_table()) bad(section, key, "expected a table", n);
    return n->as_table();
}

std::optional<double> get_double(const toml::table& t, const std::string& key, const std::string& section) {
    const toml::node* n = t.get(key);
    if (!n) return std::nullopt;
    if (auto v = n->value<double>(); v && (n->is_floating_point() || n->is_integer())) return *v;
    bad(section, key, "expected a number", n);
}

std::optional<std::int64_t> get_int(const toml::table& t, const std::string& key, const std::string& section) {
    const toml::node* n = t.get(key);
    if (!n) return std::nullopt;
    if (!n->is_integer()) bad(section, key, "expected an integer", n);
    return *n->value<std::int64_t>();
}

std::optional<bool> get_bool(const toml::table& t, const std::string& key, const std::string& section) {
    const toml::node* n = t.get(key);
    if (!n) return std::nullopt;
    if (!n->is_boolean()) bad(section, key, "expected true or false", n);
    return *n->value<bool>();
}

std::optional<std::string> get_string(const toml::table& t, const std::string& key, const std::string& section) {
    const toml::node* n = t.get(key);
    if (!n) return std::nullopt;
    if (!n->is_string()) bad(section, key, "expected a string", n);
    return *n->value<std::string>();
}

std::vector<std::string> get_strings(const toml::table& t, const std::string& key, const std::string& section) {
    const toml::node* n = t.get(key);
    if (!n) return {};
    if (n->is_string()) return {*n->value<std::string>()};
    if (!n->is_array()) bad(section, key, "expected a string or array of strings", n);
    std::vector<std::string> out;
    for (const auto& e : *n->as_array()) {
        if (!e.is_string()) bad(section, key, "expected strings", &e);
        out.push_back(*e.value<std::string>());
    }
    return out;
}

Eigen::VectorXd get_vector(const toml::table& t, const std::string& key, const std::string& section) {
    const toml::node* n = t.get(key);
    if (!n) return {};
    if (!n->is_array()) bad(section, key, "expected an array of numbers", n);
    const auto& arr = *n->as_array();
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        auto x = arr[i].value<double>();
        if (!x || !(arr[i].is_floating_point() || arr[i].is_integer())) bad(section, key, "expected numbers", &arr[i]);
        v[static_cast<Eigen::Index>(i)] = *x;
    }
    return v;
}

HazardEquation parse_hazard(const toml::table& t, const std::string& section) {
    expect_keys(t, section, {"intercept", "beta_ay", "beta_ad", "beta_l0", "beta_l", "beta_time"});
    HazardEquation h;
    h.intercept = get_double(t, "intercept", section).value_or(0.0);
    h.beta_ay = get_double(t, "beta_ay", section).value_or(0.0);
    h.beta_ad = get_double(t, "beta_ad", section).value_or(0.0);
    h.beta_l0 = get_vector(t, "beta_l0", section);
    h.beta_l = get_vector(t, "beta_l", section);
    h.beta_time = get_double(t, "beta_time", section).value_or(0.0);
    return h;
}

template <typename F>
void each_table(const toml::table& t, const std::string& key, const std::string& section, F&& f) {
    const toml::node* n = t.get(key);
    if (!n) return;
    if (!n->is_array_of_tables()) bad(section, key, "expected [[" + section + "." + key + "]] tables", n);
    for (const auto& e : *n->as_array()) f(*e.as_table());
}

StructuralLaw parse_law(const toml::table& t) {
    expect_keys(t, "law", {"preset", "monotone", "censor_terminal_only", "baseline", "covariate", "event",
                           "censoring", "outcome", "assignment"});
    StructuralLaw law;
    law.monotone = get_bool(t, "monotone", "law").value_or(false);
    law.censor_terminal_only = get_bool(t, "censor_terminal_only", "law").value_or(false);

    each_table(t, "baseline", "law", [&](const toml::table& b) {
        const std::string sec = "law.baseline";
        expect_keys(b, sec, {"name", "kind", "p", "mean", "sd"});
        BaselineCovariate c;
        c.name = get_string(b, "name", sec).value_or("");
        if (c.name.empty()) bad(sec, "name", "required");
        const std::string kind = get_string(b, "kind", sec).value_or("bernoulli");
        if (kind == "bernoulli") c.kind = BaselineCovariate::Kind::Bernoulli;
        else if (kind == "gaussian") c.kind = BaselineCovariate::Kind::Gaussian;
        else bad(sec, "kind", "expected \"bernoulli\" or \"gaussian\"");
        c.p = get_double(b, "p", sec).value_or(0.5);
        c.mean = get_double(b, "mean", sec).value_or(0.0);
        c.sd = get_double(b, "sd", sec).value_or(1.0);
        law.baseline.push_back(c);
    });
    each_table(t, "covariate", "law", [&](const toml::table& c) {
        const std::string sec = "law.covariate";
        expect_keys(c, sec, {"name", "channel", "intercept", "beta_treatment", "beta_l0", "beta_lag", "beta_same",
                             "beta_time"});
        CovariateEquation e;
        e.name = get_string(c, "name", sec).value_or("");
        if (e.name.empty()) bad(sec, "name", "required");
        const std::string ch = get_string(c, "channel", sec).value_or("AD");
        if (ch == "AD") e.channel = Channel::AD;
        else if (ch == "AY") e.channel = Channel::AY;
        else bad(sec, "channel", "expected \"AY\" or \"AD\"");
        e.intercept = get_double(c, "intercept", sec).value_or(0.0);
        e.beta_treatment = get_double(c, "beta_treatment", sec).value_or(0.0);
        e.beta_l0 = get_vector(c, "beta_l0", sec);
        e.beta_lag = get_vector(c, "beta_lag", sec);
        e.beta_same = get_vector(c, "beta_same", sec);
        e.beta_time = get_double(c, "beta_time", sec).value_or(0.0);
        law.covariates.push_back(e);
    });
    if (auto* e = sub_table(t, "event", "law")) law.event = parse_hazard(*e, "law.event");
    if (auto* c = sub_table(t, "censoring", "law")) law.censoring = parse_hazard(*c, "law.censoring");
    if (auto* o = sub_table(t, "outcome", "law")) {
        const std::string sec = "law.outcome";
        expect_keys(*o, sec, {"intercept", "beta_ay", "beta_l0", "beta_l", "sigma"});
        law.outcome.intercept = get_double(*o, "intercept", sec).value_or(0.0);
        law.outcome.beta_ay = get_double(*o, "beta_ay", sec).value_or(0.0);
        law.outcome.beta_l0 = get_vector(*o, "beta_l0", sec);
        law.outcome.beta_l = get_vector(*o, "beta_l", sec);
        law.outcome.sigma = get_double(*o, "sigma", sec).value_or(1.0);
    }
    if (auto* a = sub_table(t, "assignment", "law")) {
        const std::string sec = "law.assignment";
        expect_keys(*a, sec, {"intercept", "beta_l0"});
        law.assignment.depends_on_l0 = true;
        law.assignment.intercept = get_double(*a, "intercept", sec).value_or(0.0);
        law.assignment.beta_l0 = get_vector(*a, "beta_l0", sec);
    }
    return law;
}

Ordering parse_ordering(const std::string& s) {
    if (s == "standard") return Ordering::StandardCDL;
    if (s == "terminal_d_before_c") return Ordering::TerminalDBeforeC;
    throw ConfigError("[grid] ordering: expected \"standard\" or \"terminal_d_before_c\", got \"" + s + "\"");
}

Design parse_design(const std::string& s) {
    if (s == "two_arm") return Design::TwoArm;
    if (s == "four_arm") return Design::FourArm;
    if (s == "six_arm") return Design::SixArm;
    throw ConfigError("[simulate] design: expected two_arm, four_arm or six_arm, got \"" + s + "\"");
}

ViolationKind parse_violation(const std::string& s) {
    if (s == "break_ay_isolation") return ViolationKind::BreakAyIsolation;
    if (s == "break_dismissible_1") return ViolationKind::BreakDismissible1;
    if (s == "break_dismissible_3") return ViolationKind::BreakDismissible3;
    if (s == "break_modified_treatment") return ViolationKind::BreakModifiedTreatment;
    throw ConfigError("[simulate] violation: unknown kind \"" + s + "\"");
}

Target parse_pair(const std::string& s) {
    int a_y = -1, a_d = -1;
    char tail = 0;
    if (std::sscanf(s.c_str(), " %d , %d %c", &a_y, &a_d, &tail) != 2 || a_y < 0 || a_y > 1 || a_d < 0 || a_d > 1)
        throw ConfigError("[estimate] target '" + s + "': expected \"a_y,a_d\" with values 0 or 1");
    return {a_y, a_d};
}

}  // namespace

EstimandTarget parse_target(const std::string& s) {
    const auto dash = s.find('-');
    if (dash == std::string::npos) return EstimandTarget::single(parse_pair(s).a_y, parse_pair(s).a_d);
    return EstimandTarget::contrast(parse_pair(s.substr(0, dash)), parse_pair(s.substr(dash + 1)));
}

StructuralLaw law_preset(const std::string& name) {
    if (name == "default_k1") return presets::default_k1();
    if (name == "null") return presets::null_law(1);
    if (name == "swog") return presets::swog_like();
    throw ConfigError("[law] preset: unknown preset \"" + name + "\" (expected default_k1, null or swog)");
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    toml::table root;
    try {
        root = toml::parse(text, origin);
    } catch (const toml::parse_error& e) {
        throw ConfigError(origin + ": " + std::string(e.description()) + line_of(e.source()));
    }
    RunConfig cfg;
    cfg.source = text;
    expect_keys(root, "top level", {"seed", "grid", "data", "law", "simulate", "models", "partition", "estimate",
                                    "bootstrap", "diagnose", "oracle", "output"});
    if (auto s = get_int(root, "seed", "top level")) {
        if (*s < 0) bad("top level", "seed", "must be nonnegative");
        cfg.seed = static_cast<std::uint64_t>(*s);
    }
    if (auto* g = sub_table(root, "grid", "top level")) {
        expect_keys(*g, "grid", {"K", "ordering"});
        if (auto k = get_int(*g, "K", "grid")) {
            if (*k < 0) bad("grid", "K", "must be nonnegative");
            cfg.K = static_cast<int>(*k);
        }
        if (auto o = get_string(*g, "ordering", "grid")) cfg.ordering = parse_ordering(*o);
    }
    if (auto* d = sub_table(root, "data", "top level")) {
        expect_keys(*d, "data", {"path"});
        cfg.data_path = get_string(*d, "path", "data");
    }
    if (auto* l = sub_table(root, "law", "top level")) {
        if (auto p = get_string(*l, "preset", "law")) {
            if (l->size() != 1) throw ConfigError("[law] preset cannot be combined with other law keys");
            cfg.law_preset = *p;
            cfg.law = law_preset(*p);
        } else {
            cfg.law = parse_law(*l);
            cfg.law->grid.K = cfg.K.value_or(1);
            cfg.law->grid.ordering = cfg.ordering;
        }
        if (cfg.law_preset) {
            if (cfg.K) cfg.law->grid.K = *cfg.K;
            if (root["grid"]["ordering"]) cfg.law->grid.ordering = cfg.ordering;
        }
        if (!cfg.K) cfg.K = cfg.law->grid.K;
        cfg.ordering = cfg.law->grid.ordering;
    }
    if (auto* s = sub_table(root, "simulate", "top level")) {
        expect_keys(*s, "simulate", {"n", "design", "violation", "violation_strength"});
        if (auto n = get_int(*s, "n", "simulate")) {
            if (*n < 1) bad("simulate", "n", "must be at least 1");
            cfg.n = static_cast<std::size_t>(*n);
        }
        if (auto d = get_string(*s, "design", "simulate")) cfg.design = parse_design(*d);
        if (auto v = get_string(*s, "violation", "simulate")) {
            cfg.violation = InjectedViolation{parse_violation(*v), 2.0};
            if (auto st = get_double(*s, "violation_strength", "simulate")) cfg.violation->strength = *st;
        } else if (s->get("violation_strength")) {
            bad("simulate", "violation_strength", "given without a violation");
        }
    }
    if (auto* m = sub_table(root, "models", "top level")) {
        expect_keys(*m, "models", {"event", "censoring", "covariates", "outcome", "propensity"});
        cfg.event_model = get_string(*m, "event", "models");
        cfg.censoring_model = get_string(*m, "censoring", "models");
        cfg.covariate_models = get_strings(*m, "covariates", "models");
        cfg.outcome_model = get_string(*m, "outcome", "models");
        cfg.propensity_model = get_string(*m, "propensity", "models");
    }
    if (auto* p = sub_table(root, "partition", "top level")) {
        expect_keys(*p, "partition", {"ay_block"});
        cfg.ay_block = get_strings(*p, "ay_block", "partition");
    }
    if (auto* e = sub_table(root, "estimate", "top level")) {
        expect_keys(*e, "estimate", {"targets", "estimators", "complete_case", "weight_cap_quantile"});
        for (const auto& s : get_strings(*e, "targets", "estimate")) cfg.targets.push_back(parse_target(s));
        for (const auto& s : get_strings(*e, "estimators", "estimate")) cfg.estimators.push_back(estimator_from_string(s));
        cfg.options.complete_case = get_bool(*e, "complete_case", "estimate").value_or(false);
        if (auto q = get_double(*e, "weight_cap_quantile", "estimate")) {
            if (!(*q > 0.0 && *q <= 1.0)) bad("estimate", "weight_cap_quantile", "must lie in (0,1]");
            cfg.options.weight_cap_quantile = *q;
        }
    }
    if (auto* b = sub_table(root, "bootstrap", "top level")) {
        expect_keys(*b, "bootstrap", {"n_boot", "ci_level", "seed", "max_failure_fraction"});
        if (auto n = get_int(*b, "n_boot", "bootstrap")) {
            if (*n < 2) bad("bootstrap", "n_boot", "must be at least 2");
            cfg.n_boot = static_cast<int>(*n);
        }
        if (auto c = get_double(*b, "ci_level", "bootstrap")) {
            if (!(*c > 0.0 && *c < 1.0)) bad("bootstrap", "ci_level", "must lie in (0,1)");
            cfg.ci_level = *c;
        }
        if (auto s = get_int(*b, "seed", "bootstrap")) cfg.bootstrap_seed = static_cast<std::uint64_t>(*s);
        if (auto f = get_double(*b, "max_failure_fraction", "bootstrap")) cfg.max_failure_fraction = *f;
    }
    if (auto* d = sub_table(root, "diagnose", "top level")) {
        expect_keys(*d, "diagnose", {"alpha", "checks"});
        if (auto a = get_double(*d, "alpha", "diagnose")) {
            if (!(*a > 0.0 && *a < 1.0)) bad("diagnose", "alpha", "must lie in (0,1)");
            cfg.alpha = *a;
        }
        cfg.checks = get_strings(*d, "checks", "diagnose");
        for (const auto& c : cfg.checks)
            if (c != "positivity" && c != "ay_isolation" && c != "modified_treatment")
                bad("diagnose", "checks", "unknown check \"" + c + "\"");
    }
    if (auto* o = sub_table(root, "oracle", "top level")) {
        expect_keys(*o, "oracle", {"n_mc"});
        if (auto n = get_int(*o, "n_mc", "oracle")) {
            if (*n < 1000) bad("oracle", "n_mc", "must be at least 1000");
            cfg.n_mc = static_cast<std::size_t>(*n);
        }
    }
    if (auto* o = sub_table(root, "output", "top level")) {
        expect_keys(*o, "output", {"dir", "replicates"});
        if (auto d = get_string(*o, "dir", "output")) cfg.out_dir = *d;
        cfg.dump_replicates = get_bool(*o, "replicates", "output").value_or(false);
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

namespace {

toml::array to_array(const Eigen::VectorXd& v) {
    toml::array a;
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

toml::table hazard_table(const HazardEquation& h, bool with_ay) {
    toml::table t{{"intercept", h.intercept}, {"beta_ad", h.beta_ad}, {"beta_l0", to_array(h.beta_l0)},
                  {"beta_l", to_array(h.beta_l)}, {"beta_time", h.beta_time}};
    if (with_ay) t.insert("beta_ay", h.beta_ay);
    return t;
}

}  // namespace

std::string law_to_toml(const StructuralLaw& law) {
    toml::table grid{{"K", law.grid.K},
                     {"ordering", law.grid.ordering == Ordering::StandardCDL ? "standard" : "terminal_d_before_c"}};
    toml::table t;
    t.insert("monotone", law.monotone);
    t.insert("censor_terminal_only", law.censor_terminal_only);
    toml::array baseline;
    for (const auto& b : law.baseline) {
        if (b.kind == BaselineCovariate::Kind::Bernoulli)
            baseline.push_back(toml::table{{"name", b.name}, {"kind", "bernoulli"}, {"p", b.p}});
        else
            baseline.push_back(toml::table{{"name", b.name}, {"kind", "gaussian"}, {"mean", b.mean}, {"sd", b.sd}});
    }
    t.insert("baseline", baseline);
    toml::array covs;
    for (const auto& c : law.covariates)
        covs.push_back(toml::table{{"name", c.name},
                                   {"channel", c.channel == Channel::AD ? "AD" : "AY"},
                                   {"intercept", c.intercept},
                                   {"beta_treatment", c.beta_treatment},
                                   {"beta_l0", to_array(c.beta_l0)},
                                   {"beta_lag", to_array(c.beta_lag)},
                                   {"beta_same", to_array(c.beta_same)},
                                   {"beta_time", c.beta_time}});
    t.insert("covariate", covs);
    t.insert("event", hazard_table(law.event, false));
    if (law.censoring) t.insert("censoring", hazard_table(*law.censoring, true));
    t.insert("outcome", toml::table{{"intercept", law.outcome.intercept},
                                    {"beta_ay", law.outcome.beta_ay},
                                    {"beta_l0", to_array(law.outcome.beta_l0)},
                                    {"beta_l", to_array(law.outcome.beta_l)},
                                    {"sigma", law.outcome.sigma}});
    if (law.assignment.depends_on_l0)
        t.insert("assignment", toml::table{{"intercept", law.assignment.intercept},
                                           {"beta_l0", to_array(law.assignment.beta_l0)}});
    toml::table root{{"grid", grid}, {"law", t}};
    std::ostringstream os;
    os << toml::toml_formatter(root);
    return os.str() + "\n";
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace sepfx
