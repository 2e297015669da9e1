#include "sepfx/cli.hpp"

#include "sepfx/diagnostics.hpp"
#include "sepfx/error.hpp"
#include "sepfx/inference.hpp"
#include "sepfx/rng.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace sepfx {

using nlohmann::ordered_json;

namespace {

std::string out_path(const RunContext& ctx, const std::string& name) {
    return (std::filesystem::path(ctx.out_dir) / name).string();
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void apply_partition(TrialDataset& ds, const RunConfig& cfg) {
    if (cfg.ay_block.empty()) return;
    ds.partition = Partition::all_ad(ds.grid.K, ds.n_covariates());
    for (const auto& name : cfg.ay_block) {
        std::size_t j = 0;
        while (j < ds.n_covariates() && ds.covariate_names[j] != name) ++j;
        if (j == ds.n_covariates())
            throw ConfigError("[partition] ay_block: no time-varying covariate named '" + name + "'");
        for (int k = 1; k <= ds.grid.K; ++k) ds.partition.in_ad[k - 1][j] = false;
    }
}

std::vector<EstimandTarget> targets_of(const RunConfig& cfg) {
    if (!cfg.targets.empty()) return cfg.targets;
    return {EstimandTarget::single(0, 1)};
}

std::vector<Estimator> estimators_of(const RunConfig& cfg) {
    if (!cfg.estimators.empty()) return cfg.estimators;
    return {Estimator::OR, Estimator::IPW, Estimator::DR};
}

ordered_json dataset_summary(const TrialDataset& ds) {
    ordered_json j;
    j["n"] = ds.size();
    j["K"] = ds.grid.K;
    j["design"] = ds.design == Design::TwoArm ? "two_arm" : ds.design == Design::FourArm ? "four_arm" : "six_arm";
    for (int a = 1; a >= 0; --a) {
        std::size_t n = 0, surv = 0, with_y = 0;
        for (const auto& r : ds.records) {
            if (r.arm.kind != ArmAssignment::Kind::TwoArm || r.arm.a() != a) continue;
            ++n;
            surv += r.survived();
            with_y += r.Y.has_value();
        }
        j["arm_" + std::to_string(a)] = {{"n", n}, {"survivors", surv}, {"survivors_with_y", with_y}};
    }
    return j;
}

struct Plan {
    std::vector<EstimandTarget> targets;
    std::vector<Estimator> estimators;
    std::vector<std::optional<std::string>> labels;  ///< table label override per row
};

std::vector<EstimateReport> run_plan(const TrialDataset& ds, const NuisanceSpecSuite& specs, const Plan& plan,
                                     const EstimatorOptions& opt) {
    const NuisanceSuiteFit suite = fit_nuisance_suite(ds, specs);
    std::vector<EstimateReport> out;
    for (std::size_t i = 0; i < plan.targets.size(); ++i)
        out.push_back(estimate_target(ds, suite, plan.targets[i], plan.estimators[i], opt));
    return out;
}

Plan cross_plan(const RunConfig& cfg) {
    Plan p;
    for (const auto& t : targets_of(cfg))
        for (auto e : estimators_of(cfg)) {
            p.targets.push_back(t);
            p.estimators.push_back(e);
            p.labels.emplace_back();
        }
    return p;
}

BootstrapResult run_bootstrap(const TrialDataset& ds, const NuisanceSpecSuite& specs, const Plan& plan,
                              const RunConfig& cfg, const RunContext& ctx, std::vector<EstimateReport>& reports) {
    BootstrapPlan bp;
    bp.n_boot = cfg.n_boot;
    bp.seed = cfg.bootstrap_seed.value_or(cfg.seed);
    bp.ci_level = cfg.ci_level;
    bp.max_failure_fraction = cfg.max_failure_fraction;
    bp.threads = ctx.threads;
    const Procedure proc = [&](const TrialDataset& d) {
        std::vector<double> v;
        for (const auto& r : run_plan(d, specs, plan, cfg.options)) v.push_back(r.point);
        return v;
    };
    BootstrapResult res = bootstrap_ci(ds, proc, bp);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        ConfidenceInterval ci;
        ci.lo = res.lo[i];
        ci.hi = res.hi[i];
        ci.n_boot = bp.n_boot;
        ci.n_failed = res.n_failed;
        ci.level = bp.ci_level;
        reports[i].ci = ci;
    }
    return res;
}

std::vector<TableRow> table_of(const std::vector<EstimateReport>& reports, const Plan& plan, int K) {
    std::vector<TableRow> rows;
    for (std::size_t i = 0; i < reports.size(); ++i) rows.push_back(table_row(reports[i], K, plan.labels[i]));
    return rows;
}

std::string replicates_csv(const BootstrapResult& res, const std::vector<EstimateReport>& reports) {
    std::ostringstream os;
    os << "replicate";
    for (const auto& r : reports) os << ',' << r.target.label() << ' ' << to_string(r.estimator);
    os << '\n';
    for (std::size_t b = 0; b < res.replicates.size(); ++b) {
        os << b;
        for (std::size_t s = 0; s < reports.size(); ++s) {
            os << ',';
            if (!res.failed[b]) os << format_double(res.replicates[b][s]);
        }
        os << '\n';
    }
    return os.str();
}

ordered_json reports_json(const std::vector<EstimateReport>& reports) {
    ordered_json a = ordered_json::array();
    for (const auto& r : reports) a.push_back(to_json(r));
    return a;
}

int estimate_like(const RunConfig& cfg, const RunContext& ctx, std::ostream& out, bool with_bootstrap) {
    const TrialDataset ds = acquire_dataset(cfg, ctx);
    const NuisanceSpecSuite specs = model_specs(cfg, ds);
    const Plan plan = cross_plan(cfg);
    std::vector<EstimateReport> reports = run_plan(ds, specs, plan, cfg.options);
    std::optional<BootstrapResult> boot;
    if (with_bootstrap) boot = run_bootstrap(ds, specs, plan, cfg, ctx, reports);
    const auto rows = table_of(reports, plan, ds.grid.K);

    ordered_json doc;
    doc["provenance"] = provenance(cfg.source, cfg.seed);
    doc["dataset"] = dataset_summary(ds);
    doc["reports"] = reports_json(reports);
    doc["table"] = to_json(rows);
    if (boot && !boot->failure_reasons.empty()) doc["bootstrap_failures"] = boot->failure_reasons;
    const std::string name = with_bootstrap ? "bootstrap" : "estimate";
    write_file(out_path(ctx, name + ".json"), doc.dump(2) + "\n");
    if (boot && cfg.dump_replicates) write_file(out_path(ctx, "replicates.csv"), replicates_csv(*boot, reports));
    out << render_table(rows, cfg.ci_level);
    return 0;
}

}  // namespace

TrialDataset acquire_dataset(const RunConfig& cfg, const RunContext& ctx) {
    TrialDataset ds;
    if (cfg.data_path) {
        std::filesystem::path p(*cfg.data_path);
        if (p.is_relative() && !ctx.config_dir.empty()) p = std::filesystem::path(ctx.config_dir) / p;
        ds = load_csv(p.string(), cfg.ordering, cfg.ay_block);
        if (cfg.K && *cfg.K != ds.grid.K)
            throw ConfigError("[grid] K = " + std::to_string(*cfg.K) + " but the data have K = " +
                              std::to_string(ds.grid.K));
    } else if (cfg.law) {
        ds = simulate(*cfg.law, cfg.n.value_or(1000), cfg.seed, cfg.design, cfg.violation, ctx.threads);
        apply_partition(ds, cfg);
    } else {
        throw ConfigError("config needs a [data] path or a [law]");
    }
    const auto violations = validate_dataset(ds);
    if (!violations.empty()) {
        std::string msg = std::to_string(violations.size()) + " invalid record(s); first: ";
        const auto& v = violations.front();
        msg += "id '" + v.record_id + "' field " + v.field + ": " + v.rule;
        throw ParseError(msg);
    }
    return ds;
}

NuisanceSpecSuite model_specs(const RunConfig& cfg, const TrialDataset& ds) {
    const bool any = cfg.event_model || cfg.censoring_model || cfg.outcome_model || cfg.propensity_model ||
                     !cfg.covariate_models.empty();
    if (!any) return default_specs(ds);
    return parse_specs(ds, cfg.event_model, cfg.censoring_model, cfg.covariate_models, cfg.outcome_model,
                       cfg.propensity_model);
}

int cmd_simulate(const RunConfig& cfg, const RunContext& ctx, std::ostream& out) {
    if (!cfg.law) throw ConfigError("simulate needs a [law] section");
    const TrialDataset ds = acquire_dataset(cfg, ctx);
    std::ostringstream csv;
    write_csv(csv, ds);
    write_file(out_path(ctx, "data.csv"), csv.str());
    write_file(out_path(ctx, "law.toml"), law_to_toml(*cfg.law));
    const ordered_json doc{{"provenance", provenance(cfg.source, cfg.seed)}, {"dataset", dataset_summary(ds)}};
    write_file(out_path(ctx, "simulate.json"), doc.dump(2) + "\n");
    out << "simulated " << ds.size() << " records (K = " << ds.grid.K << ") -> " << out_path(ctx, "data.csv") << '\n';
    return 0;
}

int cmd_estimate(const RunConfig& cfg, const RunContext& ctx, std::ostream& out) {
    return estimate_like(cfg, ctx, out, false);
}

int cmd_bootstrap(const RunConfig& cfg, const RunContext& ctx, std::ostream& out) {
    return estimate_like(cfg, ctx, out, true);
}

int cmd_diagnose(const RunConfig& cfg, const RunContext& ctx, std::ostream& out) {
    const TrialDataset ds = acquire_dataset(cfg, ctx);
    std::vector<std::string> checks = cfg.checks;
    if (checks.empty()) {
        if (ds.design == Design::TwoArm) checks = {"positivity"};
        if (ds.design == Design::FourArm) checks = {"ay_isolation"};
        if (ds.design == Design::SixArm) checks = {"modified_treatment"};
    }
    std::vector<DiagnosticReport> reports;
    for (const auto& c : checks) {
        if (c == "positivity") reports.push_back(check_positivity(ds));
        else if (c == "ay_isolation") reports.push_back(falsify_ay_isolation(ds, cfg.alpha));
        else reports.push_back(falsify_modified_treatment(ds, cfg.alpha));
    }
    ordered_json doc;
    doc["provenance"] = provenance(cfg.source, cfg.seed);
    doc["dataset"] = dataset_summary(ds);
    ordered_json arr = ordered_json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    doc["diagnostics"] = arr;
    write_file(out_path(ctx, "diagnose.json"), doc.dump(2) + "\n");
    bool rejected = false;
    for (const auto& r : reports) {
        std::size_t flagged = 0;
        for (const auto& row : r.rows) flagged += row.flagged;
        out << r.check << ": " << r.rows.size() << " rows, " << flagged << " flagged";
        if (r.min_p) out << ", min p = " << format_double(*r.min_p) << ", threshold = " << format_double(*r.threshold);
        out << (r.rejected ? ", REJECTED" : ", not rejected") << '\n';
        rejected |= r.rejected;
    }
    return rejected && ctx.strict ? 4 : 0;
}

SwogReplication replicate_swog(const RunConfig& cfg_in, const RunContext& ctx) {
    RunConfig cfg = cfg_in;
    if (cfg.data_path) throw ConfigError("replicate-swog simulates its own data; remove [data]");
    if (!cfg.law) cfg.law = presets::swog_like();
    if (!cfg.n) cfg.n = 487;
    cfg.design = Design::TwoArm;
    const StructuralLaw& law = *cfg.law;
    const TrialDataset ds = acquire_dataset(cfg, ctx);

    NuisanceSpecSuite specs;
    const bool any = cfg.event_model || cfg.censoring_model || cfg.outcome_model || cfg.propensity_model ||
                     !cfg.covariate_models.empty();
    if (any) {
        specs = model_specs(cfg, ds);
    } else {
        std::string base, tv;
        for (const auto& b : ds.baseline_names) base += " + L0_" + b;
        for (const auto& c : ds.covariate_names) tv += " + " + c;
        std::vector<std::string> covs;
        for (const auto& c : ds.covariate_names) covs.push_back(c + " ~ 1 + A" + base + " + " + c);
        std::optional<std::string> cens;
        if (ds.has_censoring()) cens = "C ~ 1 + A" + base + tv + (law.censor_terminal_only ? " @terminal" : "");
        specs = parse_specs(ds, "D ~ 1" + base + tv + " | A", cens, covs, "Y ~ 1 + A" + base + tv, std::nullopt);
    }

    Plan plan;
    plan.targets = {EstimandTarget::single(1, 1), EstimandTarget::single(0, 0), EstimandTarget::single(0, 1),
                    EstimandTarget::single(0, 1), EstimandTarget::single(0, 1)};
    plan.estimators = {Estimator::IPW, Estimator::IPW, Estimator::OR, Estimator::IPW, Estimator::DR};
    plan.labels = {std::string("Non-parametric"), std::string("Non-parametric"), std::nullopt, std::nullopt,
                   std::nullopt};

    SwogReplication rep;
    rep.reports = run_plan(ds, specs, plan, cfg.options);
    const BootstrapResult boot = run_bootstrap(ds, specs, plan, cfg, ctx, rep.reports);
    rep.rows = table_of(rep.reports, plan, ds.grid.K);

    // separate noise streams from the trial's individuals
    const std::uint64_t oracle_seed = hash_combine(cfg.seed, 0x6f7261636c65ULL, 0);
    rep.oracle_11 = oracle_conditional_mean(law, 1, 1, cfg.n_mc, oracle_seed, cfg.violation, ctx.threads);
    rep.oracle_00 = oracle_conditional_mean(law, 0, 0, cfg.n_mc, oracle_seed, cfg.violation, ctx.threads);
    rep.oracle_01 = oracle_conditional_mean(law, 0, 1, cfg.n_mc, oracle_seed, cfg.violation, ctx.threads);
    const auto& dr = *rep.reports[4].ci;
    rep.self_check = dr.lo <= rep.oracle_01.mean && rep.oracle_01.mean <= dr.hi;

    auto oracle_json = [](const OracleEstimate& o) {
        return ordered_json{{"mean", o.mean}, {"mc_se", o.mc_se}, {"n_used", o.n_used}};
    };
    ordered_json& doc = rep.document;
    doc["provenance"] = provenance(cfg.source, cfg.seed);
    doc["dataset"] = dataset_summary(ds);
    doc["table"] = to_json(rep.rows);
    doc["reports"] = reports_json(rep.reports);
    doc["oracle"] = {{"nu(1,1)", oracle_json(rep.oracle_11)},
                     {"nu(0,0)", oracle_json(rep.oracle_00)},
                     {"nu(0,1)", oracle_json(rep.oracle_01)},
                     {"n_mc", cfg.n_mc}};
    doc["self_check"] = {{"dr_ci_contains_oracle", rep.self_check}};
    if (!boot.failure_reasons.empty()) doc["bootstrap_failures"] = boot.failure_reasons;
    return rep;
}

int cmd_replicate_swog(const RunConfig& cfg, const RunContext& ctx, std::ostream& out) {
    const SwogReplication rep = replicate_swog(cfg, ctx);
    const std::string table = render_table(rep.rows, cfg.ci_level);
    write_file(out_path(ctx, "swog.json"), rep.document.dump(2) + "\n");
    write_file(out_path(ctx, "swog_table.txt"), table);

    const auto& d = rep.document["dataset"];
    out << "synthetic trial: " << d["n"].get<std::size_t>() << " patients, "
        << d["arm_1"]["survivors"].get<std::size_t>() + d["arm_0"]["survivors"].get<std::size_t>() << " survivors, "
        << d["arm_1"]["survivors_with_y"].get<std::size_t>() + d["arm_0"]["survivors_with_y"].get<std::size_t>()
        << " with Y observed\n\n";
    out << table << '\n';
    out << "oracle nu(1,1) = " << fixed6(rep.oracle_11.mean) << " (mc se " << fixed6(rep.oracle_11.mc_se) << ")\n";
    out << "oracle nu(0,0) = " << fixed6(rep.oracle_00.mean) << " (mc se " << fixed6(rep.oracle_00.mc_se) << ")\n";
    out << "oracle nu(0,1) = " << fixed6(rep.oracle_01.mean) << " (mc se " << fixed6(rep.oracle_01.mc_se) << ")\n";
    out << "self-check: DR interval " << (rep.self_check ? "contains" : "DOES NOT contain") << " the oracle\n";
    return rep.self_check || !ctx.strict ? 0 : 4;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Conditional separable effects: simulation, estimation and diagnostics", "sepfx"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool strict = false;

    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("--config", config_path, "TOML run configuration");
        if (config_required) c->required();
        sub->add_option("--out", out_dir, "output directory (overrides [output] dir)");
        sub->add_option("--seed", seed, "master seed (overrides the config)");
        sub->add_option("--threads", threads, "worker threads (default: SEPFX_THREADS or 1)")
            ->check(CLI::PositiveNumber);
        sub->add_flag("--strict", strict, "exit 4 when a diagnostic or self-check fails");
    };
    auto* sim = app.add_subcommand("simulate", "draw a trial from a structural law");
    auto* est = app.add_subcommand("estimate", "point estimates for the configured targets");
    auto* boot = app.add_subcommand("bootstrap", "estimates with percentile bootstrap intervals");
    auto* diag = app.add_subcommand("diagnose", "positivity and falsification checks");
    auto* swog = app.add_subcommand("replicate-swog", "five-row trial analysis table on synthetic data");
    for (auto* s : {sim, est, boot, diag}) add_common(s, true);
    add_common(swog, false);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg;
        RunContext ctx;
        if (!config_path.empty()) {
            cfg = load_config(config_path);
            ctx.config_dir = std::filesystem::path(config_path).parent_path().string();
        }
        if (seed) cfg.seed = *seed;
        ctx.out_dir = out_dir.empty() ? cfg.out_dir : out_dir;
        ctx.strict = strict;
        if (threads) {
            ctx.threads = *threads;
        } else if (const char* env = std::getenv("SEPFX_THREADS")) {
            char* end = nullptr;
            const long v = std::strtol(env, &end, 10);
            if (*env == '\0' || *end != '\0' || v < 1) throw ConfigError("SEPFX_THREADS must be a positive integer");
            ctx.threads = static_cast<int>(v);
        }
        if (sim->parsed()) return cmd_simulate(cfg, ctx, out);
        if (est->parsed()) return cmd_estimate(cfg, ctx, out);
        if (boot->parsed()) return cmd_bootstrap(cfg, ctx, out);
        if (diag->parsed()) return cmd_diagnose(cfg, ctx, out);
        return cmd_replicate_swog(cfg, ctx, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.category() == ErrorCategory::Numeric ? 3 : 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace sepfx
