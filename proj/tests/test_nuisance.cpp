#include <doctest.h>

#include "sepfx/error.hpp"
#include "sepfx/nuisance.hpp"
#include "support.hpp"

#include <cmath>
#include <map>

using namespace sepfx;

namespace {

// Plain Newton iterations for a two-parameter logistic model.
std::pair<double, double> hand_logistic(const std::vector<double>& x, const std::vector<double>& y) {
    double b0 = 0.0, b1 = 0.0;
    for (int it = 0; it < 60; ++it) {
        double g0 = 0, g1 = 0, h00 = 0, h01 = 0, h11 = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x[i])));
            const double w = p * (1 - p);
            g0 += y[i] - p;
            g1 += (y[i] - p) * x[i];
            h00 += w;
            h01 += w * x[i];
            h11 += w * x[i] * x[i];
        }
        const double det = h00 * h11 - h01 * h01;
        b0 += (h11 * g0 - h01 * g1) / det;
        b1 += (-h01 * g0 + h00 * g1) / det;
    }
    return {b0, b1};
}

std::vector<std::string> labels(const ModelSpec& m) {
    std::vector<std::string> out;
    for (const auto& t : m.terms) out.push_back(t.label());
    return out;
}

}  // namespace

TEST_SUITE("nuisance") {

TEST_CASE("logistic fit matches hand-iterated Newton on eight rows") {
    const std::vector<double> x = {0, 1, 2, 3, 4, 5, 6, 7}, y = {0, 0, 1, 0, 1, 0, 1, 1};
    Eigen::MatrixXd X(8, 2);
    Eigen::VectorXd Y(8);
    for (int i = 0; i < 8; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = x[i];
        Y[i] = y[i];
    }
    const auto fit = fit_glm<double>(X, Y, Link::Logit);
    const auto [b0, b1] = hand_logistic(x, y);
    CHECK(fit.converged);
    CHECK(fit.coef[0] == doctest::Approx(b0).epsilon(1e-9));
    CHECK(fit.coef[1] == doctest::Approx(b1).epsilon(1e-9));
    CHECK(fit.max_score < 1e-8);
}

TEST_CASE("identity link matches simple least squares") {
    const std::vector<double> x = {1, 2, 4, 5, 7}, y = {2.1, 2.9, 5.2, 5.8, 8.1};
    Eigen::MatrixXd X(5, 2);
    Eigen::VectorXd Y(5);
    double mx = 0, my = 0;
    for (int i = 0; i < 5; ++i) {
        X(i, 0) = 1;
        X(i, 1) = x[i];
        Y[i] = y[i];
        mx += x[i] / 5;
        my += y[i] / 5;
    }
    double sxy = 0, sxx = 0;
    for (int i = 0; i < 5; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    const auto fit = fit_glm<double>(X, Y, Link::Identity);
    CHECK(fit.coef[1] == doctest::Approx(sxy / sxx).epsilon(1e-12));
    CHECK(fit.coef[0] == doctest::Approx(my - sxy / sxx * mx).epsilon(1e-12));
}

TEST_CASE("float scalar instantiation") {
    Eigen::MatrixXf X(6, 2);
    Eigen::VectorXf Y(6);
    X << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4, 1, 5;
    Y << 0, 1, 0, 1, 1, 1;
    const auto fit = fit_glm<float>(X, Y, Link::Logit);
    CHECK(fit.converged);
    CHECK(fit.coef[1] > 0.0f);
}

TEST_CASE("separation and rank deficiency are reported") {
    Eigen::MatrixXd X(6, 2);
    Eigen::VectorXd Y(6);
    X << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4, 1, 5;
    Y << 0, 0, 0, 1, 1, 1;
    CHECK_THROWS_AS(fit_glm<double>(X, Y, Link::Logit), Separation);
    Eigen::MatrixXd Z(6, 3);
    Z << 1, 0, 0, 1, 1, 2, 1, 2, 4, 1, 3, 6, 1, 4, 8, 1, 5, 10;
    Y << 0, 1, 0, 1, 0, 1;
    CHECK_THROWS_AS(fit_glm<double>(Z, Y, Link::Logit), RankDeficient);
    CHECK_THROWS_AS(fit_glm<double>(Eigen::MatrixXd(0, 1), Eigen::VectorXd(0), Link::Logit), NoRiskSet);
}

TEST_CASE("formula grammar") {
    const std::vector<std::string> base = {"age", "race"}, tv = {"prog", "pain"};
    const ModelSpec y = parse_formula("Y ~ 1 + A + L0_* + prog", base, tv, 11);
    CHECK(y.response == Response::Outcome);
    CHECK(labels(y) == std::vector<std::string>{"1", "A", "L0_age", "L0_race", "prog"});
    const ModelSpec d = parse_formula("D ~ L0_age*prog | A", base, tv, 11);
    CHECK(labels(d) == std::vector<std::string>{"1", "L0_age", "prog", "L0_age:prog", "T"});
    CHECK(d.stratified_by_arm());
    const ModelSpec d1 = parse_formula("D ~ 1 + prog", base, tv, 1);
    CHECK(labels(d1) == std::vector<std::string>{"1", "prog"});
    const ModelSpec c = parse_formula("C ~ 1 + A + prog @terminal", base, tv, 11);
    CHECK(c.terminal_only);
    CHECK(labels(c) == std::vector<std::string>{"1", "A", "prog"});
    const ModelSpec l = parse_formula("pain ~ 0 + A + prog", base, tv, 2);
    CHECK(l.response == Response::Covariate);
    CHECK(l.covariate == 1);
    CHECK(labels(l)[0] == "A");
    CHECK_THROWS_AS(parse_formula("Y ~ 1 + weight", base, tv, 1), ConfigError);
    CHECK_THROWS_AS(parse_formula("A ~ 1 + prog", base, tv, 1), ConfigError);
    CHECK_THROWS_AS(parse_formula("Y = 1", base, tv, 1), ConfigError);
}

TEST_CASE("risk sets on the tiny fixture") {
    const TrialDataset ds = testsupport::tiny_dataset();
    const NuisanceFit d = fit_glm(ds, parse_formula("D ~ 1 + A", ds.baseline_names, ds.covariate_names, 1));
    CHECK(d.n_used() == 18);
    const NuisanceFit l = fit_glm(ds, parse_formula("l ~ 1 + A", ds.baseline_names, ds.covariate_names, 1));
    CHECK(l.n_used() == 8);
    const NuisanceFit y = fit_glm(ds, parse_formula("Y ~ 1 + L0_x | A", ds.baseline_names, ds.covariate_names, 1));
    CHECK(y.n_used() == 6);
    // within-arm cell means of Y
    CHECK(predict(y, {{"A", 1}, {"L0_x", 0}}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(predict(y, {{"A", 1}, {"L0_x", 1}}) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(predict(y, {{"A", 0}, {"L0_x", 0}}) == doctest::Approx(1.625).epsilon(1e-12));
    CHECK(predict(y, {{"A", 0}, {"L0_x", 1}}) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_THROWS_AS(predict(y, {{"A", 1}}), MissingPredictor);
}

TEST_CASE("saturated hazard reproduces risk-set frequencies") {
    const TrialDataset ds = simulate(presets::default_k1(), 3000, 12, Design::TwoArm);
    const NuisanceFit d =
        fit_glm(ds, parse_formula("D ~ 1 + L0_x*prog | A, T", ds.baseline_names, ds.covariate_names, 1));
    std::map<std::tuple<int, int, int, int>, std::pair<double, double>> cells;  // (k, a, x, prog)
    for (const auto& r : ds.records)
        for (int k = 0; k <= 1; ++k) {
            if (r.event(k)) break;
            auto& c = cells[{k, r.arm.a(), static_cast<int>(r.L0[0]), static_cast<int>(r.covariate(k, 0))}];
            c.first += 1;
            c.second += r.D[k];
        }
    for (const auto& [key, c] : cells) {
        const auto [k, a, x, prog] = key;
        const double p = predict(d, {{"A", a}, {"T", k}, {"L0_x", x}, {"prog", prog}});
        CHECK(p == doctest::Approx(c.second / c.first).epsilon(1e-9));
    }
}

TEST_CASE("suite reports channels without a model") {
    const TrialDataset ds = testsupport::tiny_dataset();
    NuisanceSpecSuite specs = parse_specs(ds, std::nullopt, std::nullopt, {}, "Y ~ 1 + A", std::nullopt);
    const NuisanceSuiteFit fit = fit_nuisance_suite(ds, specs);
    CHECK(fit.outcome);
    CHECK(std::find(fit.coverage_gaps.begin(), fit.coverage_gaps.end(), "D") != fit.coverage_gaps.end());
    CHECK(std::find(fit.coverage_gaps.begin(), fit.coverage_gaps.end(), "L:l") != fit.coverage_gaps.end());
    CHECK_THROWS_AS(parse_specs(ds, "Y ~ 1", std::nullopt, {}, std::nullopt, std::nullopt), ConfigError);
}

}  // TEST_SUITE
