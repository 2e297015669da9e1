#include <doctest.h>

#include "sepfx/cli.hpp"
#include "sepfx/error.hpp"
#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sepfx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::path(SEPFX_TEST_TMP) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void put(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string csv_of(const TrialDataset& ds) {
    std::ostringstream os;
    write_csv(os, ds);
    return os.str();
}

struct Run {
    int code;
    std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

const char* kTinyModels = R"(
[models]
event = "D ~ 1 + L0_x | A, T"
covariates = ["l ~ 1 + A + L0_x"]
outcome = "Y ~ 1 + L0_x | A"
)";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("unknown keys are rejected with their line") {
    try {
        parse_config("seed = 3\n[bootstrap]\nn_boot = 10\nweigths = 3\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("weigths") != std::string::npos);
        CHECK(msg.find("line 4") != std::string::npos);
    }
    const fs::path dir = scratch("unknown_key");
    put(dir / "run.toml", "[estimate]\nestimator = [\"DR\"]\n");
    const Run r = cli({"estimate", "--config", (dir / "run.toml").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("estimator") != std::string::npos);
}

TEST_CASE("config values are type- and range-checked") {
    CHECK_THROWS_AS(parse_config("[bootstrap]\nn_boot = \"many\"\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[bootstrap]\nn_boot = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[simulate]\ndesign = \"three_arm\"\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[law]\npreset = \"nope\"\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed = "), ConfigError);
    const RunConfig cfg = parse_config("seed = 9\n[law]\npreset = \"default_k1\"\n[simulate]\nn = 50\n");
    CHECK(cfg.seed == 9);
    CHECK(cfg.n == std::optional<std::size_t>(50));
    REQUIRE(cfg.law.has_value());
    CHECK(cfg.law->grid.K == 1);
}

TEST_CASE("targets") {
    const auto one = parse_target("0,1");
    CHECK(one.primary == Target{0, 1});
    CHECK_FALSE(one.reference.has_value());
    const auto pair = parse_target("1,1 - 0,1");
    CHECK(pair.primary == Target{1, 1});
    CHECK(pair.reference == std::optional<Target>(Target{0, 1}));
    CHECK_THROWS_AS(parse_target("2,1"), ConfigError);
    CHECK_THROWS_AS(parse_target("0;1"), ConfigError);
}

TEST_CASE("law TOML round trip reproduces the simulated data") {
    for (const StructuralLaw& law : {presets::default_k1(), presets::swog_like(), testsupport::censored_outcome_law(),
                                     presets::null_law(3)}) {
        const RunConfig cfg = parse_config(law_to_toml(law));
        REQUIRE(cfg.law.has_value());
        CHECK(csv_of(simulate(*cfg.law, 300, 4, Design::TwoArm)) == csv_of(simulate(law, 300, 4, Design::TwoArm)));
    }
}

TEST_CASE("CSV round trip for every design") {
    for (Design d : {Design::TwoArm, Design::FourArm, Design::SixArm}) {
        const TrialDataset ds = simulate(presets::default_k1(), 200, 3, d);
        const std::string text = csv_of(ds);
        std::istringstream in(text);
        const TrialDataset back = read_csv(in);
        CHECK(back.design == d);
        CHECK(csv_of(back) == text);
    }
    const StructuralLaw law = testsupport::censored_outcome_law();
    const TrialDataset ds = simulate(law, 300, 8, Design::TwoArm);
    std::istringstream in(csv_of(ds));
    const TrialDataset back = read_csv(in, Ordering::TerminalDBeforeC);
    CHECK(validate_dataset(back).empty());
    CHECK(csv_of(back) == csv_of(ds));
}

TEST_CASE("CSV errors name the line and column") {
    std::string text = csv_of(testsupport::tiny_dataset());
    const std::string row = "4,0,1,0,0,0,1,1,";
    REQUIRE(text.find(row) != std::string::npos);
    text.replace(text.find(row), row.size(), "4,0,1,0,0,0,x,1,");
    std::istringstream in(text);
    try {
        read_csv(in, Ordering::StandardCDL, {}, "tiny.csv");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("tiny.csv:5: column 'D_2'") != std::string::npos);
    }
    std::istringstream no_y("id,L0_x,A,C_1,D_1\n1,0,1,0,0\n");
    CHECK_THROWS_AS(read_csv(no_y), ParseError);
}

TEST_CASE("estimate table JSON round trip") {
    std::vector<TableRow> rows{{"E[Y(aY=0,aD=1) | D_2(aD=1)=0]", "DR", 1.25, -0.5, 3.0},
                               {"E[Y(a=1) | D_2(a=1)=0]", "Non-parametric", -2.0, std::nullopt, std::nullopt}};
    const auto back = table_from_json(nlohmann::ordered_json::parse(to_json(rows).dump()));
    REQUIRE(back.size() == 2);
    CHECK(back[0].estimand == rows[0].estimand);
    CHECK(back[0].ci_hi == rows[0].ci_hi);
    CHECK(back[1].estimator == "Non-parametric");
    CHECK_FALSE(back[1].ci_lo.has_value());
    CHECK(display_estimand(EstimandTarget::single(0, 1), 11) == "E[Y(aY=0,aD=1) | D_12(aD=1)=0]");
    CHECK(display_estimand(EstimandTarget::single(1, 1), 11) == "E[Y(a=1) | D_12(a=1)=0]");
}

TEST_CASE("estimate on a CSV prints the table") {
    const fs::path dir = scratch("estimate_tiny");
    put(dir / "tiny.csv", csv_of(testsupport::tiny_dataset()));
    put(dir / "run.toml", std::string("[data]\npath = \"tiny.csv\"\n[estimate]\ntargets = [\"1,1\", \"0,1\"]\n"
                                      "estimators = [\"OR\"]\n") + kTinyModels);
    const Run r = cli({"estimate", "--config", (dir / "run.toml").string(), "--out", (dir / "out").string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("1.500000") != std::string::npos);
    CHECK(r.out.find("0.750000") != std::string::npos);
    const auto doc = nlohmann::ordered_json::parse(slurp(dir / "out" / "estimate.json"));
    CHECK(doc["table"].size() == 2);
    CHECK(doc["provenance"]["config_hash"].get<std::string>().size() == 16);
}

TEST_CASE("numeric failures exit with 3") {
    const fs::path dir = scratch("rank_deficient");
    std::string text = "id,L0_x,L0_x2" + csv_of(testsupport::tiny_dataset()).substr(std::string("id,L0_x").size());
    // duplicate the baseline column
    std::istringstream lines(text);
    std::string line, out;
    std::getline(lines, line);
    out = line + "\n";
    while (std::getline(lines, line)) {
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        out += line.substr(0, c2) + "," + line.substr(c1 + 1, c2 - c1 - 1) + line.substr(c2) + "\n";
    }
    put(dir / "dup.csv", out);
    put(dir / "run.toml", "[data]\npath = \"dup.csv\"\n[estimate]\ntargets = [\"1,1\"]\nestimators = [\"OR\"]\n"
                          "[models]\noutcome = \"Y ~ 1 + L0_x + L0_x2 | A\"\n");
    const Run r = cli({"estimate", "--config", (dir / "run.toml").string(), "--out", (dir / "out").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("rank") != std::string::npos);
}

TEST_CASE("diagnose exits 4 only under --strict") {
    const fs::path dir = scratch("diagnose");
    put(dir / "run.toml", "seed = 2\n[law]\npreset = \"null\"\n[simulate]\nn = 4000\ndesign = \"four_arm\"\n"
                          "violation = \"break_ay_isolation\"\nviolation_strength = 2.0\n");
    const std::string cfg = (dir / "run.toml").string();
    const Run loose = cli({"diagnose", "--config", cfg, "--out", (dir / "a").string()});
    CHECK(loose.code == 0);
    CHECK(loose.out.find("REJECTED") != std::string::npos);
    const Run strict = cli({"diagnose", "--config", cfg, "--out", (dir / "b").string(), "--strict"});
    CHECK(strict.code == 4);
    CHECK(fs::exists(dir / "b" / "diagnose.json"));
}

TEST_CASE("outputs are byte-identical across runs and thread counts") {
    const fs::path dir = scratch("determinism");
    put(dir / "run.toml", "seed = 5\n[law]\npreset = \"default_k1\"\n[simulate]\nn = 400\n"
                          "[bootstrap]\nn_boot = 20\n[output]\nreplicates = true\n");
    const std::string cfg = (dir / "run.toml").string();
    REQUIRE(cli({"bootstrap", "--config", cfg, "--out", (dir / "a").string()}).code == 0);
    REQUIRE(cli({"bootstrap", "--config", cfg, "--out", (dir / "b").string(), "--threads", "3"}).code == 0);
    CHECK(slurp(dir / "a" / "bootstrap.json") == slurp(dir / "b" / "bootstrap.json"));
    CHECK(slurp(dir / "a" / "replicates.csv") == slurp(dir / "b" / "replicates.csv"));
    REQUIRE(cli({"simulate", "--config", cfg, "--out", (dir / "c").string()}).code == 0);
    REQUIRE(cli({"simulate", "--config", cfg, "--out", (dir / "d").string(), "--threads", "2"}).code == 0);
    CHECK(slurp(dir / "c" / "data.csv") == slurp(dir / "d" / "data.csv"));
    CHECK(slurp(dir / "c" / "law.toml") == slurp(dir / "d" / "law.toml"));
}

TEST_CASE("argument errors exit with 2") {
    CHECK(cli({"estimate"}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"estimate", "--config", "/nonexistent/run.toml"}).code == 2);
    CHECK(cli({"--help"}).code == 0);
}

}
