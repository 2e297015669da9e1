#include "sepfx/io.hpp"

#include "sepfx/config.hpp"
#include "sepfx/error.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace sepfx {

using nlohmann::ordered_json;

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell += c;
        }
    }
    out.push_back(cell);
    return out;
}

bool parse_int(const std::string& s, int& v) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    v = std::stoi(s);
    return true;
}

struct Cursor {
    std::string origin;
    std::size_t line = 0;
    const std::vector<std::string>* header = nullptr;

    [[noreturn]] void fail(std::size_t col, const std::string& what) const {
        throw ParseError(origin + ":" + std::to_string(line) + ": column '" + (*header)[col] + "': " + what);
    }
    double number(const std::string& s, std::size_t col) const {
        if (s.empty()) fail(col, "missing value");
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end != s.c_str() + s.size() || !std::isfinite(v)) fail(col, "not a number: '" + s + "'");
        return v;
    }
    std::optional<double> maybe(const std::string& s, std::size_t col) const {
        if (s.empty()) return std::nullopt;
        return number(s, col);
    }
    std::uint8_t flag(const std::string& s, std::size_t col) const {
        if (s == "0") return 0;
        if (s == "1") return 1;
        fail(col, "indicator must be 0 or 1, got '" + s + "'");
    }
    int arm(const std::string& s, std::size_t col) const { return flag(s, col); }
};

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

TrialDataset read_csv(std::istream& in, Ordering ordering, const std::vector<std::string>& ay_block,
                      const std::string& origin) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(origin + ": empty file, header required");
    const std::vector<std::string> header = split_line(line);
    Cursor cur{origin, 1, &header};

    std::optional<std::size_t> col_id, col_a, col_ay, col_ad, col_kind, col_y;
    std::vector<std::size_t> col_l0;
    std::map<int, std::size_t> col_c, col_d;
    std::map<int, std::vector<std::pair<std::string, std::size_t>>> col_l;
    TrialDataset ds;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string& h = header[i];
        if (!seen.insert(h).second) throw ParseError(origin + ":1: duplicate column '" + h + "'");
        int k = 0;
        if (h == "id") col_id = i;
        else if (h == "A") col_a = i;
        else if (h == "AY") col_ay = i;
        else if (h == "AD") col_ad = i;
        else if (h == "ARM_KIND") col_kind = i;
        else if (h == "Y") col_y = i;
        else if (h.rfind("L0_", 0) == 0 && h.size() > 3) {
            col_l0.push_back(i);
            ds.baseline_names.push_back(h.substr(3));
        } else if (h.rfind("C_", 0) == 0 && parse_int(h.substr(2), k) && k >= 1) col_c[k] = i;
        else if (h.rfind("D_", 0) == 0 && parse_int(h.substr(2), k) && k >= 1) col_d[k] = i;
        else if (h.size() > 1 && h[0] == 'L' && h.find('_') != std::string::npos &&
                 parse_int(h.substr(1, h.find('_') - 1), k) && k >= 1 && h.find('_') + 1 < h.size())
            col_l[k].emplace_back(h.substr(h.find('_') + 1), i);
        else
            throw ParseError(origin + ":1: unrecognized column '" + h + "'");
    }
    if (!col_id) throw ParseError(origin + ":1: missing column 'id'");
    if (!col_y) throw ParseError(origin + ":1: missing column 'Y'");
    if (col_c.empty()) throw ParseError(origin + ":1: missing columns C_1..C_{K+1}");
    const int K = static_cast<int>(col_c.size()) - 1;
    for (int k = 1; k <= K + 1; ++k) {
        if (!col_c.count(k)) throw ParseError(origin + ":1: missing column 'C_" + std::to_string(k) + "'");
        if (!col_d.count(k)) throw ParseError(origin + ":1: missing column 'D_" + std::to_string(k) + "'");
    }
    if (col_d.size() != col_c.size()) throw ParseError(origin + ":1: D_ and C_ column counts differ");
    for (const auto& [k, cols] : col_l)
        if (k > K) throw ParseError(origin + ":1: covariate column 'L" + std::to_string(k) + "_...' beyond K = " + std::to_string(K));
    if (K > 0 && !col_l.empty()) {
        for (const auto& [name, c] : col_l.begin()->second) ds.covariate_names.push_back(name);
        for (int k = 1; k <= K; ++k) {
            auto it = col_l.find(k);
            std::vector<std::string> names;
            if (it != col_l.end())
                for (const auto& [name, c] : it->second) names.push_back(name);
            if (names != ds.covariate_names)
                throw ParseError(origin + ":1: time-varying covariates at k = " + std::to_string(k) +
                                 " differ from those at k = 1");
        }
    }
    if (col_kind) {
        if (!col_a || !col_ay || !col_ad) throw ParseError(origin + ":1: six-arm data need ARM_KIND, A, AY and AD");
        ds.design = Design::SixArm;
    } else if (col_ay || col_ad) {
        if (!col_ay || !col_ad || col_a) throw ParseError(origin + ":1: four-arm data need AY and AD (and no A)");
        ds.design = Design::FourArm;
    } else {
        if (!col_a) throw ParseError(origin + ":1: missing treatment column A");
        ds.design = Design::TwoArm;
    }

    ds.grid = TimeGrid{K, ordering};
    const std::size_t p = ds.covariate_names.size();
    ds.partition = Partition::all_ad(K, p);
    for (const auto& name : ay_block) {
        std::size_t j = 0;
        while (j < p && ds.covariate_names[j] != name) ++j;
        if (j == p) throw ConfigError("[partition] ay_block: no time-varying covariate named '" + name + "'");
        for (int k = 1; k <= K; ++k) ds.partition.in_ad[k - 1][j] = false;
    }

    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++cur.line;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size())
            throw ParseError(origin + ":" + std::to_string(cur.line) + ": expected " + std::to_string(header.size()) +
                             " cells, found " + std::to_string(cells.size()));
        LongitudinalRecord r;
        r.id = cells[*col_id];
        if (r.id.empty()) cur.fail(*col_id, "empty id");
        if (!ids.insert(r.id).second) cur.fail(*col_id, "duplicate id '" + r.id + "'");
        r.L0.resize(static_cast<Eigen::Index>(col_l0.size()));
        for (std::size_t j = 0; j < col_l0.size(); ++j)
            r.L0[static_cast<Eigen::Index>(j)] = cur.number(cells[col_l0[j]], col_l0[j]);
        if (ds.design == Design::TwoArm) {
            r.arm = ArmAssignment::two_arm(cur.arm(cells[*col_a], *col_a));
        } else if (ds.design == Design::FourArm) {
            r.arm = ArmAssignment::four_arm(cur.arm(cells[*col_ay], *col_ay), cur.arm(cells[*col_ad], *col_ad));
        } else {
            const std::string& kind = cells[*col_kind];
            if (kind == "two") {
                if (!cells[*col_ay].empty() || !cells[*col_ad].empty())
                    cur.fail(*col_ay, "two-arm rows leave AY and AD empty");
                r.arm = ArmAssignment::two_arm(cur.arm(cells[*col_a], *col_a));
            } else if (kind == "four") {
                if (!cells[*col_a].empty()) cur.fail(*col_a, "four-arm rows leave A empty");
                r.arm = ArmAssignment::four_arm(cur.arm(cells[*col_ay], *col_ay), cur.arm(cells[*col_ad], *col_ad));
            } else {
                cur.fail(*col_kind, "expected 'two' or 'four', got '" + kind + "'");
            }
        }
        r.C.resize(static_cast<std::size_t>(K + 1));
        r.D.resize(static_cast<std::size_t>(K + 1));
        for (int k = 1; k <= K + 1; ++k) {
            r.C[k - 1] = cur.flag(cells[col_c[k]], col_c[k]);
            r.D[k - 1] = cur.flag(cells[col_d[k]], col_d[k]);
        }
        r.L.assign(static_cast<std::size_t>(K), std::vector<std::optional<double>>(p));
        for (const auto& [k, cols] : col_l)
            for (std::size_t j = 0; j < cols.size(); ++j)
                r.L[k - 1][j] = cur.maybe(cells[cols[j].second], cols[j].second);
        r.Y = cur.maybe(cells[*col_y], *col_y);
        ds.records.push_back(std::move(r));
    }
    return ds;
}

TrialDataset load_csv(const std::string& path, Ordering ordering, const std::vector<std::string>& ay_block) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot read data file '" + path + "'");
    return read_csv(in, ordering, ay_block, path);
}

void write_csv(std::ostream& out, const TrialDataset& ds) {
    const int K = ds.grid.K;
    out << "id";
    for (const auto& n : ds.baseline_names) out << ",L0_" << n;
    switch (ds.design) {
        case Design::TwoArm: out << ",A"; break;
        case Design::FourArm: out << ",AY,AD"; break;
        case Design::SixArm: out << ",ARM_KIND,A,AY,AD"; break;
    }
    for (int k = 1; k <= K + 1; ++k) out << ",C_" << k;
    for (int k = 1; k <= K + 1; ++k) out << ",D_" << k;
    for (int k = 1; k <= K; ++k)
        for (const auto& n : ds.covariate_names) out << ",L" << k << "_" << n;
    out << ",Y\n";
    for (const auto& r : ds.records) {
        out << r.id;
        for (Eigen::Index j = 0; j < r.L0.size(); ++j) out << ',' << format_double(r.L0[j]);
        const bool four = r.arm.kind == ArmAssignment::Kind::FourArm;
        switch (ds.design) {
            case Design::TwoArm: out << ',' << r.arm.a(); break;
            case Design::FourArm: out << ',' << r.arm.a_y << ',' << r.arm.a_d; break;
            case Design::SixArm:
                if (four) out << ",four,," << r.arm.a_y << ',' << r.arm.a_d;
                else out << ",two," << r.arm.a() << ",,";
                break;
        }
        for (auto c : r.C) out << ',' << int(c);
        for (auto d : r.D) out << ',' << int(d);
        for (const auto& row : r.L)
            for (const auto& v : row) {
                out << ',';
                if (v) out << format_double(*v);
            }
        out << ',';
        if (r.Y) out << format_double(*r.Y);
        out << '\n';
    }
}

namespace {

ordered_json target_json(const Target& t) { return {{"a_y", t.a_y}, {"a_d", t.a_d}}; }

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json vector_json(const std::vector<double>& v) {
    ordered_json a = ordered_json::array();
    for (double x : v) a.push_back(number_or_null(x));
    return a;
}

}  // namespace

ordered_json to_json(const EstimateReport& r) {
    ordered_json j;
    j["estimand"] = r.target.label();
    j["target"] = target_json(r.target.primary);
    if (r.target.reference) j["reference"] = target_json(*r.target.reference);
    j["estimator"] = to_string(r.estimator);
    j["complete_case"] = r.complete_case;
    j["estimate"] = r.point;
    j["n_effective"] = r.n_effective;
    j["weights"] = {{"min", r.weights.min}, {"max", r.weights.max}, {"mean", r.weights.mean}, {"p99", r.weights.p99}};
    if (r.if_mean) j["if_mean"] = *r.if_mean;
    ordered_json nuis = ordered_json::array();
    for (const auto& s : r.nuisance)
        nuis.push_back({{"channel", s.channel},
                        {"formula", s.formula},
                        {"converged", s.converged},
                        {"iterations", s.iterations},
                        {"n_used", s.n_used},
                        {"loglik", s.loglik}});
    j["nuisance"] = nuis;
    if (r.ci)
        j["ci"] = {{"method", r.ci->method}, {"level", r.ci->level}, {"lo", r.ci->lo},
                   {"hi", r.ci->hi},         {"n_boot", r.ci->n_boot}, {"n_failed", r.ci->n_failed}};
    return j;
}

ordered_json to_json(const DiagnosticReport& r) {
    ordered_json j;
    j["check"] = r.check;
    j["alpha"] = r.alpha;
    j["min_p"] = r.min_p ? ordered_json(*r.min_p) : ordered_json(nullptr);
    j["threshold"] = r.threshold ? ordered_json(*r.threshold) : ordered_json(nullptr);
    j["rejected"] = r.rejected;
    ordered_json rows = ordered_json::array();
    for (const auto& row : r.rows) {
        ordered_json o;
        o["stratum"] = row.stratum;
        for (const auto& [k, v] : row.stats) o[k] = v;
        if (row.statistic) o["statistic"] = *row.statistic;
        if (row.p_value) o["p_value"] = *row.p_value;
        o["flagged"] = row.flagged;
        rows.push_back(o);
    }
    j["rows"] = rows;
    return j;
}

ordered_json to_json(const DiscreteLaw& law) {
    ordered_json j;
    j["K"] = law.grid.K;
    j["ordering"] = law.grid.ordering == Ordering::StandardCDL ? "standard" : "terminal_d_before_c";
    j["p0"] = law.p0;
    j["p"] = law.p;
    ordered_json part = ordered_json::array();
    for (const auto& row : law.partition.in_ad) {
        ordered_json r = ordered_json::array();
        for (bool b : row) r.push_back(b ? "AD" : "AY");
        part.push_back(r);
    }
    j["partition"] = part;
    j["f_l0"] = vector_json(law.f_l0);
    j["prop"] = vector_json(law.prop);
    auto nested = [](const std::vector<std::vector<double>>& v) {
        ordered_json a = ordered_json::array();
        for (const auto& x : v) a.push_back(vector_json(x));
        return a;
    };
    j["hazard_d"] = nested(law.hazard_d);
    j["hazard_c"] = nested(law.hazard_c);
    j["dens_l"] = nested(law.dens_l);
    j["mean_y"] = vector_json(law.mean_y);
    return j;
}

ordered_json provenance(const std::string& config_text, std::uint64_t seed) {
    return {{"tool", "sepfx"}, {"version", kVersion}, {"config_hash", fnv1a_hex(config_text)}, {"seed", seed}};
}

std::string display_estimand(const EstimandTarget& t, int K) {
    const std::string dk = "D_" + std::to_string(K + 1);
    auto one = [&](const Target& x) {
        if (x.a_y == x.a_d) {
            const std::string a = std::to_string(x.a_y);
            return "E[Y(a=" + a + ") | " + dk + "(a=" + a + ")=0]";
        }
        return "E[Y(aY=" + std::to_string(x.a_y) + ",aD=" + std::to_string(x.a_d) + ") | " + dk +
               "(aD=" + std::to_string(x.a_d) + ")=0]";
    };
    if (!t.reference) return one(t.primary);
    return one(t.primary) + " - " + one(*t.reference);
}

TableRow table_row(const EstimateReport& r, int K, std::optional<std::string> estimator_label) {
    TableRow row;
    row.estimand = display_estimand(r.target, K);
    row.estimator = estimator_label ? *estimator_label : to_string(r.estimator);
    if (r.complete_case && !estimator_label) row.estimator += " (complete case)";
    row.estimate = r.point;
    if (r.ci) {
        row.ci_lo = r.ci->lo;
        row.ci_hi = r.ci->hi;
    }
    return row;
}

std::string render_table(const std::vector<TableRow>& rows, double ci_level) {
    auto fixed = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    char lvl[16];
    std::snprintf(lvl, sizeof lvl, "%g", ci_level * 100.0);
    const std::vector<std::string> head = {"Estimand", "Estimator", "Estimate", "(" + std::string(lvl) + "% CI)"};
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
        std::string ci = "-";
        if (r.ci_lo && r.ci_hi) ci = "(" + fixed(*r.ci_lo) + ", " + fixed(*r.ci_hi) + ")";
        cells.push_back({r.estimand, r.estimator, fixed(r.estimate), ci});
    }
    std::vector<std::size_t> width(head.size());
    for (std::size_t c = 0; c < head.size(); ++c) {
        width[c] = head[c].size();
        for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& row) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) line += "  ";
            const std::string pad(width[c] - row[c].size(), ' ');
            line += c >= 2 ? pad + row[c] : row[c] + pad;  // numbers right-aligned
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        os << line << '\n';
    };
    emit(head);
    std::size_t total = 0;
    for (auto w : width) total += w;
    os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& row : cells) emit(row);
    return os.str();
}

ordered_json to_json(const std::vector<TableRow>& rows) {
    ordered_json a = ordered_json::array();
    for (const auto& r : rows) {
        ordered_json o{{"estimand", r.estimand}, {"estimator", r.estimator}, {"estimate", r.estimate}};
        if (r.ci_lo && r.ci_hi) {
            o["ci_lo"] = *r.ci_lo;
            o["ci_hi"] = *r.ci_hi;
        }
        a.push_back(o);
    }
    return a;
}

std::vector<TableRow> table_from_json(const ordered_json& j) {
    std::vector<TableRow> rows;
    for (const auto& o : j) {
        TableRow r;
        r.estimand = o.at("estimand").get<std::string>();
        r.estimator = o.at("estimator").get<std::string>();
        r.estimate = o.at("estimate").get<double>();
        if (o.contains("ci_lo")) {
            r.ci_lo = o.at("ci_lo").get<double>();
            r.ci_hi = o.at("ci_hi").get<double>();
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_file(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
}

}  // namespace sepfx
