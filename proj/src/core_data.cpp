#include "sepfx/core_data.hpp"

#include "sepfx/error.hpp"

#include <algorithm>
#include <unordered_set>

namespace sepfx {

double LongitudinalRecord::covariate(int k, std::size_t j) const {
    if (k == 0) return 0.0;
    const auto& v = L[k - 1][j];
    return v ? *v : 0.0;
}

Partition Partition::all_ad(int K, std::size_t p) {
    Partition out;
    out.in_ad.assign(K, std::vector<bool>(p, true));
    return out;
}

bool TrialDataset::has_censoring() const {
    return std::any_of(records.begin(), records.end(),
                       [](const LongitudinalRecord& r) { return r.C.back() != 0; });
}

namespace {

bool absorbing(const std::vector<std::uint8_t>& x) {
    for (std::size_t k = 1; k < x.size(); ++k)
        if (x[k - 1] && !x[k]) return false;
    return true;
}

int first_one(const std::vector<std::uint8_t>& x) {
    for (std::size_t k = 0; k < x.size(); ++k)
        if (x[k]) return static_cast<int>(k) + 1;
    return 0;
}

}  // namespace

std::vector<Violation> validate_dataset(const TrialDataset& ds) {
    std::vector<Violation> out;
    const int K = ds.grid.K;
    const std::size_t p = ds.n_covariates();
    std::unordered_set<std::string> seen;

    if (ds.partition.in_ad.size() != static_cast<std::size_t>(K))
        out.push_back({"", "partition", "partition must cover every time k = 1..K"});
    for (const auto& row : ds.partition.in_ad)
        if (row.size() != p) {
            out.push_back({"", "partition", "partition width must equal covariate count"});
            break;
        }

    for (const auto& r : ds.records) {
        auto bad = [&](const std::string& field, const std::string& rule) {
            out.push_back({r.id, field, rule});
        };
        if (!seen.insert(r.id).second) bad("id", "duplicate id");
        if (static_cast<std::size_t>(r.L0.size()) != ds.n_baseline()) {
            bad("L0", "baseline dimension mismatch");
        }
        if (r.D.size() != static_cast<std::size_t>(K + 1) ||
            r.C.size() != static_cast<std::size_t>(K + 1) ||
            r.L.size() != static_cast<std::size_t>(K)) {
            bad("grid", "record length does not match grid");
            continue;
        }
        bool ragged = false;
        for (const auto& l : r.L) ragged |= l.size() != p;
        if (ragged) {
            bad("L", "covariate dimension mismatch");
            continue;
        }
        for (auto v : r.D)
            if (v > 1) bad("D", "indicator not 0/1");
        for (auto v : r.C)
            if (v > 1) bad("C", "indicator not 0/1");

        switch (ds.design) {
            case Design::TwoArm:
                if (r.arm.kind != ArmAssignment::Kind::TwoArm) bad("arm", "expected two-arm assignment");
                break;
            case Design::FourArm:
                if (r.arm.kind != ArmAssignment::Kind::FourArm) bad("arm", "expected four-arm assignment");
                break;
            case Design::SixArm:
                break;
        }
        if (r.arm.kind == ArmAssignment::Kind::TwoArm && r.arm.a_y != r.arm.a_d)
            bad("arm", "two-arm record with a_y != a_d");
        if (r.arm.a_y < 0 || r.arm.a_y > 1 || r.arm.a_d < 0 || r.arm.a_d > 1)
            bad("arm", "treatment not 0/1");

        if (!absorbing(r.D)) bad("D", "D not absorbing");
        if (!absorbing(r.C)) bad("C", "C not absorbing");
        const int d_at = first_one(r.D);
        const int c_at = first_one(r.C);
        if (d_at && c_at) bad("C", "event and censoring both recorded");

        for (int k = 1; k <= K; ++k) {
            const bool at_risk = r.event(k) == 0 && r.censored(k) == 0;
            for (std::size_t j = 0; j < p; ++j) {
                const bool present = r.L[k - 1][j].has_value();
                if (at_risk && !present) bad("L" + std::to_string(k), "L must be present");
                if (!at_risk && present) bad("L" + std::to_string(k), "L present after truncation");
            }
        }
        const bool y_defined = r.D[K] == 0 && r.C[K] == 0;
        if (y_defined && !r.Y) bad("Y", "Y must be present");
        if (!y_defined && r.Y) bad("Y", "Y present after truncation");
    }
    return out;
}

TrialDataset empty_like(const TrialDataset& ds) {
    TrialDataset out;
    out.grid = ds.grid;
    out.design = ds.design;
    out.baseline_names = ds.baseline_names;
    out.covariate_names = ds.covariate_names;
    out.partition = ds.partition;
    return out;
}

TrialDataset restrict_survivors(const TrialDataset& ds, int a) {
    TrialDataset out = empty_like(ds);
    for (const auto& r : ds.records)
        if (r.arm.kind == ArmAssignment::Kind::TwoArm && r.arm.a() == a && r.survived())
            out.records.push_back(r);
    if (out.records.empty())
        throw EmptySubset("no surviving records in arm " + std::to_string(a));
    return out;
}

}  // namespace sepfx
