#ifndef SEPFX_CORE_DATA_HPP
#define SEPFX_CORE_DATA_HPP

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sepfx {

/// Within-interval order of censoring and the truncating event.
///
/// StandardCDL: every interval k+1 is ordered (C_{k+1}, D_{k+1}, L_{k+1}).
/// TerminalDBeforeC: as StandardCDL, except that in the last interval K+1
/// the event D_{K+1} precedes censoring C_{K+1} (outcome missingness).
enum class Ordering { StandardCDL, TerminalDBeforeC };

struct TimeGrid {
    int K = 1;  ///< interior intervals; the outcome is measured at K+1
    Ordering ordering = Ordering::StandardCDL;

    int n_intervals() const { return K + 1; }
    /// 1-based index of the censoring indicator that precedes D_{k+1}.
    int censor_before_event(int k) const {
        return (ordering == Ordering::TerminalDBeforeC && k == K) ? k : k + 1;
    }
};

enum class Design { TwoArm, FourArm, SixArm };

/// A record's treatment assignment. Two-arm records have a_y == a_d == a.
struct ArmAssignment {
    enum class Kind : std::uint8_t { TwoArm, FourArm };
    Kind kind = Kind::TwoArm;
    int a_y = 0;
    int a_d = 0;

    static ArmAssignment two_arm(int a) { return {Kind::TwoArm, a, a}; }
    static ArmAssignment four_arm(int a_y, int a_d) { return {Kind::FourArm, a_y, a_d}; }
    int a() const { return a_y; }
    bool operator==(const ArmAssignment&) const = default;
};

/// One individual. Indices are stored 0-based: D[k] is D_{k+1}, L[k] is L_{k+1}.
struct LongitudinalRecord {
    std::string id;
    Eigen::VectorXd L0;
    ArmAssignment arm;
    std::vector<std::uint8_t> D;                          // K+1
    std::vector<std::uint8_t> C;                          // K+1
    std::vector<std::vector<std::optional<double>>> L;    // K x p
    std::optional<double> Y;

    int event(int k) const { return k == 0 ? 0 : D[k - 1]; }     ///< D_k, D_0 = 0
    int censored(int k) const { return k == 0 ? 0 : C[k - 1]; }  ///< C_k, C_0 = 0
    bool survived() const { return D.back() == 0; }
    /// L_{k,j} for model design; value 0 before the first measurement (k = 0).
    double covariate(int k, std::size_t j) const;
};

/// Time-varying covariates in the AD block have their density evaluated at
/// a_D; the rest (AY block) at a_Y conditional on the AD block.
struct Partition {
    std::vector<std::vector<bool>> in_ad;  ///< [k-1][j] for k = 1..K

    static Partition all_ad(int K, std::size_t p);
    bool ad(int k, std::size_t j) const { return in_ad[k - 1][j]; }
};

struct TrialDataset {
    TimeGrid grid;
    Design design = Design::TwoArm;
    std::vector<std::string> baseline_names;
    std::vector<std::string> covariate_names;
    Partition partition;
    std::vector<LongitudinalRecord> records;

    std::size_t size() const { return records.size(); }
    std::size_t n_baseline() const { return baseline_names.size(); }
    std::size_t n_covariates() const { return covariate_names.size(); }
    bool has_censoring() const;
};

struct Violation {
    std::string record_id;
    std::string field;
    std::string rule;
};

std::vector<Violation> validate_dataset(const TrialDataset& ds);

/// Records with arm a (two-arm) and D_{K+1} = 0, in original order.
TrialDataset restrict_survivors(const TrialDataset& ds, int a);

/// Same schema, no records.
TrialDataset empty_like(const TrialDataset& ds);

}  // namespace sepfx

#endif  // SEPFX_CORE_DATA_HPP
