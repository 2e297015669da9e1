#ifndef SEPFX_DIAGNOSTICS_HPP
#define SEPFX_DIAGNOSTICS_HPP

#include "sepfx/core_data.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sepfx {

struct DiagnosticRow {
    std::string stratum;
    std::vector<std::pair<std::string, double>> stats;
    std::optional<double> statistic;
    std::optional<double> p_value;
    bool flagged = false;
};

struct DiagnosticReport {
    std::string check;
    std::vector<DiagnosticRow> rows;
    double alpha = 0.05;
    std::optional<double> min_p;
    std::optional<double> threshold;  ///< Bonferroni-adjusted level
    bool rejected = false;            ///< positivity: any flagged cell

    bool passed() const { return !rejected; }
};

/// Two-proportion z-test with continuity correction; p = 1 when the pooled
/// proportion is degenerate or the corrected difference is not positive.
std::pair<double, double> two_proportion_test(double x1, double n1, double x0, double n0);

/// Welch z-test for a difference in means.
std::pair<double, double> two_mean_test(const std::vector<double>& y1, const std::vector<double>& y0);

/// Arm counts in every observed history cell among event-free uncensored rows.
DiagnosticReport check_positivity(const TrialDataset& ds);

/// Risk-set-conditional D_{k+1} across a_Y within each a_D stratum (four-arm data).
DiagnosticReport falsify_ay_isolation(const TrialDataset& ds, double alpha = 0.05);

/// (a, a) four-arm records versus A = a two-arm records (six-arm data):
/// risk-set-conditional D_{k+1} and Y among uncensored survivors.
DiagnosticReport falsify_modified_treatment(const TrialDataset& ds, double alpha = 0.05);

}  // namespace sepfx

#endif  // SEPFX_DIAGNOSTICS_HPP
