#ifndef SEPFX_IO_HPP
#define SEPFX_IO_HPP

#include "sepfx/core_data.hpp"
#include "sepfx/diagnostics.hpp"
#include "sepfx/estimators.hpp"
#include "sepfx/identification.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sepfx {

inline constexpr const char* kVersion = "0.3.0";

/// Wide CSV. The header fixes K, covariate names and the design; time-varying
/// covariates listed in `ay_block` go to the AY block, the rest to AD.
TrialDataset read_csv(std::istream& in, Ordering ordering = Ordering::StandardCDL,
                      const std::vector<std::string>& ay_block = {}, const std::string& origin = "<csv>");
TrialDataset load_csv(const std::string& path, Ordering ordering = Ordering::StandardCDL,
                      const std::vector<std::string>& ay_block = {});

void write_csv(std::ostream& out, const TrialDataset& ds);

/// "%.17g", which reads back to the same double.
std::string format_double(double v);

nlohmann::ordered_json to_json(const EstimateReport& r);
nlohmann::ordered_json to_json(const DiagnosticReport& r);
nlohmann::ordered_json to_json(const DiscreteLaw& law);
nlohmann::ordered_json provenance(const std::string& config_text, std::uint64_t seed);

/// One line of the printed estimate table.
struct TableRow {
    std::string estimand;
    std::string estimator;
    double estimate = 0.0;
    std::optional<double> ci_lo, ci_hi;
};

/// Estimand in display form, e.g. "E[Y(aY=0,aD=1) | D_12(aD=1)=0]".
std::string display_estimand(const EstimandTarget& t, int K);

TableRow table_row(const EstimateReport& r, int K, std::optional<std::string> estimator_label = {});

/// Fixed-width table: Estimand, Estimator, Estimate, (95% CI); six decimals.
std::string render_table(const std::vector<TableRow>& rows, double ci_level = 0.95);

nlohmann::ordered_json to_json(const std::vector<TableRow>& rows);
std::vector<TableRow> table_from_json(const nlohmann::ordered_json& j);

/// Writes `text` to path, creating parent directories.
void write_file(const std::string& path, const std::string& text);

}  // namespace sepfx

#endif  // SEPFX_IO_HPP
