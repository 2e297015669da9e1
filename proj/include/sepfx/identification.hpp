#ifndef SEPFX_IDENTIFICATION_HPP
#define SEPFX_IDENTIFICATION_HPP

#include "sepfx/core_data.hpp"
#include "sepfx/sim_engine.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace sepfx {

/// Observed-data law over binary L0 (p0 components) and binary L_k (p
/// components). A history h_k packs (l0, l1, ..., lk) into bits:
/// l0 occupies bits [0, p0), l_k occupies bits [p0 + (k-1)p, p0 + kp).
/// Undefined cells (no conditioning mass) hold NaN.
struct DiscreteLaw {
    TimeGrid grid;
    std::size_t p0 = 0, p = 0;
    Partition partition;

    std::vector<double> f_l0;                   ///< P(L0 = h0)
    std::vector<double> prop;                   ///< P(A = 1 | L0 = h0)
    std::vector<std::vector<double>> hazard_d;  ///< [k][h_k*2 + a]: P(D_{k+1}=1 | D_k=0, uncensored, h_k, a), k = 0..K
    std::vector<std::vector<double>> hazard_c;  ///< [k][h_k*2 + a]: P(C_{k+1}=1 | at risk, h_k, a)
    std::vector<std::vector<double>> dens_l;    ///< [k-1][(h_{k-1}*2 + a)*2^p + l]: P(L_k = l | D_k=C_k=0, h_{k-1}, a)
    std::vector<double> mean_y;                 ///< [h_K*2 + a]: E(Y | D_{K+1}=C_{K+1}=0, h_K, a)

    std::size_t n_histories(int k) const { return std::size_t{1} << (p0 + k * p); }
    std::size_t n_levels() const { return std::size_t{1} << p; }
    /// P(L0 = h0 | A = a); NaN if P(A = a) = 0.
    double baseline_given(std::size_t h0, int a) const;
};

/// Throws InvalidLaw on inconsistent table sizes, probabilities outside [0,1],
/// or density rows that do not sum to 1 within 1e-12.
void check_discrete_law(const DiscreteLaw& law);

/// The censored g-formula with the law's (L_AY, L_AD) partition.
double gformula_exact(const DiscreteLaw& law, int a_y, int a_d);

/// Ratio of weighted survivor sums in arm a_Y with weights W_C * W_D * W_LAD.
double weighted_repr_exact(const DiscreteLaw& law, int a_y, int a_d);

/// Conditional tables of the two-arm observed world implied by a structural
/// law. Requires binary covariates and at most 2^20 histories.
DiscreteLaw law_from_structural(const StructuralLaw& law,
                                const std::optional<InjectedViolation>& violation = {});

/// Empirical conditional frequencies of a two-arm dataset with binary
/// covariates. Partition is taken from the dataset.
DiscreteLaw empirical_law(const TrialDataset& ds);

/// Packed history index of a record's (L0, L_1..L_k).
std::size_t history_index(const LongitudinalRecord& rec, int k, std::size_t p0, std::size_t p);

}  // namespace sepfx

#endif  // SEPFX_IDENTIFICATION_HPP
