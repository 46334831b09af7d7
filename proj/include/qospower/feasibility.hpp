#pragma once

#include <optional>

#include "qospower/channel.hpp"
#include "qospower/common.hpp"

namespace qospower {

enum class FeasibilityReason { OK, RadiusExceeded, BudgetExceeded, NegativePower };

struct FeasibilityReport {
    bool feasible = false;
    Vec rho;  // spectral radius of B^q per channel
    std::optional<Vec> witness;  // minimum-power profile, stacked layout
    FeasibilityReason reason = FeasibilityReason::OK;
    int offending_index = -1;  // channel (RadiusExceeded) or BS (BudgetExceeded)
};

// B^q has zero diagonal and off-diagonal beta_{b,q} H[b][q][bhat] / H[b][q][b].
// rho is the Perron root, found by power iteration (500 iterations or relative
// change < 1e-12) with a dense eigensolver fallback.
struct BqRadius {
    Mat Bq;
    double rho = 0.0;
};
BqRadius build_Bq_and_radius(const ChannelTensor& H, const Vec& beta, int q);

// Spectral radius of a general nonnegative matrix (shared by build_Bq_and_radius
// and the robust-CSI search).
double spectral_radius(const Mat& A);

// Per channel: P_{:,q} = (I - B^q)^{-1} u^q with u^q_b = beta_{b,q} sigma2 / H[b][q][b].
// Requires rho(B^q) < 1 - 1e-12 on every channel; the witness makes every rate
// constraint tight (SINR == beta).
std::optional<Vec> min_power_profile(const ChannelTensor& H, const Vec& beta, double sigma2,
                                     FeasibilityReport* report = nullptr);

// Full check: all spectral radii < 1, witness elementwise >= 0, per-BS row
// sums <= P_max.
FeasibilityReport feasibility_filter(const ChannelTensor& H, const NetworkConfig& cfg);
FeasibilityReport feasibility_filter(const ChannelTensor& H, const Vec& beta, double sigma2,
                                     double P_max, double W);

}  // namespace qospower
