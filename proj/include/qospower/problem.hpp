#pragma once

#include "qospower/channel.hpp"
#include "qospower/common.hpp"

namespace qospower {

// beta = 2^(alpha/W) - 1, the SINR target equivalent to a rate target.
double beta_from_alpha(double alpha, double W);
Vec beta_from_alpha(const Vec& alpha, double W);

enum class ConstraintKind { AffineRate, NonlinearRate, EnergyEfficiency };

// One channel realization with its assembled constraint system.
//
// Stacked inequality system g(p) = M p + n <= 0 with the fixed row order
//   rows [0, U)        : -p <= 0                  (non-negativity)
//   rows [U, U+B)      : A p - P_max 1 <= 0       (per-BS budget)
//   rows [U+B, 2U+B)   : d - C p <= 0             (rate / SINR)
// All downstream consumers (projection, LP, violation) rely on this order.
struct ProblemInstance {
    ChannelTensor H;
    Vec beta;      // per-user SINR target, stacked layout
    Vec d;         // beta .* sigma2
    Mat A;         // B x U budget selector
    Mat C;         // U x U block-diagonal SINR matrix
    Mat M;         // G x U stacked constraint matrix
    Vec n;         // G offsets
    double P_max = 0.0;
    double sigma2 = 0.0;
    double W = 0.0;

    // EnergyEfficiency thresholds [bits/joule], stacked layout; empty unless
    // the EE kind is used.
    Vec ee;

    int B() const { return H.B(); }
    int Q() const { return H.Q(); }
    int users() const { return H.users(); }
    int rows() const { return 2 * users() + B(); }

    std::string to_json() const;
};

ProblemInstance assemble_affine_constraints(const ChannelTensor& H, const NetworkConfig& cfg);

// Exactly-equivalent reparametrization with powers in units of P_max and the
// noise scaled to 1: gains become H * P_max / sigma2. SINRs and rates are
// unchanged; p_phys = P_max * p_scaled. Used by the learning pipelines so the
// constraint blocks share comparable magnitudes on physical datasets.
ProblemInstance nondimensionalized(const ProblemInstance& inst);

// Scales each row of the stacked system (M|n) to unit M-row norm. Same
// feasible set; the violation measure becomes a sum of squared distances.
// A, C, d keep their physical definitions.
ProblemInstance row_normalized(const ProblemInstance& inst);

// Hand-derived 2-user fixture used across the test suite: B=2, Q=1, W=1,
// sigma2=0.01, P_max=1, direct gains 1, cross gains 0.1, beta=1.
ProblemInstance toy2_instance();

// Per-user SINR and rates at power vector p (stacked layout).
Vec sinr_of(const Vec& p, const ChannelTensor& H, double sigma2);
Vec rates_of(const Vec& p, const ChannelTensor& H, double sigma2, double W);

// Stacked constraint values g(p) <= 0 for the requested kind. All kinds share
// the row order above; only the rate block changes:
//   AffineRate:        d - C p
//   NonlinearRate:     alpha - R_{b,q}(p)         (alpha = W log2(1+beta))
//   EnergyEfficiency:  ee .* p - R_{b,q}(p)
Vec eval_constraints(const Vec& p, const ProblemInstance& inst, ConstraintKind kind);

// Jacobian of g w.r.t. p for the requested kind (G x U, dense).
Mat constraint_jacobian(const Vec& p, const ProblemInstance& inst, ConstraintKind kind);

struct ViolationState {
    Vec g;
    BoolVec active;  // g > 0 strictly; I(0) = 0
    double V = 0.0;
    Vec grad;
    Mat hess;
};

// V = || max(g,0) ||^2. Only fills g/active/V.
ViolationState violation(const Vec& p, const ProblemInstance& inst,
                         ConstraintKind kind = ConstraintKind::AffineRate);

// Adds grad = 2 J^T max(g,0) and hess = 2 (J^T diag(active) J + sum_k max(g_k,0) T_k).
// For the affine kind T = 0 and hess is PSD.
ViolationState violation_derivatives(const Vec& p, const ProblemInstance& inst,
                                     ConstraintKind kind = ConstraintKind::AffineRate);

// Sum rate R = sum W log2(1 + SINR) and its exact gradient, including the
// interference cross terms on each channel.
struct SumRate {
    double R = 0.0;
    Vec grad;
};
SumRate sum_rate_and_grad(const Vec& p, const ChannelTensor& H, double sigma2, double W);
double sum_rate(const Vec& p, const ChannelTensor& H, double sigma2, double W);

}  // namespace qospower
