#include "qospower/feasibility.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "qospower/problem.hpp"

namespace qospower {

namespace {
constexpr int kPowerIters = 500;
constexpr double kPowerTol = 1e-12;
constexpr double kRadiusMargin = 1e-12;  // reject rho >= 1 - margin: I - B^q near singular
}

double spectral_radius(const Mat& A) {
    const int n = int(A.rows());
    if (n == 1) return std::abs(A(0, 0));
    const double amax = A.cwiseAbs().maxCoeff();
    if (amax == 0.0) return 0.0;

    // Tiny off-diagonal mass: eigenvalues sit on the diagonal up to noise and
    // the shifted iteration stalls on ties, so use the dense solver directly.
    const double offdiag = A.cwiseAbs().sum() - A.diagonal().cwiseAbs().sum();
    if (offdiag < 1e-14 * amax) {
        Eigen::EigenSolver<Mat> es(A, false);
        return es.eigenvalues().cwiseAbs().maxCoeff();
    }

    // Power iteration on A + cI: the shift makes the Perron root strictly
    // dominant in modulus (nonnegative matrices can have -rho as a second
    // eigenvalue of equal modulus, e.g. zero-diagonal 2x2 exchange blocks).
    const double shift = amax;
    const Mat As = A + shift * Mat::Identity(n, n);
    Vec v = Vec::Constant(n, 1.0 / std::sqrt(double(n)));
    double lambda = 0.0;
    for (int it = 0; it < kPowerIters; ++it) {
        Vec w = As * v;
        const double next = w.norm();  // ||As v|| with ||v|| = 1
        if (next == 0.0) return 0.0;
        v = w / next;
        if (it > 0 && std::abs(next - lambda) <= kPowerTol * std::max(1.0, next))
            return std::abs(next - shift);
        lambda = next;
    }
    // no convergence within budget: dense fallback
    Eigen::EigenSolver<Mat> es(A, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

BqRadius build_Bq_and_radius(const ChannelTensor& H, const Vec& beta, int q) {
    const int B = H.B();
    BqRadius out;
    out.Bq = Mat::Zero(B, B);
    for (int b = 0; b < B; ++b) {
        const double direct = H.at(b, q, b);
        if (direct <= 0) throw InfeasibleError("nonpositive direct gain");
        for (int bhat = 0; bhat < B; ++bhat)
            if (bhat != b)
                out.Bq(b, bhat) = beta[p_index(b, q, B)] * H.at(b, q, bhat) / direct;
    }
    out.rho = spectral_radius(out.Bq);
    return out;
}

std::optional<Vec> min_power_profile(const ChannelTensor& H, const Vec& beta, double sigma2,
                                     FeasibilityReport* report) {
    const int B = H.B(), Q = H.Q(), U = H.users();
    Vec p(U);
    Vec rho(Q);
    for (int q = 0; q < Q; ++q) {
        BqRadius bq = build_Bq_and_radius(H, beta, q);
        rho[q] = bq.rho;
        if (bq.rho >= 1.0 - kRadiusMargin) {
            if (report) {
                report->feasible = false;
                report->rho = rho.head(q + 1);
                report->reason = FeasibilityReason::RadiusExceeded;
                report->offending_index = q;
            }
            return std::nullopt;
        }
        Vec u(B);
        for (int b = 0; b < B; ++b)
            u[b] = beta[p_index(b, q, B)] * sigma2 / H.at(b, q, b);
        const Mat lhs = Mat::Identity(B, B) - bq.Bq;
        const Vec pq = lhs.partialPivLu().solve(u);
        for (int b = 0; b < B; ++b) p[p_index(b, q, B)] = pq[b];
    }
    if (report) {
        report->rho = rho;
        report->reason = FeasibilityReason::OK;
    }
    return p;
}

FeasibilityReport feasibility_filter(const ChannelTensor& H, const Vec& beta, double sigma2,
                                     double P_max, double /*W*/) {
    FeasibilityReport rep;
    auto witness = min_power_profile(H, beta, sigma2, &rep);
    if (!witness) return rep;

    const int B = H.B(), Q = H.Q();
    if (witness->minCoeff() < 0.0) {
        rep.feasible = false;
        rep.reason = FeasibilityReason::NegativePower;
        return rep;
    }
    for (int b = 0; b < B; ++b) {
        double rowsum = 0.0;
        for (int q = 0; q < Q; ++q) rowsum += (*witness)[p_index(b, q, B)];
        if (rowsum > P_max) {
            rep.feasible = false;
            rep.reason = FeasibilityReason::BudgetExceeded;
            rep.offending_index = b;
            return rep;
        }
    }
    rep.feasible = true;
    rep.witness = std::move(*witness);
    return rep;
}

FeasibilityReport feasibility_filter(const ChannelTensor& H, const NetworkConfig& cfg) {
    const Vec beta = beta_from_alpha(cfg.alpha_vec(), cfg.W);
    return feasibility_filter(H, beta, cfg.sigma2, cfg.P_max, cfg.W);
}

}  // namespace qospower
