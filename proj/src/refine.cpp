#include "qospower/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace qospower {

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kSimplexTol = 1e-9;

// Dense tableau simplex core, Bland's rule. rows: m constraints in the form
// T x = rhs with rhs >= 0 and a starting basis of identity columns.
struct Tableau {
    Mat T;            // m x n
    Vec rhs;          // m
    Vec cost;         // n, phase objective (minimize)
    std::vector<int> basis;

    int m() const { return int(T.rows()); }
    int n() const { return int(T.cols()); }

    // reduced costs via the basis-substituted objective row
    void run(int max_pivots) {
        Vec z = cost;  // working objective row
        // eliminate basic columns from the objective row
        for (int r = 0; r < m(); ++r) {
            const int bc = basis[r];
            if (z[bc] != 0.0) {
                z -= z[bc] * T.row(r).transpose();
                z[bc] = 0.0;
            }
        }
        const double ztol = kSimplexTol * std::max(1.0, cost.cwiseAbs().maxCoeff());
        for (int pivot_count = 0; pivot_count < max_pivots; ++pivot_count) {
            // Bland: entering = lowest index with negative reduced cost
            int enter = -1;
            for (int j = 0; j < n(); ++j)
                if (z[j] < -ztol) { enter = j; break; }
            if (enter < 0) return;  // optimal

            // ratio test, Bland tie-break on lowest basis variable index
            int leave = -1;
            double best = std::numeric_limits<double>::infinity();
            for (int r = 0; r < m(); ++r) {
                if (T(r, enter) > kPivotTol) {
                    const double ratio = rhs[r] / T(r, enter);
                    if (ratio < best - 1e-15 ||
                        (ratio < best + 1e-15 && (leave < 0 || basis[r] < basis[leave]))) {
                        best = ratio;
                        leave = r;
                    }
                }
            }
            if (leave < 0) throw SolverError("solve_lp: unbounded direction (internal error)");

            // pivot
            const double piv = T(leave, enter);
            T.row(leave) /= piv;
            rhs[leave] /= piv;
            for (int r = 0; r < m(); ++r) {
                if (r == leave) continue;
                const double f = T(r, enter);
                if (f != 0.0) {
                    T.row(r) -= f * T.row(leave);
                    rhs[r] -= f * rhs[leave];
                }
            }
            const double fz = z[enter];
            if (fz != 0.0) {
                z -= fz * T.row(leave).transpose();
                z[enter] = 0.0;
            }
            basis[leave] = enter;
        }
        throw SolverError("solve_lp: pivot limit reached (numerical stall)");
    }
};

}  // namespace

Vec solve_lp(const Vec& c, const ProblemInstance& inst) {
    const int U = inst.users();
    const int B = inst.B();
    if (c.size() != U) throw ShapeMismatch("solve_lp: cost length != U");

    // rows: budget (<=, slack) then rate (>=, surplus + artificial)
    const int m = B + U;
    const int n_struct = U + B + U;     // x, slack, surplus
    const int n_total = n_struct + m;   // + artificials (one per row for phase 1)

    Mat T0 = Mat::Zero(m, n_total);
    Vec rhs(m);
    // equilibrate each row by its max |coefficient| so the pathloss-scale rate
    // rows and O(1) budget rows share pivot tolerances
    for (int i = 0; i < B; ++i) {
        double s = std::max(inst.A.row(i).cwiseAbs().maxCoeff(), std::abs(inst.P_max));
        T0.block(i, 0, 1, U) = inst.A.row(i) / s;
        T0(i, U + i) = 1.0;
        rhs[i] = inst.P_max / s;
    }
    for (int i = 0; i < U; ++i) {
        double s = std::max(inst.C.row(i).cwiseAbs().maxCoeff(), std::abs(inst.d[i]));
        if (s == 0.0) s = 1.0;
        T0.block(B + i, 0, 1, U) = inst.C.row(i) / s;
        T0(B + i, U + B + i) = -1.0;
        rhs[B + i] = inst.d[i] / s;
    }
    // rhs >= 0 required by construction here (P_max > 0, d >= 0)
    for (int r = 0; r < m; ++r) {
        if (rhs[r] < 0) {
            T0.row(r) *= -1.0;
            rhs[r] *= -1.0;
        }
        T0(r, n_struct + r) = 1.0;
    }

    Tableau tab;
    tab.T = T0;
    tab.rhs = rhs;
    tab.basis.resize(m);
    for (int r = 0; r < m; ++r) tab.basis[r] = n_struct + r;

    // Phase 1: minimize sum of artificials
    tab.cost = Vec::Zero(n_total);
    tab.cost.tail(m).setConstant(1.0);
    tab.run(200 * (m + n_total));

    double art_sum = 0.0;
    for (int r = 0; r < m; ++r)
        if (tab.basis[r] >= n_struct) art_sum += tab.rhs[r];
    if (art_sum > 1e-7)
        throw InfeasibleError("solve_lp: phase-1 infeasible (instance violates the feasibility pre)");

    // drive leftover degenerate artificials out of the basis where possible,
    // pivoting on the largest structural entry of the row
    for (int r = 0; r < m; ++r) {
        if (tab.basis[r] < n_struct) continue;
        int enter = -1;
        double largest = kPivotTol;
        for (int j = 0; j < n_struct; ++j)
            if (std::abs(tab.T(r, j)) > largest) {
                largest = std::abs(tab.T(r, j));
                enter = j;
            }
        if (enter < 0) continue;  // redundant row; harmless to keep
        const double piv = tab.T(r, enter);
        tab.T.row(r) /= piv;
        tab.rhs[r] /= piv;
        for (int r2 = 0; r2 < m; ++r2) {
            if (r2 == r) continue;
            const double f = tab.T(r2, enter);
            if (f != 0.0) {
                tab.T.row(r2) -= f * tab.T.row(r);
                tab.rhs[r2] -= f * tab.rhs[r];
            }
        }
        tab.basis[r] = enter;
    }

    // Phase 2: forbid artificials (large cost would re-admit them; instead we
    // zero their columns so they can never re-enter)
    tab.T.rightCols(m).setZero();
    for (int r = 0; r < m; ++r)
        if (tab.basis[r] >= n_struct) tab.T(r, tab.basis[r]) = 1.0;
    tab.cost = Vec::Zero(n_total);
    tab.cost.head(U) = c;
    tab.run(200 * (m + n_total));

    Vec x = Vec::Zero(U);
    for (int r = 0; r < m; ++r)
        if (tab.basis[r] < U) x[tab.basis[r]] = tab.rhs[r];
    return x;
}

namespace {

double rate_at(const Vec& p, const ProblemInstance& inst) {
    return sum_rate(p, inst.H, inst.sigma2, inst.W);
}

// golden-section maximization of R along the segment p -> v, 40 evaluations,
// endpoints included
double best_lambda(const Vec& p, const Vec& v, const ProblemInstance& inst, LineSearch ls) {
    auto f = [&](double lam) { return rate_at(p + lam * (v - p), inst); };
    double best_l = 0.0;
    double best_f = f(0.0);
    auto consider = [&](double lam) {
        const double val = f(lam);
        if (val > best_f) {
            best_f = val;
            best_l = lam;
        }
    };
    if (ls == LineSearch::FixedGrid) {
        for (int i = 1; i <= 40; ++i) consider(double(i) / 40.0);
        return best_l;
    }
    const double gr = 0.6180339887498949;
    double a = 0.0, b = 1.0;
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = f(x1), f2 = f(x2);
    consider(1.0);
    for (int i = 0; i < 36; ++i) {
        if (f1 > f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = f(x2);
        }
    }
    consider(0.5 * (a + b));
    return best_l;
}

}  // namespace

FWResult frank_wolfe(const Vec& p0, const ProblemInstance& inst, const FWConfig& cfg) {
    cfg.validate();
    if (violation(p0, inst).V > 1e-8)
        throw InfeasibleStart("frank_wolfe: starting point violates the constraints");

    FWResult out;
    out.p = p0;
    double R = rate_at(out.p, inst);
    out.trace.sum_rates.push_back(R);

    for (int t = 0; t < cfg.max_iter; ++t) {
        const SumRate sr = sum_rate_and_grad(out.p, inst.H, inst.sigma2, inst.W);
        const Vec v = solve_lp(-sr.grad, inst);  // ascent direction vertex
        const double lam = best_lambda(out.p, v, inst, cfg.line_search);
        if (lam > 0.0) out.p = out.p + lam * (v - out.p);
        const double R_next = rate_at(out.p, inst);
        out.trace.sum_rates.push_back(R_next);
        out.trace.lambdas.push_back(lam);
        ++out.iterations;
        const double rel = (R_next - R) / std::max(R, 1e-12);
        R = R_next;
        if (rel < cfg.tol) break;
    }
    return out;
}

}  // namespace qospower
