#include "qospower/proj_implicit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/QR>

namespace qospower {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDualTol = 1e-8;   // strictly-active threshold for the VJP
constexpr double kWeakTol = 1e-8;

// Least-squares pieces for the current working set: given N (U x m, columns
// are active normals) and target column a, returns z = projection of a onto
// null(N^T) and rv = N^+ a. Refactored each iteration; working sets stay tiny.
void step_directions(const Mat& N, const Vec& a, Vec& z, Vec& rv) {
    if (N.cols() == 0) {
        z = a;
        rv.resize(0);
        return;
    }
    Eigen::ColPivHouseholderQR<Mat> qr(N);
    rv = qr.solve(a);
    z = a - N * rv;
}

}  // namespace

QPSolution qp_project(const Vec& r, const ProblemInstance& inst) {
    const int U = inst.users();
    const int G = inst.rows();
    if (r.size() != U) throw ShapeMismatch("qp_project: r length != U");

    // Row-normalized >=0 form: a_i^T x >= b_i with a_i = -m_i/||m_i||.
    Mat Anorm(G, U);
    Vec bnorm(G), scale(G);
    for (int i = 0; i < G; ++i) {
        const double nu = inst.M.row(i).norm();
        scale[i] = nu;
        Anorm.row(i) = -inst.M.row(i) / nu;
        bnorm[i] = inst.n[i] / nu;
    }

    const double feas_tol = 1e-12 * std::max(1.0, r.norm());

    Vec x = r;
    std::vector<int> active;
    std::vector<double> u;  // duals of the working set, scaled units
    Mat N(U, 0);

    QPSolution sol;
    const int max_iter = 50 * (G + U) + 100;
    int iter = 0;

    auto slack = [&](int i) { return Anorm.row(i).dot(x) - bnorm[i]; };

    while (true) {
        if (++iter > max_iter) throw SolverError("qp_project: iteration limit reached");

        // most violated constraint not in the working set
        int target = -1;
        double worst = -feas_tol;
        for (int i = 0; i < G; ++i) {
            if (std::find(active.begin(), active.end(), i) != active.end()) continue;
            const double s = slack(i);
            if (s < worst) {
                worst = s;
                target = i;
            }
        }
        if (target < 0) break;  // primal feasible: done

        const Vec a = Anorm.row(target).transpose();
        double u_target = 0.0;

        // inner loop: take dual/primal steps until the target constraint holds
        while (true) {
            if (++iter > max_iter) throw SolverError("qp_project: iteration limit reached");
            Vec z, rv;
            step_directions(N, a, z, rv);
            const double zz = z.squaredNorm();

            // dual blocking step
            double t1 = kInf;
            int blocker = -1;
            for (size_t j = 0; j < u.size(); ++j) {
                if (rv[Eigen::Index(j)] > 1e-14) {
                    const double step = u[j] / rv[Eigen::Index(j)];
                    if (step < t1) {
                        t1 = step;
                        blocker = int(j);
                    }
                }
            }
            // full primal step onto the target hyperplane
            const double s_now = slack(target);
            const double t2 = (zz > 1e-28) ? -s_now / zz : kInf;

            if (t1 == kInf && t2 == kInf)
                throw SolverError("qp_project: infeasible subproblem (should not happen on filtered data)");

            const double t = std::min(t1, t2);
            if (t2 < kInf) x += std::min(t, t2) * z;
            for (size_t j = 0; j < u.size(); ++j) u[j] -= t * rv[Eigen::Index(j)];
            u_target += t;

            if (t == t2 && t2 <= t1) {
                // target becomes active
                active.push_back(target);
                u.push_back(u_target);
                N.conservativeResize(U, N.cols() + 1);
                N.col(N.cols() - 1) = a;
                break;
            }
            // drop the blocking constraint and retry
            active.erase(active.begin() + blocker);
            u.erase(u.begin() + blocker);
            const Eigen::Index m = N.cols();
            for (Eigen::Index c = blocker; c + 1 < m; ++c) N.col(c) = N.col(c + 1);
            N.conservativeResize(U, m - 1);
        }
    }

    sol.p = x;
    sol.iterations = iter;
    sol.duals = Vec::Zero(G);
    for (size_t j = 0; j < active.size(); ++j)
        sol.duals[active[j]] = std::max(0.0, u[j]) / scale[active[j]];

    const Vec g = inst.M * sol.p + inst.n;
    sol.active_set = sol.duals.array() > kDualTol;
    // weakly active: on the boundary (in row-normalized distance units) with a
    // vanishing multiplier; the VJP treats such rows as inactive
    sol.degenerate = false;
    for (int i = 0; i < G; ++i)
        if (std::abs(g[i]) / scale[i] <= kWeakTol && sol.duals[i] * scale[i] <= kDualTol)
            sol.degenerate = true;

    const double primal = g.maxCoeff();
    const double stationarity = (sol.p - r + inst.M.transpose() * sol.duals).cwiseAbs().maxCoeff();
    double compl_res = 0.0;
    for (int i = 0; i < G; ++i) compl_res = std::max(compl_res, std::abs(sol.duals[i] * g[i]));
    sol.kkt_residual = std::max({primal, stationarity, compl_res});
    return sol;
}

Vec qp_vjp(const QPSolution& sol, const ProblemInstance& inst, const Vec& upstream) {
    const int U = inst.users();
    const int G = inst.rows();
    if (upstream.size() != U) throw ShapeMismatch("qp_vjp: upstream length != U");

    std::vector<int> strict;
    for (int i = 0; i < G; ++i)
        if (sol.duals[i] > kDualTol) strict.push_back(i);
    if (strict.empty()) return upstream;

    // dp/dr = I - Ma^T (Ma Ma^T)^{-1} Ma with Ma the strictly active rows;
    // realized via an orthonormal basis of range(Ma^T), invariant to row
    // scaling, so normalize rows first.
    Mat Nt(U, Eigen::Index(strict.size()));
    for (size_t j = 0; j < strict.size(); ++j)
        Nt.col(Eigen::Index(j)) = inst.M.row(strict[j]).normalized().transpose();
    Eigen::ColPivHouseholderQR<Mat> qr(Nt);
    const Eigen::Index rank = qr.rank();
    Mat Qfull = qr.householderQ();
    Mat Q1 = Qfull.leftCols(rank);
    return upstream - Q1 * (Q1.transpose() * upstream);
}

}  // namespace qospower
