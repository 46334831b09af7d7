#pragma once

#include <vector>

#include "qospower/common.hpp"
#include "qospower/problem.hpp"

namespace qospower {

enum class LineSearch { Exact1D, FixedGrid };

struct FWConfig {
    int max_iter = 50;
    double tol = 0.001;  // relative sum-rate improvement stop
    LineSearch line_search = LineSearch::Exact1D;

    void validate() const {
        if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
        if (tol <= 0) throw ConfigError("tol must be > 0");
    }
};

// Minimizes <c, p> over { p >= 0, A p <= P_max 1, C p >= d } with a two-phase
// dense primal simplex under Bland's rule. Rows are equilibrated internally;
// the returned point is a vertex satisfying every constraint within 1e-8 (in
// row-normalized units).
Vec solve_lp(const Vec& c, const ProblemInstance& inst);

struct FWTrace {
    std::vector<double> sum_rates;  // R(p^0), R(p^1), ...
    std::vector<double> lambdas;
};

struct FWResult {
    Vec p;
    FWTrace trace;
    int iterations = 0;
};

struct InfeasibleStart : InfeasibleError {
    explicit InfeasibleStart(const std::string& msg) : InfeasibleError(msg) {}
};

// Conditional-gradient ascent on the sum rate from a feasible p0: each round
// solves the LP with c = -grad R, then takes the best convex combination
// p <- (1-lambda) p + lambda v. R never decreases (lambda = 0 is allowed).
FWResult frank_wolfe(const Vec& p0, const ProblemInstance& inst, const FWConfig& cfg);

}  // namespace qospower
