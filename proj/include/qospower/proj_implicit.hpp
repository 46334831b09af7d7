#pragma once

#include "qospower/common.hpp"
#include "qospower/problem.hpp"

namespace qospower {

struct QPSolution {
    Vec p;
    Vec duals;          // length G, one multiplier per inequality row, >= 0
    BoolVec active_set; // rows with a strictly positive multiplier
    int iterations = 0;
    double kkt_residual = 0.0;  // max of primal/stationarity/complementarity residuals
    bool degenerate = false;    // weakly active rows present (|g| ~ 0 with ~zero dual)
};

// Euclidean projection of r onto { p : M p + n <= 0 } by a dual active-set
// method of the Goldfarb-Idnani family, specialized to the identity Hessian.
// Constraint rows are normalized internally so the mixed scales of the
// nonneg/budget/rate blocks do not skew the pivoting tolerances; returned
// duals are in original row units. Throws SolverError on stall.
QPSolution qp_project(const Vec& r, const ProblemInstance& inst);

// Reverse-mode through the projection: (dp/dr)^T upstream. With the strictly
// active rows M_A, dp/dr is the orthogonal projector onto null(M_A); weakly
// active rows are treated as inactive.
Vec qp_vjp(const QPSolution& sol, const ProblemInstance& inst, const Vec& upstream);

}  // namespace qospower
