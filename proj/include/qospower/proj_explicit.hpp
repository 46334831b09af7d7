#pragma once

#include <vector>

#include "qospower/common.hpp"
#include "qospower/problem.hpp"

namespace qospower {

struct CorrectionConfig {
    int train_steps = 5;
    int test_steps = 100;       // 300 recommended for the non-convex kinds
    double step_size = 0.01;    // gamma, tuned per dataset
    double momentum = 0.5;      // mu
    double hessian_reg = 1e-8;  // alpha added to the Hessian diagonal
    bool clamp = true;          // elementwise max(x, 0) after every update
    double stop_tol = 1e-9;     // test-mode stop threshold on V

    void validate() const {
        if (step_size <= 0) throw ConfigError("step_size must be > 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
        if (hessian_reg <= 0) throw ConfigError("hessian_reg must be > 0");
        if (train_steps < 1 || test_steps < 1) throw ConfigError("steps must be >= 1");
    }
};

// One gradient step with momentum: dx = -gamma grad V(x) - mu dx_prev,
// then the non-negativity clamp.
struct GdStep {
    Vec x;
    Vec delta;
};
GdStep correct_step_gd(const Vec& x, const Vec& prev_delta, const ProblemInstance& inst,
                       ConstraintKind kind, const CorrectionConfig& cfg);

// One regularized Newton step: dx = -(hess V + alpha I)^{-1} grad V, clamped.
// Cholesky with up to 3 diagonal-boost retries (alpha x10 each); the step is
// halved up to 10 times if V would increase, and x is returned unchanged when
// no fraction of it decreases V.
Vec correct_step_newton(const Vec& x, const ProblemInstance& inst, ConstraintKind kind,
                        const CorrectionConfig& cfg);

enum class ProjMode { Train, Test };

struct UnrollStep {
    Vec x;               // point the step was taken from
    BoolVec row_active;  // active constraint rows at x (g > 0)
    BoolVec clamp_pass;  // coordinates the clamp passed through (output > 0)
    Vec delta;
};

struct UnrollTape {
    std::vector<UnrollStep> steps;
    ConstraintKind kind = ConstraintKind::AffineRate;
    double step_size = 0.0;
    double momentum = 0.0;
    bool clamp = true;
};

struct ExplicitProjection {
    Vec p;
    UnrollTape tape;     // Train mode only
    bool converged = true;
    int steps = 0;
    double final_V = 0.0;
};

// Train: exactly train_steps GD steps, unrolled onto a tape for the backward
// pass. Test: Newton steps until V <= stop_tol or test_steps is hit; a miss is
// reported via converged=false (a violation event for the caller), never
// silently dropped.
ExplicitProjection project_explicit(const Vec& r, const ProblemInstance& inst,
                                    ConstraintKind kind, ProjMode mode,
                                    const CorrectionConfig& cfg);

// Reverse-mode through the unrolled train-time steps with the forward-time
// masks frozen.
Vec project_explicit_vjp(const UnrollTape& tape, const ProblemInstance& inst,
                         const Vec& upstream);

}  // namespace qospower
