#include "qospower/proj_explicit.hpp"

#include <cmath>

#include <Eigen/Cholesky>

namespace qospower {

GdStep correct_step_gd(const Vec& x, const Vec& prev_delta, const ProblemInstance& inst,
                       ConstraintKind kind, const CorrectionConfig& cfg) {
    const ViolationState st = violation_derivatives(x, inst, kind);
    GdStep out;
    out.delta = -cfg.step_size * st.grad - cfg.momentum * prev_delta;
    out.x = x + out.delta;
    if (cfg.clamp) out.x = out.x.cwiseMax(0.0);
    return out;
}

Vec correct_step_newton(const Vec& x, const ProblemInstance& inst, ConstraintKind kind,
                        const CorrectionConfig& cfg) {
    const ViolationState st = violation_derivatives(x, inst, kind);
    if (st.grad.cwiseAbs().maxCoeff() == 0.0) return x;  // feasible: fixed point

    const int U = inst.users();
    double reg = cfg.hessian_reg;
    Vec delta;
    bool solved = false;
    for (int attempt = 0; attempt <= 3; ++attempt) {
        Eigen::LLT<Mat> llt(st.hess + reg * Mat::Identity(U, U));
        if (llt.info() == Eigen::Success) {
            delta = llt.solve(-st.grad);
            if (delta.allFinite()) {
                solved = true;
                break;
            }
        }
        reg *= 10.0;
    }
    if (!solved) throw SolverError("correct_step_newton: Cholesky failed after 3 boosts");

    // keep V monotone: halve the step while it would increase V
    for (int k = 0; k <= 10; ++k) {
        Vec cand = x + delta;
        if (cfg.clamp) cand = cand.cwiseMax(0.0);
        if (violation(cand, inst, kind).V <= st.V) return cand;
        delta *= 0.5;
    }
    return x;
}

ExplicitProjection project_explicit(const Vec& r, const ProblemInstance& inst,
                                    ConstraintKind kind, ProjMode mode,
                                    const CorrectionConfig& cfg) {
    cfg.validate();
    if (r.size() != inst.users()) throw ShapeMismatch("project_explicit: r length != U");
    if (!r.allFinite()) throw ConfigError("project_explicit: non-finite input");

    ExplicitProjection out;
    if (mode == ProjMode::Train) {
        out.tape.kind = kind;
        out.tape.step_size = cfg.step_size;
        out.tape.momentum = cfg.momentum;
        out.tape.clamp = cfg.clamp;
        out.tape.steps.reserve(size_t(cfg.train_steps));
        Vec x = r;
        Vec delta = Vec::Zero(r.size());
        for (int t = 0; t < cfg.train_steps; ++t) {
            UnrollStep rec;
            rec.x = x;
            rec.row_active = violation(x, inst, kind).active;
            GdStep step = correct_step_gd(x, delta, inst, kind, cfg);
            rec.delta = step.delta;
            const Vec y = x + step.delta;
            rec.clamp_pass = cfg.clamp ? BoolVec(y.array() > 0.0)
                                       : BoolVec(BoolVec::Constant(y.size(), true));
            out.tape.steps.push_back(std::move(rec));
            x = step.x;
            delta = step.delta;
        }
        out.p = x;
        out.steps = cfg.train_steps;
        out.final_V = violation(x, inst, kind).V;
        out.converged = true;  // train mode has no convergence contract
        return out;
    }

    Vec x = cfg.clamp ? Vec(r.cwiseMax(0.0)) : r;
    double V = violation(x, inst, kind).V;
    int t = 0;
    while (V > cfg.stop_tol && t < cfg.test_steps) {
        x = correct_step_newton(x, inst, kind, cfg);
        V = violation(x, inst, kind).V;
        ++t;
    }
    out.p = x;
    out.steps = t;
    out.final_V = V;
    out.converged = V <= cfg.stop_tol;
    return out;
}

Vec project_explicit_vjp(const UnrollTape& tape, const ProblemInstance& inst,
                         const Vec& upstream) {
    const int U = inst.users();
    if (upstream.size() != U) throw ShapeMismatch("project_explicit_vjp: upstream length != U");

    Vec xbar = upstream;
    Vec dbar = Vec::Zero(U);
    for (auto it = tape.steps.rbegin(); it != tape.steps.rend(); ++it) {
        const UnrollStep& rec = *it;
        Vec ybar = xbar;
        if (tape.clamp)
            for (int i = 0; i < U; ++i)
                if (!rec.clamp_pass[i]) ybar[i] = 0.0;
        const Vec dtot = dbar + ybar;
        // d(grad V)/dx with the forward-time masks frozen equals the taped
        // Hessian; recomputed at the taped point (same masks by construction)
        const Mat H = violation_derivatives(rec.x, inst, tape.kind).hess;
        xbar = ybar - tape.step_size * (H * dtot);
        dbar = -tape.momentum * dtot;
    }
    return xbar;
}

}  // namespace qospower
