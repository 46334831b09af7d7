#include "qospower/problem.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace qospower {

namespace {
constexpr double kLog2 = 0.6931471805599453094172321;  // ln 2
}

double beta_from_alpha(double alpha, double W) {
    if (W <= 0) throw ConfigError("W must be > 0");
    if (alpha < 0) throw ConfigError("alpha must be >= 0");
    return std::exp2(alpha / W) - 1.0;
}

Vec beta_from_alpha(const Vec& alpha, double W) {
    Vec beta(alpha.size());
    for (Eigen::Index i = 0; i < alpha.size(); ++i) beta[i] = beta_from_alpha(alpha[i], W);
    return beta;
}

ProblemInstance assemble_affine_constraints(const ChannelTensor& H, const NetworkConfig& cfg) {
    const int B = H.B(), Q = H.Q(), U = H.users();
    ProblemInstance inst;
    inst.H = H;
    inst.beta = beta_from_alpha(cfg.alpha_vec(), cfg.W);
    inst.P_max = cfg.P_max;
    inst.sigma2 = cfg.sigma2;
    inst.W = cfg.W;

    inst.A = Mat::Zero(B, U);
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < U; ++j)
            if (j % B == i) inst.A(i, j) = 1.0;

    inst.C = Mat::Zero(U, U);
    inst.d = Vec(U);
    for (int q = 0; q < Q; ++q) {
        for (int b = 0; b < B; ++b) {
            const Eigen::Index row = p_index(b, q, B);
            inst.d[row] = inst.beta[row] * cfg.sigma2;
            for (int bhat = 0; bhat < B; ++bhat) {
                const Eigen::Index col = p_index(bhat, q, B);
                inst.C(row, col) =
                    (b == bhat) ? H.at(b, q, b) : -inst.beta[row] * H.at(b, q, bhat);
            }
        }
    }

    // Fixed row order: [nonneg (U); budget (B); rate (U)]
    const int G = 2 * U + B;
    inst.M = Mat::Zero(G, U);
    inst.n = Vec::Zero(G);
    inst.M.topRows(U) = -Mat::Identity(U, U);
    inst.M.middleRows(U, B) = inst.A;
    inst.n.segment(U, B).setConstant(-cfg.P_max);
    inst.M.bottomRows(U) = -inst.C;
    inst.n.tail(U) = inst.d;
    return inst;
}

ProblemInstance nondimensionalized(const ProblemInstance& inst) {
    const double gain_scale = inst.P_max / inst.sigma2;
    ChannelTensor Hs(inst.B(), inst.Q());
    Hs.flat() = inst.H.flat() * gain_scale;
    NetworkConfig cfg;
    cfg.B = inst.B();
    cfg.Q = inst.Q();
    cfg.W = inst.W;
    cfg.P_max = 1.0;
    cfg.sigma2 = 1.0;
    cfg.model = ChannelModel::Gaussian;
    // keep the same beta by inverting beta_from_alpha
    Vec alpha(inst.beta.size());
    for (Eigen::Index i = 0; i < inst.beta.size(); ++i)
        alpha[i] = inst.W * std::log2(1.0 + inst.beta[i]);
    cfg.alpha = alpha;
    ProblemInstance out = assemble_affine_constraints(Hs, cfg);
    if (inst.ee.size() > 0) out.ee = inst.ee * inst.P_max;
    return out;
}

ProblemInstance row_normalized(const ProblemInstance& inst) {
    ProblemInstance out = inst;
    for (Eigen::Index i = 0; i < out.M.rows(); ++i) {
        const double nu = out.M.row(i).norm();
        if (nu > 0) {
            out.M.row(i) /= nu;
            out.n[i] /= nu;
        }
    }
    return out;
}

ProblemInstance toy2_instance() {
    ChannelTensor H(2, 1);
    H.at(0, 0, 0) = 1.0;
    H.at(0, 0, 1) = 0.1;
    H.at(1, 0, 0) = 0.1;
    H.at(1, 0, 1) = 1.0;
    NetworkConfig cfg;
    cfg.B = 2;
    cfg.Q = 1;
    cfg.W = 1.0;
    cfg.sigma2 = 0.01;
    cfg.P_max = 1.0;
    cfg.uniform_alpha = 1.0;  // beta = 2^(1/1) - 1 = 1
    cfg.alpha = Vec();
    cfg.model = ChannelModel::Gaussian;
    return assemble_affine_constraints(H, cfg);
}

Vec sinr_of(const Vec& p, const ChannelTensor& H, double sigma2) {
    const int B = H.B(), Q = H.Q(), U = H.users();
    if (p.size() != U) throw ShapeMismatch("power vector length != U");
    Vec out(U);
    for (int q = 0; q < Q; ++q)
        for (int b = 0; b < B; ++b) {
            double interf = sigma2;
            for (int bhat = 0; bhat < B; ++bhat)
                if (bhat != b) interf += H.at(b, q, bhat) * p[p_index(bhat, q, B)];
            out[p_index(b, q, B)] = H.at(b, q, b) * p[p_index(b, q, B)] / interf;
        }
    return out;
}

Vec rates_of(const Vec& p, const ChannelTensor& H, double sigma2, double W) {
    Vec g = sinr_of(p, H, sigma2);
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = W * std::log2(1.0 + g[i]);
    return g;
}

Vec eval_constraints(const Vec& p, const ProblemInstance& inst, ConstraintKind kind) {
    const int U = inst.users(), B = inst.B();
    if (p.size() != U) throw ShapeMismatch("power vector length != U");
    if (kind == ConstraintKind::AffineRate) return inst.M * p + inst.n;

    Vec g(inst.rows());
    g.head(U) = -p;
    g.segment(U, B) = inst.A * p - Vec::Constant(B, inst.P_max);
    const Vec R = rates_of(p, inst.H, inst.sigma2, inst.W);
    if (kind == ConstraintKind::NonlinearRate) {
        for (int i = 0; i < U; ++i) {
            const double alpha_i = inst.W * std::log2(1.0 + inst.beta[i]);
            g[U + B + i] = alpha_i - R[i];
        }
    } else {  // EnergyEfficiency, multiplied-through: ee*p - R <= 0
        if (inst.ee.size() != U) throw ConfigError("EE thresholds not set on instance");
        for (int i = 0; i < U; ++i) g[U + B + i] = inst.ee[i] * p[i] - R[i];
    }
    return g;
}

namespace {

// dR_{b,q}/dp for one user: + on its own power, - on the co-channel
// interferers' powers.
void rate_grad_row(const ChannelTensor& H, const Vec& p, double sigma2, double W, int b, int q,
                   Vec& row) {
    const int B = H.B();
    row.setZero();
    double interf = sigma2;
    for (int bhat = 0; bhat < B; ++bhat)
        if (bhat != b) interf += H.at(b, q, bhat) * p[p_index(bhat, q, B)];
    const double S = H.at(b, q, b) * p[p_index(b, q, B)];
    const double total = interf + S;
    row[p_index(b, q, B)] = (W / kLog2) * H.at(b, q, b) / total;
    for (int bhat = 0; bhat < B; ++bhat)
        if (bhat != b)
            row[p_index(bhat, q, B)] = -(W / kLog2) * S * H.at(b, q, bhat) / (interf * total);
}

// Second derivatives of R_{b,q} w.r.t. (p_i, p_j); only co-channel powers
// enter. Writing S for the signal term, I for interference+noise:
//   d2R/dS dI terms follow from R = (W/ln2) (ln(S+I) - ln I).
void rate_hess_block(const ChannelTensor& H, const Vec& p, double sigma2, double W, int b, int q,
                     Mat& out) {
    const int B = H.B();
    out.setZero();
    double interf = sigma2;
    for (int bhat = 0; bhat < B; ++bhat)
        if (bhat != b) interf += H.at(b, q, bhat) * p[p_index(bhat, q, B)];
    const double hd = H.at(b, q, b);
    const double S = hd * p[p_index(b, q, B)];
    const double T = interf + S;
    const double c = W / kLog2;
    // own-own
    out(p_index(b, q, B), p_index(b, q, B)) = -c * hd * hd / (T * T);
    for (int i = 0; i < B; ++i) {
        if (i == b) continue;
        const double hi = H.at(b, q, i);
        // own-cross (symmetric)
        const double mixed = -c * hd * hi / (T * T);
        out(p_index(b, q, B), p_index(i, q, B)) = mixed;
        out(p_index(i, q, B), p_index(b, q, B)) = mixed;
        for (int j = 0; j < B; ++j) {
            if (j == b) continue;
            const double hj = H.at(b, q, j);
            // cross-cross: d/dp_j of (-c S h_i / (I T))
            out(p_index(i, q, B), p_index(j, q, B)) +=
                c * S * hi * hj * (1.0 / (interf * interf * T) + 1.0 / (interf * T * T));
        }
    }
}

}  // namespace

Mat constraint_jacobian(const Vec& p, const ProblemInstance& inst, ConstraintKind kind) {
    if (kind == ConstraintKind::AffineRate) return inst.M;
    const int U = inst.users(), B = inst.B(), Q = inst.Q();
    Mat J = Mat::Zero(inst.rows(), U);
    J.topRows(U) = -Mat::Identity(U, U);
    J.middleRows(U, B) = inst.A;
    Vec row(U);
    for (int q = 0; q < Q; ++q)
        for (int b = 0; b < B; ++b) {
            const Eigen::Index i = p_index(b, q, B);
            rate_grad_row(inst.H, p, inst.sigma2, inst.W, b, q, row);
            J.row(U + B + i) = -row.transpose();
            if (kind == ConstraintKind::EnergyEfficiency) J(U + B + i, i) += inst.ee[i];
        }
    return J;
}

ViolationState violation(const Vec& p, const ProblemInstance& inst, ConstraintKind kind) {
    ViolationState st;
    st.g = eval_constraints(p, inst, kind);
    st.active = st.g.array() > 0.0;  // I(0) = 0: zero slack is inactive
    st.V = st.g.array().max(0.0).square().sum();
    return st;
}

ViolationState violation_derivatives(const Vec& p, const ProblemInstance& inst,
                                     ConstraintKind kind) {
    ViolationState st = violation(p, inst, kind);
    const int U = inst.users(), B = inst.B(), Q = inst.Q();
    const Vec gplus = st.g.array().max(0.0);
    const Mat J = constraint_jacobian(p, inst, kind);
    st.grad = 2.0 * J.transpose() * gplus;

    st.hess = Mat::Zero(U, U);
    for (Eigen::Index k = 0; k < st.g.size(); ++k)
        if (st.active[k]) st.hess += 2.0 * J.row(k).transpose() * J.row(k);

    if (kind != ConstraintKind::AffineRate) {
        // curvature term 2 max(g,0)^T T; only rate rows have second derivatives
        Mat block(U, U);
        for (int q = 0; q < Q; ++q)
            for (int b = 0; b < B; ++b) {
                const Eigen::Index k = U + B + p_index(b, q, B);
                if (gplus[k] <= 0.0) continue;
                rate_hess_block(inst.H, p, inst.sigma2, inst.W, b, q, block);
                st.hess -= 2.0 * gplus[k] * block;  // g row = alpha - R (or ee*p - R)
            }
    }
    return st;
}

SumRate sum_rate_and_grad(const Vec& p, const ChannelTensor& H, double sigma2, double W) {
    const int B = H.B(), Q = H.Q(), U = H.users();
    if (p.size() != U) throw ShapeMismatch("power vector length != U");
    SumRate out;
    out.grad = Vec::Zero(U);
    Vec row(U);
    for (int q = 0; q < Q; ++q)
        for (int b = 0; b < B; ++b) {
            double interf = sigma2;
            for (int bhat = 0; bhat < B; ++bhat)
                if (bhat != b) interf += H.at(b, q, bhat) * p[p_index(bhat, q, B)];
            const double S = H.at(b, q, b) * p[p_index(b, q, B)];
            out.R += W * std::log2(1.0 + S / interf);
            rate_grad_row(H, p, sigma2, W, b, q, row);
            out.grad += row;
        }
    return out;
}

double sum_rate(const Vec& p, const ChannelTensor& H, double sigma2, double W) {
    const Vec r = rates_of(p, H, sigma2, W);
    return r.sum();
}

std::string ProblemInstance::to_json() const {
    json j;
    j["B"] = B();
    j["Q"] = Q();
    j["P_max"] = P_max;
    j["sigma2"] = sigma2;
    j["W"] = W;
    auto vec_to = [](const Vec& v) {
        return std::vector<double>(v.data(), v.data() + v.size());
    };
    j["beta"] = vec_to(beta);
    j["d"] = vec_to(d);
    j["h_flat"] = vec_to(H.flat());
    std::vector<std::vector<double>> rowsM;
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        Vec row = M.row(r);
        rowsM.push_back(vec_to(row));
    }
    j["M"] = rowsM;
    j["n"] = vec_to(n);
    return j.dump(2);
}

}  // namespace qospower
