#include "qospower/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "detail/fsutil.hpp"
#include "qospower/proj_implicit.hpp"

using json = nlohmann::json;

namespace qospower {

std::string to_string(OutputActivation a) {
    switch (a) {
        case OutputActivation::Sigmoid: return "sigmoid";
        case OutputActivation::SoftmaxPerBS: return "softmax_per_bs";
        case OutputActivation::ReLU: return "relu";
        case OutputActivation::Affine: return "affine";
    }
    return "?";
}

OutputActivation output_activation_from_string(const std::string& s) {
    if (s == "sigmoid") return OutputActivation::Sigmoid;
    if (s == "softmax_per_bs") return OutputActivation::SoftmaxPerBS;
    if (s == "relu") return OutputActivation::ReLU;
    if (s == "affine") return OutputActivation::Affine;
    throw ConfigError("unknown activation: " + s);
}

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::DIPNet: return "dipnet";
        case ModelKind::DEPNet: return "depnet";
        case ModelKind::PNet: return "pnet";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "dipnet") return ModelKind::DIPNet;
    if (s == "depnet") return ModelKind::DEPNet;
    if (s == "pnet") return ModelKind::PNet;
    throw ConfigError("unknown model kind: " + s);
}

MLPModel MLPModel::make(int in_dim, int out_dim, int B, int Q, const std::vector<int>& hidden,
                        OutputActivation act, uint64_t seed, double dropout_rate) {
    MLPModel m;
    m.in_dim = in_dim;
    m.out_dim = out_dim;
    m.B = B;
    m.Q = Q;
    m.dropout_rate = dropout_rate;
    m.out_act = act;
    Rng rng(seed);
    int prev = in_dim;
    auto init_dense = [&](int rows, int cols) {
        DenseLayer l;
        const double bound = 1.0 / std::sqrt(double(cols));  // fan-in scaled
        l.W = Mat::NullaryExpr(rows, cols, [&]() { return rng.uniform(-bound, bound); });
        l.b = Vec::NullaryExpr(rows, [&]() { return rng.uniform(-bound, bound); });
        return l;
    };
    for (int width : hidden) {
        m.dense.push_back(init_dense(width, prev));
        BatchNormLayer bn;
        bn.gamma = Vec::Ones(width);
        bn.beta = Vec::Zero(width);
        bn.running_mean = Vec::Zero(width);
        bn.running_var = Vec::Ones(width);
        m.bn.push_back(std::move(bn));
        prev = width;
    }
    m.dense.push_back(init_dense(out_dim, prev));
    return m;
}

namespace {

void apply_output_activation(const MLPModel& model, const Mat& Z, Mat& Y) {
    switch (model.out_act) {
        case OutputActivation::Sigmoid:
            Y = (1.0 + (-Z.array()).exp()).inverse();
            break;
        case OutputActivation::ReLU:
            Y = Z.cwiseMax(0.0);
            break;
        case OutputActivation::Affine:
            Y = Z;
            break;
        case OutputActivation::SoftmaxPerBS: {
            Y.resizeLike(Z);
            const int B = model.B, Q = model.Q;
            for (Eigen::Index col = 0; col < Z.cols(); ++col)
                for (int b = 0; b < B; ++b) {
                    double zmax = -std::numeric_limits<double>::infinity();
                    for (int q = 0; q < Q; ++q) zmax = std::max(zmax, Z(q * B + b, col));
                    double denom = 0.0;
                    for (int q = 0; q < Q; ++q) denom += std::exp(Z(q * B + b, col) - zmax);
                    for (int q = 0; q < Q; ++q)
                        Y(q * B + b, col) =
                            model.out_scale * std::exp(Z(q * B + b, col) - zmax) / denom;
                }
            break;
        }
    }
}

}  // namespace

Mat forward(MLPModel& model, const Mat& X, ForwardMode mode, Rng* rng, GradTape* tape) {
    if (X.rows() != model.in_dim) throw ShapeMismatch("forward: input dim mismatch");
    if (!X.allFinite()) throw ConfigError("forward: non-finite input");
    const int nb = int(X.cols());
    const int H = model.hidden_blocks();
    if (tape) {
        *tape = GradTape{};
        tape->input = X;
        tape->batch = nb;
    }

    Mat cur = X;
    for (int l = 0; l < H; ++l) {
        if (tape) tape->dense_in.push_back(cur);
        Mat z = (model.dense[l].W * cur).colwise() + model.dense[l].b;

        BatchNormLayer& bn = model.bn[l];
        Mat xhat(z.rows(), z.cols());
        Mat centered(z.rows(), z.cols());
        Vec inv_std(z.rows());
        if (mode == ForwardMode::Train) {
            const Vec mu = z.rowwise().mean();
            centered = z.colwise() - mu;
            const Vec var = centered.array().square().rowwise().mean();
            inv_std = (var.array() + bn.eps).rsqrt();
            xhat = centered.array().colwise() * inv_std.array();
            const double unbias = nb > 1 ? double(nb) / double(nb - 1) : 1.0;
            bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mu;
            bn.running_var =
                (1.0 - bn.momentum) * bn.running_var + bn.momentum * (unbias * var);
        } else {
            inv_std = (bn.running_var.array() + bn.eps).rsqrt();
            centered = z.colwise() - bn.running_mean;
            xhat = centered.array().colwise() * inv_std.array();
        }
        Mat y = (xhat.array().colwise() * bn.gamma.array()).colwise() + bn.beta.array();
        if (tape) {
            tape->bn_xhat.push_back(xhat);
            tape->bn_inv_std.push_back(inv_std);
            tape->bn_centered.push_back(centered);
        }

        Mat mask = (y.array() > 0.0).cast<double>();
        cur = y.cwiseProduct(mask);
        if (tape) tape->relu_mask.push_back(mask);

        if (mode == ForwardMode::Train && model.dropout_rate > 0.0) {
            if (!rng) throw ConfigError("forward: train mode needs an rng for dropout");
            const double keep = 1.0 - model.dropout_rate;
            Mat drop = Mat::NullaryExpr(cur.rows(), cur.cols(), [&]() {
                return rng->uniform() < keep ? 1.0 / keep : 0.0;
            });
            cur = cur.cwiseProduct(drop);
            if (tape) tape->dropout_mask.push_back(drop);
        } else if (tape) {
            tape->dropout_mask.push_back(Mat::Ones(cur.rows(), cur.cols()));
        }
    }

    if (tape) tape->dense_in.push_back(cur);
    Mat z = (model.dense[H].W * cur).colwise() + model.dense[H].b;
    Mat out;
    apply_output_activation(model, z, out);
    if (!out.allFinite()) throw SolverError("forward: non-finite activation");
    if (tape) {
        tape->out_pre = z;
        tape->out_post = out;
    }
    return out;
}

Mat forward_eval(const MLPModel& model, const Mat& X) {
    // running statistics only: safe to cast away constness, nothing mutates
    MLPModel& m = const_cast<MLPModel&>(model);
    return forward(m, X, ForwardMode::Eval, nullptr, nullptr);
}

Vec forward_eval(const MLPModel& model, const Vec& x) {
    Mat X = x;
    return forward_eval(model, X).col(0);
}

ParamGrads backward(const MLPModel& model, const GradTape& tape, const Mat& dloss_dout,
                    Mat* dinput) {
    const int H = model.hidden_blocks();
    if (int(tape.dense_in.size()) != H + 1) throw ConfigError("backward: tape mismatch");
    if (dloss_dout.rows() != model.out_dim || dloss_dout.cols() != tape.batch)
        throw ShapeMismatch("backward: upstream shape mismatch");

    ParamGrads g;
    g.dW.resize(H + 1);
    g.db.resize(H + 1);
    g.dgamma.resize(H);
    g.dbeta.resize(H);

    // output activation
    Mat dz;
    switch (model.out_act) {
        case OutputActivation::Sigmoid:
            dz = dloss_dout.cwiseProduct(
                tape.out_post.cwiseProduct(Mat::Ones(tape.out_post.rows(), tape.out_post.cols()) -
                                           tape.out_post));
            break;
        case OutputActivation::ReLU:
            dz = dloss_dout.cwiseProduct((tape.out_pre.array() > 0.0).cast<double>().matrix());
            break;
        case OutputActivation::Affine:
            dz = dloss_dout;
            break;
        case OutputActivation::SoftmaxPerBS: {
            dz.resizeLike(dloss_dout);
            const int B = model.B, Q = model.Q;
            for (Eigen::Index col = 0; col < dz.cols(); ++col)
                for (int b = 0; b < B; ++b) {
                    double dot = 0.0;
                    for (int q = 0; q < Q; ++q) {
                        const Eigen::Index i = q * B + b;
                        dot += dloss_dout(i, col) * tape.out_post(i, col);
                    }
                    dot /= model.out_scale;
                    for (int q = 0; q < Q; ++q) {
                        const Eigen::Index i = q * B + b;
                        const double s = tape.out_post(i, col) / model.out_scale;
                        dz(i, col) = s * (model.out_scale * dloss_dout(i, col) - dot);
                    }
                }
            break;
        }
    }

    // final dense
    g.dW[H] = dz * tape.dense_in[H].transpose();
    g.db[H] = dz.rowwise().sum();
    Mat dcur = model.dense[H].W.transpose() * dz;

    for (int l = H - 1; l >= 0; --l) {
        dcur = dcur.cwiseProduct(tape.dropout_mask[l]);
        dcur = dcur.cwiseProduct(tape.relu_mask[l]);

        // batch-norm backward with batch statistics
        const Mat& xhat = tape.bn_xhat[l];
        const Vec& inv_std = tape.bn_inv_std[l];
        const int nb = tape.batch;
        g.dgamma[l] = dcur.cwiseProduct(xhat).rowwise().sum();
        g.dbeta[l] = dcur.rowwise().sum();
        Mat dxhat = dcur.array().colwise() * model.bn[l].gamma.array();
        const Vec sum_dxhat = dxhat.rowwise().sum();
        const Vec sum_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().sum();
        Mat dzbn =
            (dxhat * double(nb) -
             (Mat::Ones(dxhat.rows(), nb).array().colwise() * sum_dxhat.array()).matrix() -
             (xhat.array().colwise() * sum_dxhat_xhat.array()).matrix())
                .array()
                .colwise() *
            (inv_std.array() / double(nb));

        g.dW[l] = dzbn * tape.dense_in[l].transpose();
        g.db[l] = dzbn.rowwise().sum();
        dcur = model.dense[l].W.transpose() * dzbn;
    }
    if (dinput) *dinput = dcur;
    return g;
}

AdamState AdamState::zeros_like(const MLPModel& model) {
    AdamState s;
    for (const auto& d : model.dense) {
        s.mW.push_back(Mat::Zero(d.W.rows(), d.W.cols()));
        s.vW.push_back(Mat::Zero(d.W.rows(), d.W.cols()));
        s.mb.push_back(Vec::Zero(d.b.size()));
        s.vb.push_back(Vec::Zero(d.b.size()));
    }
    for (const auto& b : model.bn) {
        s.mgamma.push_back(Vec::Zero(b.gamma.size()));
        s.vgamma.push_back(Vec::Zero(b.gamma.size()));
        s.mbeta.push_back(Vec::Zero(b.beta.size()));
        s.vbeta.push_back(Vec::Zero(b.beta.size()));
    }
    return s;
}

namespace {

template <typename T>
void adam_step_one(T& param, const T& grad, T& m, T& v, double lr, double b1, double b2,
                   double eps, long t) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v.array().matrix() + (1.0 - b2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(b1, double(t));
    const double bc2 = 1.0 - std::pow(b2, double(t));
    param.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace

void adam_update(MLPModel& model, const ParamGrads& grads, AdamState& s, double lr) {
    ++s.step;
    for (size_t l = 0; l < model.dense.size(); ++l) {
        if (!grads.dW[l].allFinite() || !grads.db[l].allFinite())
            throw SolverError("adam_update: non-finite gradient");
        adam_step_one(model.dense[l].W, grads.dW[l], s.mW[l], s.vW[l], lr, s.beta1, s.beta2,
                      s.eps, s.step);
        adam_step_one(model.dense[l].b, grads.db[l], s.mb[l], s.vb[l], lr, s.beta1, s.beta2,
                      s.eps, s.step);
    }
    for (size_t l = 0; l < model.bn.size(); ++l) {
        adam_step_one(model.bn[l].gamma, grads.dgamma[l], s.mgamma[l], s.vgamma[l], lr, s.beta1,
                      s.beta2, s.eps, s.step);
        adam_step_one(model.bn[l].beta, grads.dbeta[l], s.mbeta[l], s.vbeta[l], lr, s.beta1,
                      s.beta2, s.eps, s.step);
    }
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

constexpr char kMagic[9] = "QOSPNET1";

void append_doubles(std::string& buf, const double* data, size_t count) {
    buf.append(reinterpret_cast<const char*>(data), count * sizeof(double));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    void read_into(double* out, size_t count) {
        if (pos + count * sizeof(double) > buf.size())
            throw ConfigError("checkpoint truncated");
        std::memcpy(out, buf.data() + pos, count * sizeof(double));
        pos += count * sizeof(double);
    }
};

std::string serialize_model(const MLPModel& m, const AdamState* adam) {
    json header;
    header["in_dim"] = m.in_dim;
    header["out_dim"] = m.out_dim;
    header["B"] = m.B;
    header["Q"] = m.Q;
    std::vector<int> hidden;
    for (int l = 0; l < m.hidden_blocks(); ++l) hidden.push_back(int(m.dense[l].W.rows()));
    header["hidden"] = hidden;
    header["dropout"] = m.dropout_rate;
    header["out_act"] = to_string(m.out_act);
    header["out_scale"] = m.out_scale;
    header["has_adam"] = adam != nullptr;
    if (adam)
        header["adam"] = {{"step", adam->step},
                          {"beta1", adam->beta1},
                          {"beta2", adam->beta2},
                          {"eps", adam->eps}};
    const std::string hs = header.dump();

    std::string buf;
    buf.append(kMagic, 8);
    const uint32_t len = uint32_t(hs.size());
    buf.append(reinterpret_cast<const char*>(&len), 4);
    buf += hs;
    for (const auto& d : m.dense) {
        append_doubles(buf, d.W.data(), size_t(d.W.size()));
        append_doubles(buf, d.b.data(), size_t(d.b.size()));
    }
    for (const auto& b : m.bn) {
        append_doubles(buf, b.gamma.data(), size_t(b.gamma.size()));
        append_doubles(buf, b.beta.data(), size_t(b.beta.size()));
        append_doubles(buf, b.running_mean.data(), size_t(b.running_mean.size()));
        append_doubles(buf, b.running_var.data(), size_t(b.running_var.size()));
    }
    if (adam) {
        for (size_t l = 0; l < m.dense.size(); ++l) {
            append_doubles(buf, adam->mW[l].data(), size_t(adam->mW[l].size()));
            append_doubles(buf, adam->vW[l].data(), size_t(adam->vW[l].size()));
            append_doubles(buf, adam->mb[l].data(), size_t(adam->mb[l].size()));
            append_doubles(buf, adam->vb[l].data(), size_t(adam->vb[l].size()));
        }
        for (size_t l = 0; l < m.bn.size(); ++l) {
            append_doubles(buf, adam->mgamma[l].data(), size_t(adam->mgamma[l].size()));
            append_doubles(buf, adam->vgamma[l].data(), size_t(adam->vgamma[l].size()));
            append_doubles(buf, adam->mbeta[l].data(), size_t(adam->mbeta[l].size()));
            append_doubles(buf, adam->vbeta[l].data(), size_t(adam->vbeta[l].size()));
        }
    }
    return buf;
}

MLPModel deserialize_model(const std::string& buf, AdamState* adam_out) {
    if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw ConfigError("not a qospower checkpoint");
    uint32_t len = 0;
    std::memcpy(&len, buf.data() + 8, 4);
    if (buf.size() < 12 + len) throw ConfigError("checkpoint truncated");
    json header = json::parse(buf.substr(12, len));

    MLPModel m = MLPModel::make(header["in_dim"], header["out_dim"], header["B"], header["Q"],
                                header["hidden"].get<std::vector<int>>(),
                                output_activation_from_string(header["out_act"]), 0,
                                header["dropout"]);
    m.out_scale = header["out_scale"];
    Reader r{buf, 12 + size_t(len)};
    for (auto& d : m.dense) {
        r.read_into(d.W.data(), size_t(d.W.size()));
        r.read_into(d.b.data(), size_t(d.b.size()));
    }
    for (auto& b : m.bn) {
        r.read_into(b.gamma.data(), size_t(b.gamma.size()));
        r.read_into(b.beta.data(), size_t(b.beta.size()));
        r.read_into(b.running_mean.data(), size_t(b.running_mean.size()));
        r.read_into(b.running_var.data(), size_t(b.running_var.size()));
    }
    const bool has_adam = header.value("has_adam", false);
    if (adam_out) {
        *adam_out = AdamState::zeros_like(m);
        if (has_adam) {
            adam_out->step = header["adam"]["step"];
            adam_out->beta1 = header["adam"]["beta1"];
            adam_out->beta2 = header["adam"]["beta2"];
            adam_out->eps = header["adam"]["eps"];
            for (size_t l = 0; l < m.dense.size(); ++l) {
                r.read_into(adam_out->mW[l].data(), size_t(adam_out->mW[l].size()));
                r.read_into(adam_out->vW[l].data(), size_t(adam_out->vW[l].size()));
                r.read_into(adam_out->mb[l].data(), size_t(adam_out->mb[l].size()));
                r.read_into(adam_out->vb[l].data(), size_t(adam_out->vb[l].size()));
            }
            for (size_t l = 0; l < m.bn.size(); ++l) {
                r.read_into(adam_out->mgamma[l].data(), size_t(adam_out->mgamma[l].size()));
                r.read_into(adam_out->vgamma[l].data(), size_t(adam_out->vgamma[l].size()));
                r.read_into(adam_out->mbeta[l].data(), size_t(adam_out->mbeta[l].size()));
                r.read_into(adam_out->vbeta[l].data(), size_t(adam_out->vbeta[l].size()));
            }
        }
    }
    return m;
}

}  // namespace

void MLPModel::save(const std::string& path) const {
    detail::write_file_atomic(path, serialize_model(*this, nullptr));
}

MLPModel MLPModel::load(const std::string& path) {
    return deserialize_model(detail::read_file(path), nullptr);
}

// ---------------------------------------------------------------------------
// training

SampleContext make_sample_context(const ChannelTensor& H, const NetworkConfig& cfg) {
    SampleContext ctx;
    ctx.phys = assemble_affine_constraints(H, cfg);
    ctx.scaled = row_normalized(nondimensionalized(ctx.phys));
    ctx.features = ctx.scaled.H.flat();
    return ctx;
}

namespace {

// loss value and gradient w.r.t. the network output r, per sample, on the
// scaled instance; rates enter the loss per-Hz so lambda keeps the paper's
// magnitude regime
struct SampleLoss {
    double loss = 0.0;
    Vec grad_r;
    double V_scaled = 0.0;
};

SampleLoss sample_loss(ModelKind kind, const Vec& r, const SampleContext& ctx,
                       const LossSpec& spec, double lambda) {
    SampleLoss out;
    const ProblemInstance& inst = ctx.scaled;
    const double Wn = inst.W;
    switch (kind) {
        case ModelKind::DIPNet: {
            QPSolution sol = qp_project(r, inst);
            const SumRate sr = sum_rate_and_grad(sol.p, inst.H, inst.sigma2, inst.W);
            out.loss = -sr.R / Wn;
            out.grad_r = qp_vjp(sol, inst, Vec(-sr.grad / Wn));
            out.V_scaled = 0.0;
            break;
        }
        case ModelKind::DEPNet: {
            ExplicitProjection proj =
                project_explicit(r, inst, ConstraintKind::AffineRate, ProjMode::Train,
                                 spec.correction);
            const SumRate sr = sum_rate_and_grad(proj.p, inst.H, inst.sigma2, inst.W);
            const ViolationState vio =
                violation_derivatives(proj.p, inst, ConstraintKind::AffineRate);
            out.loss = -sr.R / Wn + lambda * vio.V;
            const Vec upstream = -sr.grad / Wn + lambda * vio.grad;
            out.grad_r = project_explicit_vjp(proj.tape, inst, upstream);
            out.V_scaled = vio.V;
            break;
        }
        case ModelKind::PNet: {
            const SumRate sr = sum_rate_and_grad(r, inst.H, inst.sigma2, inst.W);
            const ViolationState vio = violation_derivatives(r, inst, ConstraintKind::AffineRate);
            out.loss = -sr.R / Wn + lambda * vio.V;
            out.grad_r = -sr.grad / Wn + lambda * vio.grad;
            out.V_scaled = vio.V;
            break;
        }
    }
    return out;
}

struct ValMetrics {
    double mean_sum_rate = 0.0;  // zeroed on violation, physical bits/s
    double violation_prob = 0.0;
};

// test-time pipeline output in physical units
Vec test_output(ModelKind kind, const MLPModel& model, const SampleContext& ctx,
                const LossSpec& spec, bool* violated) {
    const Vec r = forward_eval(model, ctx.features);
    Vec p_scaled;
    switch (kind) {
        case ModelKind::DIPNet:
            p_scaled = qp_project(r, ctx.scaled).p;
            break;
        case ModelKind::DEPNet: {
            ExplicitProjection proj = project_explicit(
                r, ctx.scaled, ConstraintKind::AffineRate, ProjMode::Test, spec.correction);
            p_scaled = proj.p;
            break;
        }
        case ModelKind::PNet:
            p_scaled = r;
            break;
    }
    Vec p_phys = p_scaled * ctx.phys.P_max;
    if (violated) *violated = violation(p_phys, ctx.phys).V > 1e-6;
    return p_phys;
}

ValMetrics eval_on_split(ModelKind kind, const MLPModel& model,
                         const std::vector<SampleContext>& ctxs, size_t begin, size_t end,
                         const LossSpec& spec) {
    ValMetrics m;
    if (end <= begin) return m;
    size_t violated_count = 0;
    double sum = 0.0;
    for (size_t i = begin; i < end; ++i) {
        bool violated = false;
        const Vec p = test_output(kind, model, ctxs[i], spec, &violated);
        if (violated) {
            ++violated_count;
        } else {
            sum += sum_rate(p, ctxs[i].phys.H, ctxs[i].phys.sigma2, ctxs[i].phys.W);
        }
    }
    const double N = double(end - begin);
    m.mean_sum_rate = sum / N;
    m.violation_prob = double(violated_count) / N;
    return m;
}

}  // namespace

TrainResult train(const Dataset& ds, ModelKind kind, const LossSpec& spec,
                  const TrainConfig& cfg) {
    cfg.validate();
    spec.correction.validate();
    if (ds.size() == 0) throw ConfigError("train: empty dataset");

    const Splits splits = split_dataset(ds, ds.split_train, ds.split_val, ds.split_test);
    const int U = ds.config.users();
    const int in_dim = ds.config.B * U;

    std::vector<SampleContext> ctxs;
    ctxs.reserve(ds.size());
    for (const auto& s : ds.samples) ctxs.push_back(make_sample_context(s, ds.config));

    const OutputActivation act =
        kind == ModelKind::PNet ? OutputActivation::SoftmaxPerBS : OutputActivation::Sigmoid;
    MLPModel model = MLPModel::make(in_dim, U, ds.config.B, ds.config.Q, cfg.hidden, act,
                                    cfg.seed, cfg.dropout);
    model.out_scale = 1.0;  // P_max in scaled units
    AdamState adam = AdamState::zeros_like(model);

    Rng rng(derive_stream(cfg.seed, 0x7261696e));  // train-loop stream
    std::vector<size_t> order(splits.train.size());
    std::iota(order.begin(), order.end(), size_t(0));

    TrainResult result;
    double lr = cfg.lr;
    double best_score = -std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // deterministic shuffle
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(rng.below(i))]);

        double loss_acc = 0.0;
        size_t loss_count = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            const size_t nb = std::min(size_t(cfg.batch_size), order.size() - start);
            Mat X(in_dim, Eigen::Index(nb));
            for (size_t j = 0; j < nb; ++j)
                X.col(Eigen::Index(j)) = ctxs[splits.train.begin + order[start + j]].features;

            GradTape tape;
            Mat R = forward(model, X, ForwardMode::Train, &rng, &tape);

            Mat upstream(U, Eigen::Index(nb));
            for (size_t j = 0; j < nb; ++j) {
                const SampleContext& ctx = ctxs[splits.train.begin + order[start + j]];
                SampleLoss sl =
                    sample_loss(kind, R.col(Eigen::Index(j)), ctx, spec, cfg.lambda_penalty);
                if (!std::isfinite(sl.loss))
                    throw SolverError("train: divergence detected (non-finite loss)");
                upstream.col(Eigen::Index(j)) = sl.grad_r / double(nb);
                loss_acc += sl.loss;
                ++loss_count;
            }
            ParamGrads grads = backward(model, tape, upstream);
            adam_update(model, grads, adam, lr);
        }

        const ValMetrics vm =
            eval_on_split(kind, model, ctxs, splits.val.begin, splits.val.end, spec);
        EpochStats st;
        st.train_loss = loss_count ? loss_acc / double(loss_count) : 0.0;
        st.val_sum_rate = vm.mean_sum_rate;
        st.val_violation_prob = vm.violation_prob;
        st.lr = lr;
        result.history.push_back(st);

        const double score = cfg.metric == EarlyStopMetric::ValSumRate
                                 ? vm.mean_sum_rate
                                 : -vm.violation_prob;
        if (score > best_score || result.best_epoch < 0) {
            best_score = score;
            result.best_model = model;
            result.best_epoch = epoch;
        }
        lr *= cfg.lr_decay;
    }
    result.adam = std::move(adam);
    return result;
}

}  // namespace qospower
