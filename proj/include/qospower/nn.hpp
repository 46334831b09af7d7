#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qospower/channel.hpp"
#include "qospower/common.hpp"
#include "qospower/proj_explicit.hpp"
#include "qospower/rng.hpp"

namespace qospower {

enum class OutputActivation { Sigmoid, SoftmaxPerBS, ReLU, Affine };
std::string to_string(OutputActivation a);
OutputActivation output_activation_from_string(const std::string& s);

struct DenseLayer {
    Mat W;  // out x in
    Vec b;
};

struct BatchNormLayer {
    Vec gamma, beta, running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Fully-connected backbone: per hidden block dense -> batch-norm -> ReLU ->
// dropout, then a final dense and the output activation.
struct MLPModel {
    int in_dim = 0, out_dim = 0;
    int B = 0, Q = 0;  // grouping for the per-BS softmax head
    std::vector<DenseLayer> dense;
    std::vector<BatchNormLayer> bn;  // one per hidden block
    double dropout_rate = 0.1;
    OutputActivation out_act = OutputActivation::Sigmoid;
    double out_scale = 1.0;  // SoftmaxPerBS budget (P_max in pipeline units)

    int hidden_blocks() const { return int(bn.size()); }

    static MLPModel make(int in_dim, int out_dim, int B, int Q,
                         const std::vector<int>& hidden, OutputActivation act,
                         uint64_t seed, double dropout_rate = 0.1);

    void save(const std::string& path) const;         // parameters + running stats
    static MLPModel load(const std::string& path);
};

enum class ForwardMode { Train, Eval };

struct GradTape {
    Mat input;
    std::vector<Mat> dense_in;    // input to each dense layer
    std::vector<Mat> bn_xhat;     // normalized pre-scale activations
    std::vector<Vec> bn_inv_std;  // per-feature 1/sqrt(var+eps)
    std::vector<Mat> bn_centered;
    std::vector<Mat> relu_mask;   // 1/0
    std::vector<Mat> dropout_mask;  // inverted-dropout factors
    Mat out_pre;   // final dense output
    Mat out_post;  // after output activation
    int batch = 0;
};

// Columns of X are samples. Train mode consumes dropout draws from rng and
// updates the batch-norm running statistics; Eval leaves the model untouched.
Mat forward(MLPModel& model, const Mat& X, ForwardMode mode, Rng* rng, GradTape* tape);
Mat forward_eval(const MLPModel& model, const Mat& X);
Vec forward_eval(const MLPModel& model, const Vec& x);

struct ParamGrads {
    std::vector<Mat> dW;
    std::vector<Vec> db;
    std::vector<Vec> dgamma;
    std::vector<Vec> dbeta;
};

// Reverse mode through the taped forward; returns grads for every parameter
// and (optionally) the loss gradient w.r.t. the network input.
ParamGrads backward(const MLPModel& model, const GradTape& tape, const Mat& dloss_dout,
                    Mat* dinput = nullptr);

struct AdamState {
    std::vector<Mat> mW, vW;
    std::vector<Vec> mb, vb;
    std::vector<Vec> mgamma, vgamma, mbeta, vbeta;
    long step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamState zeros_like(const MLPModel& model);
};

void adam_update(MLPModel& model, const ParamGrads& grads, AdamState& state, double lr);

enum class ModelKind { DIPNet, DEPNet, PNet };
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

enum class EarlyStopMetric { ValSumRate, ValViolationProb };

struct TrainConfig {
    double lr = 0.001;
    int batch_size = 10;
    double lr_decay = 0.99;  // per epoch
    int epochs = 20;
    double lambda_penalty = 1000.0;  // soft-loss weight (PNet / DEPNet)
    EarlyStopMetric metric = EarlyStopMetric::ValSumRate;
    uint64_t seed = 1;
    std::vector<int> hidden = {200, 200, 200};
    double dropout = 0.1;

    void validate() const {
        if (lr <= 0) throw ConfigError("lr must be > 0");
        if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("lr_decay must be in (0,1]");
        if (lambda_penalty < 0) throw ConfigError("lambda must be >= 0");
        if (batch_size < 1 || epochs < 1) throw ConfigError("batch_size/epochs must be >= 1");
    }
};

struct LossSpec {
    ModelKind kind = ModelKind::DEPNet;  // None/Implicit/Explicit pipeline selector
    CorrectionConfig correction;         // DEPNet train/test corrections
};

struct EpochStats {
    double train_loss = 0.0;
    double val_sum_rate = 0.0;       // zeroed-on-violation mean, physical units
    double val_violation_prob = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    MLPModel best_model;
    AdamState adam;  // final optimizer state (checkpointing)
    std::vector<EpochStats> history;
    int best_epoch = -1;
};

// Precomputed per-sample training context: the physical instance plus the
// nondimensionalized row-normalized twin the pipelines operate on.
struct SampleContext {
    ProblemInstance phys;
    ProblemInstance scaled;  // row-normalized, powers in units of P_max
    Vec features;            // scaled gain vector (network input)
};
SampleContext make_sample_context(const ChannelTensor& H, const NetworkConfig& cfg);

// End-to-end unsupervised training. DIPNet trains through the QP projection
// with loss -R; DEPNet through the unrolled corrections with the soft loss;
// PNet uses the soft loss on the raw head. Early stopping keeps the epoch
// checkpoint that is best on the validation metric.
TrainResult train(const Dataset& ds, ModelKind kind, const LossSpec& spec,
                  const TrainConfig& cfg);

}  // namespace qospower
