#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qospower/common.hpp"

namespace qospower {

enum class ChannelModel { Gaussian, PathLoss };

std::string to_string(ChannelModel m);
ChannelModel channel_model_from_string(const std::string& s);

// Stacked-layout index helpers. Power matrix P (B x Q) stacks its Q columns:
// P(b,q) = p[q*B + b]. The gain tensor H (B x Q x B) flattens as
// H(i,j,k) = h[j*B*B + k*B + i] with i the serving BS, j the channel and k
// the interfering BS.
inline Eigen::Index p_index(int b, int q, int B) { return Eigen::Index(q) * B + b; }
inline Eigen::Index h_index(int i, int j, int k, int B) {
    return Eigen::Index(j) * B * B + Eigen::Index(k) * B + i;
}

struct PathLossParams {
    double const_db = 128.1;        // fixed loss at 1 km
    double exp_db_per_decade = 37.6;  // slope vs log10(d_km)
    double shadowing_db = 8.0;      // log-normal std deviation
};

struct NetworkConfig {
    int B = 4;                // base stations
    int Q = 2;                // channels (user quota) per BS
    double W = 5e6;           // bandwidth per channel [Hz]
    double P_max = 1e-3;      // per-BS power budget [W]
    double sigma2 = 1e-8;     // noise power [W]
    Vec alpha;                // per-user minimum rate [bits/s], stacked layout (empty = uniform_alpha)
    double uniform_alpha = 2.5e6;
    ChannelModel model = ChannelModel::PathLoss;

    // PathLoss geometry
    double area_side = 500.0;       // [m]
    double min_bs_bs = 100.0;       // [m]
    double min_bs_user = 5.0;       // [m]
    double min_user_user = 2.0;     // [m]
    double carrier_hz = 2.4e9;
    PathLossParams pl;

    int users() const { return B * Q; }

    // stacked per-user rate targets, broadcasting the uniform value if no
    // explicit vector was given
    Vec alpha_vec() const;

    void validate() const;

    std::string to_json() const;
    static NetworkConfig from_json(const std::string& text);
};

// Gain tensor stored directly in the canonical flattened layout.
class ChannelTensor {
public:
    ChannelTensor() = default;
    ChannelTensor(int B, int Q) : B_(B), Q_(Q), h_(Vec::Zero(Eigen::Index(B) * Q * B)) {}

    int B() const { return B_; }
    int Q() const { return Q_; }
    int users() const { return B_ * Q_; }

    double at(int b, int q, int bhat) const { return h_[h_index(b, q, bhat, B_)]; }
    double& at(int b, int q, int bhat) { return h_[h_index(b, q, bhat, B_)]; }

    // flattened view (length B*Q*B); this IS the network input vector h
    const Vec& flat() const { return h_; }
    Vec& flat() { return h_; }

    static ChannelTensor from_flat(const Vec& h, int B, int Q);

private:
    int B_ = 0;
    int Q_ = 0;
    Vec h_;
};

struct Layout {
    std::vector<std::pair<double, double>> bs_positions;
    std::vector<std::pair<double, double>> user_positions;
};

struct PlacementFailure : InfeasibleError {
    explicit PlacementFailure(const std::string& msg) : InfeasibleError(msg) {}
};

// Rejection-samples BS and user positions in the configured square, honoring
// the three pairwise minimum distances. Each node gets at most 10000 draws.
Layout place_nodes(const NetworkConfig& cfg, uint64_t rng_seed);

// Greedy association: BS 1 claims its top-Q users by direct gain, those users
// leave the pool, repeat for the next BS. Within a BS, channel 1 holds the
// strongest user. raw_gains is U x B: raw_gains(u, b) = direct gain from BS b
// to user u.
ChannelTensor associate_and_sort(const Mat& raw_gains);

// Power reshape between matrix (B x Q) and stacked vector (U) views.
Mat power_vec_to_mat(const Vec& p, int B, int Q);
Vec power_mat_to_vec(const Mat& P);

struct Dataset {
    NetworkConfig config;
    uint64_t seed = 0;
    std::vector<ChannelTensor> samples;
    std::vector<Vec> witnesses;  // minimum-power profile per sample
    double split_train = 0.9, split_val = 0.05, split_test = 0.05;

    size_t size() const { return samples.size(); }

    void save(const std::string& dir) const;
    static Dataset load(const std::string& dir);
};

struct InfeasibleRegime : InfeasibleError {
    explicit InfeasibleRegime(const std::string& msg) : InfeasibleError(msg) {}
};

// Draws channel realizations until n_samples pass the feasibility filter.
// Candidate k uses the RNG stream derive_stream(seed, k), so results do not
// depend on how generation is chunked.
Dataset gen_dataset(const NetworkConfig& cfg, size_t n_samples, uint64_t rng_seed);

struct SplitView {
    const Dataset* parent = nullptr;
    size_t begin = 0, end = 0;
    size_t size() const { return end - begin; }
    const ChannelTensor& sample(size_t i) const { return parent->samples[begin + i]; }
    const Vec& witness(size_t i) const { return parent->witnesses[begin + i]; }
};

struct Splits {
    SplitView train, val, test;
};

struct RatioError : ConfigError {
    explicit RatioError(const std::string& msg) : ConfigError(msg) {}
};

Splits split_dataset(const Dataset& ds, double r_train = 0.9, double r_val = 0.05,
                     double r_test = 0.05);

}  // namespace qospower
