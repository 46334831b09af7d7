#include "qospower/channel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include <nlohmann/json.hpp>

#include "detail/fsutil.hpp"
#include "qospower/feasibility.hpp"
#include "qospower/problem.hpp"
#include "qospower/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace qospower {

std::string to_string(ChannelModel m) {
    return m == ChannelModel::Gaussian ? "gaussian" : "pathloss";
}

ChannelModel channel_model_from_string(const std::string& s) {
    if (s == "gaussian") return ChannelModel::Gaussian;
    if (s == "pathloss") return ChannelModel::PathLoss;
    throw ConfigError("unknown channel model: " + s);
}

Vec NetworkConfig::alpha_vec() const {
    if (alpha.size() == 0) return Vec::Constant(users(), uniform_alpha);
    if (alpha.size() != users()) throw ConfigError("alpha vector length != B*Q");
    return alpha;
}

void NetworkConfig::validate() const {
    if (B < 1 || Q < 1) throw ConfigError("B and Q must be >= 1");
    if (W <= 0) throw ConfigError("W must be > 0");
    if (P_max <= 0) throw ConfigError("P_max must be > 0");
    if (sigma2 <= 0) throw ConfigError("sigma2 must be > 0");
    if (alpha_vec().minCoeff() < 0) throw ConfigError("alpha must be >= 0");
    if (model == ChannelModel::PathLoss && area_side <= 0)
        throw ConfigError("area_side must be > 0");
}

std::string NetworkConfig::to_json() const {
    json j;
    j["B"] = B;
    j["Q"] = Q;
    j["W_hz"] = W;
    j["P_max_w"] = P_max;
    j["sigma2_w"] = sigma2;
    if (alpha.size() == 0) {
        j["alpha_bps"] = uniform_alpha;
    } else {
        j["alpha_bps"] = std::vector<double>(alpha.data(), alpha.data() + alpha.size());
    }
    j["model"] = qospower::to_string(model);
    j["area_side_m"] = area_side;
    j["min_bs_bs_m"] = min_bs_bs;
    j["min_bs_user_m"] = min_bs_user;
    j["min_user_user_m"] = min_user_user;
    j["carrier_hz"] = carrier_hz;
    j["pathloss"] = {{"const_db", pl.const_db},
                     {"exp_db_per_decade", pl.exp_db_per_decade},
                     {"shadowing_db", pl.shadowing_db}};
    return j.dump(2);
}

NetworkConfig NetworkConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    NetworkConfig cfg;
    cfg.B = j.value("B", cfg.B);
    cfg.Q = j.value("Q", cfg.Q);
    cfg.W = j.value("W_hz", cfg.W);
    cfg.P_max = j.value("P_max_w", cfg.P_max);
    cfg.sigma2 = j.value("sigma2_w", cfg.sigma2);
    if (j.contains("alpha_bps")) {
        if (j["alpha_bps"].is_array()) {
            auto v = j["alpha_bps"].get<std::vector<double>>();
            cfg.alpha = Eigen::Map<Vec>(v.data(), Eigen::Index(v.size()));
        } else {
            cfg.uniform_alpha = j["alpha_bps"].get<double>();
        }
    }
    if (j.contains("model")) cfg.model = channel_model_from_string(j["model"].get<std::string>());
    cfg.area_side = j.value("area_side_m", cfg.area_side);
    cfg.min_bs_bs = j.value("min_bs_bs_m", cfg.min_bs_bs);
    cfg.min_bs_user = j.value("min_bs_user_m", cfg.min_bs_user);
    cfg.min_user_user = j.value("min_user_user_m", cfg.min_user_user);
    cfg.carrier_hz = j.value("carrier_hz", cfg.carrier_hz);
    if (j.contains("pathloss")) {
        const auto& p = j["pathloss"];
        cfg.pl.const_db = p.value("const_db", cfg.pl.const_db);
        cfg.pl.exp_db_per_decade = p.value("exp_db_per_decade", cfg.pl.exp_db_per_decade);
        cfg.pl.shadowing_db = p.value("shadowing_db", cfg.pl.shadowing_db);
    }
    cfg.validate();
    return cfg;
}

ChannelTensor ChannelTensor::from_flat(const Vec& h, int B, int Q) {
    if (h.size() != Eigen::Index(B) * Q * B) throw ShapeMismatch("flat gain vector length != B*Q*B");
    ChannelTensor t(B, Q);
    t.h_ = h;
    return t;
}

namespace {

double dist(const std::pair<double, double>& a, const std::pair<double, double>& b) {
    return std::hypot(a.first - b.first, a.second - b.second);
}

constexpr int kPlacementRetries = 10000;

std::pair<double, double> draw_point(Rng& rng, double side) {
    return {rng.uniform(0.0, side), rng.uniform(0.0, side)};
}

Layout place_nodes_impl(const NetworkConfig& cfg, Rng& rng) {
    Layout out;
    for (int b = 0; b < cfg.B; ++b) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
            auto pt = draw_point(rng, cfg.area_side);
            bool ok = true;
            for (const auto& other : out.bs_positions)
                if (dist(pt, other) < cfg.min_bs_bs) { ok = false; break; }
            if (ok) {
                out.bs_positions.push_back(pt);
                placed = true;
                break;
            }
        }
        if (!placed) throw PlacementFailure("could not place BS " + std::to_string(b));
    }
    const int U = cfg.users();
    for (int u = 0; u < U; ++u) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
            auto pt = draw_point(rng, cfg.area_side);
            bool ok = true;
            for (const auto& bs : out.bs_positions)
                if (dist(pt, bs) < cfg.min_bs_user) { ok = false; break; }
            if (ok)
                for (const auto& other : out.user_positions)
                    if (dist(pt, other) < cfg.min_user_user) { ok = false; break; }
            if (ok) {
                out.user_positions.push_back(pt);
                placed = true;
                break;
            }
        }
        if (!placed) throw PlacementFailure("could not place user " + std::to_string(u));
    }
    return out;
}

double pathloss_linear(double d_m, const PathLossParams& pl) {
    const double d_km = std::max(d_m, 1.0) / 1000.0;  // clip below 1 m
    const double loss_db = pl.const_db + pl.exp_db_per_decade * std::log10(d_km);
    return std::pow(10.0, -loss_db / 10.0);
}

// Raw direct/interfering gains for every (user, BS) pair. Draw order is part
// of the determinism contract: placement first (pathloss), then per user, per
// BS: the model's fading draws.
Mat raw_gains_for_sample(const NetworkConfig& cfg, Rng& rng) {
    const int U = cfg.users();
    Mat raw(U, cfg.B);
    if (cfg.model == ChannelModel::Gaussian) {
        for (int u = 0; u < U; ++u)
            for (int b = 0; b < cfg.B; ++b) {
                const double x = rng.normal();
                const double y = rng.normal();
                raw(u, b) = x * x + y * y;  // |CN|^2 with unit-variance parts, mean 2
            }
        return raw;
    }
    const Layout layout = place_nodes_impl(cfg, rng);
    for (int u = 0; u < U; ++u) {
        for (int b = 0; b < cfg.B; ++b) {
            const double d = dist(layout.user_positions[u], layout.bs_positions[b]);
            const double shadow = std::pow(10.0, rng.normal() * cfg.pl.shadowing_db / 10.0);
            const double x = rng.normal();
            const double y = rng.normal();
            const double fading = 0.5 * (x * x + y * y);  // unit-mean Rayleigh power
            raw(u, b) = pathloss_linear(d, cfg.pl) * shadow * fading;
        }
    }
    return raw;
}

}  // namespace

Layout place_nodes(const NetworkConfig& cfg, uint64_t rng_seed) {
    if (cfg.model != ChannelModel::PathLoss)
        throw ConfigError("place_nodes requires the PathLoss model");
    Rng rng(rng_seed);
    return place_nodes_impl(cfg, rng);
}

ChannelTensor associate_and_sort(const Mat& raw_gains) {
    const int U = int(raw_gains.rows());
    const int B = int(raw_gains.cols());
    if (U % B != 0) throw ShapeMismatch("user count not divisible by BS count");
    const int Q = U / B;

    std::vector<int> pool(U);
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<std::vector<int>> assigned(B);

    for (int b = 0; b < B; ++b) {
        // top-Q of the remaining pool by direct gain to BS b
        std::stable_sort(pool.begin(), pool.end(), [&](int lhs, int rhs) {
            return raw_gains(lhs, b) > raw_gains(rhs, b);
        });
        assigned[b].assign(pool.begin(), pool.begin() + Q);
        pool.erase(pool.begin(), pool.begin() + Q);
        // channel 1 holds the strongest user (already sorted descending)
    }

    ChannelTensor H(B, Q);
    for (int b = 0; b < B; ++b)
        for (int q = 0; q < Q; ++q) {
            const int u = assigned[b][q];
            for (int bhat = 0; bhat < B; ++bhat) H.at(b, q, bhat) = raw_gains(u, bhat);
        }
    return H;
}

Mat power_vec_to_mat(const Vec& p, int B, int Q) {
    if (p.size() != Eigen::Index(B) * Q) throw ShapeMismatch("power vector length != B*Q");
    Mat P(B, Q);
    for (int q = 0; q < Q; ++q)
        for (int b = 0; b < B; ++b) P(b, q) = p[p_index(b, q, B)];
    return P;
}

Vec power_mat_to_vec(const Mat& P) {
    const int B = int(P.rows()), Q = int(P.cols());
    Vec p(Eigen::Index(B) * Q);
    for (int q = 0; q < Q; ++q)
        for (int b = 0; b < B; ++b) p[p_index(b, q, B)] = P(b, q);
    return p;
}

Dataset gen_dataset(const NetworkConfig& cfg, size_t n_samples, uint64_t rng_seed) {
    cfg.validate();
    if (n_samples < 1) throw ConfigError("n_samples must be >= 1");

    const Vec beta = beta_from_alpha(cfg.alpha_vec(), cfg.W);
    Dataset ds;
    ds.config = cfg;
    ds.seed = rng_seed;
    ds.samples.reserve(n_samples);
    ds.witnesses.reserve(n_samples);

    size_t attempts = 0;
    while (ds.samples.size() < n_samples) {
        Rng rng(derive_stream(rng_seed, attempts));
        ++attempts;
        ChannelTensor H = associate_and_sort(raw_gains_for_sample(cfg, rng));
        FeasibilityReport rep = feasibility_filter(H, beta, cfg.sigma2, cfg.P_max, cfg.W);
        if (rep.feasible) {
            ds.samples.push_back(std::move(H));
            ds.witnesses.push_back(*rep.witness);
        }
        if (attempts >= 1000 && double(ds.samples.size()) < 0.01 * double(attempts))
            throw InfeasibleRegime("discard rate above 99%: alpha too aggressive for this geometry");
    }
    return ds;
}

Splits split_dataset(const Dataset& ds, double r_train, double r_val, double r_test) {
    if (r_train < 0 || r_val < 0 || r_test < 0) throw RatioError("split ratios must be >= 0");
    if (std::abs(r_train + r_val + r_test - 1.0) > 1e-9)
        throw RatioError("split ratios must sum to 1");
    const size_t N = ds.size();
    size_t n_train = size_t(std::llround(r_train * double(N)));
    size_t n_val = size_t(std::llround(r_val * double(N)));
    n_train = std::min(n_train, N);
    n_val = std::min(n_val, N - n_train);
    Splits s;
    s.train = {&ds, 0, n_train};
    s.val = {&ds, n_train, n_train + n_val};
    s.test = {&ds, n_train + n_val, N};
    return s;
}

void Dataset::save(const std::string& dir) const {
    fs::create_directories(dir);
    const int per = config.B * config.Q * config.B;
    std::vector<double> gains;
    gains.reserve(samples.size() * size_t(per));
    for (const auto& s : samples)
        gains.insert(gains.end(), s.flat().data(), s.flat().data() + per);
    detail::write_doubles_atomic(fs::path(dir) / "data.bin", gains);

    std::vector<double> wit;
    wit.reserve(witnesses.size() * size_t(config.users()));
    for (const auto& w : witnesses) wit.insert(wit.end(), w.data(), w.data() + w.size());
    detail::write_doubles_atomic(fs::path(dir) / "witness.bin", wit);

    const size_t N = samples.size();
    Splits sp = split_dataset(*this, split_train, split_val, split_test);
    json meta;
    meta["schema_version"] = 1;
    meta["config"] = json::parse(config.to_json());
    meta["seed"] = seed;
    meta["n_samples"] = N;
    meta["gains_per_sample"] = per;
    meta["split_ratios"] = {split_train, split_val, split_test};
    meta["split_boundaries"] = {sp.train.end, sp.val.end};
    meta["conventions"] = {
        {"gaussian_gain_mean", 2.0},
        {"pathloss_reference", "log-distance const+slope*log10(d_km), defaults are artifact choices"},
        {"layout", "H(i,j,k)=h[j*B*B+k*B+i], P(b,q)=p[q*B+b]"}};
    detail::write_file_atomic(fs::path(dir) / "meta.json", meta.dump(2) + "\n");
}

Dataset Dataset::load(const std::string& dir) {
    json meta = json::parse(detail::read_file(fs::path(dir) / "meta.json"));
    Dataset ds;
    ds.config = NetworkConfig::from_json(meta["config"].dump());
    ds.seed = meta["seed"].get<uint64_t>();
    const size_t N = meta["n_samples"].get<size_t>();
    const int per = meta["gains_per_sample"].get<int>();
    if (per != ds.config.B * ds.config.Q * ds.config.B)
        throw ConfigError("metadata gains_per_sample inconsistent with config");
    auto ratios = meta["split_ratios"].get<std::vector<double>>();
    ds.split_train = ratios.at(0);
    ds.split_val = ratios.at(1);
    ds.split_test = ratios.at(2);

    auto gains = detail::read_doubles(fs::path(dir) / "data.bin");
    if (gains.size() != N * size_t(per)) throw ConfigError("data.bin size mismatch");
    ds.samples.reserve(N);
    for (size_t i = 0; i < N; ++i) {
        Vec h = Eigen::Map<Vec>(gains.data() + i * size_t(per), per);
        ds.samples.push_back(ChannelTensor::from_flat(h, ds.config.B, ds.config.Q));
    }

    const int U = ds.config.users();
    auto wit = detail::read_doubles(fs::path(dir) / "witness.bin");
    if (wit.size() != N * size_t(U)) throw ConfigError("witness.bin size mismatch");
    ds.witnesses.reserve(N);
    for (size_t i = 0; i < N; ++i)
        ds.witnesses.push_back(Eigen::Map<Vec>(wit.data() + i * size_t(U), U));
    return ds;
}

}  // namespace qospower
