#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace qospower {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using BoolVec = Eigen::Array<bool, Eigen::Dynamic, 1>;

// Configuration / usage errors (exit code 2 at the CLI).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Data that cannot be processed: infeasible instances, impossible geometry
// (exit code 3 at the CLI).
struct InfeasibleError : std::runtime_error {
    explicit InfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical solver failures: stalls, max iterations, singular systems
// (exit code 4 at the CLI).
struct SolverError : std::runtime_error {
    explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : ConfigError {
    explicit ShapeMismatch(const std::string& msg) : ConfigError(msg) {}
};

}  // namespace qospower
