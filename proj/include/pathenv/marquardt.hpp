#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pathenv {

// Log-likelihood value with its score vector and (expected) information.
struct ScoredValue {
    double value = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd info;
};

// Box-constrained maximisation problem. Callbacks return nullopt when the
// point is numerically infeasible (non-PD covariance); such trial points are
// treated as rejected steps.
struct MarquardtProblem {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    std::function<std::optional<double>(const Eigen::VectorXd&)> value;
    std::function<std::optional<ScoredValue>(const Eigen::VectorXd&)> scored;
};

struct MarquardtOptions {
    int max_iter = 200;
    double tol_loglik = 1e-8;   // relative log-likelihood change
    double tol_param = 1e-6;    // max relative parameter change
    double initial_delta_factor = 1e-5;
    int max_damping_increases = 12;
    int max_halvings = 10;
    // Stop when the relative likelihood gain over the last flat_window steps is
    // below flat_tol even though the parameters keep moving (unbounded ridge).
    int flat_window = 10;
    double flat_tol = 1e-6;
};

struct MarquardtResult {
    Eigen::VectorXd theta;
    ScoredValue at_optimum;
    int iterations = 0;
    double delta = 0.0;
    bool converged = false;
    bool flat_ridge = false;
    std::string message;
    std::vector<double> trace;  // log-likelihood after each accepted step
};

// theta <- theta + (I + delta Id)^-1 score, with delta shrunk by 10 after an
// accepted step and grown by 10 after a step that lowers the likelihood.
// Proposals leaving the box are projected onto it; coordinates sitting on a
// lower bound with non-positive score are held fixed for that iteration.
MarquardtResult maximize(const MarquardtProblem& problem, Eigen::VectorXd theta,
                         const MarquardtOptions& options = {});

}  // namespace pathenv
