#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "pathenv/kernels.hpp"
#include "pathenv/spline_basis.hpp"

namespace pathenv {

// y = X beta + B r_x + r_z + r_xz + e with
//   r_x ~ N(0, tau_x I), r_z ~ N(0, tau_z Kz), r_xz ~ N(0, tau_xz Kxz), e ~ N(0, sigma2 I).

enum class Estimator { reml, preml };
enum class RhoPolicy { fixed, estimated };

// Random-effect components, in the order used by every array in this module.
enum Component : int { comp_x = 0, comp_z = 1, comp_xz = 2 };
inline constexpr int kComponents = 3;
inline constexpr int kFixedEffects = 2;  // rank q of X

struct VarianceParams {
    double sigma2 = 1.0;
    double tau_x = 0.0;
    double tau_z = 0.0;
    double tau_xz = 0.0;
    double rho = 1.0;
    RhoPolicy rho_policy = RhoPolicy::fixed;
    Estimator parameterization = Estimator::preml;

    [[nodiscard]] std::array<double, 3> taus() const { return {tau_x, tau_z, tau_xz}; }
    // lambda^-1 = tau / sigma2.
    [[nodiscard]] std::array<double, 3> lambda_inv() const {
        return {tau_x / sigma2, tau_z / sigma2, tau_xz / sigma2};
    }
    static VarianceParams from_lambda(double sigma2, const std::array<double, 3>& lambda_inv, double rho);
};

struct ProjectionSet {
    Eigen::MatrixXd Sigma;         // sigma2 I + tau_x BB' + tau_z Kz + tau_xz Kxz
    Eigen::MatrixXd Sigma_lambda;  // Sigma / sigma2
    Eigen::MatrixXd P;
    Eigen::MatrixXd P_lambda;      // sigma2 P
};

// Throws IllConditioned when Sigma is not numerically PD (condition estimate
// above 1e12) and DesignDegenerate when X' Sigma^-1 X is singular.
ProjectionSet covariance(const VarianceParams& params, const SplineSystem& system, const GramSet& grams);

struct Effects {
    Eigen::Vector2d beta;
    Eigen::VectorXd r_x;   // r-2
    Eigen::VectorXd r_z;   // n
    Eigen::VectorXd r_xz;  // n
    Eigen::Matrix2d beta_cov;  // (X' Sigma^-1 X)^-1

    [[nodiscard]] Eigen::VectorXd fitted(const SplineSystem& system) const;
};

// Staged BLUP: beta by GLS, then r_x, r_z, r_xz each from the residual of the
// previous stages using inverse-free shrinkage forms, e.g.
// r_z = tau_z Kz (Delta2 + tau_z Kz)^-1 (y - X beta - B r_x). Components with
// tau = 0 come back as exact zeros.
Effects blup(const Eigen::VectorXd& y, const VarianceParams& params, const SplineSystem& system,
             const GramSet& grams);

// Inverse-free form of the mixed-model equations, scaling each random-effect
// block row by its variance so that no Gram matrix is inverted:
//   X'(f - y) = 0,  tau_x B'(f - y) + s2 r_x = 0,
//   tau_z Kz (f - y) + s2 r_z = 0,  tau_xz Kxz (f - y) + s2 r_xz = 0,
// where f = X beta + B r_x + r_z + r_xz. Returns matrix and right-hand side
// with unknowns ordered [beta, r_x, r_z, r_xz].
struct BlockSystem {
    Eigen::MatrixXd A;
    Eigen::VectorXd rhs;
};
BlockSystem mixed_model_equations(const Eigen::VectorXd& y, const VarianceParams& params,
                                  const SplineSystem& system, const GramSet& grams);
Eigen::VectorXd stack_effects(const Effects& e);

// Restricted log-likelihood (additive constant 0):
// -1/2 log|Sigma| - 1/2 log|X' Sigma^-1 X| - 1/2 y' P y.
double reml_loglik(const Eigen::VectorXd& y, const VarianceParams& params, const SplineSystem& system,
                   const GramSet& grams);

// Order of the REML parameter vector.
enum RemlParam : int { th_sigma2 = 0, th_tau_x, th_tau_z, th_tau_xz, th_rho };
inline constexpr int kRemlParams = 5;

struct ScoreInfo {
    Eigen::VectorXd score;  // 5
    Eigen::MatrixXd info;   // 5 x 5, I_ij = 1/2 tr(P dS_i P dS_j)
    double loglik = 0.0;
};

ScoreInfo reml_score_info(const Eigen::VectorXd& y, const VarianceParams& params,
                          const SplineSystem& system, const GramSet& grams);

// Profiled restricted likelihood in (lambda_x^-1, lambda_z^-1, lambda_xz^-1, rho).
struct ProfileResult {
    double sigma2_hat = 0.0;     // y' P_lambda y / (n - q)
    double loglik = 0.0;         // l_PR, constant 0
    double var_sigma2 = 0.0;     // 2 sigma2_hat^2 tr(P_lambda) / (n - q)^2
    Eigen::Vector4d score;
    Eigen::Matrix4d info;        // approximate information of the profile likelihood
};

// Throws DegenerateResponse when y lies in span(X).
ProfileResult preml_profile(const Eigen::VectorXd& y, const std::array<double, 3>& lambda_inv, double rho,
                            const SplineSystem& system, const GramSet& grams);
double preml_loglik(const Eigen::VectorXd& y, const std::array<double, 3>& lambda_inv, double rho,
                    const SplineSystem& system, const GramSet& grams);

struct FitConfig {
    Estimator estimator = Estimator::preml;
    RhoPolicy rho_policy = RhoPolicy::fixed;
    // Components not free are held at zero variance.
    std::array<bool, 3> free = {true, true, true};
    double init_sigma2 = 0.001;
    std::array<double, 3> init_tau = {0.001, 0.001, 0.001};
    std::array<double, 3> init_lambda_inv = {1.0, 1.0, 1.0};
    int max_iter = 200;
    double tol_loglik = 1e-8;
    double tol_param = 1e-6;
    // Relative gain over 10 accepted steps below which a drifting fit is stopped.
    double tol_flat = 1e-6;
    double boundary_tol = 1e-8;
    // Second-stage rho estimates beyond this multiple of the starting rho are
    // treated as divergence and rho is pinned back.
    double rho_divergence_factor = 100.0;
};

struct FitDiagnostics {
    int iterations = 0;
    double delta = 0.0;
    bool converged = false;
    std::array<bool, 3> at_boundary = {false, false, false};
    bool sigma2_at_boundary = false;
    bool rho_pinned = false;
    // Stopped on a likelihood plateau with parameters still drifting, typically
    // lambda^-1 growing without bound as sigma2 tends to 0.
    bool flat_ridge = false;
    std::string message;
    std::vector<double> loglik_trace;
};

struct ModelFit {
    Eigen::Vector2d beta_hat;
    Eigen::VectorXd r_x_hat;
    Eigen::VectorXd r_z_hat;
    Eigen::VectorXd r_xz_hat;
    Eigen::Matrix2d beta_cov;
    VarianceParams params;
    // Information of the estimator that was maximised: REML over
    // (sigma2, tau_x, tau_z, tau_xz, rho) or p-REML over (lambda^-1 x3, rho).
    Eigen::MatrixXd info;
    // REML information at the estimate, used for standard errors.
    Eigen::MatrixXd reml_info;
    // Standard errors for (sigma2, tau_x, tau_z, tau_xz, rho); NaN for
    // parameters that were not estimated or when the information is singular.
    Eigen::VectorXd std_errors;
    double loglik = 0.0;  // restricted or profile-restricted, matching the estimator
    FitDiagnostics diagnostics;
    FitConfig config;

    [[nodiscard]] Effects effects() const;
};

// Never throws for non-convergence; the result carries the best point found.
ModelFit fit(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
             const FitConfig& config = {});

}  // namespace pathenv
