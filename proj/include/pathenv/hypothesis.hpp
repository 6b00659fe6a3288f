#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pathenv/mixed_model.hpp"

namespace pathenv {

// Boundary law of a restricted likelihood ratio statistic for two variance
// ratios (theta2, theta3) whose information, after the orthonormal
// transformation, maps the positive quadrant onto the cone spanned by (1, 0)
// and (gamma, 1). phi is the angular share of that cone.
struct MixtureLaw {
    enum class Kind { two_component, one_component, explicit_weights };

    Kind kind = Kind::explicit_weights;
    std::array<double, 3> weights = {0.0, 0.0, 1.0};  // chi2_2, chi2_1, point mass at 0
    double gamma = 0.0;
    double phi = 0.25;
    // One-component law on an acute cone (phi < 1/4): the weights above are
    // the exact masses of chi2_2, "rest" and 0, and the tail is evaluated by
    // angular quadrature instead.
    bool angular_tail = false;

    // Both theta2 and theta3 tested: (phi, 1/2, 1/2 - phi).
    static MixtureLaw two_component(double gamma);
    // Only theta3 tested, theta2 a boundary nuisance: (phi - 1/4, 1/2, 3/4 - phi)
    // when phi >= 1/4.
    static MixtureLaw one_component(double gamma);
    static MixtureLaw from_weights(double w2, double w1, double w0);
};

// arccos(gamma / sqrt(1 + gamma^2)) / (2 pi).
double cone_phi(double gamma);

// gamma from a 2x2 (efficient) information on (theta2, theta3):
// I23 / sqrt(det I). Throws ContractError unless the matrix is PD.
double cone_gamma(const Eigen::Matrix2d& info);

// P(T >= t); t = 0 gives 1. Throws ContractError for t < 0.
double mixture_tail(const MixtureLaw& law, double t);

// Scaled chi-square kappa * chi2_nu.
struct SatterthwaiteLaw {
    double kappa = 1.0;
    double nu = 1.0;
};
double satterthwaite_tail(const SatterthwaiteLaw& law, double u);

enum class TestStatus { ok, info_not_pd, degenerate, fit_failed, permutation_warning };
const char* status_name(TestStatus status);

struct PermutationSummary {
    int requested = 0;
    int completed = 0;
    int failed = 0;
    int exceed = 0;  // replicates with statistic strictly above the observed one
    int ties = 0;    // replicates tied with the observed statistic
    std::vector<double> statistics;  // replicate statistics in replicate order, NaN for failures
};

struct TestReport {
    std::string test;  // "overall", "interaction" or "score"
    double statistic = 0.0;
    std::optional<double> p_asymptotic;
    std::optional<double> p_permutation;
    std::optional<PermutationSummary> permutation;
    std::variant<std::monostate, MixtureLaw, SatterthwaiteLaw> law;
    TestStatus status = TestStatus::ok;
    std::string message;
    double clamped = 0.0;     // amount removed when a negative statistic was set to 0
    double loglik_alt = 0.0;  // profile restricted log-likelihoods of the two fits
    double loglik_null = 0.0;
    // (theta2, theta3) information after removing theta1; NaN when unavailable.
    Eigen::Matrix2d efficient_info = Eigen::Matrix2d::Constant(std::numeric_limits<double>::quiet_NaN());
};

struct TestConfig {
    // Estimator is forced to p-REML; an estimated rho applies to the alternative
    // fit only and the null fits reuse its value.
    FitConfig fit;
    // Remove theta1 = lambda_x^-1 from the 3x3 information by a Schur complement
    // before computing gamma.
    bool nuisance_adjust = true;
    // Estimate lambda_x^-1 in the alternative and null fits; off by default so
    // the fits match the two-dimensional boundary geometry.
    bool free_tau_x = false;
    // Statistics below this are treated as exact zeros.
    double zero_tol = 1e-8;
};

// Alternative fit shared by both likelihood ratio tests and the two null fits.
struct RlrtFits {
    ModelFit alternative;       // lambda_z^-1, lambda_xz^-1 free
    ModelFit null_overall;      // lambda_z^-1 = lambda_xz^-1 = 0
    ModelFit null_interaction;  // lambda_xz^-1 = 0
};

struct RlrtResult {
    TestReport overall;
    TestReport interaction;
    RlrtFits fits;
};

RlrtFits rlrt_fits(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                   const TestConfig& config = {});

// Both statistics from one set of fits, so D >= d holds by construction.
RlrtResult rlrt_both(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                     const TestConfig& config = {});

TestReport rlrt_overall(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                        const TestConfig& config = {});
TestReport rlrt_interaction(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                            const TestConfig& config = {});

// Statistic and law from already computed fits.
TestReport overall_from_fits(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                             const RlrtFits& fits, const TestConfig& config);
TestReport interaction_from_fits(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                                 const RlrtFits& fits, const TestConfig& config);

// Null model of the score test: tau_x and tau_z free, tau_xz = 0.
ModelFit score_null_fit(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                        const FitConfig& base = {});

// U = 1/2 (Py)' Kxz (Py) at the null fit, calibrated by kappa chi2_nu with the
// efficient information of tau_xz given the estimated nuisance parameters.
TestReport score_test_interaction(const Eigen::VectorXd& y, const ModelFit& null_fit,
                                  const SplineSystem& system, const GramSet& grams);

struct PermutationOptions {
    int replicates = 10000;
    std::uint64_t seed = 1;
    int threads = 1;
    bool plus_one = false;        // (1 + #exceed) / (1 + B)
    bool randomize_ties = false;  // uniform tie-breaking, exact under exchangeability
    double failure_warning = 0.05;
};

// Residual permutation with y* = X beta_hat + e0*; e0 = y - X beta_hat for the
// overall effect, e0 = y - X beta_hat - r_z_hat for the interaction.
TestReport permutation_overall(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                               const PermutationOptions& options, const TestConfig& config = {});
TestReport permutation_interaction(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                                   const PermutationOptions& options, const TestConfig& config = {});

// Same, reusing the observed statistic and the alternative fit.
TestReport permutation_from_fit(bool interaction, const Eigen::VectorXd& y, const SplineSystem& system,
                                const GramSet& grams, const ModelFit& alternative, double observed,
                                const PermutationOptions& options, const TestConfig& config);

}  // namespace pathenv
