#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

namespace pathenv::detail {

inline constexpr double kMaxCondition = 1e12;

// Cholesky-based generalised least squares pieces for covariance S.
struct GlsFactor {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double logdet_S = 0.0;
    Eigen::Matrix2d xsx;        // X' S^-1 X
    Eigen::Matrix2d xsx_inv;
    double logdet_xsx = 0.0;
    Eigen::MatrixXd SinvX;      // n x 2
    Eigen::Vector2d beta;
    Eigen::VectorXd resid;      // y - X beta
    Eigen::VectorXd Py;         // S^-1 resid = P y
    double yPy = 0.0;
};

enum class FactorFailure { none, not_pd, ill_conditioned, design_degenerate };

// Returns nullopt on failure and sets *failure accordingly.
std::optional<GlsFactor> factor_gls(const Eigen::MatrixXd& S, const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y, FactorFailure* failure = nullptr,
                                    double max_condition = kMaxCondition);

// P = S^-1 - S^-1 X (X' S^-1 X)^-1 X' S^-1.
Eigen::MatrixXd projection_matrix(const GlsFactor& f);

// c0 I + c_x BB' + c_z Kz + c_xz Kxz.
Eigen::MatrixXd assemble_covariance(double c0, double c_x, double c_z, double c_xz, const Eigen::MatrixXd& BBt,
                                    const Eigen::MatrixXd& Kz, const Eigen::MatrixXd& Kxz);

// Sufficient pieces for scores and information: given P and the derivative
// matrices G_i, returns tr(P G_i), (Py)' G_i (Py) and tr(P G_i P G_j).
struct TraceTerms {
    Eigen::VectorXd tr;      // tr(P G_i)
    Eigen::VectorXd quad;    // (Py)' G_i Py
    Eigen::MatrixXd cross;   // tr(P G_i P G_j)
};
TraceTerms trace_terms(const Eigen::MatrixXd& P, const Eigen::VectorXd& Py,
                       const std::vector<const Eigen::MatrixXd*>& derivs);

}  // namespace pathenv::detail
