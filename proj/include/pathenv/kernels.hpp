#pragma once

#include <Eigen/Dense>
#include <span>

namespace pathenv {

// Reproducing kernel of the penalised cubic-spline space on [0, 1]:
// integral over u of (x-u)_+ (x2-u)_+.
double cubic_spline_kernel(double x, double x2);

// exp(-|z - z2|^2 / rho).
double gaussian_kernel(std::span<const double> z, std::span<const double> z2, double rho);

// Gram matrices for one pathway at one kernel scale. The squared-distance
// matrix and the spline factor are kept so that a new rho costs one
// elementwise exponential.
struct GramSet {
    Eigen::MatrixXd Kz;         // Gaussian pathway kernel
    Eigen::MatrixXd Kxz;        // Kx_aug o Kz
    Eigen::MatrixXd Kx_aug;     // x x' + k_x(x, x'), constant excluded
    Eigen::MatrixXd dKz_drho;   // Kz o D / rho^2
    Eigen::MatrixXd dKxz_drho;  // Kx_aug o dKz_drho
    Eigen::MatrixXd sq_dists;   // D_ij = |z_i - z_j|^2
    double rho = 1.0;

    [[nodiscard]] int n() const { return static_cast<int>(Kz.rows()); }

    // Same data, new kernel scale.
    [[nodiscard]] GramSet with_rho(double new_rho) const;
};

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& Z);

// Kx_aug for scaled covariate values.
Eigen::MatrixXd spline_space_gram(const Eigen::VectorXd& x_scaled);

GramSet build_gram_set(const Eigen::VectorXd& x_scaled, const Eigen::MatrixXd& Z, double rho);
GramSet build_gram_set_from_distances(const Eigen::VectorXd& x_scaled, Eigen::MatrixXd sq_dists,
                                      double rho);

// Mean squared distance over the n(n-1)/2 unordered pairs. Logs a warning and
// returns 0 when every pair coincides; callers must then supply rho.
double default_rho(const Eigen::MatrixXd& Z);

// Per-pathway preprocessing of the n x p expression block.
struct ExpressionScaling {
    bool standardize = true;        // centre and scale each gene to unit variance
    bool per_gene_distance = true;  // divide by sqrt(p) so squared distances average ~2
};

Eigen::MatrixXd prepare_expression(const Eigen::MatrixXd& Z, const ExpressionScaling& scaling);

// Adds jitter * mean(diag) to the diagonal. Off unless a caller asks for it.
void add_diagonal_jitter(Eigen::MatrixXd& K, double jitter = 1e-8);

}  // namespace pathenv
