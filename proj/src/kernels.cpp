#include "pathenv/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pathenv/error.hpp"
#include "pathenv/log.hpp"

namespace pathenv {

double cubic_spline_kernel(double x, double x2) {
    if (!(x >= 0.0 && x <= 1.0 && x2 >= 0.0 && x2 <= 1.0)) {
        throw ContractError("cubic_spline_kernel: arguments must lie in [0, 1]");
    }
    const double lo = std::min(x, x2);
    return lo * lo * lo / 3.0 + lo * lo * std::abs(x - x2) / 2.0;
}

double gaussian_kernel(std::span<const double> z, std::span<const double> z2, double rho) {
    require(rho > 0.0, "gaussian_kernel: rho must be positive");
    require(z.size() == z2.size(), "gaussian_kernel: vectors differ in length");
    double d = 0.0;
    for (size_t k = 0; k < z.size(); ++k) {
        const double diff = z[k] - z2[k];
        d += diff * diff;
    }
    return std::exp(-d / rho);
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& Z) {
    const Eigen::Index n = Z.rows();
    Eigen::MatrixXd D(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        D(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = (Z.row(i) - Z.row(j)).squaredNorm();
            D(i, j) = d;
            D(j, i) = d;
        }
    }
    return D;
}

Eigen::MatrixXd spline_space_gram(const Eigen::VectorXd& x_scaled) {
    const Eigen::Index n = x_scaled.size();
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) {
            const double v = x_scaled(i) * x_scaled(j) + cubic_spline_kernel(x_scaled(i), x_scaled(j));
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return K;
}

namespace {

void fill_rho_dependent(GramSet& g) {
    const double rho = g.rho;
    g.Kz = (-g.sq_dists.array() / rho).exp().matrix();
    g.dKz_drho = (g.Kz.array() * g.sq_dists.array() / (rho * rho)).matrix();
    g.Kxz = (g.Kx_aug.array() * g.Kz.array()).matrix();
    g.dKxz_drho = (g.Kx_aug.array() * g.dKz_drho.array()).matrix();
}

void check_finite(const Eigen::MatrixXd& K, const char* name) {
    for (Eigen::Index j = 0; j < K.cols(); ++j) {
        for (Eigen::Index i = 0; i < K.rows(); ++i) {
            if (!std::isfinite(K(i, j))) {
                std::ostringstream msg;
                msg << name << " has a non-finite entry at row " << i << ", column " << j;
                throw DataError(msg.str());
            }
        }
    }
}

}  // namespace

GramSet GramSet::with_rho(double new_rho) const {
    require(new_rho > 0.0, "GramSet::with_rho: rho must be positive");
    GramSet g;
    g.sq_dists = sq_dists;
    g.Kx_aug = Kx_aug;
    g.rho = new_rho;
    fill_rho_dependent(g);
    return g;
}

GramSet build_gram_set_from_distances(const Eigen::VectorXd& x_scaled, Eigen::MatrixXd sq_dists,
                                      double rho) {
    require(rho > 0.0, "build_gram_set: rho must be positive");
    require(sq_dists.rows() == x_scaled.size() && sq_dists.cols() == x_scaled.size(),
            "build_gram_set: distance matrix and covariate disagree in size");
    check_finite(sq_dists, "squared-distance matrix");
    GramSet g;
    g.sq_dists = std::move(sq_dists);
    g.Kx_aug = spline_space_gram(x_scaled);
    g.rho = rho;
    fill_rho_dependent(g);
    check_finite(g.Kxz, "interaction Gram matrix");
    return g;
}

GramSet build_gram_set(const Eigen::VectorXd& x_scaled, const Eigen::MatrixXd& Z, double rho) {
    require(Z.rows() == x_scaled.size(), "build_gram_set: Z rows must align with x");
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
        for (Eigen::Index i = 0; i < Z.rows(); ++i) {
            if (!std::isfinite(Z(i, j))) {
                std::ostringstream msg;
                msg << "expression value at row " << i << ", column " << j << " is not finite";
                throw DataError(msg.str());
            }
        }
    }
    return build_gram_set_from_distances(x_scaled, squared_distances(Z), rho);
}

double default_rho(const Eigen::MatrixXd& Z) {
    const Eigen::Index n = Z.rows();
    require(n >= 2, "default_rho: need at least two observations");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) sum += (Z.row(i) - Z.row(j)).squaredNorm();
    }
    const double mean = sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
    if (mean == 0.0) log::warn("default_rho: all expression profiles coincide; rho must be set explicitly");
    return mean;
}

Eigen::MatrixXd prepare_expression(const Eigen::MatrixXd& Z, const ExpressionScaling& scaling) {
    Eigen::MatrixXd out = Z;
    const double n = static_cast<double>(Z.rows());
    if (scaling.standardize && Z.rows() > 1) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            const double mean = out.col(j).mean();
            out.col(j).array() -= mean;
            const double sd = std::sqrt(out.col(j).squaredNorm() / (n - 1.0));
            // Constant genes carry no information; leave them at zero.
            if (sd > 0.0) out.col(j) /= sd;
        }
    }
    if (scaling.per_gene_distance && out.cols() > 0) {
        out /= std::sqrt(static_cast<double>(out.cols()));
    }
    return out;
}

void add_diagonal_jitter(Eigen::MatrixXd& K, double jitter) {
    const double bump = jitter * K.diagonal().mean();
    K.diagonal().array() += bump;
}

}  // namespace pathenv
