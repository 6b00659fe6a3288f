#pragma once

#include <Eigen/Dense>
#include <optional>

#include "pathenv/kernels.hpp"
#include "pathenv/spline_basis.hpp"

namespace pathenv {

// Spline system and Gram matrices for one (covariate, pathway) pair.
struct PathwayModel {
    SplineSystem system;
    GramSet grams;
    double rho_default = 0.0;  // mean squared distance of the prepared expression rows
};

// rho <= 0 or absent selects the mean squared distance of the prepared rows.
PathwayModel make_pathway_model(const Eigen::VectorXd& x_raw, const Eigen::MatrixXd& Z_raw,
                                const ExpressionScaling& scaling, std::optional<double> rho = std::nullopt);

// Shares a previously built spline system (the covariate is common to all pathways).
PathwayModel make_pathway_model(const SplineSystem& system, const Eigen::MatrixXd& Z_raw,
                                const ExpressionScaling& scaling, std::optional<double> rho = std::nullopt);

}  // namespace pathenv
