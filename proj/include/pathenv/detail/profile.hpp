#pragma once

#include <array>

#include "pathenv/mixed_model.hpp"

namespace pathenv::detail {

// As preml_profile / reml_score_info, but only the flagged parameters get
// score and information entries; the rest are left at zero.
ProfileResult preml_profile_subset(const Eigen::VectorXd& y, const std::array<double, 3>& lambda_inv, double rho,
                                   const SplineSystem& system, const GramSet& grams,
                                   const std::array<bool, 4>& need);
ScoreInfo reml_score_info_subset(const Eigen::VectorXd& y, const VarianceParams& params,
                                 const SplineSystem& system, const GramSet& grams,
                                 const std::array<bool, 5>& need);

}  // namespace pathenv::detail
