#pragma once

#include <Eigen/Dense>
#include <vector>

namespace pathenv {

// Value / second-derivative representation of a natural cubic spline in one
// environmental covariate. Built once per study and shared read-only.
//
// With r distinct scaled knots t_1 < ... < t_r, a vector f of knot values and
// the interior second derivatives g describe a natural cubic spline iff
// Q' f = R g. The roughness integral of f'' squared equals f' M f with
// M = Q R^-1 Q'. Observation-level quantities are expanded through the
// incidence map (observation i sits at knot knot_of[i]).
struct SplineSystem {
    Eigen::VectorXd x_raw;     // n, original units
    Eigen::VectorXd x_scaled;  // n, min-max scaled to [0, 1]
    Eigen::VectorXd knots;     // r distinct sorted scaled values
    std::vector<int> knot_of;  // n, knot index of each observation

    Eigen::MatrixXd X;        // n x 2, columns [1, centred x_scaled]
    Eigen::MatrixXd Q;        // r x (r-2)
    Eigen::MatrixXd R;        // (r-2) x (r-2), tridiagonal
    Eigen::VectorXd ldl_d;    // diagonal of Lambda in R = U Lambda U'
    Eigen::VectorXd ldl_sub;  // sub-diagonal of the unit lower bidiagonal U
    Eigen::MatrixXd L;        // r x (r-2), M = L L'
    Eigen::MatrixXd M;        // r x r penalty
    Eigen::MatrixXd B_knots;  // r x (r-2), L (L'L)^-1
    Eigen::MatrixXd B;        // n x (r-2), N B_knots
    Eigen::MatrixXd BBt;      // n x n, cached B B'

    double x_min = 0.0;
    double x_max = 1.0;
    double x_scaled_mean = 0.0;

    [[nodiscard]] int n() const { return static_cast<int>(x_raw.size()); }
    [[nodiscard]] int r() const { return static_cast<int>(knots.size()); }

    // Dense n x r incidence matrix.
    [[nodiscard]] Eigen::MatrixXd incidence() const;

    // Maps a raw covariate value onto the [0, 1] scale used by the system.
    [[nodiscard]] double scale(double raw) const { return (raw - x_min) / (x_max - x_min); }
};

// Throws UnsupportedInput for fewer than 4 distinct values and ContractError
// for non-finite input.
SplineSystem build_spline_system(const Eigen::VectorXd& x);

// f' M f for knot-indexed values f.
double roughness(const Eigen::VectorXd& f_values, const SplineSystem& system);

}  // namespace pathenv
