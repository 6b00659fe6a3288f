#include "pathenv/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pathenv/error.hpp"

namespace pathenv {

Eigen::MatrixXd SplineSystem::incidence() const {
    Eigen::MatrixXd N = Eigen::MatrixXd::Zero(n(), r());
    for (int i = 0; i < n(); ++i) N(i, knot_of[static_cast<size_t>(i)]) = 1.0;
    return N;
}

SplineSystem build_spline_system(const Eigen::VectorXd& x) {
    const int n = static_cast<int>(x.size());
    for (int i = 0; i < n; ++i) {
        if (!std::isfinite(x(i))) {
            std::ostringstream msg;
            msg << "environmental value at row " << i << " is not finite";
            throw ContractError(msg.str());
        }
    }
    if (n < 4) throw UnsupportedInput("spline system needs at least 4 observations");

    SplineSystem s;
    s.x_raw = x;
    s.x_min = x.minCoeff();
    s.x_max = x.maxCoeff();
    if (!(s.x_max > s.x_min)) throw UnsupportedInput("environmental variable is constant");

    // Distinct knots from the raw values so that ties are exact.
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x(a) < x(b); });
    std::vector<double> distinct;
    s.knot_of.assign(static_cast<size_t>(n), 0);
    for (int idx : order) {
        if (distinct.empty() || x(idx) != distinct.back()) distinct.push_back(x(idx));
        s.knot_of[static_cast<size_t>(idx)] = static_cast<int>(distinct.size()) - 1;
    }
    const int r = static_cast<int>(distinct.size());
    if (r < 4) {
        std::ostringstream msg;
        msg << "spline system needs at least 4 distinct environmental values, got " << r;
        throw UnsupportedInput(msg.str());
    }

    const double range = s.x_max - s.x_min;
    s.x_scaled.resize(n);
    for (int i = 0; i < n; ++i) s.x_scaled(i) = (x(i) - s.x_min) / range;
    s.knots.resize(r);
    for (int k = 0; k < r; ++k) s.knots(k) = (distinct[static_cast<size_t>(k)] - s.x_min) / range;
    s.knots(0) = 0.0;
    s.knots(r - 1) = 1.0;

    s.x_scaled_mean = s.x_scaled.mean();
    s.X.resize(n, 2);
    s.X.col(0).setOnes();
    s.X.col(1) = s.x_scaled.array() - s.x_scaled_mean;

    const int m = r - 2;
    Eigen::VectorXd h(r - 1);
    for (int k = 0; k + 1 < r; ++k) h(k) = s.knots(k + 1) - s.knots(k);

    // Column j of Q (0-based) corresponds to interior knot j+1.
    s.Q = Eigen::MatrixXd::Zero(r, m);
    s.R = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) {
        s.Q(j, j) = 1.0 / h(j);
        s.Q(j + 1, j) = -1.0 / h(j) - 1.0 / h(j + 1);
        s.Q(j + 2, j) = 1.0 / h(j + 1);
        s.R(j, j) = (h(j) + h(j + 1)) / 3.0;
        if (j + 1 < m) {
            s.R(j, j + 1) = h(j + 1) / 6.0;
            s.R(j + 1, j) = h(j + 1) / 6.0;
        }
    }

    // Square-root-free Cholesky of the tridiagonal R: R = U Lambda U'.
    s.ldl_d.resize(m);
    s.ldl_sub = Eigen::VectorXd::Zero(std::max(m - 1, 0));
    s.ldl_d(0) = s.R(0, 0);
    for (int j = 1; j < m; ++j) {
        s.ldl_sub(j - 1) = s.R(j, j - 1) / s.ldl_d(j - 1);
        s.ldl_d(j) = s.R(j, j) - s.ldl_sub(j - 1) * s.ldl_sub(j - 1) * s.ldl_d(j - 1);
    }

    // W = Lambda^{1/2} U' (upper bidiagonal); L = Q W^-1, solved row by row.
    Eigen::VectorXd sqrt_d = s.ldl_d.array().sqrt();
    s.L.resize(r, m);
    for (int i = 0; i < r; ++i) {
        // Solve l W = q for the row vector l: l_0 = q_0 / W00,
        // l_j = (q_j - l_{j-1} W_{j-1,j}) / W_jj with W_{j-1,j} = sqrt_d_{j-1} u_{j,j-1}.
        double prev = 0.0;
        for (int j = 0; j < m; ++j) {
            double off = j > 0 ? sqrt_d(j - 1) * s.ldl_sub(j - 1) : 0.0;
            double v = (s.Q(i, j) - prev * off) / sqrt_d(j);
            s.L(i, j) = v;
            prev = v;
        }
    }
    s.M = s.L * s.L.transpose();

    // B_knots = Q (Q'Q)^-1 U Lambda^{1/2}.
    Eigen::MatrixXd U_sqrtD = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) {
        U_sqrtD(j, j) = sqrt_d(j);
        if (j + 1 < m) U_sqrtD(j + 1, j) = s.ldl_sub(j) * sqrt_d(j);
    }
    // Q (Q'Q)^-1 = H T^-T from the thin QR Q = H T, which avoids squaring the
    // conditioning of Q when knots cluster.
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(s.Q);
    const Eigen::MatrixXd H = qr.householderQ() * Eigen::MatrixXd::Identity(r, m);
    const Eigen::MatrixXd T = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
    s.B_knots = H * T.transpose().triangularView<Eigen::Lower>().solve(U_sqrtD);

    s.B.resize(n, m);
    for (int i = 0; i < n; ++i) s.B.row(i) = s.B_knots.row(s.knot_of[static_cast<size_t>(i)]);
    s.BBt = s.B * s.B.transpose();
    return s;
}

double roughness(const Eigen::VectorXd& f_values, const SplineSystem& system) {
    if (f_values.size() != system.r()) {
        throw ContractError("roughness: expected one value per knot");
    }
    // f'Mf = |L'f|^2, never negative.
    return (system.L.transpose() * f_values).squaredNorm();
}

}  // namespace pathenv
