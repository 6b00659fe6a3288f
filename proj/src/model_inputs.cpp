#include "pathenv/model_inputs.hpp"

#include <cmath>
#include <sstream>

#include "pathenv/error.hpp"

namespace pathenv {

PathwayModel make_pathway_model(const SplineSystem& system, const Eigen::MatrixXd& Z_raw,
                                const ExpressionScaling& scaling, std::optional<double> rho) {
    require(Z_raw.rows() == system.n(), "pathway model: expression rows must match the covariate");
    for (Eigen::Index j = 0; j < Z_raw.cols(); ++j) {
        for (Eigen::Index i = 0; i < Z_raw.rows(); ++i) {
            if (!std::isfinite(Z_raw(i, j))) {
                std::ostringstream msg;
                msg << "expression value at row " << i << ", column " << j << " is not finite";
                throw DataError(msg.str());
            }
        }
    }
    PathwayModel m;
    m.system = system;
    const Eigen::MatrixXd Z = prepare_expression(Z_raw, scaling);
    Eigen::MatrixXd D = squared_distances(Z);
    const double n = static_cast<double>(Z.rows());
    m.rho_default = n > 1 ? D.sum() / (n * (n - 1.0)) : 0.0;
    double use = rho.value_or(0.0);
    if (!(use > 0.0)) use = m.rho_default;
    if (!(use > 0.0)) throw UnsupportedInput("all expression profiles coincide; rho must be given explicitly");
    m.grams = build_gram_set_from_distances(system.x_scaled, std::move(D), use);
    return m;
}

PathwayModel make_pathway_model(const Eigen::VectorXd& x_raw, const Eigen::MatrixXd& Z_raw,
                                const ExpressionScaling& scaling, std::optional<double> rho) {
    return make_pathway_model(build_spline_system(x_raw), Z_raw, scaling, rho);
}

}  // namespace pathenv
