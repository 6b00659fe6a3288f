#include <cmath>
#include <sstream>

#include "pathenv/error.hpp"
#include "pathenv/hypothesis.hpp"
#include "pathenv/log.hpp"

namespace pathenv {

namespace {

constexpr double kClampReport = 1e-6;

// p-REML at fixed rho with lambda_x^-1 free only on request.
FitConfig lrt_config(const TestConfig& config, bool free_z, bool free_xz) {
    FitConfig fc = config.fit;
    fc.estimator = Estimator::preml;
    fc.rho_policy = RhoPolicy::fixed;
    fc.free = {config.free_tau_x, free_z, free_xz};
    return fc;
}

ModelFit fit_from(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams, FitConfig fc,
                  const ModelFit& start) {
    fc.init_lambda_inv = start.params.lambda_inv();
    return fit(y, system, grams, fc);
}

// Keeps nested fits ordered: a larger model restarted from the smaller one's
// estimate whenever its own search ended lower.
void enforce_nesting(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                     const FitConfig& larger_config, ModelFit& larger, const ModelFit& smaller) {
    if (larger.loglik >= smaller.loglik) return;
    ModelFit retry = fit_from(y, system, grams, larger_config, smaller);
    if (retry.loglik > larger.loglik) larger = std::move(retry);
}

double lrt_statistic(double l_alt, double l_null, const TestConfig& config, const char* name, double& clamped) {
    double stat = 2.0 * (l_alt - l_null);
    clamped = 0.0;
    if (stat < 0.0) {
        clamped = -stat;
        std::ostringstream msg;
        msg << name << " statistic " << stat << " clamped to 0";
        if (clamped > kClampReport) {
            log::warn(msg.str());
        } else {
            log::debug(msg.str());
        }
        stat = 0.0;
    }
    if (stat < config.zero_tol) stat = 0.0;
    return stat;
}

// Efficient information on (lambda_z^-1, lambda_xz^-1) at the null estimate.
std::optional<Eigen::Matrix2d> efficient_information(const Eigen::VectorXd& y, const SplineSystem& system,
                                                     const GramSet& grams, const ModelFit& null_fit,
                                                     const TestConfig& config) {
    const auto prof = preml_profile(y, null_fit.params.lambda_inv(), null_fit.params.rho, system, grams);
    const Eigen::Matrix3d I = prof.info.topLeftCorner<3, 3>();
    Eigen::Matrix2d tilde = I.bottomRightCorner<2, 2>();
    if (config.nuisance_adjust) {
        if (!(I(0, 0) > 0.0)) return std::nullopt;
        const Eigen::Vector2d c = I.block<2, 1>(1, 0);
        tilde -= c * c.transpose() / I(0, 0);
    }
    return tilde;
}

void attach_law(TestReport& report, const std::optional<Eigen::Matrix2d>& tilde, bool two_component) {
    const bool pd = tilde && tilde->allFinite() && (*tilde)(0, 0) > 0.0 && (*tilde)(1, 1) > 0.0 &&
                    tilde->determinant() > 0.0;
    if (tilde) report.efficient_info = *tilde;
    if (!pd) {
        report.status = TestStatus::info_not_pd;
        report.message = "information at the null estimate is not positive definite";
        return;
    }
    const double gamma = cone_gamma(*tilde);
    const MixtureLaw law = two_component ? MixtureLaw::two_component(gamma) : MixtureLaw::one_component(gamma);
    report.law = law;
    report.p_asymptotic = mixture_tail(law, report.statistic);
}

}  // namespace

RlrtFits rlrt_fits(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                   const TestConfig& config) {
    require(system.n() >= 10, "likelihood ratio tests need at least 10 observations");
    FitConfig alt_cfg = lrt_config(config, true, true);
    alt_cfg.rho_policy = config.fit.rho_policy;
    RlrtFits fits;
    fits.alternative = fit(y, system, grams, alt_cfg);

    // Null models are fitted at the kernel scale the alternative ended on.
    const double rho = fits.alternative.params.rho;
    const GramSet rescaled = rho == grams.rho ? GramSet{} : grams.with_rho(rho);
    const GramSet& g = rho == grams.rho ? grams : rescaled;
    const FitConfig int_cfg = lrt_config(config, true, false);
    fits.null_overall = fit(y, system, g, lrt_config(config, false, false));
    fits.null_interaction = fit(y, system, g, int_cfg);
    enforce_nesting(y, system, g, int_cfg, fits.null_interaction, fits.null_overall);
    enforce_nesting(y, system, g, lrt_config(config, true, true), fits.alternative, fits.null_interaction);
    return fits;
}

TestReport overall_from_fits(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                             const RlrtFits& fits, const TestConfig& config) {
    TestReport report;
    report.test = "overall";
    report.loglik_alt = fits.alternative.loglik;
    report.loglik_null = fits.null_overall.loglik;
    report.statistic = lrt_statistic(report.loglik_alt, report.loglik_null, config, "overall", report.clamped);
    attach_law(report, efficient_information(y, system, grams, fits.null_overall, config), true);
    if (!fits.alternative.diagnostics.converged && report.status == TestStatus::ok) {
        report.message = "alternative fit did not converge: " + fits.alternative.diagnostics.message;
    }
    return report;
}

TestReport interaction_from_fits(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                                 const RlrtFits& fits, const TestConfig& config) {
    TestReport report;
    report.test = "interaction";
    report.loglik_alt = fits.alternative.loglik;
    report.loglik_null = fits.null_interaction.loglik;
    report.statistic =
        lrt_statistic(report.loglik_alt, report.loglik_null, config, "interaction", report.clamped);
    attach_law(report, efficient_information(y, system, grams, fits.null_interaction, config), false);
    if (!fits.alternative.diagnostics.converged && report.status == TestStatus::ok) {
        report.message = "alternative fit did not converge: " + fits.alternative.diagnostics.message;
    }
    return report;
}

RlrtResult rlrt_both(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                     const TestConfig& config) {
    RlrtResult out;
    out.fits = rlrt_fits(y, system, grams, config);
    out.overall = overall_from_fits(y, system, grams, out.fits, config);
    out.interaction = interaction_from_fits(y, system, grams, out.fits, config);
    return out;
}

TestReport rlrt_overall(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                        const TestConfig& config) {
    return rlrt_both(y, system, grams, config).overall;
}

TestReport rlrt_interaction(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                            const TestConfig& config) {
    return rlrt_both(y, system, grams, config).interaction;
}

ModelFit score_null_fit(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                        const FitConfig& base) {
    FitConfig fc = base;
    fc.estimator = Estimator::preml;
    fc.free = {true, true, false};
    return fit(y, system, grams, fc);
}

TestReport score_test_interaction(const Eigen::VectorXd& y, const ModelFit& null_fit,
                                  const SplineSystem& system, const GramSet& grams) {
    require(null_fit.params.tau_xz == 0.0, "score test needs a null fit with tau_xz = 0");
    TestReport report;
    report.test = "score";
    const VarianceParams& params = null_fit.params;
    const ProjectionSet proj = covariance(params, system, grams);
    const GramSet g = params.rho == grams.rho ? grams : grams.with_rho(params.rho);
    const Eigen::VectorXd Py = proj.P * y;
    report.statistic = 0.5 * Py.dot(g.Kxz * Py);
    const double expected = 0.5 * (proj.P.array() * g.Kxz.array()).sum();

    const auto si = reml_score_info(y, params, system, g);
    std::vector<int> nuisance = {th_sigma2};
    for (int c = 0; c < 2; ++c) {
        if (null_fit.config.free[static_cast<size_t>(c)]) nuisance.push_back(c + 1);
    }
    if (null_fit.config.rho_policy == RhoPolicy::estimated && !null_fit.diagnostics.rho_pinned) {
        nuisance.push_back(th_rho);
    }
    const int m = static_cast<int>(nuisance.size());
    Eigen::MatrixXd Ivv(m, m);
    Eigen::VectorXd Ijv(m);
    for (int a = 0; a < m; ++a) {
        Ijv(a) = si.info(th_tau_xz, nuisance[static_cast<size_t>(a)]);
        for (int b = 0; b < m; ++b) Ivv(a, b) = si.info(nuisance[static_cast<size_t>(a)], nuisance[static_cast<size_t>(b)]);
    }
    double efficient = si.info(th_tau_xz, th_tau_xz);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Ivv);
    if (lu.isInvertible()) {
        efficient -= Ijv.dot(lu.solve(Ijv));
    } else {
        report.message = "nuisance information singular; unadjusted variance used";
    }
    if (!(expected > 0.0) || !(efficient > 0.0)) {
        report.status = TestStatus::degenerate;
        report.message = "score mean or efficient information not positive";
        return report;
    }
    SatterthwaiteLaw law;
    law.kappa = efficient / (2.0 * expected);
    law.nu = 2.0 * expected * expected / efficient;
    report.law = law;
    report.p_asymptotic = satterthwaite_tail(law, report.statistic);
    return report;
}

}  // namespace pathenv
