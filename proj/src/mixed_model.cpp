#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "pathenv/detail/profile.hpp"
#include "pathenv/error.hpp"
#include "pathenv/log.hpp"
#include "pathenv/marquardt.hpp"
#include "pathenv/mixed_model.hpp"

namespace pathenv {

Effects ModelFit::effects() const {
    Effects e;
    e.beta = beta_hat;
    e.r_x = r_x_hat;
    e.r_z = r_z_hat;
    e.r_xz = r_xz_hat;
    e.beta_cov = beta_cov;
    return e;
}

namespace {

constexpr double kUpper = 1e10;
constexpr double kRhoRange = 1e4;

// Full parameter vector of either estimator:
//   p-REML: (lambda_x^-1, lambda_z^-1, lambda_xz^-1, rho)
//   REML:   (sigma2, tau_x, tau_z, tau_xz, rho)
struct Layout {
    Estimator estimator;
    std::vector<int> free;  // positions in the full vector that are optimised
    int rho_pos;

    [[nodiscard]] Eigen::VectorXd expand(const Eigen::VectorXd& base, const Eigen::VectorXd& theta) const {
        Eigen::VectorXd full = base;
        for (size_t a = 0; a < free.size(); ++a) full(free[a]) = theta(static_cast<Eigen::Index>(a));
        return full;
    }
    [[nodiscard]] Eigen::VectorXd restrict(const Eigen::VectorXd& full) const {
        Eigen::VectorXd theta(static_cast<Eigen::Index>(free.size()));
        for (size_t a = 0; a < free.size(); ++a) theta(static_cast<Eigen::Index>(a)) = full(free[a]);
        return theta;
    }
};

Layout make_layout(const FitConfig& config, bool rho_free) {
    Layout layout{config.estimator, {}, config.estimator == Estimator::preml ? 3 : th_rho};
    if (config.estimator == Estimator::reml) layout.free.push_back(th_sigma2);
    const int offset = config.estimator == Estimator::preml ? 0 : 1;
    for (int c = 0; c < kComponents; ++c) {
        if (config.free[static_cast<size_t>(c)]) layout.free.push_back(c + offset);
    }
    if (rho_free) layout.free.push_back(layout.rho_pos);
    return layout;
}

std::array<double, 3> lambdas_of(const Eigen::VectorXd& full) { return {full(0), full(1), full(2)}; }

VarianceParams reml_params_of(const Eigen::VectorXd& full) {
    VarianceParams p;
    p.sigma2 = full(th_sigma2);
    p.tau_x = full(th_tau_x);
    p.tau_z = full(th_tau_z);
    p.tau_xz = full(th_tau_xz);
    p.rho = full(th_rho);
    p.parameterization = Estimator::reml;
    return p;
}

struct Stage {
    Eigen::VectorXd full;
    MarquardtResult result;
};

Stage run_stage(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                const FitConfig& config, const Layout& layout, const Eigen::VectorXd& start,
                double y_var) {
    const int k = static_cast<int>(layout.free.size());
    // Cache of the Gram set for the most recent rho to avoid rebuilding it
    // between the value and scored calls at the same point.
    auto gram_cache = std::make_shared<GramSet>(grams);
    auto grams_for = [gram_cache](double rho) -> const GramSet& {
        if (gram_cache->rho != rho) *gram_cache = gram_cache->with_rho(rho);
        return *gram_cache;
    };

    std::array<bool, 5> need{};
    for (int pos : layout.free) need[static_cast<size_t>(pos)] = true;

    MarquardtProblem problem;
    problem.lower = Eigen::VectorXd::Zero(k);
    problem.upper = Eigen::VectorXd::Constant(k, kUpper);
    for (int a = 0; a < k; ++a) {
        const int pos = layout.free[static_cast<size_t>(a)];
        if (pos == layout.rho_pos) {
            problem.lower(a) = grams.rho / kRhoRange;
            problem.upper(a) = grams.rho * kRhoRange;
        } else if (layout.estimator == Estimator::reml && pos == th_sigma2) {
            problem.lower(a) = 1e-10 * y_var;
        }
    }

    if (layout.estimator == Estimator::preml) {
        problem.value = [&, grams_for](const Eigen::VectorXd& th) -> std::optional<double> {
            const Eigen::VectorXd full = layout.expand(start, th);
            try {
                return preml_loglik(y, lambdas_of(full), full(3), system, grams_for(full(3)));
            } catch (const IllConditioned&) {
                return std::nullopt;
            } catch (const DesignDegenerate&) {
                return std::nullopt;
            }
        };
        problem.scored = [&, grams_for](const Eigen::VectorXd& th) -> std::optional<ScoredValue> {
            const Eigen::VectorXd full = layout.expand(start, th);
            try {
                const auto prof = detail::preml_profile_subset(y, lambdas_of(full), full(3), system,
                                                               grams_for(full(3)),
                                                               {need[0], need[1], need[2], need[3]});
                ScoredValue sv;
                sv.value = prof.loglik;
                sv.score = layout.restrict(prof.score);
                sv.info.resize(k, k);
                for (int a = 0; a < k; ++a) {
                    for (int b = 0; b < k; ++b) {
                        sv.info(a, b) = prof.info(layout.free[static_cast<size_t>(a)], layout.free[static_cast<size_t>(b)]);
                    }
                }
                return sv;
            } catch (const IllConditioned&) {
                return std::nullopt;
            } catch (const DesignDegenerate&) {
                return std::nullopt;
            }
        };
    } else {
        problem.value = [&, grams_for](const Eigen::VectorXd& th) -> std::optional<double> {
            const Eigen::VectorXd full = layout.expand(start, th);
            try {
                return reml_loglik(y, reml_params_of(full), system, grams_for(full(th_rho)));
            } catch (const IllConditioned&) {
                return std::nullopt;
            } catch (const DesignDegenerate&) {
                return std::nullopt;
            }
        };
        problem.scored = [&, grams_for](const Eigen::VectorXd& th) -> std::optional<ScoredValue> {
            const Eigen::VectorXd full = layout.expand(start, th);
            try {
                const auto si = detail::reml_score_info_subset(y, reml_params_of(full), system,
                                                               grams_for(full(th_rho)), need);
                ScoredValue sv;
                sv.value = si.loglik;
                sv.score = layout.restrict(si.score);
                sv.info.resize(k, k);
                for (int a = 0; a < k; ++a) {
                    for (int b = 0; b < k; ++b) {
                        sv.info(a, b) = si.info(layout.free[static_cast<size_t>(a)], layout.free[static_cast<size_t>(b)]);
                    }
                }
                return sv;
            } catch (const IllConditioned&) {
                return std::nullopt;
            } catch (const DesignDegenerate&) {
                return std::nullopt;
            }
        };
    }

    MarquardtOptions opts;
    opts.max_iter = config.max_iter;
    opts.tol_loglik = config.tol_loglik;
    opts.tol_param = config.tol_param;
    opts.flat_tol = config.tol_flat;
    Stage stage;
    stage.result = maximize(problem, layout.restrict(start), opts);
    stage.full = layout.expand(start, stage.result.theta);
    return stage;
}

double sample_variance(const Eigen::VectorXd& y) {
    const double mean = y.mean();
    return (y.array() - mean).square().sum() / static_cast<double>(std::max<Eigen::Index>(1, y.size() - 1));
}

}  // namespace

ModelFit fit(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams, const FitConfig& config) {
    require(y.size() == system.n(), "fit: response length does not match the design");
    require(grams.n() == system.n(), "fit: Gram matrices do not match the design");
    require(y.allFinite(), "fit: response contains non-finite values");
    require(grams.rho > 0.0, "fit: rho must be positive");
    const double y_var = sample_variance(y);

    Eigen::VectorXd start;
    if (config.estimator == Estimator::preml) {
        start.resize(4);
        for (int c = 0; c < kComponents; ++c) {
            start(c) = config.free[static_cast<size_t>(c)] ? config.init_lambda_inv[static_cast<size_t>(c)] : 0.0;
        }
        start(3) = grams.rho;
    } else {
        start.resize(kRemlParams);
        start(th_sigma2) = config.init_sigma2;
        for (int c = 0; c < kComponents; ++c) {
            start(c + 1) = config.free[static_cast<size_t>(c)] ? config.init_tau[static_cast<size_t>(c)] : 0.0;
        }
        start(th_rho) = grams.rho;
    }

    Stage stage = run_stage(y, system, grams, config, make_layout(config, false), start, y_var);
    bool rho_pinned = false;
    std::vector<double> trace = stage.result.trace;
    int iterations = stage.result.iterations;
    if (config.rho_policy == RhoPolicy::estimated) {
        Stage second = run_stage(y, system, grams, config, make_layout(config, true), stage.full, y_var);
        const Layout l2 = make_layout(config, true);
        const double rho_hat = second.full(l2.rho_pos);
        const double factor = config.rho_divergence_factor;
        iterations += second.result.iterations;
        if (!second.result.converged || rho_hat > factor * grams.rho || rho_hat < grams.rho / factor) {
            std::ostringstream msg;
            msg << "rho estimate " << rho_hat << " rejected (start " << grams.rho
                << "); rho kept at its starting value";
            log::warn(msg.str());
            rho_pinned = true;
        } else {
            trace.insert(trace.end(), second.result.trace.begin(), second.result.trace.end());
            stage = std::move(second);
        }
    }

    ModelFit out;
    out.config = config;
    out.diagnostics.iterations = iterations;
    out.diagnostics.delta = stage.result.delta;
    out.diagnostics.converged = stage.result.converged;
    out.diagnostics.message = stage.result.message;
    out.diagnostics.flat_ridge = stage.result.flat_ridge;
    out.diagnostics.loglik_trace = std::move(trace);
    out.diagnostics.rho_pinned = rho_pinned;

    const Eigen::VectorXd& full = stage.full;
    VarianceParams params;
    if (config.estimator == Estimator::preml) {
        const auto prof = preml_profile(y, lambdas_of(full), full(3), system, grams);
        params = VarianceParams::from_lambda(prof.sigma2_hat, lambdas_of(full), full(3));
        params.parameterization = Estimator::preml;
        out.info = prof.info;
        out.loglik = prof.loglik;
        for (int c = 0; c < kComponents; ++c) {
            out.diagnostics.at_boundary[static_cast<size_t>(c)] =
                config.free[static_cast<size_t>(c)] && full(c) < config.boundary_tol;
        }
    } else {
        params = reml_params_of(full);
        out.loglik = reml_loglik(y, params, system, grams);
        for (int c = 0; c < kComponents; ++c) {
            out.diagnostics.at_boundary[static_cast<size_t>(c)] =
                config.free[static_cast<size_t>(c)] && full(c + 1) < config.boundary_tol;
        }
    }
    params.rho_policy = config.rho_policy;
    out.diagnostics.sigma2_at_boundary = params.sigma2 < config.boundary_tol;
    out.params = params;

    const GramSet storage = params.rho == grams.rho ? GramSet{} : grams.with_rho(params.rho);
    const GramSet& g = params.rho == grams.rho ? grams : storage;

    // Standard errors from the REML information over the estimated parameters.
    out.std_errors = Eigen::VectorXd::Constant(kRemlParams, std::numeric_limits<double>::quiet_NaN());
    try {
        const auto si = reml_score_info(y, params, system, g);
        if (config.estimator == Estimator::reml) out.info = si.info;
        out.reml_info = si.info;
        std::vector<int> est = {th_sigma2};
        for (int c = 0; c < kComponents; ++c) {
            if (config.free[static_cast<size_t>(c)]) est.push_back(c + 1);
        }
        if (config.rho_policy == RhoPolicy::estimated && !rho_pinned) est.push_back(th_rho);
        const int m = static_cast<int>(est.size());
        Eigen::MatrixXd sub(m, m);
        for (int a = 0; a < m; ++a) {
            for (int b = 0; b < m; ++b) sub(a, b) = si.info(est[static_cast<size_t>(a)], est[static_cast<size_t>(b)]);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(sub);
        if (lu.isInvertible()) {
            const Eigen::MatrixXd inv = lu.inverse();
            for (int a = 0; a < m; ++a) {
                if (inv(a, a) >= 0.0) out.std_errors(est[static_cast<size_t>(a)]) = std::sqrt(inv(a, a));
            }
        }
    } catch (const IllConditioned&) {
        log::debug("REML information unavailable at the estimate");
    }

    const Effects e = blup(y, params, system, g);
    out.beta_hat = e.beta;
    out.r_x_hat = e.r_x;
    out.r_z_hat = e.r_z;
    out.r_xz_hat = e.r_xz;
    out.beta_cov = e.beta_cov;
    return out;
}

}  // namespace pathenv
