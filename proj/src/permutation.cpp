#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "pathenv/error.hpp"
#include "pathenv/hypothesis.hpp"
#include "pathenv/log.hpp"
#include "pathenv/parallel.hpp"

namespace pathenv {

namespace {

double replicate_statistic(bool interaction, const Eigen::VectorXd& y, const SplineSystem& system,
                           const GramSet& grams, const TestConfig& config) {
    FitConfig fc = config.fit;
    fc.estimator = Estimator::preml;
    fc.rho_policy = RhoPolicy::fixed;
    fc.free = {config.free_tau_x, interaction, false};
    const ModelFit null_fit = fit(y, system, grams, fc);
    fc.free = {config.free_tau_x, true, true};
    ModelFit alt = fit(y, system, grams, fc);
    if (alt.loglik < null_fit.loglik) {
        fc.init_lambda_inv = null_fit.params.lambda_inv();
        ModelFit retry = fit(y, system, grams, fc);
        if (retry.loglik > alt.loglik) alt = std::move(retry);
    }
    const double stat = std::max(0.0, 2.0 * (alt.loglik - null_fit.loglik));
    return stat < config.zero_tol ? 0.0 : stat;
}

}  // namespace

TestReport permutation_from_fit(bool interaction, const Eigen::VectorXd& y, const SplineSystem& system,
                                const GramSet& grams, const ModelFit& alternative, double observed,
                                const PermutationOptions& options, const TestConfig& config) {
    require(options.replicates >= 1, "permutation: at least one replicate required");
    require(y.size() == system.n(), "permutation: response length does not match the design");

    Eigen::VectorXd base = system.X * alternative.beta_hat;
    if (alternative.r_x_hat.size() > 0) base += system.B * alternative.r_x_hat;
    if (interaction) base += alternative.r_z_hat;
    const Eigen::VectorXd e0 = y - base;
    const Eigen::Index n = y.size();

    const int B = options.replicates;
    std::vector<double> stats(static_cast<size_t>(B), std::numeric_limits<double>::quiet_NaN());
    parallel_for(static_cast<size_t>(B), options.threads, [&](size_t b) {
        std::mt19937_64 rng(stream_seed(options.seed, b));
        std::vector<Eigen::Index> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        for (Eigen::Index i = n - 1; i > 0; --i) {
            std::uniform_int_distribution<Eigen::Index> pick(0, i);
            std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(pick(rng))]);
        }
        Eigen::VectorXd ystar(n);
        for (Eigen::Index i = 0; i < n; ++i) ystar(i) = base(i) + e0(perm[static_cast<size_t>(i)]);
        try {
            stats[b] = replicate_statistic(interaction, ystar, system, grams, config);
        } catch (const std::exception& e) {
            log::debug(std::string("permutation replicate failed: ") + e.what());
        }
    });

    PermutationSummary summary;
    summary.requested = B;
    const double tol = config.zero_tol * std::max(1.0, std::abs(observed));
    for (double s : stats) {
        if (std::isnan(s)) {
            ++summary.failed;
            continue;
        }
        ++summary.completed;
        if (s > observed + tol) {
            ++summary.exceed;
        } else if (std::abs(s - observed) <= tol) {
            ++summary.ties;
        }
    }
    summary.statistics = std::move(stats);

    TestReport report;
    report.test = interaction ? "interaction" : "overall";
    report.statistic = observed;
    if (summary.completed == 0) {
        report.status = TestStatus::fit_failed;
        report.message = "every permutation replicate failed";
        report.permutation = std::move(summary);
        return report;
    }
    const double completed = summary.completed;
    double p = 0.0;
    if (options.randomize_ties) {
        std::mt19937_64 rng(stream_seed(options.seed, static_cast<std::uint64_t>(B) + 1));
        const double v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        p = (summary.exceed + v * (summary.ties + 1)) / (completed + 1.0);
    } else if (options.plus_one) {
        p = (1.0 + summary.exceed + summary.ties) / (completed + 1.0);
    } else {
        p = (summary.exceed + summary.ties) / completed;
    }
    report.p_permutation = std::clamp(p, 0.0, 1.0);
    if (summary.failed > options.failure_warning * B) {
        std::ostringstream msg;
        msg << summary.failed << " of " << B << " permutation replicates failed";
        report.status = TestStatus::permutation_warning;
        report.message = msg.str();
        log::warn(msg.str());
    }
    report.permutation = std::move(summary);
    return report;
}

TestReport permutation_overall(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                               const PermutationOptions& options, const TestConfig& config) {
    const RlrtResult obs = rlrt_both(y, system, grams, config);
    return permutation_from_fit(false, y, system, grams, obs.fits.alternative, obs.overall.statistic, options,
                                config);
}

TestReport permutation_interaction(const Eigen::VectorXd& y, const SplineSystem& system, const GramSet& grams,
                                   const PermutationOptions& options, const TestConfig& config) {
    const RlrtResult obs = rlrt_both(y, system, grams, config);
    return permutation_from_fit(true, y, system, grams, obs.fits.alternative, obs.interaction.statistic, options,
                                config);
}

}  // namespace pathenv
