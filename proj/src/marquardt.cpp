#include "pathenv/marquardt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pathenv/error.hpp"

namespace pathenv {

namespace {

Eigen::VectorXd project(const Eigen::VectorXd& theta, const Eigen::VectorXd& lower,
                        const Eigen::VectorXd& upper) {
    return theta.cwiseMax(lower).cwiseMin(upper);
}

// Solve (A + delta I) s = g on the free coordinates; grows delta until the
// damped matrix is positive definite.
std::optional<Eigen::VectorXd> damped_step(const Eigen::MatrixXd& info, const Eigen::VectorXd& score,
                                           const std::vector<int>& free, double& delta) {
    const int k = static_cast<int>(free.size());
    Eigen::MatrixXd A(k, k);
    Eigen::VectorXd g(k);
    for (int a = 0; a < k; ++a) {
        g(a) = score(free[static_cast<size_t>(a)]);
        for (int b = 0; b < k; ++b) A(a, b) = info(free[static_cast<size_t>(a)], free[static_cast<size_t>(b)]);
    }
    for (int attempt = 0; attempt < 40; ++attempt) {
        Eigen::MatrixXd D = A;
        D.diagonal().array() += delta;
        Eigen::LLT<Eigen::MatrixXd> llt(D);
        if (llt.info() == Eigen::Success) {
            Eigen::VectorXd s_free = llt.solve(g);
            if (s_free.allFinite()) {
                Eigen::VectorXd s = Eigen::VectorXd::Zero(score.size());
                for (int a = 0; a < k; ++a) s(free[static_cast<size_t>(a)]) = s_free(a);
                return s;
            }
        }
        delta = std::max(delta * 10.0, 1e-12);
    }
    return std::nullopt;
}

double max_relative_change(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double denom = std::max(std::abs(b(i)), 1e-6);
        worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
    }
    return worst;
}

}  // namespace

MarquardtResult maximize(const MarquardtProblem& problem, Eigen::VectorXd theta,
                         const MarquardtOptions& options) {
    const Eigen::Index k = theta.size();
    require(problem.lower.size() == k && problem.upper.size() == k, "maximize: bound sizes disagree");

    MarquardtResult result;
    theta = project(theta, problem.lower, problem.upper);
    auto current = problem.scored(theta);
    if (!current) {
        result.theta = theta;
        result.message = "initial point is numerically infeasible";
        return result;
    }
    const double trace = current->info.trace();
    double delta = options.initial_delta_factor * (trace > 0.0 ? trace / static_cast<double>(k) : 1.0);
    result.trace.push_back(current->value);

    for (int iter = 1; iter <= options.max_iter; ++iter) {
        result.iterations = iter;
        std::vector<int> free;
        for (Eigen::Index i = 0; i < k; ++i) {
            const bool pinned_low = theta(i) <= problem.lower(i) && current->score(i) <= 0.0;
            const bool pinned_high = theta(i) >= problem.upper(i) && current->score(i) >= 0.0;
            if (!pinned_low && !pinned_high) free.push_back(static_cast<int>(i));
        }
        if (free.empty()) {
            result.converged = true;
            result.message = "all parameters held at their bounds";
            break;
        }

        bool accepted = false;
        Eigen::VectorXd candidate;
        double candidate_value = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd last_step;
        for (int attempt = 0; attempt <= options.max_damping_increases && !accepted; ++attempt) {
            auto step = damped_step(current->info, current->score, free, delta);
            if (!step) break;
            last_step = *step;
            candidate = project(theta + *step, problem.lower, problem.upper);
            auto v = problem.value(candidate);
            if (v && *v >= current->value) {
                candidate_value = *v;
                accepted = true;
            } else {
                delta *= 10.0;
            }
        }
        // Heavy damping failed to find ascent: fall back to halving the scoring step.
        if (!accepted && last_step.size() == k) {
            Eigen::VectorXd step = last_step;
            for (int h = 0; h < options.max_halvings && !accepted; ++h) {
                step *= 0.5;
                candidate = project(theta + step, problem.lower, problem.upper);
                auto v = problem.value(candidate);
                if (v && *v >= current->value) {
                    candidate_value = *v;
                    accepted = true;
                }
            }
        }
        if (!accepted) {
            // Stationary up to rounding if the predicted gain of the undamped
            // step is below the likelihood's working precision.
            double predicted = 0.0;
            double d0 = 0.0;
            if (auto s = damped_step(current->info, current->score, free, d0)) {
                predicted = current->score.dot(*s);
            }
            result.converged = std::abs(predicted) < 1e-8 * std::max(1.0, std::abs(current->value));
            result.message = result.converged ? "converged (no ascent at working precision)"
                                              : "no ascent step found";
            break;
        }

        auto next = problem.scored(candidate);
        if (!next) {
            result.message = "accepted point became infeasible";
            break;
        }
        const double rel_lik = std::abs(next->value - current->value) / std::max(1.0, std::abs(current->value));
        const double rel_par = max_relative_change(candidate, theta);
        theta = candidate;
        current = std::move(next);
        (void)candidate_value;
        result.trace.push_back(current->value);
        delta = std::max(delta / 10.0, 1e-300);
        if (rel_lik < options.tol_loglik && rel_par < options.tol_param) {
            result.converged = true;
            result.message = "converged";
            break;
        }
        const auto w = static_cast<size_t>(options.flat_window);
        if (options.flat_window > 0 && result.trace.size() > w &&
            std::abs(current->value - result.trace[result.trace.size() - 1 - w]) <
                options.flat_tol * std::max(1.0, std::abs(current->value))) {
            result.converged = true;
            result.flat_ridge = true;
            result.message = "converged (likelihood flat while parameters drift)";
            break;
        }
    }
    if (!result.converged && result.message.empty()) result.message = "iteration limit reached";
    result.theta = theta;
    result.at_optimum = *current;
    result.delta = delta;
    return result;
}

}  // namespace pathenv
