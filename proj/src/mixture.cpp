#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numbers>

#include "pathenv/error.hpp"
#include "pathenv/hypothesis.hpp"

namespace pathenv {

namespace {

constexpr double kPi = std::numbers::pi;

double chi2_1_tail(double t) { return std::erfc(std::sqrt(0.5 * t)); }
double chi2_2_tail(double t) { return std::exp(-0.5 * t); }

// With U = R (cos a, sin a), the one-component statistic on an acute cone of
// opening alpha is R^2 g(a), R^2 ~ chi2_2 independent of a ~ U(0, 2 pi).
double acute_one_component_tail(double alpha, double t) {
    using boost::math::quadrature::gauss_kronrod;
    auto piece = [t](auto g, double lo, double hi) {
        if (hi <= lo) return 0.0;
        auto f = [&](double a) {
            const double v = g(a);
            return v > 0.0 ? std::exp(-0.5 * t / v) : 0.0;
        };
        return gauss_kronrod<double, 61>::integrate(f, lo, hi, 12, 1e-13);
    };
    const double sa = std::sin(alpha);
    double total = 0.0;
    total += piece([](double a) { return std::sin(a) * std::sin(a); }, 0.0, alpha);
    total += piece([alpha, sa](double a) { return std::sin(2.0 * a - alpha) * sa; }, alpha, 0.5 * kPi);
    total += piece([alpha](double a) { return std::cos(a - alpha) * std::cos(a - alpha); }, 0.5 * kPi,
                   alpha + 0.5 * kPi);
    return total / (2.0 * kPi);
}

}  // namespace

double cone_phi(double gamma) {
    require(std::isfinite(gamma), "cone_phi: gamma must be finite");
    return std::acos(gamma / std::sqrt(1.0 + gamma * gamma)) / (2.0 * kPi);
}

double cone_gamma(const Eigen::Matrix2d& info) {
    const double det = info(0, 0) * info(1, 1) - info(0, 1) * info(1, 0);
    require(info.allFinite() && info(0, 0) > 0.0 && info(1, 1) > 0.0 && det > 0.0,
            "cone_gamma: information must be positive definite");
    return info(0, 1) / std::sqrt(det);
}

MixtureLaw MixtureLaw::two_component(double gamma) {
    MixtureLaw law;
    law.kind = Kind::two_component;
    law.gamma = gamma;
    law.phi = cone_phi(gamma);
    law.weights = {law.phi, 0.5, 0.5 - law.phi};
    return law;
}

MixtureLaw MixtureLaw::one_component(double gamma) {
    MixtureLaw law;
    law.kind = Kind::one_component;
    law.gamma = gamma;
    law.phi = cone_phi(gamma);
    if (law.phi >= 0.25) {
        law.weights = {law.phi - 0.25, 0.5, 0.75 - law.phi};
    } else {
        law.weights = {0.0, 0.25 + law.phi, 0.75 - law.phi};
        law.angular_tail = true;
    }
    return law;
}

MixtureLaw MixtureLaw::from_weights(double w2, double w1, double w0) {
    require(w2 >= 0.0 && w1 >= 0.0 && w0 >= 0.0 && std::abs(w2 + w1 + w0 - 1.0) < 1e-12,
            "mixture weights must be non-negative and sum to one");
    MixtureLaw law;
    law.weights = {w2, w1, w0};
    return law;
}

double mixture_tail(const MixtureLaw& law, double t) {
    require(!(t < 0.0), "mixture_tail: statistic must be non-negative");
    require(std::isfinite(t), "mixture_tail: statistic must be finite");
    if (t == 0.0) return 1.0;
    if (law.angular_tail) return acute_one_component_tail(2.0 * kPi * law.phi, t);
    return law.weights[0] * chi2_2_tail(t) + law.weights[1] * chi2_1_tail(t);
}

double satterthwaite_tail(const SatterthwaiteLaw& law, double u) {
    require(law.kappa > 0.0 && law.nu > 0.0, "satterthwaite: kappa and nu must be positive");
    if (u <= 0.0) return 1.0;
    return boost::math::gamma_q(0.5 * law.nu, 0.5 * u / law.kappa);
}

const char* status_name(TestStatus status) {
    switch (status) {
        case TestStatus::ok: return "ok";
        case TestStatus::info_not_pd: return "info-not-pd";
        case TestStatus::degenerate: return "degenerate";
        case TestStatus::fit_failed: return "fit-failed";
        case TestStatus::permutation_warning: return "permutation-warning";
    }
    return "unknown";
}

}  // namespace pathenv
