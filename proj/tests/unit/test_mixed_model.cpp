#include <catch_amalgamated.hpp>

#include <random>

#include "pathenv/error.hpp"
#include "pathenv/hypothesis.hpp"
#include "pathenv/mixed_model.hpp"
#include "pathenv/model_inputs.hpp"
#include "pathenv/simulation.hpp"

using namespace pathenv;
using Catch::Approx;

namespace {

struct Problem {
    PathwayModel model;
    Eigen::VectorXd y;
};

Problem random_problem(std::uint64_t seed, int n, int p, double noise = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(18.0, 36.0);
    std::normal_distribution<double> nd;
    Eigen::VectorXd x(n), y(n);
    Eigen::MatrixXd Z(n, p);
    for (int i = 0; i < n; ++i) {
        x(i) = u(rng);
        for (int j = 0; j < p; ++j) Z(i, j) = nd(rng);
    }
    Problem pr{make_pathway_model(x, Z, ExpressionScaling{}, 2.0), {}};
    y = pr.model.system.X * Eigen::Vector2d(3.0, 1.0);
    for (int i = 0; i < n; ++i) y(i) += std::sin(3 * x(i)) * 0.3 + Z(i, 0) * 0.5 + noise * nd(rng);
    pr.y = y;
    return pr;
}

VarianceParams make_params(double s2, double tx, double tz, double txz, double rho) {
    VarianceParams v;
    v.sigma2 = s2;
    v.tau_x = tx;
    v.tau_z = tz;
    v.tau_xz = txz;
    v.rho = rho;
    return v;
}

// Residual-maker of OLS on X.
Eigen::MatrixXd ols_annihilator(const Eigen::MatrixXd& X) {
    const int n = static_cast<int>(X.rows());
    return Eigen::MatrixXd::Identity(n, n) - X * (X.transpose() * X).inverse() * X.transpose();
}

}  // namespace

TEST_CASE("covariance assembly") {
    const Problem pr = random_problem(1, 20, 4);
    const auto& s = pr.model.system;
    const auto& g = pr.model.grams;
    const int n = s.n();
    const ProjectionSet e0 = covariance(make_params(0.7, 0, 0, 0, 2.0), s, g);
    CHECK((e0.Sigma - 0.7 * Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() == 0.0);

    const ProjectionSet e1 = covariance(make_params(1.0, 0, 1.0, 0, 2.0), s, g);
    CHECK((e1.Sigma - (Eigen::MatrixXd::Identity(n, n) + g.Kz)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(e1.Sigma.llt().info() == Eigen::Success);

    const VarianceParams v = make_params(0.3, 1.2, 0.8, 2.5, 2.0);
    const ProjectionSet e = covariance(v, s, g);
    const Eigen::MatrixXd B = s.B;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double expect = (i == j ? v.sigma2 : 0.0) + v.tau_x * B.row(i).dot(B.row(j)) + v.tau_z * g.Kz(i, j) +
                                  v.tau_xz * g.Kxz(i, j);
            CHECK(e.Sigma(i, j) == Approx(expect).margin(1e-12));
        }
    }
    CHECK((e.Sigma_lambda * v.sigma2 - e.Sigma).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((e.P_lambda - v.sigma2 * e.P).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((e.P * s.X).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((e.P * e.Sigma * e.P - e.P).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("ill-conditioned covariance is reported") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    Eigen::VectorXd x(15);
    Eigen::MatrixXd Z(15, 3);
    for (int i = 0; i < 15; ++i) {
        x(i) = i;
        for (int j = 0; j < 3; ++j) Z(i, j) = nd(rng);
    }
    Z.row(4) = Z.row(3);  // singular Kz
    const PathwayModel m = make_pathway_model(x, Z, ExpressionScaling{}, 2.0);
    CHECK_THROWS_AS(covariance(make_params(1e-14, 0, 1e3, 0, 2.0), m.system, m.grams), IllConditioned);
    CHECK_NOTHROW(covariance(make_params(1.0, 0, 1e3, 0, 2.0), m.system, m.grams));
}

TEST_CASE("BLUP of noiseless fixed effects") {
    const Problem pr = random_problem(3, 25, 3);
    const Eigen::VectorXd y = pr.model.system.X * Eigen::Vector2d(1.5, -0.5);
    const Effects e = blup(y, make_params(1.0, 1e-8, 1e-8, 1e-8, 2.0), pr.model.system, pr.model.grams);
    CHECK(e.beta(0) == Approx(1.5).margin(1e-8));
    CHECK(e.beta(1) == Approx(-0.5).margin(1e-8));
    CHECK(e.r_x.cwiseAbs().maxCoeff() < 1e-4);
    CHECK(e.r_z.cwiseAbs().maxCoeff() < 1e-4);
    CHECK(e.r_xz.cwiseAbs().maxCoeff() < 1e-4);

    const Effects z = blup(pr.y, make_params(1.0, 0.5, 0.0, 0.7, 2.0), pr.model.system, pr.model.grams);
    CHECK(z.r_z.isZero(0.0));
}

TEST_CASE("BLUP solves the mixed-model equations") {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        const Problem pr = random_problem(seed, 12, 3);
        const auto& s = pr.model.system;
        const auto& g = pr.model.grams;
        const VarianceParams v = make_params(0.4, 0.9, 1.3, 0.6, 2.0);
        const int n = s.n(), m = s.r() - 2;
        // Dense scaled equations written out block by block.
        const int dim = 2 + m + 2 * n;
        Eigen::MatrixXd C(n, dim);
        C << s.X, s.B, Eigen::MatrixXd::Identity(n, n), Eigen::MatrixXd::Identity(n, n);
        Eigen::MatrixXd A(dim, dim);
        Eigen::VectorXd rhs(dim);
        A.topRows(2) = s.X.transpose() * C;
        rhs.head(2) = s.X.transpose() * pr.y;
        A.middleRows(2, m) = v.tau_x * s.B.transpose() * C;
        A.block(2, 2, m, m) += v.sigma2 * Eigen::MatrixXd::Identity(m, m);
        rhs.segment(2, m) = v.tau_x * s.B.transpose() * pr.y;
        A.middleRows(2 + m, n) = v.tau_z * g.Kz * C;
        A.block(2 + m, 2 + m, n, n) += v.sigma2 * Eigen::MatrixXd::Identity(n, n);
        rhs.segment(2 + m, n) = v.tau_z * g.Kz * pr.y;
        A.bottomRows(n) = v.tau_xz * g.Kxz * C;
        A.block(2 + m + n, 2 + m + n, n, n) += v.sigma2 * Eigen::MatrixXd::Identity(n, n);
        rhs.tail(n) = v.tau_xz * g.Kxz * pr.y;

        const Eigen::VectorXd direct = A.fullPivLu().solve(rhs);
        const Eigen::VectorXd staged = stack_effects(blup(pr.y, v, s, g));
        CHECK((A * staged - rhs).norm() / rhs.norm() < 1e-8);
        CHECK((staged - direct).norm() / direct.norm() < 1e-6);

        const BlockSystem bs = mixed_model_equations(pr.y, v, s, g);
        CHECK((bs.A - A).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((bs.rhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("restricted likelihood closed form at identity covariance") {
    const Problem pr = random_problem(4, 8, 2);
    const auto& s = pr.model.system;
    const Eigen::VectorXd& y = pr.y;
    // Sigma = I: -1/2 log det(X'X) - 1/2 RSS.
    const double n = s.n();
    const double sxx = s.X.col(1).squaredNorm();
    const double ybar = y.mean();
    const double b1 = s.X.col(1).dot(y) / sxx;
    const double rss = (y.array() - ybar - b1 * s.X.col(1).array()).square().sum();
    const double expect = -0.5 * std::log(n * sxx) - 0.5 * rss;
    CHECK(reml_loglik(y, make_params(1.0, 0, 0, 0, 2.0), s, pr.model.grams) == Approx(expect).epsilon(1e-12));

    const VarianceParams v = make_params(0.5, 0.3, 0.2, 0.1, 2.0);
    const Eigen::VectorXd shifted = y + s.X * Eigen::Vector2d(4.0, -7.0);
    CHECK(reml_loglik(shifted, v, s, pr.model.grams) ==
          Approx(reml_loglik(y, v, s, pr.model.grams)).epsilon(1e-10));
}

TEST_CASE("REML score and information") {
    const Problem pr = random_problem(5, 30, 4);
    const auto& s = pr.model.system;
    const auto& g = pr.model.grams;
    VarianceParams v = make_params(0.6, 0.4, 0.9, 0.5, 2.0);
    v.rho_policy = RhoPolicy::estimated;
    const ScoreInfo si = reml_score_info(pr.y, v, s, g);
    std::array<double, 5> th = {v.sigma2, v.tau_x, v.tau_z, v.tau_xz, v.rho};
    auto at = [&](const std::array<double, 5>& t) {
        return reml_loglik(pr.y, make_params(t[0], t[1], t[2], t[3], t[4]), s, g.with_rho(t[4]));
    };
    for (int k = 0; k < 5; ++k) {
        const double h = 1e-5 * (1 + std::abs(th[k]));
        auto up = th, dn = th;
        up[k] += h;
        dn[k] -= h;
        CHECK(si.score(k) == Approx((at(up) - at(dn)) / (2 * h)).epsilon(1e-4));
    }
    const ProjectionSet ps = covariance(v, s, g);
    const Eigen::VectorXd Py = ps.P * pr.y;
    const double tz = -0.5 * (ps.P.cwiseProduct(g.Kz)).sum() + 0.5 * Py.dot(g.Kz * Py);
    CHECK(si.score(th_tau_z) == Approx(tz).epsilon(1e-10));
    CHECK(si.info(th_tau_z, th_tau_xz) == Approx(0.5 * (ps.P * g.Kz * ps.P * g.Kxz).trace()).epsilon(1e-10));
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(si.info(i, j) == si.info(j, i));
    CHECK(si.loglik == Approx(reml_loglik(pr.y, v, s, g)).epsilon(1e-12));
}

TEST_CASE("profile restricted likelihood") {
    const Problem pr = random_problem(6, 30, 4);
    const auto& s = pr.model.system;
    const auto& g = pr.model.grams;
    const int n = s.n();
    const ProfileResult zero = preml_profile(pr.y, {0, 0, 0}, 2.0, s, g);
    const double rss = pr.y.dot(ols_annihilator(s.X) * pr.y);
    CHECK(zero.sigma2_hat == Approx(rss / (n - 2)).epsilon(1e-12));

    const std::array<double, 3> li = {0.7, 1.4, 0.3};
    const ProfileResult pf = preml_profile(pr.y, li, 2.0, s, g);
    const Eigen::VectorXd shifted = pr.y + s.X * Eigen::Vector2d(-2.0, 5.0);
    CHECK(preml_profile(shifted, li, 2.0, s, g).sigma2_hat == Approx(pf.sigma2_hat).epsilon(1e-10));
    CHECK(pf.loglik == Approx(preml_loglik(pr.y, li, 2.0, s, g)).epsilon(1e-12));

    const ProjectionSet ps = covariance(VarianceParams::from_lambda(pf.sigma2_hat, li, 2.0), s, g);
    CHECK(pf.var_sigma2 ==
          Approx(2 * pf.sigma2_hat * pf.sigma2_hat * ps.P_lambda.trace() / ((n - 2.0) * (n - 2.0))).epsilon(1e-8));

    std::array<double, 4> th = {li[0], li[1], li[2], 2.0};
    auto at = [&](const std::array<double, 4>& t) {
        return preml_loglik(pr.y, {t[0], t[1], t[2]}, t[3], s, g.with_rho(t[3]));
    };
    for (int k = 0; k < 4; ++k) {
        const double h = 1e-5 * (1 + std::abs(th[k]));
        auto up = th, dn = th;
        up[k] += h;
        dn[k] -= h;
        CHECK(pf.score(k) == Approx((at(up) - at(dn)) / (2 * h)).epsilon(1e-4));
    }

    CHECK_THROWS_AS(preml_profile(s.X * Eigen::Vector2d(1, 2), li, 2.0, s, g), DegenerateResponse);
}

TEST_CASE("profile variance estimator is unbiased at the truth") {
    const Problem pr = random_problem(7, 25, 3);
    const auto& s = pr.model.system;
    const auto& g = pr.model.grams;
    const std::array<double, 3> li = {0.5, 1.0, 0.4};
    const double sigma2 = 0.3;
    const ProjectionSet ps = covariance(VarianceParams::from_lambda(sigma2, li, 2.0), s, g);
    const Eigen::MatrixXd L = ps.Sigma.llt().matrixL();
    std::mt19937_64 rng(70);
    std::normal_distribution<double> nd;
    const int draws = 1000, n = s.n();
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < draws; ++r) {
        Eigen::VectorXd e(n);
        for (int i = 0; i < n; ++i) e(i) = nd(rng);
        const double q = (n - 2) * preml_profile(L * e, li, 2.0, s, g).sigma2_hat / sigma2;
        sum += q;
        sum2 += q * q;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum2 / draws - mean * mean) / draws);
    CHECK((ps.P_lambda * ps.Sigma_lambda).trace() == Approx(n - 2.0).epsilon(1e-8));
    CHECK(std::abs(mean - (n - 2)) < 4 * se);
}

TEST_CASE("fit climbs monotonically and respects the parameter space") {
    for (std::uint64_t seed = 20; seed < 26; ++seed) {
        const Problem pr = random_problem(seed, 40, 5);
        for (Estimator est : {Estimator::preml, Estimator::reml}) {
            FitConfig c;
            c.estimator = est;
            const ModelFit f = fit(pr.y, pr.model.system, pr.model.grams, c);
            const auto& t = f.diagnostics.loglik_trace;
            REQUIRE(!t.empty());
            for (size_t i = 1; i < t.size(); ++i) CHECK(t[i] >= t[i - 1] - 1e-10 * std::abs(t[i - 1]));
            CHECK(f.params.sigma2 > 0.0);
            for (double tau : f.params.taus()) CHECK(tau >= 0.0);
            CHECK(f.r_z_hat.size() == pr.model.system.n());
        }
    }
}

TEST_CASE("fit reaches a local maximum") {
    const Problem pr = random_problem(30, 60, 4, 1.0);
    FitConfig c;
    c.estimator = Estimator::reml;
    const ModelFit f = fit(pr.y, pr.model.system, pr.model.grams, c);
    REQUIRE(f.diagnostics.converged);
    const double best = reml_loglik(pr.y, f.params, pr.model.system, pr.model.grams);
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 20; ++k) {
        VarianceParams q = f.params;
        q.sigma2 *= 1 + 0.05 * u(rng);
        q.tau_x = std::max(0.0, q.tau_x * (1 + 0.05 * u(rng)) + 1e-4 * u(rng));
        q.tau_z = std::max(0.0, q.tau_z * (1 + 0.05 * u(rng)) + 1e-4 * u(rng));
        q.tau_xz = std::max(0.0, q.tau_xz * (1 + 0.05 * u(rng)) + 1e-4 * u(rng));
        CHECK(reml_loglik(pr.y, q, pr.model.system, pr.model.grams) <= best + 1e-8 * std::abs(best));
    }
}

TEST_CASE("estimators agree on the covariance for interior fits") {
    const Problem pr = random_problem(32, 60, 4, 1.0);
    FitConfig c;
    c.estimator = Estimator::reml;
    const ModelFit r = fit(pr.y, pr.model.system, pr.model.grams, c);
    c.estimator = Estimator::preml;
    const ModelFit p = fit(pr.y, pr.model.system, pr.model.grams, c);
    REQUIRE(r.diagnostics.converged);
    REQUIRE(p.diagnostics.converged);
    const bool interior = !r.diagnostics.sigma2_at_boundary && !p.diagnostics.sigma2_at_boundary &&
                          r.diagnostics.at_boundary == p.diagnostics.at_boundary;
    REQUIRE(interior);
    const Eigen::MatrixXd Sr = covariance(r.params, pr.model.system, pr.model.grams).Sigma;
    const Eigen::MatrixXd Sp = covariance(p.params, pr.model.system, pr.model.grams).Sigma;
    CHECK((Sr - Sp).norm() / Sr.norm() < 1e-3);
}

TEST_CASE("pathway components sit on the boundary at the rate of the null law") {
    // Under the null both pathway components are exactly zero with the
    // probability of the point mass of the boundary law, not almost surely.
    SimDesign d;
    d.a = 0.0;
    d.b = 0.0;
    d.seed = 40;
    const int runs = 100;
    int pinned = 0;
    double atom = 0.0;
    for (int r = 0; r < runs; ++r) {
        const SimDataset data = generate(d, static_cast<std::uint64_t>(r));
        const PathwayModel m = make_pathway_model(data.x, data.Z, ExpressionScaling{}, 2.0);
        const RlrtResult rl = rlrt_both(data.y, m.system, m.grams);
        const VarianceParams& v = rl.fits.alternative.params;
        pinned += v.tau_z < 1e-3 && v.tau_xz < 1e-3;
        const auto* law = std::get_if<MixtureLaw>(&rl.overall.law);
        REQUIRE(law);
        atom += law->weights[2];
    }
    atom /= runs;
    const double rate = static_cast<double>(pinned) / runs;
    CHECK(std::abs(rate - atom) < 3.0 * std::sqrt(atom * (1 - atom) / runs));
}

TEST_CASE("fixed components stay at zero and fitted values add up") {
    const Problem pr = random_problem(50, 30, 3);
    FitConfig c;
    c.free = {true, false, true};
    const ModelFit f = fit(pr.y, pr.model.system, pr.model.grams, c);
    CHECK(f.params.tau_z == 0.0);
    CHECK(f.r_z_hat.isZero(0.0));
    const Effects e = f.effects();
    const Eigen::VectorXd fitted = e.fitted(pr.model.system);
    const auto& s = pr.model.system;
    CHECK((fitted - (s.X * e.beta + s.B * e.r_x + e.r_z + e.r_xz)).cwiseAbs().maxCoeff() < 1e-12);
}
