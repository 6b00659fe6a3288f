#include <catch_amalgamated.hpp>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <random>

#include "pathenv/error.hpp"
#include "pathenv/hypothesis.hpp"
#include "pathenv/model_inputs.hpp"
#include "pathenv/simulation.hpp"

using namespace pathenv;
using Catch::Approx;

namespace {

double chi2_sf(double df, double t) { return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), t)); }

PathwayModel null_model(std::mt19937_64& rng, int n, int p, Eigen::VectorXd& y, double slope = 0.1) {
    std::uniform_real_distribution<double> u(18.0, 36.0);
    std::normal_distribution<double> nd;
    Eigen::VectorXd x(n);
    Eigen::MatrixXd Z(n, p);
    for (int i = 0; i < n; ++i) {
        x(i) = u(rng);
        for (int j = 0; j < p; ++j) Z(i, j) = nd(rng);
    }
    y.resize(n);
    for (int i = 0; i < n; ++i) y(i) = 1.0 + slope * x(i) + 0.3 * nd(rng);
    return make_pathway_model(x, Z, ExpressionScaling{}, 2.0);
}

// Largest gap between the empirical distribution of p and the uniform one.
double uniform_gap(std::vector<double> p) {
    std::sort(p.begin(), p.end());
    const double n = static_cast<double>(p.size());
    double worst = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] >= 1.0) break;  // the atom at p = 1 compares against u -> 1 only
        worst = std::max({worst, std::abs((i + 1) / n - p[i]), std::abs(i / n - p[i])});
    }
    return worst;
}

}  // namespace

TEST_CASE("mixture tail examples") {
    CHECK(mixture_tail(MixtureLaw::from_weights(0.25, 0.5, 0.25), 0.0) == 1.0);
    CHECK(mixture_tail(MixtureLaw::two_component(1.3), 0.0) == 1.0);
    CHECK(mixture_tail(MixtureLaw::one_component(2.0), 0.0) == 1.0);
    CHECK(mixture_tail(MixtureLaw::from_weights(0.25, 0.5, 0.25), 3.84) == Approx(0.0617).margin(0.0005));
    CHECK(mixture_tail(MixtureLaw::from_weights(0.25, 0.5, 0.25), 3.84) ==
          Approx(0.25 * chi2_sf(2, 3.84) + 0.5 * chi2_sf(1, 3.84)).margin(1e-12));
    CHECK(mixture_tail(MixtureLaw::from_weights(0.0, 1.0, 0.0), 3.841) == Approx(0.05).margin(1e-4));
    CHECK_THROWS_AS(mixture_tail(MixtureLaw::two_component(0.0), -0.1), ContractError);
}

TEST_CASE("mixture weights follow the cone angle") {
    CHECK(cone_phi(0.0) == Approx(0.25).margin(1e-15));
    for (double g : {-3.0, -0.5, 0.0, 0.5, 2.0, 10.0}) {
        const double phi = cone_phi(g);
        CHECK(phi == Approx(std::acos(g / std::sqrt(1 + g * g)) / (2 * M_PI)).margin(1e-15));
        const MixtureLaw D = MixtureLaw::two_component(g);
        CHECK(D.weights[0] == Approx(phi));
        CHECK(D.weights[1] == Approx(0.5));
        CHECK(D.weights[2] == Approx(0.5 - phi));
        for (double w : D.weights) CHECK(w >= 0.0);
        const MixtureLaw d = MixtureLaw::one_component(g);
        CHECK(d.weights[0] + d.weights[1] + d.weights[2] == Approx(1.0));
        for (double w : d.weights) CHECK(w >= 0.0);
        if (phi >= 0.25) {
            CHECK(d.weights[0] == Approx(phi - 0.25));
            CHECK(d.weights[1] == Approx(0.5));
            CHECK(d.weights[2] == Approx(0.75 - phi));
        }
    }
    Eigen::Matrix2d I;
    I << 1.0, 0.5, 0.5, 1.25;
    CHECK(cone_gamma(I) == Approx(0.5));
    I << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(cone_gamma(I), ContractError);
}

TEST_CASE("one-component law on an obtuse cone matches sampling") {
    // gamma < 0: the closed-form weights apply.
    const double g = -0.7;
    Eigen::Matrix2d I;
    I << 1.0, g, g, 1.0 + g * g;
    const Eigen::Matrix2d L = I.inverse().llt().matrixL();
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    auto dist = [&](const Eigen::Vector2d& u, bool t3_zero) {
        auto q = [&](const Eigen::Vector2d& t) { return (u - t).dot(I * (u - t)); };
        double best = q(Eigen::Vector2d::Zero());
        const double t2 = u(0) + I(0, 1) / I(0, 0) * u(1);
        if (t2 > 0) best = std::min(best, q(Eigen::Vector2d(t2, 0)));
        if (t3_zero) return best;
        const double t3 = u(1) + I(0, 1) / I(1, 1) * u(0);
        if (t3 > 0) best = std::min(best, q(Eigen::Vector2d(0, t3)));
        return (u(0) > 0 && u(1) > 0) ? 0.0 : best;
    };
    const int draws = 200000;
    std::vector<double> d(draws);
    for (int i = 0; i < draws; ++i) {
        const Eigen::Vector2d u = L * Eigen::Vector2d(nd(rng), nd(rng));
        d[i] = dist(u, true) - dist(u, false);
    }
    const MixtureLaw law = MixtureLaw::one_component(cone_gamma(I));
    for (double t : {1e-9, 0.5, 1.0, 2.71, 3.84, 6.0}) {
        const double emp = std::count_if(d.begin(), d.end(), [&](double v) { return v >= t; }) / double(draws);
        CHECK(emp == Approx(mixture_tail(law, t)).margin(0.005));
    }
}

TEST_CASE("satterthwaite arithmetic") {
    CHECK(satterthwaite_tail(SatterthwaiteLaw{1.0, 1.0}, 3.841) == Approx(0.05).margin(1e-4));
    CHECK(satterthwaite_tail(SatterthwaiteLaw{2.0, 3.0}, 5.0) == Approx(chi2_sf(3.0, 2.5)).margin(1e-12));
}

TEST_CASE("likelihood ratio statistics") {
    std::mt19937_64 rng(5);
    SimDesign des;
    des.n = 60;
    des.p_true = 5;
    des.p_fitted = 5;
    des.seed = 5;
    for (int r = 0; r < 5; ++r) {
        const SimDataset data = generate(des, static_cast<std::uint64_t>(r));
        const PathwayModel m = make_pathway_model(data.x, data.Z, ExpressionScaling{}, 2.0);
        const RlrtResult rl = rlrt_both(data.y, m.system, m.grams);
        CHECK(rl.overall.statistic >= rl.interaction.statistic);
        CHECK(rl.interaction.statistic >= 0.0);
        CHECK(rl.overall.statistic == Approx(2 * (rl.overall.loglik_alt - rl.overall.loglik_null)).margin(1e-8));
        if (rl.overall.p_asymptotic) {
            CHECK(*rl.overall.p_asymptotic >= 0.0);
            CHECK(*rl.overall.p_asymptotic <= 1.0);
        }
        const Eigen::VectorXd shifted = data.y + m.system.X * Eigen::Vector2d(3.0, -2.0);
        const RlrtResult rs = rlrt_both(shifted, m.system, m.grams);
        CHECK(rs.interaction.statistic == Approx(rl.interaction.statistic).margin(1e-5));
        CHECK(rs.overall.statistic == Approx(rl.overall.statistic).margin(1e-5));
    }
}

std::vector<double> null_overall_pvalues() {
    static const std::vector<double> p = [] {
        std::mt19937_64 rng(6);
        std::vector<double> out;
        for (int r = 0; r < 1000; ++r) {
            Eigen::VectorXd y;
            const PathwayModel m = null_model(rng, 50, 5, y);
            const TestReport t = rlrt_overall(y, m.system, m.grams);
            if (t.p_asymptotic) out.push_back(*t.p_asymptotic);
        }
        return out;
    }();
    return p;
}

double ecdf(const std::vector<double>& sorted, double u) {
    return static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), u) - sorted.begin()) / sorted.size();
}

TEST_CASE("overall test is valid and mildly conservative under the null") {
    std::vector<double> p = null_overall_pvalues();
    REQUIRE(p.size() >= 950);
    std::sort(p.begin(), p.end());
    for (int k = 1; k < 100; ++k) {
        const double u = k / 100.0;
        CHECK(ecdf(p, u) <= u + 0.02);
        if (u <= 0.5) CHECK(ecdf(p, u) >= 0.6 * u);
    }
    CHECK(ecdf(p, 0.05) == Approx(0.035).margin(0.015));
}

// In finite samples the atom at D = 0 carries more mass than the asymptotic
// weight, which pushes p-values towards 1.
TEST_CASE("overall p-values uniform over the whole range") {
    const std::vector<double> p = null_overall_pvalues();
    const double gap = uniform_gap(p);
    UNSCOPED_INFO("sup-norm gap to uniform: " << gap);
    CHECK(gap < 0.05);
}

TEST_CASE("interaction test power") {
    SimDesign d;
    d.p_true = 5;
    d.p_fitted = 5;
    d.a = 0.0;
    d.b = 0.35;
    d.seed = 7;
    StudyOptions o;
    o.replicates = 200;
    const StudyCell c = run_cell(StudyMode::table4, d, o);
    const Metric* m = c.find("reject_d");
    REQUIRE(m);
    CHECK(m->mean == Approx(0.95).margin(0.05));
}

TEST_CASE("interaction test sizes") {
    SimDesign d;
    d.p_true = 5;
    d.p_fitted = 5;
    d.a = 0.0;
    d.b = 0.0;
    d.seed = 9;
    StudyOptions o;
    o.replicates = 500;
    const StudyCell c = run_cell(StudyMode::table4, d, o);
    const Metric* lr = c.find("reject_d");
    const Metric* sc = c.find("reject_score");
    REQUIRE(lr);
    REQUIRE(sc);
    UNSCOPED_INFO("likelihood ratio size " << lr->mean << ", score size " << sc->mean);
    CHECK(lr->mean == Approx(0.04).margin(0.02));
    CHECK(sc->mean == Approx(0.08).margin(0.04));
}

TEST_CASE("score statistic and its calibration") {
    SimDesign des;
    des.n = 40;
    des.p_true = 5;
    des.p_fitted = 5;
    des.b = 0.0;
    des.seed = 8;
    const SimDataset data = generate(des, 0);
    const PathwayModel m = make_pathway_model(data.x, data.Z, ExpressionScaling{}, 2.0);
    const ModelFit null_fit = score_null_fit(data.y, m.system, m.grams);
    CHECK(null_fit.params.tau_xz == 0.0);
    const TestReport t = score_test_interaction(data.y, null_fit, m.system, m.grams);
    REQUIRE(t.status == TestStatus::ok);

    const ProjectionSet ps = covariance(null_fit.params, m.system, m.grams);
    const Eigen::VectorXd Py = ps.P * data.y;
    double U = 0.0, E = 0.0;
    const int n = m.system.n();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            U += 0.5 * Py(i) * m.grams.Kxz(i, j) * Py(j);
            E += 0.5 * ps.P(i, j) * m.grams.Kxz(j, i);
        }
    }
    CHECK(t.statistic == Approx(U).epsilon(1e-10));

    const auto* law = std::get_if<SatterthwaiteLaw>(&t.law);
    REQUIRE(law);
    CHECK(law->kappa > 0.0);
    CHECK(law->nu > 0.0);
    // kappa nu is the null mean of U.
    CHECK(law->kappa * law->nu == Approx(E).epsilon(1e-8));
    CHECK(*t.p_asymptotic == Approx(chi2_sf(law->nu, U / law->kappa)).epsilon(1e-10));
}
