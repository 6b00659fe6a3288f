#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <thread>

#include "pathenv/error.hpp"
#include "pathenv/simulation.hpp"

using namespace pathenv;
using Catch::Approx;

namespace {

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

StudyOptions options(int replicates) {
    StudyOptions o;
    o.replicates = replicates;
    o.threads = workers();
    return o;
}

double rejection_rate(StudyMode mode, const SimDesign& d, int replicates, const char* metric, double* se = nullptr) {
    const StudyCell c = run_cell(mode, d, options(replicates));
    const Metric* m = c.find(metric);
    REQUIRE(m);
    if (se) *se = m->se;
    return m->mean;
}

}  // namespace

TEST_CASE("truth functions") {
    CHECK(true_f_x(18.0) == Approx(6.4).margin(1e-12));
    CHECK(true_f_x(36.0) == Approx(5.6 + 3.6 + 1.0).margin(1e-12));
    const Eigen::RowVectorXd z = (Eigen::RowVectorXd(3) << 0.5, -1.0, 2.0).finished();
    CHECK(true_f_z(z, 3, 0.0) == 0.0);
    CHECK(true_f_xz(25.0, z, 3, 0.0) == 0.0);
    // s = 1.5, mean |z| = 7/6
    CHECK(true_f_z(z, 3, 1.0) == Approx(1.5 * std::exp(-0.2 * 7.0 / 6.0) / 5.0).margin(1e-14));
    CHECK(true_f_z(z, 2, 1.0) == Approx(-0.5 * std::exp(-0.2 * 0.75) / 5.0).margin(1e-14));
    CHECK(true_f_xz(20.0, z, 3, 2.0) == Approx(2.0 * std::exp(2.0) * std::sin(0.5) * std::cos(0.5) / 8.0).margin(1e-14));
}

TEST_CASE("zero magnitudes switch the effects off") {
    SimDesign d;
    d.n = 50;
    d.a = 0.0;
    d.b = 0.0;
    const SimDataset s = generate(d);
    CHECK(s.f_z.cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.f_xz.cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < d.n; ++i) CHECK(s.f_x(i) == true_f_x(s.x(i)));
}

TEST_CASE("generated data have the design moments") {
    SimDesign d;
    d.n = 100000;
    d.p_true = 3;
    d.p_fitted = 4;
    d.seed = 3;
    const SimDataset s = generate(d);
    const double n = d.n;
    auto check_moments = [&](const Eigen::VectorXd& v, double mean, double var) {
        const double m = v.mean();
        const double s2 = (v.array() - m).square().sum() / (n - 1);
        CHECK(std::abs(m - mean) < 3.0 * std::sqrt(var / n));
        // Var of the sample variance for uniform and normal data differs; use the larger normal-theory width.
        CHECK(std::abs(s2 - var) < 3.0 * var * std::sqrt(2.0 / (n - 1)));
    };
    check_moments(s.x, 27.0, 27.0);
    REQUIRE(s.Z.cols() == 4);
    for (int j = 0; j < 4; ++j) check_moments(s.Z.col(j), 0.0, 1.0);
    CHECK(s.x.minCoeff() >= 18.0);
    CHECK(s.x.maxCoeff() <= 36.0);
    const Eigen::VectorXd resid = s.y - s.f_x - s.f_z - s.f_xz;
    check_moments(resid, 0.0, d.sigma * d.sigma);
}

TEST_CASE("extra fitted genes do not enter the truth") {
    SimDesign d;
    d.n = 20;
    d.p_true = 2;
    d.p_fitted = 6;
    const SimDataset s = generate(d);
    for (int i = 0; i < d.n; ++i) {
        CHECK(s.f_z(i) == Approx(true_f_z(s.Z.row(i), 2, d.a)).margin(1e-14));
        CHECK(s.f_xz(i) == Approx(true_f_xz(s.x(i), s.Z.row(i), 2, d.b)).margin(1e-14));
    }
}

TEST_CASE("generation is deterministic per design and replicate") {
    SimDesign d;
    d.n = 40;
    d.seed = 9;
    const SimDataset a = generate(d, 3), b = generate(d, 3), c = generate(d, 4);
    CHECK(a.y == b.y);
    CHECK(a.Z == b.Z);
    CHECK(a.x == b.x);
    CHECK(a.y != c.y);
    d.seed = 10;
    CHECK(generate(d, 3).y != a.y);
}

TEST_CASE("design validation") {
    SimDesign d;
    d.p_fitted = 10;
    d.p_true = 20;
    CHECK_THROWS_AS(validate(d), ContractError);
    d = SimDesign{};
    d.n = 3;
    CHECK_THROWS_AS(validate(d), ContractError);
    d = SimDesign{};
    d.sigma = 0.0;
    CHECK_THROWS_AS(validate(d), ContractError);
}

TEST_CASE("regression of truth on fitted components") {
    const Eigen::VectorXd f = (Eigen::VectorXd(6) << 0.3, -1.2, 2.0, 0.7, 0.0, 1.1).finished();
    const RegressionSummary same = regress_true_on_fitted(f, f);
    CHECK(same.intercept == Approx(0.0).margin(1e-14));
    CHECK(same.slope == Approx(1.0).margin(1e-14));
    CHECK(same.r2 == Approx(1.0).margin(1e-14));
    CHECK_FALSE(same.degenerate);

    const RegressionSummary twice = regress_true_on_fitted(f, 2.0 * f);
    CHECK(twice.slope == Approx(0.5).margin(1e-14));
    CHECK(twice.r2 == Approx(1.0).margin(1e-14));

    const RegressionSummary shifted = regress_true_on_fitted(f, f.array() + 3.0);
    CHECK(shifted.intercept == Approx(-3.0).margin(1e-13));
    CHECK(shifted.slope == Approx(1.0).margin(1e-14));

    const RegressionSummary flat = regress_true_on_fitted(f, Eigen::VectorXd::Zero(6));
    CHECK(flat.degenerate);
    CHECK(std::isnan(flat.slope));
    CHECK(std::isnan(flat.r2));
}

TEST_CASE("study bookkeeping") {
    SimDesign d;
    d.n = 40;
    d.p_true = 5;
    d.p_fitted = 5;
    StudyOptions o = options(1);
    for (StudyMode mode : {StudyMode::table1, StudyMode::table2, StudyMode::table3, StudyMode::table4}) {
        const StudyReport r = run_study(mode, {d}, o);
        REQUIRE(r.cells.size() == 1);
        CHECK(r.cells[0].replicates == 1);
        CHECK(r.cells[0].failures >= 0);
        CHECK(r.cells[0].failures <= 1);
        std::ostringstream out;
        write_study_table(r, out);
        int lines = 0;
        for (char ch : out.str()) lines += ch == '\n';
        CHECK(lines == 2);
    }
    CHECK(parse_study_mode("table3") == StudyMode::table3);
    CHECK_FALSE(parse_study_mode("table5"));
    CHECK(std::string(study_mode_name(StudyMode::table4)) == "table4");
    o.replicates = 0;
    CHECK_THROWS_AS(run_cell(StudyMode::table2, d, o), ContractError);
}

TEST_CASE("study results depend only on the seed") {
    SimDesign d;
    d.n = 40;
    d.p_true = 5;
    d.p_fitted = 5;
    d.seed = 77;
    StudyOptions o = options(6);
    const StudyCell a = run_cell(StudyMode::table4, d, o);
    o.threads = 1;
    const StudyCell b = run_cell(StudyMode::table4, d, o);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (size_t k = 0; k < a.metrics.size(); ++k) {
        CHECK(a.metrics[k].name == b.metrics[k].name);
        CHECK((a.metrics[k].mean == b.metrics[k].mean ||
               (std::isnan(a.metrics[k].mean) && std::isnan(b.metrics[k].mean))));
    }
}

TEST_CASE("overall test sizes across kernel widths") {
    // Reported sizes (0.03, 0.02, 0.02) for rho = 2, 5, 10.
    const double expected[] = {0.03, 0.02, 0.02};
    const double rhos[] = {2.0, 5.0, 10.0};
    for (int k = 0; k < 3; ++k) {
        SimDesign d;
        d.a = 0.0;
        d.b = 0.0;
        d.rho = rhos[k];
        d.seed = 120 + k;
        const double size = rejection_rate(StudyMode::table2, d, 400, "reject_D");
        UNSCOPED_INFO("rho " << rhos[k] << " size " << size);
        CHECK(size == Approx(expected[k]).margin(0.02));
    }
}

TEST_CASE("overall test power with extra genes at the smallest sample size") {
    SimDesign d;
    d.n = 35;
    d.p_true = 30;
    d.p_fitted = 50;
    d.a = 0.0;
    d.b = 1.0;
    d.seed = 130;
    const double power = rejection_rate(StudyMode::table3, d, 200, "reject_D");
    UNSCOPED_INFO("power " << power);
    CHECK(power == Approx(0.78).margin(0.06));
}

TEST_CASE("power grows with the effect sizes") {
    auto branch = [](bool vary_b, std::initializer_list<double> values, int replicates) {
        double prev = -1.0, prev_se = 0.0;
        for (double v : values) {
            SimDesign d;
            d.n = 60;
            d.a = vary_b ? 0.0 : v;
            d.b = vary_b ? v : 0.0;
            d.seed = 140 + static_cast<std::uint64_t>(100 * v);
            double se = 0.0;
            const double power = rejection_rate(StudyMode::table2, d, replicates, "reject_D", &se);
            UNSCOPED_INFO((vary_b ? "b " : "a ") << v << " power " << power);
            CHECK(power >= prev - 2.0 * std::hypot(se, prev_se));
            prev = power;
            prev_se = se;
        }
    };
    branch(true, {0.0, 0.2, 0.35, 0.5, 1.0}, 100);
    branch(false, {0.05, 0.1, 0.2, 0.5}, 100);
}
