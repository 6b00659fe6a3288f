#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pathenv/hypothesis.hpp"
#include "pathenv/kernels.hpp"
#include "pathenv/mixed_model.hpp"

namespace pathenv {

struct SimDesign {
    int n = 100;
    int p_true = 30;    // genes entering the true pathway and interaction functions
    int p_fitted = 30;  // genes handed to the model; the extra ones are noise
    double a = 1.5;     // pathway effect magnitude
    double b = 2.0;     // interaction magnitude
    double sigma = 0.2;
    Estimator estimator = Estimator::preml;
    RhoPolicy rho_policy = RhoPolicy::fixed;
    double rho = 2.0;  // <= 0 selects the mean squared distance
    std::uint64_t seed = 1;
};

void validate(const SimDesign& design);

struct SimDataset {
    Eigen::VectorXd x;  // raw covariate, Uniform[18, 36]
    Eigen::MatrixXd Z;  // n x p_fitted, standard normal
    Eigen::VectorXd f_x;
    Eigen::VectorXd f_z;
    Eigen::VectorXd f_xz;
    Eigen::VectorXd y;
};

// 5.6 + 0.1 x + cos(x pi / 18).
double true_f_x(double x);
// a * s exp(-0.2 m_abs) / 5 with s, m_abs the sum and mean absolute value of the first p_true genes.
double true_f_z(const Eigen::Ref<const Eigen::RowVectorXd>& z, int p_true, double a);
// b * exp(x / 10) sin(m) cos(m) / 8 with m the mean of the first p_true genes.
double true_f_xz(double x, const Eigen::Ref<const Eigen::RowVectorXd>& z, int p_true, double b);

// Replicate r of the design is drawn from its own seeded stream.
SimDataset generate(const SimDesign& design, std::uint64_t replicate = 0);

struct RegressionSummary {
    double intercept = std::numeric_limits<double>::quiet_NaN();
    double slope = std::numeric_limits<double>::quiet_NaN();
    double r2 = std::numeric_limits<double>::quiet_NaN();
    bool degenerate = false;  // fitted component has no variance
};

// Least-squares regression of truth on fitted.
RegressionSummary regress_true_on_fitted(const Eigen::VectorXd& truth, const Eigen::VectorXd& fitted);

struct FitAssessment {
    RegressionSummary f_x;
    RegressionSummary f_z;
    RegressionSummary f_xz;
    double sigma2_hat = 0.0;
    double rho_used = 0.0;
    bool converged = false;
    bool rho_pinned = false;
};

// Fitted f_x is X beta_hat + B r_x_hat; f_z and f_xz are the BLUPs.
FitAssessment assess(const SimDataset& data, const ModelFit& fit, const SplineSystem& system);

enum class StudyMode { table1, table2, table3, table4 };
std::optional<StudyMode> parse_study_mode(const std::string& name);
const char* study_mode_name(StudyMode mode);

struct Metric {
    std::string name;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    int count = 0;
};

struct StudyCell {
    SimDesign design;
    int replicates = 0;
    int failures = 0;
    std::vector<Metric> metrics;

    [[nodiscard]] const Metric* find(const std::string& name) const;
};

struct StudyReport {
    StudyMode mode = StudyMode::table1;
    std::vector<StudyCell> cells;
};

struct StudyOptions {
    int replicates = 200;
    int threads = 1;
    double alpha = 0.05;
    ExpressionScaling scaling;
    TestConfig tests;
};

// Design grids of the four simulation tables.
std::vector<SimDesign> default_grid(StudyMode mode, std::uint64_t seed = 1);

// Metrics per mode:
//   table1: sigma2_hat, rho_used and intercept/slope/r2 per component
//   table2, table3: reject_D
//   table4: reject_d, reject_score
StudyCell run_cell(StudyMode mode, const SimDesign& design, const StudyOptions& options);
StudyReport run_study(StudyMode mode, const std::vector<SimDesign>& grid, const StudyOptions& options);

// Delimited table with one row per cell.
void write_study_table(const StudyReport& report, std::ostream& out, char sep = '\t');

}  // namespace pathenv
