#include "pathenv/simulation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>

#include "pathenv/error.hpp"
#include "pathenv/log.hpp"
#include "pathenv/model_inputs.hpp"
#include "pathenv/parallel.hpp"

namespace pathenv {

void validate(const SimDesign& d) {
    require(d.n >= 10, "simulation: n must be at least 10");
    require(d.p_true >= 1 && d.p_fitted >= d.p_true, "simulation: need p_fitted >= p_true >= 1");
    require(d.sigma > 0.0, "simulation: sigma must be positive");
}

double true_f_x(double x) { return 5.6 + 0.1 * x + std::cos(x * std::numbers::pi / 18.0); }

double true_f_z(const Eigen::Ref<const Eigen::RowVectorXd>& z, int p_true, double a) {
    const auto head = z.head(p_true);
    const double mean_abs = head.cwiseAbs().sum() / p_true;
    return a * head.sum() * std::exp(-0.2 * mean_abs) / 5.0;
}

double true_f_xz(double x, const Eigen::Ref<const Eigen::RowVectorXd>& z, int p_true, double b) {
    const double m = z.head(p_true).sum() / p_true;
    return b * std::exp(x / 10.0) * std::sin(m) * std::cos(m) / 8.0;
}

SimDataset generate(const SimDesign& design, std::uint64_t replicate) {
    validate(design);
    std::mt19937_64 rng(stream_seed(design.seed, replicate));
    std::uniform_real_distribution<double> unif(18.0, 36.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    SimDataset d;
    const int n = design.n;
    d.x.resize(n);
    d.Z.resize(n, design.p_fitted);
    for (int i = 0; i < n; ++i) {
        d.x(i) = unif(rng);
        for (int j = 0; j < design.p_fitted; ++j) d.Z(i, j) = normal(rng);
    }
    d.f_x.resize(n);
    d.f_z.resize(n);
    d.f_xz.resize(n);
    d.y.resize(n);
    for (int i = 0; i < n; ++i) {
        d.f_x(i) = true_f_x(d.x(i));
        d.f_z(i) = design.a == 0.0 ? 0.0 : true_f_z(d.Z.row(i), design.p_true, design.a);
        d.f_xz(i) = design.b == 0.0 ? 0.0 : true_f_xz(d.x(i), d.Z.row(i), design.p_true, design.b);
        d.y(i) = d.f_x(i) + d.f_z(i) + d.f_xz(i) + design.sigma * normal(rng);
    }
    return d;
}

RegressionSummary regress_true_on_fitted(const Eigen::VectorXd& truth, const Eigen::VectorXd& fitted) {
    require(truth.size() == fitted.size() && truth.size() >= 2, "regression: vectors must match in length");
    RegressionSummary out;
    const double mf = fitted.mean();
    const double mt = truth.mean();
    const Eigen::ArrayXd df = fitted.array() - mf;
    const Eigen::ArrayXd dt = truth.array() - mt;
    const double sff = (df * df).sum();
    const double stt = (dt * dt).sum();
    const double sft = (df * dt).sum();
    if (!(sff > 1e-300 * std::max(1.0, mf * mf))) {
        out.degenerate = true;
        return out;
    }
    out.slope = sft / sff;
    out.intercept = mt - out.slope * mf;
    out.r2 = stt > 0.0 ? std::clamp(sft * sft / (sff * stt), 0.0, 1.0) : 1.0;
    return out;
}

FitAssessment assess(const SimDataset& data, const ModelFit& fit, const SplineSystem& system) {
    FitAssessment a;
    Eigen::VectorXd fx = system.X * fit.beta_hat;
    if (fit.r_x_hat.size() > 0) fx += system.B * fit.r_x_hat;
    a.f_x = regress_true_on_fitted(data.f_x, fx);
    a.f_z = regress_true_on_fitted(data.f_z, fit.r_z_hat);
    a.f_xz = regress_true_on_fitted(data.f_xz, fit.r_xz_hat);
    a.sigma2_hat = fit.params.sigma2;
    a.rho_used = fit.params.rho;
    a.converged = fit.diagnostics.converged;
    a.rho_pinned = fit.diagnostics.rho_pinned;
    return a;
}

std::optional<StudyMode> parse_study_mode(const std::string& name) {
    if (name == "table1") return StudyMode::table1;
    if (name == "table2") return StudyMode::table2;
    if (name == "table3") return StudyMode::table3;
    if (name == "table4") return StudyMode::table4;
    return std::nullopt;
}

const char* study_mode_name(StudyMode mode) {
    switch (mode) {
        case StudyMode::table1: return "table1";
        case StudyMode::table2: return "table2";
        case StudyMode::table3: return "table3";
        case StudyMode::table4: return "table4";
    }
    return "unknown";
}

const Metric* StudyCell::find(const std::string& name) const {
    for (const auto& m : metrics) {
        if (m.name == name) return &m;
    }
    return nullptr;
}

std::vector<SimDesign> default_grid(StudyMode mode, std::uint64_t seed) {
    std::vector<SimDesign> grid;
    auto add = [&](SimDesign d) {
        d.seed = stream_seed(seed, grid.size());
        grid.push_back(d);
    };
    switch (mode) {
        case StudyMode::table1:
            for (Estimator est : {Estimator::reml, Estimator::preml}) {
                for (RhoPolicy rp : {RhoPolicy::estimated, RhoPolicy::fixed}) {
                    for (int n : {100, 150}) {
                        for (int p : {30, 40, 50}) {
                            SimDesign d;
                            d.n = n;
                            d.p_fitted = p;
                            d.estimator = est;
                            d.rho_policy = rp;
                            add(d);
                        }
                    }
                }
            }
            break;
        case StudyMode::table2:
            for (RhoPolicy rp : {RhoPolicy::fixed, RhoPolicy::estimated}) {
                for (double rho : {2.0, 5.0, 10.0}) {
                    if (rp == RhoPolicy::estimated && rho != 2.0) continue;
                    for (double b : {0.0, 0.2, 0.35, 0.5, 1.0}) {
                        SimDesign d;
                        d.a = 0.0;
                        d.b = b;
                        d.rho = rho;
                        d.rho_policy = rp;
                        add(d);
                    }
                    for (double a : {0.05, 0.1, 0.2, 0.5}) {
                        SimDesign d;
                        d.a = a;
                        d.b = 0.0;
                        d.rho = rho;
                        d.rho_policy = rp;
                        add(d);
                    }
                }
            }
            break;
        case StudyMode::table3:
            for (int n : {60, 35}) {
                for (int p : {30, 50}) {
                    for (double b : {0.0, 0.2, 0.35, 0.5, 1.0}) {
                        SimDesign d;
                        d.n = n;
                        d.p_fitted = p;
                        d.a = 0.0;
                        d.b = b;
                        add(d);
                    }
                    for (double a : {0.1, 0.2, 0.5, 1.5}) {
                        SimDesign d;
                        d.n = n;
                        d.p_fitted = p;
                        d.a = a;
                        d.b = 0.0;
                        add(d);
                    }
                }
            }
            break;
        case StudyMode::table4:
            for (double rho : {2.0, 5.0, 10.0}) {
                for (double b : {0.0, 0.1, 0.2, 0.35, 0.5, 0.8, 1.0}) {
                    SimDesign d;
                    d.p_true = 5;
                    d.p_fitted = 5;
                    d.a = 0.0;
                    d.b = b;
                    d.rho = rho;
                    add(d);
                }
            }
            break;
    }
    return grid;
}

namespace {

struct ReplicateOutcome {
    bool ok = false;
    std::vector<double> values;  // NaN marks a value that does not enter the average
};

std::vector<std::string> metric_names(StudyMode mode) {
    switch (mode) {
        case StudyMode::table1:
            return {"sigma2_hat", "rho_used",  "fx_intercept",  "fx_slope",  "fx_r2",
                    "fz_intercept", "fz_slope", "fz_r2", "fxz_intercept", "fxz_slope", "fxz_r2", "rho_pinned"};
        case StudyMode::table2:
        case StudyMode::table3:
            return {"reject_D", "D", "nonconverged"};
        case StudyMode::table4:
            return {"reject_d", "reject_score", "d", "U", "nonconverged"};
    }
    return {};
}

double flag(bool b) { return b ? 1.0 : 0.0; }

ReplicateOutcome run_replicate(StudyMode mode, const SimDesign& design, const StudyOptions& options,
                               std::uint64_t r) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    ReplicateOutcome out;
    const SimDataset data = generate(design, r);
    const std::optional<double> rho = design.rho > 0.0 ? std::optional<double>(design.rho) : std::nullopt;
    const PathwayModel model = make_pathway_model(data.x, data.Z, options.scaling, rho);

    if (mode == StudyMode::table1) {
        FitConfig fc = options.tests.fit;
        fc.estimator = design.estimator;
        fc.rho_policy = design.rho_policy;
        const ModelFit f = fit(data.y, model.system, model.grams, fc);
        if (!f.diagnostics.converged) return out;
        const FitAssessment a = assess(data, f, model.system);
        auto reg = [](const RegressionSummary& s) {
            return std::array<double, 3>{s.intercept, s.slope, s.r2};
        };
        out.values = {a.sigma2_hat, a.rho_used};
        for (const auto& s : {a.f_x, a.f_z, a.f_xz}) {
            for (double v : reg(s)) out.values.push_back(v);
        }
        out.values.push_back(flag(a.rho_pinned));
        out.ok = true;
        return out;
    }

    TestConfig tc = options.tests;
    tc.fit.rho_policy = design.rho_policy;
    const RlrtResult rl = rlrt_both(data.y, model.system, model.grams, tc);
    const bool nonconv = !rl.fits.alternative.diagnostics.converged;
    if (mode == StudyMode::table2 || mode == StudyMode::table3) {
        if (rl.overall.status != TestStatus::ok || !rl.overall.p_asymptotic) return out;
        out.values = {flag(*rl.overall.p_asymptotic < options.alpha), rl.overall.statistic, flag(nonconv)};
        out.ok = true;
        return out;
    }

    FitConfig sc = options.tests.fit;
    sc.rho_policy = RhoPolicy::fixed;
    const ModelFit null_fit = score_null_fit(data.y, model.system, model.grams, sc);
    const TestReport score = score_test_interaction(data.y, null_fit, model.system, model.grams);
    const bool d_ok = rl.interaction.status == TestStatus::ok && rl.interaction.p_asymptotic.has_value();
    const bool s_ok = score.status == TestStatus::ok && score.p_asymptotic.has_value();
    if (!d_ok && !s_ok) return out;
    out.values = {d_ok ? flag(*rl.interaction.p_asymptotic < options.alpha) : nan,
                  s_ok ? flag(*score.p_asymptotic < options.alpha) : nan, d_ok ? rl.interaction.statistic : nan,
                  s_ok ? score.statistic : nan, flag(nonconv)};
    out.ok = true;
    return out;
}

}  // namespace

StudyCell run_cell(StudyMode mode, const SimDesign& design, const StudyOptions& options) {
    validate(design);
    require(options.replicates >= 1, "simulation: at least one replicate required");
    std::vector<ReplicateOutcome> outcomes(static_cast<size_t>(options.replicates));
    parallel_for(outcomes.size(), options.threads, [&](size_t r) {
        try {
            outcomes[r] = run_replicate(mode, design, options, r);
        } catch (const std::exception& e) {
            log::debug(std::string("simulation replicate failed: ") + e.what());
            outcomes[r] = ReplicateOutcome{};
        }
    });

    StudyCell cell;
    cell.design = design;
    cell.replicates = options.replicates;
    const auto names = metric_names(mode);
    std::vector<double> sum(names.size(), 0.0), sum2(names.size(), 0.0);
    std::vector<int> count(names.size(), 0);
    for (const auto& o : outcomes) {
        if (!o.ok) {
            ++cell.failures;
            continue;
        }
        for (size_t k = 0; k < names.size() && k < o.values.size(); ++k) {
            const double v = o.values[k];
            if (!std::isfinite(v)) continue;
            sum[k] += v;
            sum2[k] += v * v;
            ++count[k];
        }
    }
    for (size_t k = 0; k < names.size(); ++k) {
        Metric m;
        m.name = names[k];
        m.count = count[k];
        if (count[k] > 0) {
            m.mean = sum[k] / count[k];
            const double var = count[k] > 1 ? std::max(0.0, (sum2[k] - count[k] * m.mean * m.mean) / (count[k] - 1)) : 0.0;
            m.se = std::sqrt(var / count[k]);
        }
        cell.metrics.push_back(m);
    }
    return cell;
}

StudyReport run_study(StudyMode mode, const std::vector<SimDesign>& grid, const StudyOptions& options) {
    StudyReport report;
    report.mode = mode;
    for (const auto& d : grid) report.cells.push_back(run_cell(mode, d, options));
    return report;
}

void write_study_table(const StudyReport& report, std::ostream& out, char sep) {
    out << "mode" << sep << "n" << sep << "p_true" << sep << "p_fitted" << sep << "a" << sep << "b" << sep
        << "estimator" << sep << "rho_policy" << sep << "rho" << sep << "replicates" << sep << "failures";
    if (!report.cells.empty()) {
        for (const auto& m : report.cells.front().metrics) out << sep << m.name << sep << m.name << "_se";
    }
    out << '\n';
    for (const auto& c : report.cells) {
        const auto& d = c.design;
        out << study_mode_name(report.mode) << sep << d.n << sep << d.p_true << sep << d.p_fitted << sep << d.a
            << sep << d.b << sep << (d.estimator == Estimator::preml ? "preml" : "reml") << sep
            << (d.rho_policy == RhoPolicy::fixed ? "fixed" : "estimated") << sep << d.rho << sep << c.replicates
            << sep << c.failures;
        for (const auto& m : c.metrics) {
            if (m.count > 0) {
                out << sep << m.mean << sep << m.se;
            } else {
                out << sep << '-' << sep << '-';
            }
        }
        out << '\n';
    }
}

}  // namespace pathenv
