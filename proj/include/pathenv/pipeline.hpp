#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pathenv/hypothesis.hpp"
#include "pathenv/io.hpp"
#include "pathenv/kernels.hpp"
#include "pathenv/mixed_model.hpp"

namespace pathenv {

enum class RhoMode { automatic, fixed, estimate };

struct AnalysisConfig {
    FitConfig fit;  // estimator, initial values, iteration limits
    RhoMode rho_mode = RhoMode::automatic;
    double rho_value = 0.0;  // used with RhoMode::fixed
    ExpressionScaling scaling;
    TestConfig tests;
    bool run_overall = true;
    bool run_interaction = true;
    bool run_score = true;
    int permutations = 0;  // 0 disables permutation p-values
    PermutationOptions permutation;
    std::uint64_t seed = 1;
    double alpha = 0.05;
    int threads = 1;
    LoadOptions load;
};

// Applies one key=value setting; throws InputError for unknown keys or bad values.
void apply_setting(AnalysisConfig& config, const std::string& key, const std::string& value);
// Flat key=value file; '#' starts a comment.
void read_config(AnalysisConfig& config, std::istream& in);
void read_config_file(AnalysisConfig& config, const std::string& path);

struct Estimate {
    double value = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
};

struct PathwayResult {
    std::string id;
    int genes = 0;
    double beta0 = std::numeric_limits<double>::quiet_NaN();
    double beta1 = std::numeric_limits<double>::quiet_NaN();
    Estimate sigma2;
    Estimate tau_x;
    Estimate tau_z;
    Estimate tau_xz;
    double rho = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> D;
    std::optional<double> p_D;
    std::optional<double> p_D_perm;
    std::optional<double> d;
    std::optional<double> p_d;
    std::optional<double> p_d_perm;
    std::optional<double> U;
    std::optional<double> p_score;
    bool converged = false;
    // "ok" or ';'-separated flags such as "tau_z:boundary" or "overall:info_not_pd".
    std::string status = "ok";
    std::vector<std::string> messages;
};

// Never throws for numerical trouble; failures land in status.
PathwayResult analyze_pathway(const StudyInput& input, const Pathway& pathway, const AnalysisConfig& config,
                              std::uint64_t stream = 0);
PathwayResult analyze_pathway(const StudyInput& input, const std::string& pathway_id, const AnalysisConfig& config);

// Row for a pathway dropped at load time; every value is absent.
PathwayResult skipped_result(const SkippedPathway& skipped);

// Pathways in input order, analysed by config.threads workers.
std::vector<PathwayResult> analyze_study(const StudyInput& input, const AnalysisConfig& config);

}  // namespace pathenv
