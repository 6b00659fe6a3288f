#include "pathenv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pathenv/error.hpp"
#include "pathenv/log.hpp"
#include "pathenv/model_inputs.hpp"
#include "pathenv/parallel.hpp"

namespace pathenv {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

double to_double(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const double v = std::stod(value, &used);
        if (used == value.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw InputError("config: '" + key + "' expects a number, got '" + value + "'");
}

int to_int(const std::string& key, const std::string& value) {
    const double v = to_double(key, value);
    if (v != std::floor(v) || std::abs(v) > 2e9) throw InputError("config: '" + key + "' expects an integer");
    return static_cast<int>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
    const std::string v = lower(value);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw InputError("config: '" + key + "' expects true or false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(lower(item));
    }
    return out;
}

void add_flag(PathwayResult& r, const std::string& flag) {
    r.status = r.status == "ok" ? flag : r.status + ";" + flag;
}

Estimate estimate(double value, const Eigen::VectorXd& se, int index) {
    Estimate e;
    e.value = value;
    if (se.size() > index && std::isfinite(se(index)) && se(index) >= 0.0) e.se = se(index);
    return e;
}

void record_test(PathwayResult& r, const char* name, const TestReport& t) {
    if (t.status != TestStatus::ok) add_flag(r, std::string(name) + ":" + status_name(t.status));
    if (!t.message.empty()) r.messages.push_back(std::string(name) + ": " + t.message);
}

PathwayResult analyze_with(const StudyInput& input, const Pathway& pathway, const SplineSystem& system,
                           const AnalysisConfig& config, std::uint64_t stream) {
    PathwayResult r;
    r.id = pathway.id;
    r.genes = static_cast<int>(pathway.genes.size());
    try {
        std::optional<double> rho;
        if (config.rho_mode == RhoMode::fixed) rho = config.rho_value;
        const PathwayModel model = make_pathway_model(system, input.pathway_expression(pathway), config.scaling, rho);
        const Eigen::VectorXd& y = input.y;

        FitConfig fc = config.fit;
        fc.rho_policy = config.rho_mode == RhoMode::estimate ? RhoPolicy::estimated : RhoPolicy::fixed;
        const ModelFit f = fit(y, model.system, model.grams, fc);
        r.beta0 = f.beta_hat(0);
        r.beta1 = f.beta_hat(1);
        r.sigma2 = estimate(f.params.sigma2, f.std_errors, th_sigma2);
        r.tau_x = estimate(f.params.tau_x, f.std_errors, th_tau_x);
        r.tau_z = estimate(f.params.tau_z, f.std_errors, th_tau_z);
        r.tau_xz = estimate(f.params.tau_xz, f.std_errors, th_tau_xz);
        r.rho = f.params.rho;
        r.converged = f.diagnostics.converged;
        if (!f.diagnostics.converged) {
            add_flag(r, "fit:nonconverged");
            r.messages.push_back("fit: " + f.diagnostics.message);
        }
        if (f.diagnostics.flat_ridge) r.messages.push_back("fit: " + f.diagnostics.message);
        if (f.diagnostics.rho_pinned) add_flag(r, "rho:pinned");
        const char* names[] = {"tau_x", "tau_z", "tau_xz"};
        for (int c = 0; c < kComponents; ++c) {
            if (f.diagnostics.at_boundary[static_cast<size_t>(c)]) add_flag(r, std::string(names[c]) + ":boundary");
        }
        if (f.diagnostics.sigma2_at_boundary) add_flag(r, "sigma2:boundary");

        TestConfig tc = config.tests;
        tc.fit = fc;
        PermutationOptions po = config.permutation;
        po.replicates = config.permutations;

        if (config.run_overall || config.run_interaction) {
            try {
                const RlrtResult rl = rlrt_both(y, model.system, model.grams, tc);
                if (config.run_overall) {
                    r.D = rl.overall.statistic;
                    r.p_D = rl.overall.p_asymptotic;
                    record_test(r, "overall", rl.overall);
                    if (config.permutations > 0) {
                        po.seed = stream_seed(config.seed, 2 * stream);
                        const TestReport perm = permutation_from_fit(false, y, model.system, model.grams,
                                                                     rl.fits.alternative, rl.overall.statistic, po, tc);
                        r.p_D_perm = perm.p_permutation;
                        record_test(r, "overall_perm", perm);
                    }
                }
                if (config.run_interaction) {
                    r.d = rl.interaction.statistic;
                    r.p_d = rl.interaction.p_asymptotic;
                    record_test(r, "interaction", rl.interaction);
                    if (config.permutations > 0) {
                        po.seed = stream_seed(config.seed, 2 * stream + 1);
                        const TestReport perm =
                            permutation_from_fit(true, y, model.system, model.grams, rl.fits.alternative,
                                                 rl.interaction.statistic, po, tc);
                        r.p_d_perm = perm.p_permutation;
                        record_test(r, "interaction_perm", perm);
                    }
                }
            } catch (const std::exception& e) {
                add_flag(r, "rlrt:error");
                r.messages.push_back(std::string("rlrt: ") + e.what());
            }
        }
        if (config.run_score) {
            try {
                const ModelFit null_fit = score_null_fit(y, model.system, model.grams, fc);
                const TestReport s = score_test_interaction(y, null_fit, model.system, model.grams);
                r.U = s.statistic;
                r.p_score = s.p_asymptotic;
                record_test(r, "score", s);
            } catch (const std::exception& e) {
                add_flag(r, "score:error");
                r.messages.push_back(std::string("score: ") + e.what());
            }
        }
    } catch (const std::exception& e) {
        add_flag(r, "error");
        r.messages.push_back(e.what());
    }
    for (const auto& m : r.messages) log::debug("pathway " + r.id + ": " + m);
    return r;
}

}  // namespace

void apply_setting(AnalysisConfig& c, const std::string& raw_key, const std::string& value) {
    const std::string key = lower(raw_key);
    if (key == "estimator") {
        const std::string v = lower(value);
        if (v == "preml" || v == "p-reml") {
            c.fit.estimator = Estimator::preml;
        } else if (v == "reml") {
            c.fit.estimator = Estimator::reml;
        } else {
            throw InputError("config: estimator must be preml or reml");
        }
    } else if (key == "rho") {
        const std::string v = lower(value);
        if (v == "auto") {
            c.rho_mode = RhoMode::automatic;
        } else if (v == "estimate") {
            c.rho_mode = RhoMode::estimate;
        } else if (v.rfind("fixed:", 0) == 0) {
            c.rho_mode = RhoMode::fixed;
            c.rho_value = to_double(key, v.substr(6));
            if (!(c.rho_value > 0.0)) throw InputError("config: fixed rho must be positive");
        } else {
            throw InputError("config: rho must be auto, estimate or fixed:<value>");
        }
    } else if (key == "init_sigma2") {
        c.fit.init_sigma2 = to_double(key, value);
    } else if (key == "init_lambda_inv" || key == "init_tau") {
        const auto parts = split_list(value);
        if (parts.size() != 3) throw InputError("config: " + key + " expects three comma-separated values");
        auto& target = key == "init_tau" ? c.fit.init_tau : c.fit.init_lambda_inv;
        for (size_t i = 0; i < 3; ++i) target[i] = to_double(key, parts[i]);
    } else if (key == "max_iter") {
        c.fit.max_iter = to_int(key, value);
    } else if (key == "tol" || key == "tol_loglik") {
        c.fit.tol_loglik = to_double(key, value);
    } else if (key == "tol_param") {
        c.fit.tol_param = to_double(key, value);
    } else if (key == "tol_flat") {
        c.fit.tol_flat = to_double(key, value);
    } else if (key == "permutations") {
        c.permutations = to_int(key, value);
        if (c.permutations < 0) throw InputError("config: permutations must be >= 0");
    } else if (key == "seed") {
        const double v = to_double(key, value);
        if (v < 0 || v != std::floor(v)) throw InputError("config: seed must be a non-negative integer");
        c.seed = static_cast<std::uint64_t>(v);
    } else if (key == "alpha") {
        c.alpha = to_double(key, value);
        if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw InputError("config: alpha must lie in (0, 1)");
    } else if (key == "threads" || key == "workers") {
        c.threads = std::max(1, to_int(key, value));
    } else if (key == "tests") {
        c.run_overall = c.run_interaction = c.run_score = false;
        for (const auto& t : split_list(value)) {
            if (t == "overall") {
                c.run_overall = true;
            } else if (t == "interaction") {
                c.run_interaction = true;
            } else if (t == "score") {
                c.run_score = true;
            } else if (t == "all") {
                c.run_overall = c.run_interaction = c.run_score = true;
            } else {
                throw InputError("config: unknown test '" + t + "'");
            }
        }
    } else if (key == "standardize") {
        c.scaling.standardize = to_bool(key, value);
    } else if (key == "per_gene_distance") {
        c.scaling.per_gene_distance = to_bool(key, value);
    } else if (key == "nuisance_adjust") {
        c.tests.nuisance_adjust = to_bool(key, value);
    } else if (key == "free_tau_x") {
        c.tests.free_tau_x = to_bool(key, value);
    } else if (key == "plus_one") {
        c.permutation.plus_one = to_bool(key, value);
    } else if (key == "randomize_ties") {
        c.permutation.randomize_ties = to_bool(key, value);
    } else if (key == "min_genes") {
        c.load.min_genes = std::max(1, to_int(key, value));
    } else if (key == "orientation") {
        const std::string v = lower(value);
        if (v == "auto") {
            c.load.orientation = Orientation::automatic;
        } else if (v == "genes_by_samples") {
            c.load.orientation = Orientation::genes_by_samples;
        } else if (v == "samples_by_genes") {
            c.load.orientation = Orientation::samples_by_genes;
        } else {
            throw InputError("config: orientation must be auto, genes_by_samples or samples_by_genes");
        }
    } else if (key == "pathway_format") {
        const std::string v = lower(value);
        if (v == "auto") {
            c.load.pathway_format = PathwayFormat::automatic;
        } else if (v == "gmt") {
            c.load.pathway_format = PathwayFormat::gmt;
        } else if (v == "two_column") {
            c.load.pathway_format = PathwayFormat::two_column;
        } else {
            throw InputError("config: pathway_format must be auto, gmt or two_column");
        }
    } else {
        throw InputError("config: unknown key '" + raw_key + "'");
    }
}

void read_config(AnalysisConfig& config, std::istream& in) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key=value");
        auto strip = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
            return s;
        };
        apply_setting(config, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
}

void read_config_file(AnalysisConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file '" + path + "'");
    read_config(config, in);
}

PathwayResult analyze_pathway(const StudyInput& input, const Pathway& pathway, const AnalysisConfig& config,
                              std::uint64_t stream) {
    try {
        return analyze_with(input, pathway, build_spline_system(input.x), config, stream);
    } catch (const std::exception& e) {
        PathwayResult r;
        r.id = pathway.id;
        r.genes = static_cast<int>(pathway.genes.size());
        r.status = "error";
        r.messages.push_back(e.what());
        return r;
    }
}

PathwayResult analyze_pathway(const StudyInput& input, const std::string& pathway_id, const AnalysisConfig& config) {
    for (size_t i = 0; i < input.pathways.size(); ++i) {
        if (input.pathways[i].id == pathway_id) return analyze_pathway(input, input.pathways[i], config, i);
    }
    throw InputError("pathway '" + pathway_id + "' is not among the resolvable pathways");
}

PathwayResult skipped_result(const SkippedPathway& skipped) {
    PathwayResult r;
    r.id = skipped.id;
    r.status = "skipped";
    r.messages.push_back(skipped.reason);
    return r;
}

std::vector<PathwayResult> analyze_study(const StudyInput& input, const AnalysisConfig& config) {
    // The covariate is shared, so its spline system is built once.
    const SplineSystem system = build_spline_system(input.x);
    AnalysisConfig per = config;
    if (config.threads > 1) per.permutation.threads = 1;
    std::vector<PathwayResult> results(input.pathways.size());
    parallel_for(results.size(), config.threads, [&](size_t i) {
        results[i] = analyze_with(input, input.pathways[i], system, per, i);
    });
    return results;
}

}  // namespace pathenv
