#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

#include "pathenv/error.hpp"
#include "pathenv/io.hpp"
#include "pathenv/log.hpp"
#include "pathenv/model_inputs.hpp"
#include "pathenv/pipeline.hpp"
#include "pathenv/report.hpp"
#include "pathenv/simulation.hpp"
#include "pathenv/synthetic.hpp"

namespace fs = std::filesystem;
using namespace pathenv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitInternal = 2;

struct InputFlags {
    InputPaths paths;
    std::string config;
    std::string orientation = "auto";
};

struct RunFlags {
    std::string out_dir = ".";
    int permutations = -1;
    long long seed = -1;
    int threads = 0;
    std::string format = "tsv";
    bool verbose = false;
};

void add_input_flags(CLI::App* app, InputFlags& f) {
    app->add_option("--expression", f.paths.expression, "Expression matrix (gene rows, sample columns)")->required();
    app->add_option("--pathways", f.paths.pathways, "Pathways in GMT or two-column (pathway, gene) format")->required();
    app->add_option("--phenotype", f.paths.phenotype, "Two-column file: sample, outcome")->required();
    app->add_option("--environment", f.paths.environment, "Two-column file: sample, covariate")->required();
    app->add_option("--config", f.config, "key=value configuration file");
    app->add_option("--orientation", f.orientation, "auto, genes_by_samples or samples_by_genes")
        ->check(CLI::IsMember({"auto", "genes_by_samples", "samples_by_genes"}));
}

void add_run_flags(CLI::App* app, RunFlags& f, bool with_permutations) {
    app->add_option("--out-dir", f.out_dir, "Output directory");
    if (with_permutations) {
        app->add_option("--permutations", f.permutations, "Permutation replicates per test (0 disables)")
            ->check(CLI::NonNegativeNumber);
    }
    app->add_option("--seed", f.seed, "Random seed")->check(CLI::NonNegativeNumber);
    app->add_option("--threads", f.threads, "Worker threads")->check(CLI::PositiveNumber);
    app->add_option("--format", f.format, "Table format")->check(CLI::IsMember({"tsv", "csv"}));
    app->add_flag("--verbose", f.verbose, "Log debug messages");
}

AnalysisConfig make_config(const InputFlags& in, const RunFlags& run) {
    AnalysisConfig c;
    if (!in.config.empty()) read_config_file(c, in.config);
    if (in.orientation != "auto") apply_setting(c, "orientation", in.orientation);
    if (run.permutations >= 0) c.permutations = run.permutations;
    if (run.seed >= 0) c.seed = static_cast<std::uint64_t>(run.seed);
    if (run.threads > 0) c.threads = run.threads;
    c.permutation.threads = c.threads;
    return c;
}

// Routes library messages to study.log and warnings to stderr as well.
class LogFile {
public:
    LogFile(const std::string& dir, bool verbose) {
        fs::create_directories(dir);
        out_.open(fs::path(dir) / "study.log");
        log::set_min_level(verbose ? log::Level::debug : log::Level::info);
        log::set_sink([this](log::Level level, const std::string& msg) {
            std::lock_guard<std::mutex> lock(mutex_);
            if (out_) out_ << '[' << log::level_name(level) << "] " << msg << '\n';
            if (level >= log::Level::warning) std::cerr << log::level_name(level) << ": " << msg << '\n';
        });
    }
    ~LogFile() { log::set_sink({}); }
    LogFile(const LogFile&) = delete;
    LogFile& operator=(const LogFile&) = delete;

private:
    std::ofstream out_;
    std::mutex mutex_;
};

char separator(const std::string& format) { return format == "csv" ? ',' : '\t'; }

std::string opt(const std::optional<double>& v) { return v ? format_value(*v) : "-"; }

int run_analyze(const InputFlags& in, const RunFlags& run) {
    const AnalysisConfig config = make_config(in, run);
    LogFile logfile(run.out_dir, run.verbose);
    const StudyInput input = load_inputs(in.paths, config.load);
    log::info("loaded " + std::to_string(input.n()) + " samples, " + std::to_string(input.pathways.size()) +
              " resolvable pathways, " + std::to_string(input.skipped.size()) + " skipped");
    if (input.pathways.empty()) throw InputError("no pathway resolves to enough genes");

    std::vector<PathwayResult> results;
    int code = kExitOk;
    try {
        results = analyze_study(input, config);
    } catch (const std::exception& e) {
        log::error(std::string("analysis aborted: ") + e.what());
        code = kExitInternal;
    }
    for (const auto& s : input.skipped) results.push_back(skipped_result(s));
    for (const auto& r : results) {
        std::string line = "pathway " + r.id + ": " + r.status;
        for (const auto& m : r.messages) line += " | " + m;
        log::info(line);
    }
    const auto files = rank_report(results, run.out_dir, separator(run.format), config.alpha);
    std::cout << "wrote " << files.table << '\n';
    if (!files.variance_figure.empty()) std::cout << "wrote " << files.variance_figure << '\n';
    if (!files.pvalue_figure.empty()) std::cout << "wrote " << files.pvalue_figure << '\n';
    return code;
}

int run_test_one(const InputFlags& in, const RunFlags& run, const std::string& pathway_id) {
    const AnalysisConfig config = make_config(in, run);
    LogFile logfile(run.out_dir, run.verbose);
    const StudyInput input = load_inputs(in.paths, config.load);
    const Pathway* p = input.find(pathway_id);
    if (!p) {
        for (const auto& s : input.skipped) {
            if (s.id == pathway_id) throw InputError("pathway '" + pathway_id + "' was skipped: " + s.reason);
        }
        throw InputError("pathway '" + pathway_id + "' not found");
    }

    // Verbose diagnostics of the main fit before the full result.
    std::optional<double> rho;
    if (config.rho_mode == RhoMode::fixed) rho = config.rho_value;
    const PathwayModel model = make_pathway_model(input.x, input.pathway_expression(*p), config.scaling, rho);
    FitConfig fc = config.fit;
    fc.rho_policy = config.rho_mode == RhoMode::estimate ? RhoPolicy::estimated : RhoPolicy::fixed;
    const ModelFit f = fit(input.y, model.system, model.grams, fc);
    std::cout << std::setprecision(6);
    std::cout << "pathway " << p->id << " (" << p->genes.size() << " genes, " << p->dropped << " dropped)\n";
    std::cout << "samples " << input.n() << ", knots " << model.system.r() << ", default rho " << model.rho_default
              << "\n";
    std::cout << "fit: " << (fc.estimator == Estimator::preml ? "p-REML" : "REML") << ", "
              << f.diagnostics.iterations << " iterations, delta " << f.diagnostics.delta << ", "
              << f.diagnostics.message << "\n";
    std::cout << "  loglik " << f.loglik << "\n";
    const char* names[] = {"sigma2", "tau_x", "tau_z", "tau_xz", "rho"};
    const double values[] = {f.params.sigma2, f.params.tau_x, f.params.tau_z, f.params.tau_xz, f.params.rho};
    for (int k = 0; k < kRemlParams; ++k) {
        std::cout << "  " << std::left << std::setw(7) << names[k] << std::right << ' ' << values[k] << "  se "
                  << format_value(f.std_errors(k)) << "\n";
    }
    std::cout << "  beta " << f.beta_hat.transpose() << "\n";

    const PathwayResult r = analyze_pathway(input, pathway_id, config);
    std::cout << "overall     D = " << opt(r.D) << "  p = " << opt(r.p_D) << "  p_perm = " << opt(r.p_D_perm) << "\n";
    std::cout << "interaction d = " << opt(r.d) << "  p = " << opt(r.p_d) << "  p_perm = " << opt(r.p_d_perm) << "\n";
    std::cout << "score       U = " << opt(r.U) << "  p = " << opt(r.p_score) << "\n";
    std::cout << "status " << r.status << "\n";
    for (const auto& m : r.messages) std::cout << "  " << m << "\n";
    return r.status.find("error") == std::string::npos ? kExitOk : kExitInternal;
}

int run_validate(const InputFlags& in) {
    AnalysisConfig config;
    if (!in.config.empty()) read_config_file(config, in.config);
    if (in.orientation != "auto") apply_setting(config, "orientation", in.orientation);
    const StudyInput input = load_inputs(in.paths, config.load);
    std::cout << "samples " << input.n() << "\n";
    std::cout << "genes " << input.genes.size() << "\n";
    std::cout << "pathways " << input.pathways.size() << " resolvable, " << input.skipped.size() << " skipped\n";
    for (const auto& w : input.warnings) std::cout << "warning: " << w << "\n";
    for (const auto& s : input.skipped) std::cout << "skipped: " << s.id << ": " << s.reason << "\n";
    (void)build_spline_system(input.x);
    std::cout << "ok\n";
    return kExitOk;
}

int run_simulate(const std::string& mode_name, int replicates, const std::string& config_path, const RunFlags& run,
                 double alpha) {
    const auto mode = parse_study_mode(mode_name);
    if (!mode) throw InputError("unknown simulation mode '" + mode_name + "'");
    AnalysisConfig config;
    if (!config_path.empty()) read_config_file(config, config_path);
    LogFile logfile(run.out_dir, run.verbose);
    StudyOptions options;
    options.replicates = replicates;
    options.threads = run.threads > 0 ? run.threads : config.threads;
    options.alpha = alpha;
    options.scaling = config.scaling;
    options.tests = config.tests;
    options.tests.fit = config.fit;
    const std::uint64_t seed = run.seed >= 0 ? static_cast<std::uint64_t>(run.seed) : config.seed;
    const auto grid = default_grid(*mode, seed);
    StudyReport report;
    report.mode = *mode;
    for (size_t i = 0; i < grid.size(); ++i) {
        report.cells.push_back(run_cell(*mode, grid[i], options));
        const auto& c = report.cells.back();
        std::ostringstream msg;
        msg << "cell " << i + 1 << "/" << grid.size() << ": n=" << c.design.n << " p=" << c.design.p_fitted
            << " a=" << c.design.a << " b=" << c.design.b << " rho=" << c.design.rho << ", " << c.failures
            << " failed replicates";
        log::info(msg.str());
    }
    const std::string path =
        (fs::path(run.out_dir) / ("simulation_" + mode_name + (run.format == "csv" ? ".csv" : ".tsv"))).string();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_study_table(report, out, separator(run.format));
    std::cout << "wrote " << path << '\n';
    return kExitOk;
}

int run_synthesize(const std::string& dir, int pathways, int n, long long seed) {
    SyntheticDesign d;
    d.pathways = pathways;
    d.n = n;
    if (seed >= 0) d.seed = static_cast<std::uint64_t>(seed);
    const auto study = make_synthetic_study(d);
    const auto paths = write_synthetic_study(study, dir);
    std::cout << paths.expression << '\n' << paths.pathways << '\n' << paths.phenotype << '\n'
              << paths.environment << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pathway-environment interaction analysis with semiparametric mixed models"};
    app.require_subcommand(1);

    InputFlags analyze_in;
    RunFlags analyze_run;
    auto* analyze = app.add_subcommand("analyze", "Fit and test every pathway of a study");
    add_input_flags(analyze, analyze_in);
    add_run_flags(analyze, analyze_run, true);

    InputFlags one_in;
    RunFlags one_run;
    std::string pathway_id;
    auto* test_one = app.add_subcommand("test-one", "Analyse a single pathway with detailed diagnostics");
    add_input_flags(test_one, one_in);
    add_run_flags(test_one, one_run, true);
    test_one->add_option("--pathway", pathway_id, "Pathway identifier")->required();

    InputFlags validate_in;
    auto* validate = app.add_subcommand("validate", "Check that the input files load and align");
    add_input_flags(validate, validate_in);

    std::string mode = "table2";
    int replicates = 200;
    double alpha = 0.05;
    std::string sim_config;
    RunFlags sim_run;
    auto* simulate = app.add_subcommand("simulate", "Run a simulation study");
    simulate->add_option("--mode", mode, "table1, table2, table3 or table4")
        ->check(CLI::IsMember({"table1", "table2", "table3", "table4"}));
    simulate->add_option("--replicates", replicates, "Replicates per design cell")->check(CLI::PositiveNumber);
    simulate->add_option("--alpha", alpha, "Nominal test level")->check(CLI::Range(0.0, 1.0));
    simulate->add_option("--config", sim_config, "key=value configuration file");
    add_run_flags(simulate, sim_run, false);

    std::string synth_dir = "synthetic";
    int synth_pathways = 251;
    int synth_n = 35;
    long long synth_seed = -1;
    auto* synthesize = app.add_subcommand("synthesize", "Write a synthetic study to disk");
    synthesize->add_option("--out-dir", synth_dir, "Output directory");
    synthesize->add_option("--pathways", synth_pathways, "Number of pathways")->check(CLI::PositiveNumber);
    synthesize->add_option("--samples", synth_n, "Number of samples")->check(CLI::Range(10, 100000));
    synthesize->add_option("--seed", synth_seed, "Random seed")->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*analyze) return run_analyze(analyze_in, analyze_run);
        if (*test_one) return run_test_one(one_in, one_run, pathway_id);
        if (*validate) return run_validate(validate_in);
        if (*simulate) return run_simulate(mode, replicates, sim_config, sim_run, alpha);
        if (*synthesize) return run_synthesize(synth_dir, synth_pathways, synth_n, synth_seed);
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const UnsupportedInput& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const DataError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitInternal;
}
