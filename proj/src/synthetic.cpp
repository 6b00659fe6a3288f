#include "pathenv/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "pathenv/error.hpp"
#include "pathenv/parallel.hpp"
#include "pathenv/simulation.hpp"

namespace pathenv {

namespace {

std::string padded(const char* prefix, int i, int width) {
    std::ostringstream s;
    s << prefix;
    s.width(width);
    s.fill('0');
    s << i;
    return s.str();
}

}  // namespace

SyntheticStudy make_synthetic_study(const SyntheticDesign& d) {
    require(d.n >= 10, "synthetic study: n must be at least 10");
    require(d.pathways >= 1 && d.genes >= d.max_size, "synthetic study: gene pool smaller than the largest pathway");
    require(d.min_size >= 1 && d.max_size >= d.min_size, "synthetic study: bad pathway size range");
    require(d.signal_pathways >= 0 && d.signal_pathways <= d.pathways, "synthetic study: too many signal pathways");
    require(d.signal_genes >= 1 && d.signal_genes <= d.max_size, "synthetic study: bad signal gene count");

    std::mt19937_64 rng(stream_seed(d.seed, 0));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    SyntheticStudy s;
    const int gw = static_cast<int>(std::to_string(d.genes).size());
    std::vector<std::string> samples, genes;
    for (int i = 0; i < d.n; ++i) samples.push_back(padded("S", i + 1, 3));
    for (int g = 0; g < d.genes; ++g) genes.push_back(padded("G", g + 1, gw));

    Eigen::MatrixXd expr(d.genes, d.n);
    for (int g = 0; g < d.genes; ++g) {
        const double level = 6.0 + 2.0 * unif(rng);
        const double spread = 0.3 + unif(rng);
        for (int i = 0; i < d.n; ++i) expr(g, i) = level + spread * normal(rng);
    }
    Eigen::VectorXd x(d.n);
    for (int i = 0; i < d.n; ++i) x(i) = 18.0 + 18.0 * unif(rng);

    // Sizes log-uniform over [min_size, max_size]; signal pathways get at least signal_genes.
    std::vector<int> pool(static_cast<size_t>(d.genes));
    std::iota(pool.begin(), pool.end(), 0);
    Eigen::VectorXd y(d.n);
    for (int i = 0; i < d.n; ++i) y(i) = true_f_x(x(i)) + d.sigma * normal(rng);

    const double lo = std::log(static_cast<double>(d.min_size));
    const double hi = std::log(static_cast<double>(d.max_size) + 1.0);
    for (int k = 0; k < d.pathways; ++k) {
        int size = static_cast<int>(std::floor(std::exp(lo + (hi - lo) * unif(rng))));
        size = std::clamp(size, d.min_size, d.max_size);
        const bool signal = k < d.signal_pathways;
        if (signal) size = std::max(size, d.signal_genes);
        std::shuffle(pool.begin(), pool.end(), rng);
        GeneSet set;
        set.id = padded("PW", k + 1, 3);
        set.description = signal ? "signal" : "null";
        for (int j = 0; j < size; ++j) set.genes.push_back(genes[static_cast<size_t>(pool[static_cast<size_t>(j)])]);
        if (signal) {
            // Truth on the standardized signal genes, as in the simulation tables.
            Eigen::MatrixXd Z(d.n, d.signal_genes);
            for (int j = 0; j < d.signal_genes; ++j) {
                const Eigen::RowVectorXd row = expr.row(pool[static_cast<size_t>(j)]);
                const double m = row.mean();
                const double sd = std::sqrt((row.array() - m).square().sum() / (d.n - 1.0));
                Z.col(j) = ((row.array() - m) / sd).transpose();
            }
            for (int i = 0; i < d.n; ++i) {
                y(i) += true_f_z(Z.row(i), d.signal_genes, d.a) + true_f_xz(x(i), Z.row(i), d.signal_genes, d.b);
            }
            s.signal_ids.push_back(set.id);
        }
        s.sets.push_back(std::move(set));
    }

    if (d.degenerate_cases) {
        // Constant genes: no usable kernel scale.
        const std::vector<std::string> extra_ids = {"CONST1", "CONST2", "CONST3"};
        expr.conservativeResize(d.genes + 3, Eigen::NoChange);
        expr.bottomRows(3).setConstant(5.0);
        for (const auto& id : extra_ids) genes.push_back(id);
        s.sets.push_back(GeneSet{"DEG_CONSTANT", "constant expression", extra_ids});
        s.degenerate_ids.push_back("DEG_CONSTANT");
        // Three copies of one gene under different names.
        const std::vector<std::string> copy_ids = {"COPY1", "COPY2", "COPY3"};
        expr.conservativeResize(expr.rows() + 3, Eigen::NoChange);
        for (int c = 0; c < 3; ++c) expr.row(expr.rows() - 3 + c) = expr.row(0);
        for (const auto& id : copy_ids) genes.push_back(id);
        s.sets.push_back(GeneSet{"DEG_COPIES", "identical genes", copy_ids});
        s.degenerate_ids.push_back("DEG_COPIES");
        // The same gene listed over and over resolves to one gene and is skipped.
        s.sets.push_back(GeneSet{"DEG_DUPLICATE", "one gene repeated", {genes[0], genes[0], genes[0], genes[0]}});
        s.degenerate_ids.push_back("DEG_DUPLICATE");
        // Mostly unknown genes.
        s.sets.push_back(GeneSet{"DEG_MISSING", "genes absent from the matrix",
                                 {genes[1], genes[2], "NOT_A_GENE_1", "NOT_A_GENE_2", "NOT_A_GENE_3"}});
        s.degenerate_ids.push_back("DEG_MISSING");
    }

    s.expression.row_ids = genes;
    s.expression.column_ids = samples;
    s.expression.values = expr;
    for (int i = 0; i < d.n; ++i) {
        s.phenotype[samples[static_cast<size_t>(i)]] = y(i);
        s.environment[samples[static_cast<size_t>(i)]] = x(i);
    }
    return s;
}

InputPaths write_synthetic_study(const SyntheticStudy& study, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    InputPaths p;
    p.expression = (fs::path(dir) / "expression.tsv").string();
    p.pathways = (fs::path(dir) / "pathways.gmt").string();
    p.phenotype = (fs::path(dir) / "phenotype.tsv").string();
    p.environment = (fs::path(dir) / "environment.tsv").string();
    auto open = [](const std::string& path) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        return out;
    };
    {
        auto out = open(p.expression);
        write_expression(out, study.expression.row_ids, study.expression.column_ids, study.expression.values);
    }
    {
        auto out = open(p.pathways);
        write_gene_sets(out, study.sets);
    }
    std::vector<std::string> ids;
    Eigen::VectorXd yv(static_cast<Eigen::Index>(study.phenotype.size()));
    Eigen::VectorXd xv(yv.size());
    Eigen::Index i = 0;
    for (const auto& [id, v] : study.phenotype) {
        ids.push_back(id);
        yv(i) = v;
        xv(i) = study.environment.at(id);
        ++i;
    }
    {
        auto out = open(p.phenotype);
        write_sample_values(out, "y", ids, yv);
    }
    {
        auto out = open(p.environment);
        write_sample_values(out, "x", ids, xv);
    }
    return p;
}

}  // namespace pathenv
