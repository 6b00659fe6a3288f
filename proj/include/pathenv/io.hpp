#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace pathenv {

struct Pathway {
    std::string id;
    std::string description;
    std::vector<std::string> genes;  // genes found in the expression matrix, file order
    std::vector<int> rows;           // their rows in StudyInput::expression
    int dropped = 0;                 // listed genes absent from the expression matrix
};

struct SkippedPathway {
    std::string id;
    std::string reason;
};

struct StudyInput {
    std::vector<std::string> samples;  // sorted sample identifiers
    std::vector<std::string> genes;
    Eigen::MatrixXd expression;        // genes x samples, columns follow `samples`
    Eigen::VectorXd y;
    Eigen::VectorXd x;
    std::vector<Pathway> pathways;
    std::vector<SkippedPathway> skipped;
    std::vector<std::string> warnings;

    [[nodiscard]] int n() const { return static_cast<int>(samples.size()); }
    // samples x genes block of one pathway.
    [[nodiscard]] Eigen::MatrixXd pathway_expression(const Pathway& pathway) const;
    [[nodiscard]] const Pathway* find(const std::string& id) const;
};

enum class Orientation { automatic, genes_by_samples, samples_by_genes };
enum class PathwayFormat { automatic, gmt, two_column };

struct InputPaths {
    std::string expression;
    std::string pathways;
    std::string phenotype;
    std::string environment;
};

struct LoadOptions {
    Orientation orientation = Orientation::automatic;
    PathwayFormat pathway_format = PathwayFormat::automatic;
    int min_genes = 3;
};

// Delimited text: tab if the line has one, else comma, else whitespace.
std::vector<std::string> split_fields(const std::string& line);

struct ExpressionTable {
    std::vector<std::string> row_ids;
    std::vector<std::string> column_ids;
    Eigen::MatrixXd values;  // rows x columns; NaN for missing entries
};
ExpressionTable read_expression(std::istream& in);

struct GeneSet {
    std::string id;
    std::string description;
    std::vector<std::string> genes;
};
std::vector<GeneSet> read_gene_sets(std::istream& in, PathwayFormat format);

// Two columns (sample, value); a non-numeric first line is taken as a header.
// Missing values are kept as NaN.
std::map<std::string, double> read_sample_values(std::istream& in, const std::string& what);

// Throws InputError on misaligned or missing data.
StudyInput load_inputs(const InputPaths& paths, const LoadOptions& options = {});

// Same from already parsed parts, e.g. for synthetic studies.
StudyInput assemble_inputs(ExpressionTable expression, Orientation orientation, const std::vector<GeneSet>& sets,
                           const std::map<std::string, double>& phenotype,
                           const std::map<std::string, double>& environment, const LoadOptions& options = {});

// Writers producing files the readers accept.
void write_expression(std::ostream& out, const std::vector<std::string>& genes,
                      const std::vector<std::string>& samples, const Eigen::MatrixXd& genes_by_samples);
void write_gene_sets(std::ostream& out, const std::vector<GeneSet>& sets);
void write_sample_values(std::ostream& out, const std::string& header, const std::vector<std::string>& samples,
                         const Eigen::VectorXd& values);

}  // namespace pathenv
