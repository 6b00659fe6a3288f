#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pathenv/io.hpp"

namespace pathenv {

// Synthetic expression study shaped like a small case-control data set:
// many pathways of very different sizes over a shared gene pool, a few of
// them driving the outcome through the simulation truth functions.
struct SyntheticDesign {
    int n = 35;
    int pathways = 251;
    int genes = 3000;
    int min_size = 3;
    int max_size = 543;
    int signal_pathways = 3;    // the first ones carry pathway and interaction effects
    int signal_genes = 11;      // genes of a signal pathway entering the truth
    double a = 1.5;
    double b = 2.0;
    double sigma = 0.2;
    bool degenerate_cases = true;  // append constant, duplicated and undersized pathways
    std::uint64_t seed = 1;
};

struct SyntheticStudy {
    ExpressionTable expression;  // genes x samples
    std::vector<GeneSet> sets;
    std::map<std::string, double> phenotype;
    std::map<std::string, double> environment;
    std::vector<std::string> signal_ids;
    std::vector<std::string> degenerate_ids;
};

SyntheticStudy make_synthetic_study(const SyntheticDesign& design);

// Writes expression.tsv, pathways.gmt, phenotype.tsv and environment.tsv.
InputPaths write_synthetic_study(const SyntheticStudy& study, const std::string& dir);

}  // namespace pathenv
