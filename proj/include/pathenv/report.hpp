#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pathenv/pipeline.hpp"

namespace pathenv {

// Ascending p_D, then descending D, then pathway id; missing values sort last.
std::vector<PathwayResult> rank_results(std::vector<PathwayResult> results);

// Column order of the results table.
const std::vector<std::string>& result_columns();

// One row per result in the given order; absent values are written as "-".
void write_results(const std::vector<PathwayResult>& ranked, std::ostream& out, char sep = '\t');

// Variance components against rank, one panel per component.
void write_variance_figure(const std::vector<PathwayResult>& ranked, std::ostream& out);
// p_D against p_d with reference lines at alpha.
void write_pvalue_figure(const std::vector<PathwayResult>& ranked, std::ostream& out, double alpha = 0.05);

struct ReportFiles {
    std::string table;
    std::string variance_figure;
    std::string pvalue_figure;
};

// Writes results.<tsv|csv> and both figures into out_dir. Figures are best
// effort: a failure there is logged and leaves the table in place.
ReportFiles rank_report(const std::vector<PathwayResult>& results, const std::string& out_dir, char sep = '\t',
                        double alpha = 0.05);

std::string format_value(double v);

}  // namespace pathenv
