#include "pathenv/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "pathenv/error.hpp"
#include "pathenv/log.hpp"

namespace pathenv {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool skip_line(const std::string& line) {
    const std::string t = trim(line);
    return t.empty() || t[0] == '#';
}

bool is_missing_token(const std::string& t) {
    return t.empty() || t == "NA" || t == "na" || t == "NaN" || t == "nan" || t == "." || t == "?";
}

std::optional<double> parse_number(const std::string& token) {
    const std::string t = trim(token);
    if (is_missing_token(t)) return kMissing;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || errno == ERANGE) return std::nullopt;
    return v;
}

std::ifstream open_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw InputError(std::string("cannot open ") + what + " file '" + path + "'");
    return in;
}

std::string list_some(const std::vector<std::string>& ids, size_t limit = 10) {
    std::ostringstream out;
    for (size_t i = 0; i < ids.size() && i < limit; ++i) out << (i ? ", " : "") << ids[i];
    if (ids.size() > limit) out << ", ... (" << ids.size() << " in total)";
    return out.str();
}

void check_unique(const std::vector<std::string>& ids, const std::string& what) {
    std::set<std::string> seen;
    std::vector<std::string> dup;
    for (const auto& id : ids) {
        if (!seen.insert(id).second) dup.push_back(id);
    }
    if (!dup.empty()) throw InputError("duplicate " + what + " identifiers: " + list_some(dup));
}

bool has_extension(const std::string& path, const std::string& ext) {
    if (path.size() < ext.size()) return false;
    std::string tail = path.substr(path.size() - ext.size());
    std::transform(tail.begin(), tail.end(), tail.begin(), [](unsigned char c) { return std::tolower(c); });
    return tail == ext;
}

}  // namespace

std::vector<std::string> split_fields(const std::string& raw) {
    std::string line = raw;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> out;
    char sep = 0;
    if (line.find('\t') != std::string::npos) {
        sep = '\t';
    } else if (line.find(',') != std::string::npos) {
        sep = ',';
    }
    if (sep) {
        std::string field;
        std::istringstream ss(line);
        while (std::getline(ss, field, sep)) out.push_back(trim(field));
        if (!line.empty() && line.back() == sep) out.emplace_back();
    } else {
        std::istringstream ss(line);
        std::string field;
        while (ss >> field) out.push_back(field);
    }
    return out;
}

Eigen::MatrixXd StudyInput::pathway_expression(const Pathway& pathway) const {
    Eigen::MatrixXd Z(n(), static_cast<Eigen::Index>(pathway.rows.size()));
    for (size_t j = 0; j < pathway.rows.size(); ++j) {
        Z.col(static_cast<Eigen::Index>(j)) = expression.row(pathway.rows[j]).transpose();
    }
    return Z;
}

const Pathway* StudyInput::find(const std::string& id) const {
    for (const auto& p : pathways) {
        if (p.id == id) return &p;
    }
    return nullptr;
}

ExpressionTable read_expression(std::istream& in) {
    ExpressionTable t;
    std::string line;
    int lineno = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        if (skip_line(line)) continue;
        header = split_fields(line);
        break;
    }
    if (header.empty()) throw InputError("expression file is empty");

    std::vector<std::vector<double>> rows;
    size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (skip_line(line)) continue;
        const auto f = split_fields(line);
        if (f.size() < 2) throw InputError("expression line " + std::to_string(lineno) + " has no values");
        if (width == 0) width = f.size();
        if (f.size() != width) {
            std::ostringstream msg;
            msg << "expression line " << lineno << " has " << f.size() << " fields, expected " << width;
            throw InputError(msg.str());
        }
        t.row_ids.push_back(f[0]);
        std::vector<double> v(f.size() - 1);
        for (size_t j = 1; j < f.size(); ++j) {
            const auto parsed = parse_number(f[j]);
            if (!parsed) {
                throw InputError("expression line " + std::to_string(lineno) + ": '" + f[j] + "' is not numeric");
            }
            v[j - 1] = *parsed;
        }
        rows.push_back(std::move(v));
    }
    if (rows.empty()) throw InputError("expression file has no data rows");
    // The header may or may not carry a label above the identifier column.
    if (header.size() == width) {
        t.column_ids.assign(header.begin() + 1, header.end());
    } else if (header.size() + 1 == width) {
        t.column_ids = header;
    } else {
        std::ostringstream msg;
        msg << "expression header has " << header.size() << " fields but rows have " << width;
        throw InputError(msg.str());
    }
    t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
    for (size_t i = 0; i < rows.size(); ++i) {
        for (size_t j = 0; j + 1 < width; ++j) {
            t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return t;
}

std::vector<GeneSet> read_gene_sets(std::istream& in, PathwayFormat format) {
    std::vector<std::vector<std::string>> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (skip_line(line)) continue;
        lines.push_back(split_fields(line));
    }
    if (format == PathwayFormat::automatic) {
        const bool pairs = std::all_of(lines.begin(), lines.end(), [](const auto& f) { return f.size() == 2; });
        format = pairs && !lines.empty() ? PathwayFormat::two_column : PathwayFormat::gmt;
    }

    std::vector<GeneSet> sets;
    if (format == PathwayFormat::gmt) {
        for (const auto& f : lines) {
            if (f.empty() || f[0].empty()) continue;
            GeneSet s;
            s.id = f[0];
            if (f.size() > 1) s.description = f[1];
            for (size_t j = 2; j < f.size(); ++j) {
                if (!f[j].empty()) s.genes.push_back(f[j]);
            }
            sets.push_back(std::move(s));
        }
    } else {
        std::unordered_map<std::string, size_t> index;
        for (size_t i = 0; i < lines.size(); ++i) {
            const auto& f = lines[i];
            if (f.size() != 2) throw InputError("pathway line " + std::to_string(i + 1) + " is not a (pathway, gene) pair");
            // Tolerate a header naming the columns.
            if (i == 0 && (f[0] == "pathway" || f[0] == "pathway_id") && (f[1] == "gene" || f[1] == "gene_id")) continue;
            auto [it, inserted] = index.try_emplace(f[0], sets.size());
            if (inserted) sets.push_back(GeneSet{f[0], {}, {}});
            sets[it->second].genes.push_back(f[1]);
        }
    }
    check_unique([&] {
        std::vector<std::string> ids;
        for (const auto& s : sets) ids.push_back(s.id);
        return ids;
    }(), "pathway");
    return sets;
}

std::map<std::string, double> read_sample_values(std::istream& in, const std::string& what) {
    std::map<std::string, double> out;
    std::string line;
    int lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (skip_line(line)) continue;
        const auto f = split_fields(line);
        if (f.size() != 2) {
            throw InputError(what + " line " + std::to_string(lineno) + " must have two fields (sample, value)");
        }
        const auto v = parse_number(f[1]);
        if (!v) {
            if (first) {
                first = false;
                continue;
            }
            throw InputError(what + " line " + std::to_string(lineno) + ": '" + f[1] + "' is not numeric");
        }
        first = false;
        if (!out.emplace(f[0], *v).second) throw InputError("duplicate sample '" + f[0] + "' in " + what + " file");
    }
    if (out.empty()) throw InputError(what + " file has no values");
    return out;
}

StudyInput assemble_inputs(ExpressionTable table, Orientation orientation, const std::vector<GeneSet>& sets,
                           const std::map<std::string, double>& phenotype,
                           const std::map<std::string, double>& environment, const LoadOptions& options) {
    for (const auto& [id, v] : phenotype) {
        if (std::isnan(v)) throw InputError("phenotype value missing for sample '" + id + "'");
        if (!std::isfinite(v)) throw InputError("phenotype value not finite for sample '" + id + "'");
    }
    for (const auto& [id, v] : environment) {
        if (std::isnan(v)) throw InputError("environment value missing for sample '" + id + "'");
        if (!std::isfinite(v)) throw InputError("environment value not finite for sample '" + id + "'");
    }

    if (orientation == Orientation::automatic) {
        auto hits = [&](const std::vector<std::string>& ids) {
            return std::count_if(ids.begin(), ids.end(), [&](const auto& id) { return phenotype.count(id) > 0; });
        };
        const auto by_col = hits(table.column_ids);
        const auto by_row = hits(table.row_ids);
        if (by_col == 0 && by_row == 0) {
            throw InputError("expression identifiers match no phenotype sample in either orientation");
        }
        orientation = by_col >= by_row ? Orientation::genes_by_samples : Orientation::samples_by_genes;
    }
    if (orientation == Orientation::samples_by_genes) {
        std::swap(table.row_ids, table.column_ids);
        table.values.transposeInPlace();
    }
    check_unique(table.row_ids, "gene");
    check_unique(table.column_ids, "sample");

    // Every sample must appear in all three files.
    std::set<std::string> expr(table.column_ids.begin(), table.column_ids.end());
    std::vector<std::string> offenders;
    std::set<std::string> all = expr;
    for (const auto& [id, v] : phenotype) all.insert(id);
    for (const auto& [id, v] : environment) all.insert(id);
    for (const auto& id : all) {
        std::string missing;
        if (!expr.count(id)) missing += " expression";
        if (!phenotype.count(id)) missing += " phenotype";
        if (!environment.count(id)) missing += " environment";
        if (!missing.empty()) offenders.push_back(id + " (absent from" + missing + ")");
    }
    if (!offenders.empty()) throw InputError("samples not aligned across input files: " + list_some(offenders));

    StudyInput input;
    input.samples.assign(all.begin(), all.end());  // std::set keeps them sorted
    const int n = input.n();
    std::unordered_map<std::string, int> col_of;
    for (size_t j = 0; j < table.column_ids.size(); ++j) col_of[table.column_ids[j]] = static_cast<int>(j);

    input.genes = table.row_ids;
    input.expression.resize(static_cast<Eigen::Index>(input.genes.size()), n);
    input.y.resize(n);
    input.x.resize(n);
    for (int s = 0; s < n; ++s) {
        const std::string& id = input.samples[static_cast<size_t>(s)];
        input.expression.col(s) = table.values.col(col_of.at(id));
        input.y(s) = phenotype.at(id);
        input.x(s) = environment.at(id);
    }

    std::unordered_map<std::string, int> row_of;
    for (size_t g = 0; g < input.genes.size(); ++g) row_of[input.genes[g]] = static_cast<int>(g);
    std::vector<bool> gene_checked(input.genes.size(), false);
    for (const auto& set : sets) {
        Pathway p;
        p.id = set.id;
        p.description = set.description;
        std::set<std::string> seen;
        for (const auto& gene : set.genes) {
            if (!seen.insert(gene).second) continue;
            const auto it = row_of.find(gene);
            if (it == row_of.end()) {
                ++p.dropped;
                continue;
            }
            p.genes.push_back(gene);
            p.rows.push_back(it->second);
        }
        if (p.dropped > 0) {
            std::ostringstream msg;
            msg << "pathway " << p.id << ": " << p.dropped << " gene(s) absent from the expression matrix dropped";
            input.warnings.push_back(msg.str());
        }
        if (static_cast<int>(p.genes.size()) < options.min_genes) {
            std::ostringstream reason;
            reason << p.genes.size() << " gene(s) resolved, at least " << options.min_genes << " required";
            input.skipped.push_back(SkippedPathway{p.id, reason.str()});
            continue;
        }
        for (int r : p.rows) {
            if (gene_checked[static_cast<size_t>(r)]) continue;
            gene_checked[static_cast<size_t>(r)] = true;
            for (int s = 0; s < n; ++s) {
                if (!std::isfinite(input.expression(r, s))) {
                    throw InputError("expression value missing for gene '" + input.genes[static_cast<size_t>(r)] +
                                     "', sample '" + input.samples[static_cast<size_t>(s)] + "'");
                }
            }
        }
        input.pathways.push_back(std::move(p));
    }
    for (const auto& w : input.warnings) log::warn(w);
    for (const auto& s : input.skipped) log::warn("pathway " + s.id + " skipped: " + s.reason);
    return input;
}

StudyInput load_inputs(const InputPaths& paths, const LoadOptions& options) {
    auto ex = open_file(paths.expression, "expression");
    auto pw = open_file(paths.pathways, "pathway");
    auto ph = open_file(paths.phenotype, "phenotype");
    auto en = open_file(paths.environment, "environment");
    ExpressionTable table = read_expression(ex);
    PathwayFormat format = options.pathway_format;
    if (format == PathwayFormat::automatic && has_extension(paths.pathways, ".gmt")) format = PathwayFormat::gmt;
    const auto sets = read_gene_sets(pw, format);
    const auto phenotype = read_sample_values(ph, "phenotype");
    const auto environment = read_sample_values(en, "environment");
    return assemble_inputs(std::move(table), options.orientation, sets, phenotype, environment, options);
}

void write_expression(std::ostream& out, const std::vector<std::string>& genes,
                      const std::vector<std::string>& samples, const Eigen::MatrixXd& values) {
    require(values.rows() == static_cast<Eigen::Index>(genes.size()) &&
                values.cols() == static_cast<Eigen::Index>(samples.size()),
            "write_expression: dimensions do not match the identifiers");
    const auto old = out.precision(17);
    out << "gene";
    for (const auto& s : samples) out << '\t' << s;
    out << '\n';
    for (size_t g = 0; g < genes.size(); ++g) {
        out << genes[g];
        for (Eigen::Index s = 0; s < values.cols(); ++s) out << '\t' << values(static_cast<Eigen::Index>(g), s);
        out << '\n';
    }
    out.precision(old);
}

void write_gene_sets(std::ostream& out, const std::vector<GeneSet>& sets) {
    for (const auto& s : sets) {
        out << s.id << '\t' << (s.description.empty() ? "na" : s.description);
        for (const auto& g : s.genes) out << '\t' << g;
        out << '\n';
    }
}

void write_sample_values(std::ostream& out, const std::string& header, const std::vector<std::string>& samples,
                         const Eigen::VectorXd& values) {
    require(values.size() == static_cast<Eigen::Index>(samples.size()), "write_sample_values: size mismatch");
    const auto old = out.precision(17);
    out << "sample\t" << header << '\n';
    for (size_t i = 0; i < samples.size(); ++i) out << samples[i] << '\t' << values(static_cast<Eigen::Index>(i)) << '\n';
    out.precision(old);
}

}  // namespace pathenv
