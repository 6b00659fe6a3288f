#include "pathenv/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include "pathenv/log.hpp"

namespace pathenv {

namespace {

std::string cell(const std::optional<double>& v) { return v ? format_value(*v) : "-"; }

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string quote_field(const std::string& s, char sep) {
    if (s.find(sep) == std::string::npos && s.find('"') == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string fmt(double v, int digits = 3) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

}  // namespace

std::string format_value(double v) {
    if (!std::isfinite(v)) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::vector<PathwayResult> rank_results(std::vector<PathwayResult> results) {
    auto key = [](const std::optional<double>& v) {
        return v && std::isfinite(*v) ? *v : std::numeric_limits<double>::infinity();
    };
    std::stable_sort(results.begin(), results.end(), [&](const PathwayResult& a, const PathwayResult& b) {
        const double pa = key(a.p_D), pb = key(b.p_D);
        if (pa != pb) return pa < pb;
        const double da = a.D && std::isfinite(*a.D) ? *a.D : -std::numeric_limits<double>::infinity();
        const double db = b.D && std::isfinite(*b.D) ? *b.D : -std::numeric_limits<double>::infinity();
        if (da != db) return da > db;
        return a.id < b.id;
    });
    return results;
}

const std::vector<std::string>& result_columns() {
    static const std::vector<std::string> cols = {
        "rank",  "pathway", "genes",    "beta0", "beta1", "sigma2",   "sigma2_se", "tau_x",   "tau_x_se",
        "tau_z", "tau_z_se", "tau_xz",  "tau_xz_se", "rho", "D",      "p_D",       "p_D_perm", "d",
        "p_d",   "p_d_perm", "U",       "p_score", "converged", "status"};
    return cols;
}

void write_results(const std::vector<PathwayResult>& ranked, std::ostream& out, char sep) {
    const auto& cols = result_columns();
    for (size_t i = 0; i < cols.size(); ++i) out << (i ? std::string(1, sep) : "") << cols[i];
    out << '\n';
    int rank = 0;
    for (const auto& r : ranked) {
        ++rank;
        const std::vector<std::string> row = {std::to_string(rank),
                                              quote_field(r.id, sep),
                                              std::to_string(r.genes),
                                              format_value(r.beta0),
                                              format_value(r.beta1),
                                              format_value(r.sigma2.value),
                                              format_value(r.sigma2.se),
                                              format_value(r.tau_x.value),
                                              format_value(r.tau_x.se),
                                              format_value(r.tau_z.value),
                                              format_value(r.tau_z.se),
                                              format_value(r.tau_xz.value),
                                              format_value(r.tau_xz.se),
                                              format_value(r.rho),
                                              cell(r.D),
                                              cell(r.p_D),
                                              cell(r.p_D_perm),
                                              cell(r.d),
                                              cell(r.p_d),
                                              cell(r.p_d_perm),
                                              cell(r.U),
                                              cell(r.p_score),
                                              r.converged ? "yes" : "no",
                                              quote_field(r.status, sep)};
        for (size_t i = 0; i < row.size(); ++i) out << (i ? std::string(1, sep) : "") << row[i];
        out << '\n';
    }
}

void write_variance_figure(const std::vector<PathwayResult>& ranked, std::ostream& out) {
    const double width = 820, panel = 150, left = 70, right = 20, top = 30, gap = 40;
    const char* titles[] = {"sigma2", "tau_x", "tau_z", "tau_xz"};
    const double height = top + 4 * (panel + gap);
    const double n = std::max<double>(1.0, static_cast<double>(ranked.size()));
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
        << "Estimated variance components by rank of the overall test</text>\n";
    for (int k = 0; k < 4; ++k) {
        std::vector<double> v;
        for (const auto& r : ranked) {
            const Estimate* e[] = {&r.sigma2, &r.tau_x, &r.tau_z, &r.tau_xz};
            v.push_back(e[k]->value);
        }
        double vmax = 0.0;
        for (double x : v) {
            if (std::isfinite(x)) vmax = std::max(vmax, x);
        }
        if (!(vmax > 0.0)) vmax = 1.0;
        const double y0 = top + k * (panel + gap) + gap / 2;
        const double plot_w = width - left - right;
        out << "<g>\n<text x=\"10\" y=\"" << y0 + panel / 2 << "\">" << titles[k] << "</text>\n";
        out << "<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << plot_w << "\" height=\"" << panel
            << "\" fill=\"none\" stroke=\"#444\"/>\n";
        out << "<text x=\"" << left - 4 << "\" y=\"" << y0 + 10 << "\" text-anchor=\"end\">" << fmt(vmax)
            << "</text>\n";
        out << "<text x=\"" << left - 4 << "\" y=\"" << y0 + panel << "\" text-anchor=\"end\">0</text>\n";
        std::string path;
        for (size_t i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v[i])) continue;
            const double px = left + plot_w * (static_cast<double>(i) + 0.5) / n;
            const double py = y0 + panel * (1.0 - std::clamp(v[i] / vmax, 0.0, 1.0));
            path += (path.empty() ? "M" : " L") + fmt(px, 6) + " " + fmt(py, 6);
            out << "<circle cx=\"" << fmt(px, 6) << "\" cy=\"" << fmt(py, 6) << "\" r=\"2\" fill=\"#1f5fa8\"/>\n";
        }
        if (!path.empty()) out << "<path d=\"" << path << "\" fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"0.8\"/>\n";
        out << "</g>\n";
    }
    out << "<text x=\"" << width / 2 << "\" y=\"" << height - 6 << "\" text-anchor=\"middle\">rank (1 = smallest p_D, "
        << ranked.size() << " pathways)</text>\n";
    out << "</svg>\n";
}

void write_pvalue_figure(const std::vector<PathwayResult>& ranked, std::ostream& out, double alpha) {
    const double size = 520, margin = 60, plot = size - 2 * margin;
    auto sx = [&](double p) { return margin + plot * std::clamp(p, 0.0, 1.0); };
    auto sy = [&](double p) { return size - margin - plot * std::clamp(p, 0.0, 1.0); };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << plot << "\" height=\"" << plot
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    out << "<line x1=\"" << sx(alpha) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(alpha) << "\" y2=\"" << sy(1)
        << "\" stroke=\"#c0392b\" stroke-dasharray=\"4 3\"/>\n";
    out << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(alpha) << "\" x2=\"" << sx(1) << "\" y2=\"" << sy(alpha)
        << "\" stroke=\"#c0392b\" stroke-dasharray=\"4 3\"/>\n";
    int shown = 0;
    for (const auto& r : ranked) {
        if (!r.p_D || !r.p_d || !std::isfinite(*r.p_D) || !std::isfinite(*r.p_d)) continue;
        ++shown;
        out << "<circle cx=\"" << fmt(sx(*r.p_D), 6) << "\" cy=\"" << fmt(sy(*r.p_d), 6)
            << "\" r=\"3\" fill=\"#1f5fa8\" fill-opacity=\"0.7\"><title>" << escape_xml(r.id) << "</title></circle>\n";
    }
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        out << "<text x=\"" << sx(t) << "\" y=\"" << size - margin + 16 << "\" text-anchor=\"middle\">" << fmt(t)
            << "</text>\n";
        out << "<text x=\"" << margin - 6 << "\" y=\"" << sy(t) + 4 << "\" text-anchor=\"end\">" << fmt(t)
            << "</text>\n";
    }
    out << "<text x=\"" << size / 2 << "\" y=\"" << size - 16 << "\" text-anchor=\"middle\">p-value, overall effect (D)</text>\n";
    out << "<text x=\"16\" y=\"" << size / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << size / 2
        << ")\">p-value, interaction (d)</text>\n";
    out << "<text x=\"" << size / 2 << "\" y=\"30\" text-anchor=\"middle\" font-size=\"13\">Overall against interaction p-values ("
        << shown << " pathways, lines at " << fmt(alpha) << ")</text>\n";
    out << "</svg>\n";
}

ReportFiles rank_report(const std::vector<PathwayResult>& results, const std::string& out_dir, char sep,
                        double alpha) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto ranked = rank_results(results);
    ReportFiles files;
    files.table = (fs::path(out_dir) / (sep == ',' ? "results.csv" : "results.tsv")).string();
    {
        std::ofstream out(files.table);
        if (!out) throw std::runtime_error("cannot write " + files.table);
        write_results(ranked, out, sep);
    }
    auto figure = [&](const char* name, auto&& writer) -> std::string {
        const std::string path = (fs::path(out_dir) / name).string();
        try {
            std::ofstream out(path);
            if (!out) throw std::runtime_error("cannot open for writing");
            writer(out);
            return path;
        } catch (const std::exception& e) {
            log::warn(std::string("figure ") + name + " not written: " + e.what());
            return {};
        }
    };
    files.variance_figure = figure("fig_variance_components.svg", [&](std::ostream& o) { write_variance_figure(ranked, o); });
    files.pvalue_figure = figure("fig_pvalues.svg", [&](std::ostream& o) { write_pvalue_figure(ranked, o, alpha); });
    return files;
}

}  // namespace pathenv
