#include "rumkit/plots.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rumkit/error.hpp"
#include "rumkit/io.hpp"
#include "rumkit/scores.hpp"

namespace rumkit {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 170.0;  // legend column
constexpr double kTop = 40.0;
constexpr double kBottom = 56.0;

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
    // fixed 3 decimals keeps the SVG stable and readable
    if (!std::isfinite(v)) return "0";
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << (std::abs(v) < 5e-4 ? 0.0 : v);
    return os.str();
}

std::string escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
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

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

struct Frame {
    double x0, x1, y0, y1;  // data ranges
    double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void open_svg(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << fmt(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
       << "</text>\n";
}

void y_axis(std::ostringstream& os, const Frame& f, const std::string& label) {
    const double xa = kLeft;
    os << "<line x1=\"" << fmt(xa) << "\" y1=\"" << fmt(f.py(f.y0)) << "\" x2=\"" << fmt(xa) << "\" y2=\""
       << fmt(f.py(f.y1)) << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double v = f.y0 + (f.y1 - f.y0) * i / 5.0;
        os << "<line x1=\"" << fmt(xa - 4) << "\" y1=\"" << fmt(f.py(v)) << "\" x2=\"" << fmt(kWidth - kRight)
           << "\" y2=\"" << fmt(f.py(v)) << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << fmt(xa - 7) << "\" y=\"" << fmt(f.py(v) + 4) << "\" text-anchor=\"end\">" << fmt(v)
           << "</text>\n";
    }
    os << "<text transform=\"translate(16," << fmt((kTop + kHeight - kBottom) / 2)
       << ") rotate(-90)\" text-anchor=\"middle\">" << escape(label) << "</text>\n";
}

void legend(std::ostringstream& os, const std::vector<std::string>& names, const std::vector<std::string>& colors) {
    const double x = kWidth - kRight + 16;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const double y = kTop + 10 + 20.0 * static_cast<double>(i);
        os << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y - 9) << "\" width=\"12\" height=\"12\" fill=\"" << colors[i]
           << "\"/>\n";
        os << "<text x=\"" << fmt(x + 18) << "\" y=\"" << fmt(y + 1) << "\">" << escape(names[i]) << "</text>\n";
    }
}

std::string file_safe(std::string s) {
    for (char& c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                        c == '_' || c == '.';
        if (!ok) c = '_';
    }
    return s;
}

std::string color(std::size_t i) { return kPalette[i % (sizeof kPalette / sizeof kPalette[0])]; }

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& svg_path) {
    std::filesystem::path p = svg_path;
    return p.replace_extension(".csv");
}

BarChart bar_chart_from_rows(const std::vector<AggregateRow>& rows, const std::string& metric,
                             const std::vector<std::string>& partitions, const std::vector<std::string>& variants) {
    BarChart chart;
    chart.y_label = metric;
    chart.groups = partitions;
    for (const auto& v : variants) {
        BarSeries s{v, {}, {}};
        for (const auto& p : partitions) {
            const AggregateRow* row = find_row(rows, p, v, metric);
            s.mean.push_back(row ? row->stats.mean : std::numeric_limits<double>::quiet_NaN());
            s.half_width.push_back(row ? row->stats.half_width : std::nullopt);
        }
        chart.series.push_back(std::move(s));
    }
    return chart;
}

void write_bar_chart(const BarChart& chart, const std::filesystem::path& svg_path) {
    if (chart.groups.empty() || chart.series.empty()) throw InvalidArgument("bar chart needs groups and series");
    for (const auto& s : chart.series) {
        if (s.mean.size() != chart.groups.size() || s.half_width.size() != chart.groups.size()) {
            throw InvalidArgument("bar series '" + s.name + "' does not match the group count");
        }
    }
    double lo = 0.0, hi = 0.0;
    for (const auto& s : chart.series) {
        for (std::size_t g = 0; g < s.mean.size(); ++g) {
            if (!std::isfinite(s.mean[g])) continue;
            const double h = s.half_width[g].value_or(0.0);
            lo = std::min(lo, s.mean[g] - h);
            hi = std::max(hi, s.mean[g] + h);
        }
    }
    if (hi <= lo) hi = lo + 1.0;
    const Frame f{0.0, static_cast<double>(chart.groups.size()), lo, hi * 1.05};

    std::ostringstream os;
    open_svg(os, chart.title);
    y_axis(os, f, chart.y_label);
    const double group_w = f.px(1.0) - f.px(0.0);
    const double bar_w = group_w * 0.8 / static_cast<double>(chart.series.size());
    std::vector<std::string> names, colors;
    for (std::size_t si = 0; si < chart.series.size(); ++si) {
        const auto& s = chart.series[si];
        names.push_back(s.name);
        colors.push_back(color(si));
        for (std::size_t g = 0; g < chart.groups.size(); ++g) {
            if (!std::isfinite(s.mean[g])) continue;
            const double x = f.px(static_cast<double>(g)) + group_w * 0.1 + bar_w * static_cast<double>(si);
            const double top = f.py(std::max(s.mean[g], 0.0));
            const double base = f.py(std::min(s.mean[g], 0.0));
            os << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(bar_w * 0.92)
               << "\" height=\"" << fmt(base - top) << "\" fill=\"" << colors.back() << "\"/>\n";
            if (s.half_width[g]) {
                const double cx = x + bar_w * 0.46;
                const double y1 = f.py(s.mean[g] - *s.half_width[g]);
                const double y2 = f.py(s.mean[g] + *s.half_width[g]);
                os << "<path d=\"M" << fmt(cx) << ' ' << fmt(y1) << "V" << fmt(y2) << "M" << fmt(cx - 4) << ' '
                   << fmt(y1) << "H" << fmt(cx + 4) << "M" << fmt(cx - 4) << ' ' << fmt(y2) << "H" << fmt(cx + 4)
                   << "\" stroke=\"black\" fill=\"none\"/>\n";
            }
        }
    }
    for (std::size_t g = 0; g < chart.groups.size(); ++g) {
        os << "<text x=\"" << fmt(f.px(static_cast<double>(g) + 0.5)) << "\" y=\"" << fmt(kHeight - kBottom + 18)
           << "\" text-anchor=\"middle\">" << escape(chart.groups[g]) << "</text>\n";
    }
    legend(os, names, colors);
    os << "</svg>\n";

    std::ostringstream csv;
    csv << "group,series,mean,ci95_half_width\n";
    for (std::size_t g = 0; g < chart.groups.size(); ++g) {
        for (const auto& s : chart.series) {
            csv << csv_field(chart.groups[g]) << ',' << csv_field(s.name) << ',' << format_number(s.mean[g]) << ','
                << (s.half_width[g] ? format_number(*s.half_width[g]) : "") << '\n';
        }
    }
    write_file_atomic(svg_path, os.str());
    write_file_atomic(sidecar_path(svg_path), csv.str());
}

void write_step_chart(const SequenceTrace& trace, const std::string& title, const std::filesystem::path& svg_path) {
    if (trace.steps.empty()) throw InvalidArgument("step chart needs at least one step");
    const std::size_t k = trace.steps.front().subset_accuracy.size();
    std::vector<std::string> names{"S", "R", "test"};
    for (std::size_t b = 0; b < k; ++b) names.push_back("S" + std::to_string(b + 1));
    std::vector<std::vector<double>> lines(names.size());
    for (const auto& s : trace.steps) {
        if (s.subset_accuracy.size() != k) throw InvalidArgument("trace steps disagree on the subset count");
        lines[0].push_back(s.overall.forget);
        lines[1].push_back(s.overall.retain);
        lines[2].push_back(s.overall.test);
        for (std::size_t b = 0; b < k; ++b) lines[3 + b].push_back(s.subset_accuracy[b]);
    }
    const double n = static_cast<double>(trace.steps.size());
    const Frame f{0.5, n + 0.5, 0.0, 1.0};

    std::ostringstream os;
    open_svg(os, title);
    y_axis(os, f, "accuracy");
    std::vector<std::string> colors;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        colors.push_back(color(li));
        const char* dash = li < 3 ? "" : " stroke-dasharray=\"5 3\"";
        os << "<polyline fill=\"none\" stroke=\"" << colors.back() << "\" stroke-width=\"2\"" << dash << " points=\"";
        for (std::size_t i = 0; i < lines[li].size(); ++i) {
            if (i) os << ' ';
            os << fmt(f.px(static_cast<double>(i + 1))) << ',' << fmt(f.py(lines[li][i]));
        }
        os << "\"/>\n";
        for (std::size_t i = 0; i < lines[li].size(); ++i) {
            os << "<circle cx=\"" << fmt(f.px(static_cast<double>(i + 1))) << "\" cy=\"" << fmt(f.py(lines[li][i]))
               << "\" r=\"3\" fill=\"" << colors.back() << "\"/>\n";
        }
    }
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const auto& s = trace.steps[i];
        os << "<text x=\"" << fmt(f.px(static_cast<double>(i + 1))) << "\" y=\"" << fmt(kHeight - kBottom + 18)
           << "\" text-anchor=\"middle\">" << (i + 1) << ": " << escape(to_string(s.algorithm)) << " S"
           << (s.bucket + 1) << "</text>\n";
    }
    legend(os, names, colors);
    os << "</svg>\n";

    std::ostringstream csv;
    csv << "step,bucket,algorithm";
    for (const auto& name : names) csv << ',' << name;
    csv << '\n';
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        csv << (i + 1) << ',' << trace.steps[i].bucket << ',' << to_string(trace.steps[i].algorithm);
        for (const auto& line : lines) csv << ',' << format_number(line[i]);
        csv << '\n';
    }
    write_file_atomic(svg_path, os.str());
    write_file_atomic(sidecar_path(svg_path), csv.str());
}

void write_embedding_scatter(const EmbeddingMatrix& embeddings, const IdSet& forget_ids, const std::string& title,
                             const std::filesystem::path& svg_path) {
    const Projection2d proj = project_2d(embeddings.rows);
    const Eigen::MatrixXd& xy = proj.coordinates;
    const Eigen::Index n = xy.rows();
    double x0 = xy.col(0).minCoeff(), x1 = xy.col(0).maxCoeff();
    double y0 = xy.col(1).minCoeff(), y1 = xy.col(1).maxCoeff();
    if (x1 <= x0) x1 = x0 + 1.0;
    if (y1 <= y0) y1 = y0 + 1.0;
    const double padx = 0.05 * (x1 - x0), pady = 0.05 * (y1 - y0);
    const Frame f{x0 - padx, x1 + padx, y0 - pady, y1 + pady};

    Eigen::Vector2d cf = Eigen::Vector2d::Zero(), cr = Eigen::Vector2d::Zero();
    std::size_t nf = 0, nr = 0;
    std::vector<bool> is_forget(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool forget = forget_ids.contains(embeddings.ids[static_cast<std::size_t>(i)]);
        is_forget[static_cast<std::size_t>(i)] = forget;
        if (forget) {
            cf += xy.row(i).transpose();
            ++nf;
        } else {
            cr += xy.row(i).transpose();
            ++nr;
        }
    }
    if (nf) cf /= static_cast<double>(nf);
    if (nr) cr /= static_cast<double>(nr);

    std::ostringstream os;
    open_svg(os, title);
    // retain first so the forget points sit on top
    for (const bool pass : {false, true}) {
        const char* fill = pass ? "#f2c200" : "#3b6fd1";
        for (Eigen::Index i = 0; i < n; ++i) {
            if (is_forget[static_cast<std::size_t>(i)] != pass) continue;
            os << "<circle cx=\"" << fmt(f.px(xy(i, 0))) << "\" cy=\"" << fmt(f.py(xy(i, 1))) << "\" r=\"2.5\" fill=\""
               << fill << "\" fill-opacity=\"0.8\"/>\n";
        }
    }
    const auto cross = [&](const Eigen::Vector2d& c, const char* stroke) {
        const double cx = f.px(c[0]), cy = f.py(c[1]);
        os << "<path d=\"M" << fmt(cx - 7) << ' ' << fmt(cy - 7) << "L" << fmt(cx + 7) << ' ' << fmt(cy + 7) << "M"
           << fmt(cx - 7) << ' ' << fmt(cy + 7) << "L" << fmt(cx + 7) << ' ' << fmt(cy - 7) << "\" stroke=\"" << stroke
           << "\" stroke-width=\"3\"/>\n";
    };
    if (nr) cross(cr, "#1a3d80");
    if (nf) cross(cf, "#a07800");
    legend(os, {"forget", "retain"}, {"#f2c200", "#3b6fd1"});
    os << "</svg>\n";

    std::ostringstream csv;
    csv << "id,set,x,y\n";
    for (Eigen::Index i = 0; i < n; ++i) {
        csv << embeddings.ids[static_cast<std::size_t>(i)] << ',' << (is_forget[static_cast<std::size_t>(i)] ? "forget" : "retain")
            << ',' << format_number(xy(i, 0)) << ',' << format_number(xy(i, 1)) << '\n';
    }
    if (nf) csv << "centroid,forget," << format_number(cf[0]) << ',' << format_number(cf[1]) << '\n';
    if (nr) csv << "centroid,retain," << format_number(cr[0]) << ',' << format_number(cr[1]) << '\n';
    write_file_atomic(svg_path, os.str());
    write_file_atomic(sidecar_path(svg_path), csv.str());
}

std::vector<AggregateRow> write_report(const std::vector<RunRecord>& records, const std::vector<std::string>& metrics,
                                       const std::filesystem::path& dir) {
    if (records.empty()) throw InvalidArgument("no run records to report");
    const auto rows = aggregate(records, metrics);
    write_aggregate(rows, dir);

    const auto push_unique = [](std::vector<std::string>& v, const std::string& x) {
        if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
    };
    std::vector<std::string> scenarios;
    for (const auto& r : records) push_unique(scenarios, r.scenario);
    for (const auto& scenario : scenarios) {
        std::vector<std::string> partitions, variants;
        std::vector<AggregateRow> mine;
        for (const auto& r : records) {
            if (r.scenario != scenario) continue;
            for (const auto& c : r.cells) {
                push_unique(partitions, c.partition);
                push_unique(variants, c.variant);
            }
        }
        for (const auto& row : rows) {
            if (row.scenario == scenario) mine.push_back(row);
        }
        for (const auto& metric : metrics) {
            BarChart chart = bar_chart_from_rows(mine, metric, partitions, variants);
            chart.title = scenario + ": " + metric + " (mean, 95% CI)";
            write_bar_chart(chart, dir / file_safe(scenario + "-" + metric + ".svg"));
        }
    }

    // step charts from the lowest seed that has each traced cell
    std::vector<const RunRecord*> by_seed;
    for (const auto& r : records) by_seed.push_back(&r);
    std::stable_sort(by_seed.begin(), by_seed.end(), [](const RunRecord* a, const RunRecord* b) { return a->seed < b->seed; });
    std::vector<std::string> done;
    for (const RunRecord* r : by_seed) {
        for (const auto& c : r->cells) {
            if (!c.trace || c.trace->steps.empty()) continue;
            const std::string key = r->scenario + "-steps-" + c.partition + "-" + c.variant;
            if (std::find(done.begin(), done.end(), key) != done.end()) continue;
            done.push_back(key);
            write_step_chart(*c.trace, c.variant + " on " + c.partition + " (seed " + std::to_string(r->seed) + ")",
                             dir / file_safe(key + ".svg"));
        }
    }
    return rows;
}

}  // namespace rumkit
