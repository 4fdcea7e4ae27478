#include "ctqa/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ctqa/csv.hpp"
#include "ctqa/errors.hpp"

namespace ctqa {

namespace {

std::string pct_one_decimal(const std::optional<double>& ratio) {
    return ratio ? fmt_fixed(100.0 * *ratio, 1) : std::string("n/a");
}

std::string ratio_full(const std::optional<double>& ratio) {
    return ratio ? fmt_sig(*ratio, 17) : std::string();
}

std::string svg_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Fig. 2 three-way coding: red at 0, green at 1, yellow between.
const char* cell_color(int detected, int total) {
    if (total <= 0 || detected <= 0) return "#d9534f";
    if (detected >= total) return "#5cb85c";
    return "#f0ad4e";
}

constexpr const char* kAbsentColor = "#cccccc";

const char* condition_color(const std::string& id, std::size_t index) {
    if (id == "baseline") return "#222222";
    if (id == "dose_25") return "#7fb3d5";
    if (id == "dose_50") return "#2471a3";
    if (id == "thick_3mm") return "#e67e22";
    if (id == "thick_5mm") return "#c0392b";
    static const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"};
    return kPalette[index % 5];
}

struct WorstDelta {
    std::string condition_id;
    double pp = 0.0;
    std::optional<double> relative;
};

// Worst non-baseline condition by pp delta; nullopt when the report has a
// single condition or no baseline to compare against.
std::optional<WorstDelta> worst_delta(const SensitivityReport& report) {
    if (report.by_condition.size() < 2) return std::nullopt;
    bool has_baseline = false;
    for (const auto& c : report.by_condition)
        if (c.condition_id == "baseline") has_baseline = true;
    if (!has_baseline) return std::nullopt;

    const auto deltas = condition_deltas(report);
    std::optional<WorstDelta> worst;
    for (const auto& d : deltas) {
        if (d.condition_id == "baseline") continue;
        if (!worst || d.pp_delta < worst->pp)
            worst = WorstDelta{d.condition_id, d.pp_delta, d.relative_change};
    }
    return worst;
}

} // namespace

std::string render_condition_table(const SensitivityReport& report) {
    std::size_t name_width = std::string("Imaging Condition").size();
    for (const auto& c : report.by_condition) name_width = std::max(name_width, c.condition_id.size());

    std::ostringstream os;
    auto row = [&](const std::string& a, const std::string& b, const std::string& c,
                   const std::string& d) {
        os << a;
        os << std::string(name_width - a.size(), ' ');
        os << " | ";
        os << std::string(8 - std::min<std::size_t>(8, b.size()), ' ') << b << " | ";
        os << std::string(13 - std::min<std::size_t>(13, c.size()), ' ') << c << " | ";
        os << std::string(15 - std::min<std::size_t>(15, d.size()), ' ') << d << '\n';
    };
    row("Imaging Condition", "Detected", "Total Nodules", "Sensitivity (%)");
    os << std::string(name_width, '-') << "-+-" << std::string(8, '-') << "-+-"
       << std::string(13, '-') << "-+-" << std::string(15, '-') << '\n';
    for (const auto& c : report.by_condition)
        row(c.condition_id, std::to_string(c.detected), std::to_string(c.total),
            pct_one_decimal(c.sensitivity));

    if (const auto worst = worst_delta(report)) {
        const long pp = std::lround(worst->pp);
        os << "Worst condition " << worst->condition_id << ": " << pp << " pp from baseline";
        if (worst->relative) os << " (" << std::lround(100.0 * *worst->relative) << "% relative)";
        os << ".\n";
    }
    return os.str();
}

std::string condition_table_csv(const SensitivityReport& report) {
    std::ostringstream os;
    os << "condition_id,detected,total,sensitivity\n";
    for (const auto& c : report.by_condition)
        os << c.condition_id << ',' << c.detected << ',' << c.total << ','
           << ratio_full(c.sensitivity) << '\n';
    return os.str();
}

std::string per_case_matrix_csv(const SensitivityReport& report) {
    std::ostringstream os;
    os << "case_id,condition_id,detected,total,status\n";
    for (std::size_t ki = 0; ki < report.case_ids.size(); ++ki)
        for (std::size_t ci = 0; ci < report.condition_ids.size(); ++ci) {
            const auto& cell = report.cells[ki][ci];
            os << report.case_ids[ki] << ',' << report.condition_ids[ci] << ',';
            if (cell)
                os << cell->detected << ',' << cell->total << ",ok\n";
            else
                os << ",,absent\n";
        }
    for (std::size_t ci = 0; ci < report.condition_ids.size(); ++ci) {
        const auto& c = report.by_condition[ci];
        os << "aggregate," << c.condition_id << ',' << c.detected << ',' << c.total << ",ok\n";
    }
    return os.str();
}

std::string threshold_sweep_csv(const SensitivityReport& report) {
    std::ostringstream os;
    os << "condition_id,threshold,detected,total,sensitivity\n";
    for (std::size_t ci = 0; ci < report.condition_ids.size(); ++ci)
        for (const auto& pt : report.sweep[ci])
            os << report.condition_ids[ci] << ',' << fmt_sig(pt.threshold) << ',' << pt.detected
               << ',' << pt.total << ',' << ratio_full(pt.sensitivity) << '\n';
    return os.str();
}

std::string deltas_csv(const SensitivityReport& report) {
    std::ostringstream os;
    os << "condition_id,pp_delta,relative_change_pct\n";
    for (const auto& d : condition_deltas(report)) {
        os << d.condition_id << ',' << fmt_fixed(d.pp_delta, 1) << ',';
        if (d.relative_change) os << fmt_fixed(100.0 * *d.relative_change, 1);
        os << '\n';
    }
    return os.str();
}

std::string case_matrix_svg(const SensitivityReport& report) {
    if (report.case_ids.empty() || report.condition_ids.empty())
        throw usage_error("case matrix SVG requires a non-empty matrix");

    constexpr int kCellW = 84, kCellH = 26, kHeaderH = 30, kPad = 8;
    std::size_t label_chars = std::string("aggregate").size();
    for (const auto& id : report.case_ids) label_chars = std::max(label_chars, id.size());
    const int label_w = static_cast<int>(label_chars) * 8 + 16;

    const int cols = static_cast<int>(report.condition_ids.size());
    const int rows = static_cast<int>(report.case_ids.size()) + 1; // + aggregate footer
    const int width = label_w + cols * kCellW + 2 * kPad;
    const int height = kHeaderH + rows * kCellH + 2 * kPad;

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
       << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    os << "<g font-family=\"monospace\" font-size=\"12\">\n";

    for (int c = 0; c < cols; ++c) {
        const int x = kPad + label_w + c * kCellW + kCellW / 2;
        os << "<text x=\"" << x << "\" y=\"" << kPad + 18
           << "\" text-anchor=\"middle\">" << svg_escape(report.condition_ids[c]) << "</text>\n";
    }

    auto draw_cell = [&](int r, int c, const std::optional<CaseCell>& cell) {
        const int x = kPad + label_w + c * kCellW;
        const int y = kPad + kHeaderH + r * kCellH;
        const char* fill = cell ? cell_color(cell->detected, cell->total) : kAbsentColor;
        os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCellW << "\" height=\""
           << kCellH << "\" fill=\"" << fill << "\" stroke=\"#ffffff\"/>\n";
        const std::string text =
            cell ? std::to_string(cell->detected) + "/" + std::to_string(cell->total)
                 : std::string("n/a");
        os << "<text x=\"" << x + kCellW / 2 << "\" y=\"" << y + kCellH / 2 + 4
           << "\" text-anchor=\"middle\">" << text << "</text>\n";
    };

    for (std::size_t ki = 0; ki < report.case_ids.size(); ++ki) {
        const int y = kPad + kHeaderH + static_cast<int>(ki) * kCellH;
        os << "<text x=\"" << kPad << "\" y=\"" << y + kCellH / 2 + 4 << "\">"
           << svg_escape(report.case_ids[ki]) << "</text>\n";
        for (std::size_t ci = 0; ci < report.condition_ids.size(); ++ci)
            draw_cell(static_cast<int>(ki), static_cast<int>(ci), report.cells[ki][ci]);
    }

    const int fy = kPad + kHeaderH + static_cast<int>(report.case_ids.size()) * kCellH;
    os << "<text x=\"" << kPad << "\" y=\"" << fy + kCellH / 2 + 4 << "\">aggregate</text>\n";
    for (std::size_t ci = 0; ci < report.condition_ids.size(); ++ci) {
        const auto& c = report.by_condition[ci];
        draw_cell(static_cast<int>(report.case_ids.size()), static_cast<int>(ci),
                  CaseCell{c.detected, c.total});
    }

    os << "</g>\n</svg>\n";
    return os.str();
}

std::string sweep_svg(const SensitivityReport& report) {
    if (report.condition_ids.empty() || report.sweep_thresholds.empty())
        throw usage_error("sweep SVG requires at least one curve");

    constexpr int kWidth = 640, kHeight = 420;
    constexpr int kLeft = 64, kRight = 480, kTop = 24, kBottom = 372;
    const double t_min = report.sweep_thresholds.front();
    const double t_max = report.sweep_thresholds.back();
    const double t_span = (t_max > t_min) ? (t_max - t_min) : 1.0;

    auto x_of = [&](double t) { return kLeft + (t - t_min) / t_span * (kRight - kLeft); };
    auto y_of = [&](double s) { return kBottom - s * (kBottom - kTop); };

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth
       << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    os << "<g font-family=\"monospace\" font-size=\"12\">\n";

    // Axes and ticks.
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\"" << kRight << "\" y2=\""
       << kBottom << "\" stroke=\"#222222\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
       << kBottom << "\" stroke=\"#222222\"/>\n";
    for (double t : report.sweep_thresholds) {
        const double x = x_of(t);
        os << "<line x1=\"" << fmt_fixed(x, 2) << "\" y1=\"" << kBottom << "\" x2=\""
           << fmt_fixed(x, 2) << "\" y2=\"" << kBottom + 5 << "\" stroke=\"#222222\"/>\n";
        os << "<text x=\"" << fmt_fixed(x, 2) << "\" y=\"" << kBottom + 20
           << "\" text-anchor=\"middle\">" << fmt_sig(t) << "</text>\n";
    }
    for (int i = 0; i <= 5; ++i) {
        const double s = i / 5.0;
        const double y = y_of(s);
        os << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << fmt_fixed(y, 2) << "\" x2=\"" << kLeft
           << "\" y2=\"" << fmt_fixed(y, 2) << "\" stroke=\"#222222\"/>\n";
        os << "<text x=\"" << kLeft - 10 << "\" y=\"" << fmt_fixed(y + 4, 2)
           << "\" text-anchor=\"end\">" << fmt_sig(s) << "</text>\n";
    }
    os << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"" << kHeight - 8
       << "\" text-anchor=\"middle\">confidence threshold</text>\n";

    // Dotted guide at the headline threshold.
    if (0.5 >= t_min && 0.5 <= t_max) {
        const double gx = x_of(0.5);
        os << "<line x1=\"" << fmt_fixed(gx, 2) << "\" y1=\"" << kTop << "\" x2=\""
           << fmt_fixed(gx, 2) << "\" y2=\"" << kBottom
           << "\" stroke=\"#555555\" stroke-dasharray=\"4,3\"/>\n";
    }

    for (std::size_t ci = 0; ci < report.condition_ids.size(); ++ci) {
        const char* color = condition_color(report.condition_ids[ci], ci);
        std::ostringstream points;
        bool any = false;
        for (const auto& pt : report.sweep[ci]) {
            if (!pt.sensitivity) continue; // gap for undefined points
            if (any) points << ' ';
            points << fmt_fixed(x_of(pt.threshold), 2) << ',' << fmt_fixed(y_of(*pt.sensitivity), 2);
            any = true;
        }
        if (any)
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
               << points.str() << "\"/>\n";

        const int ly = kTop + 10 + static_cast<int>(ci) * 18;
        os << "<line x1=\"" << kRight + 12 << "\" y1=\"" << ly << "\" x2=\"" << kRight + 36
           << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << kRight + 42 << "\" y=\"" << ly + 4 << "\">"
           << svg_escape(report.condition_ids[ci]) << "</text>\n";
    }

    os << "</g>\n</svg>\n";
    return os.str();
}

} // namespace ctqa
