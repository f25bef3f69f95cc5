#include "dst/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dst/errors.hpp"
#include "dst/metrics.hpp"

namespace dst {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kMarginLeft = 70.0;
constexpr double kMarginRight = 20.0;
constexpr double kMarginTop = 30.0;
constexpr double kMarginBottom = 50.0;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

struct Svg {
    std::ostringstream body;

    void rect(double x, double y, double w, double h, const char* fill) {
        body << "  <rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
             << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\"/>\n";
    }
    void line(double x1, double y1, double x2, double y2) {
        body << "  <line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
             << "\" y2=\"" << num(y2) << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    }
    void text(double x, double y, const std::string& s, const char* anchor = "middle") {
        body << "  <text x=\"" << num(x) << "\" y=\"" << num(y)
             << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"" << anchor
             << "\">" << s << "</text>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const char* stroke) {
        body << "  <polyline fill=\"none\" stroke=\"" << stroke
             << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : pts) body << num(x) << ',' << num(y) << ' ';
        body << "\"/>\n";
    }

    void save(const std::string& path) {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot open SVG for writing: " + path);
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
           << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
           << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
           << body.str() << "</svg>\n";
        if (!os) throw IoError("write failed for SVG: " + path);
    }
};

void bar_chart(const std::string& path, const std::string& title,
               const std::vector<double>& values, double max_value,
               const std::vector<std::string>& tick_labels) {
    Svg svg;
    const double x0 = kMarginLeft;
    const double y0 = kHeight - kMarginBottom;
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;

    svg.text(kWidth / 2.0, kMarginTop - 10.0, title);
    svg.line(x0, y0, x0 + plot_w, y0);
    svg.line(x0, y0, x0, kMarginTop);
    svg.text(x0 - 8.0, kMarginTop + 4.0, num(max_value), "end");
    svg.text(x0 - 8.0, y0 + 4.0, "0", "end");

    const std::size_t n = values.size();
    const double slot = plot_w / static_cast<double>(n);
    const double bar_w = slot * 0.7;
    for (std::size_t i = 0; i < n; ++i) {
        const double h = max_value > 0.0 ? values[i] / max_value * plot_h : 0.0;
        const double x = x0 + slot * static_cast<double>(i) + (slot - bar_w) / 2.0;
        svg.rect(x, y0 - h, bar_w, h, "#4878cf");
        svg.text(x0 + slot * (static_cast<double>(i) + 0.5), y0 + 16.0, tick_labels[i]);
    }
    svg.save(path);
}

} // namespace

std::vector<std::string> emit_plots(const std::string& csv_path, const std::string& out_dir,
                                    const std::vector<std::size_t>& layer_sizes) {
    const std::vector<MetricsRecord> records = parse_metrics_csv(csv_path);
    if (records.empty()) throw ParseError(csv_path + ": no data rows", 2);
    const MetricsRecord& last = records.back();
    const std::size_t n_layers = last.layers.size();
    if (layer_sizes.size() != n_layers) {
        throw ContractError("emit_plots: " + std::to_string(layer_sizes.size()) +
                            " layer sizes for " + std::to_string(n_layers) + " CSV layers");
    }

    std::vector<std::string> written;
    std::vector<std::string> ticks(n_layers);
    for (std::size_t i = 0; i < n_layers; ++i) ticks[i] = "L" + std::to_string(i);

    {
        std::vector<double> densities(n_layers);
        for (std::size_t i = 0; i < n_layers; ++i) densities[i] = last.layers[i].density;
        const std::string path = out_dir + "/density_bars.svg";
        bar_chart(path, "Final layer density", densities, 1.0, ticks);
        written.push_back(path);
    }
    {
        // Log-scale bars: plot log10(1 + active) against the dense maximum.
        std::vector<double> logs(n_layers);
        double max_log = 0.0;
        for (std::size_t i = 0; i < n_layers; ++i) {
            const double active =
                last.layers[i].density * static_cast<double>(layer_sizes[i]);
            logs[i] = std::log10(1.0 + active);
            max_log = std::max(max_log, std::log10(1.0 + static_cast<double>(layer_sizes[i])));
        }
        const std::string path = out_dir + "/active_params.svg";
        bar_chart(path, "Active weights per layer (log10)", logs, max_log, ticks);
        written.push_back(path);
    }
    {
        Svg svg;
        const double x0 = kMarginLeft;
        const double y0 = kHeight - kMarginBottom;
        const double plot_w = kWidth - kMarginLeft - kMarginRight;
        const double plot_h = kHeight - kMarginTop - kMarginBottom;
        svg.text(kWidth / 2.0, kMarginTop - 10.0, "Test accuracy [%]");
        svg.line(x0, y0, x0 + plot_w, y0);
        svg.line(x0, y0, x0, kMarginTop);
        svg.text(x0 - 8.0, kMarginTop + 4.0, "100", "end");
        svg.text(x0 - 8.0, y0 + 4.0, "0", "end");
        std::vector<std::pair<double, double>> pts;
        const double denom = records.size() > 1 ? static_cast<double>(records.size() - 1) : 1.0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const double x = x0 + plot_w * static_cast<double>(i) / denom;
            const double y = y0 - plot_h * records[i].test_accuracy / 100.0;
            pts.emplace_back(x, y);
        }
        svg.polyline(pts, "#c44e52");
        svg.text(x0 + plot_w / 2.0, y0 + 30.0, "epoch");
        const std::string path = out_dir + "/accuracy.svg";
        svg.save(path);
        written.push_back(path);
    }
    return written;
}

} // namespace dst
