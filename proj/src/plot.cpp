#include "relscale/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "relscale/error.hpp"
#include "relscale/io.hpp"

namespace relscale {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 160.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '&':
            out += "&amp;";
            break;
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out.push_back(c);
        }
    }
    return out;
}

struct Frame {
    double x_lo, x_hi, y_lo, y_hi;
    bool log_x;

    double tx(double x) const
    {
        const double v = log_x ? std::log10(x) : x;
        return kLeft + (v - x_lo) / (x_hi - x_lo) * (kWidth - kLeft - kRight);
    }
    double ty(double y) const { return kHeight - kBottom - (y - y_lo) / (y_hi - y_lo) * (kHeight - kTop - kBottom); }
};

Frame make_frame(const PlotSeries& plot)
{
    const bool log_x = plot.x_scale == AxisScale::log10;
    double xlo = std::numeric_limits<double>::infinity();
    double xhi = -xlo;
    double ylo = xlo;
    double yhi = -xlo;
    auto take = [&](const PlotPoint& p) {
        const double x = log_x ? std::log10(p.x) : p.x;
        xlo = std::min(xlo, x);
        xhi = std::max(xhi, x);
        ylo = std::min(ylo, p.y);
        yhi = std::max(yhi, p.y);
    };
    for (const auto& s : plot.series) {
        for (const auto& p : s.points)
            take(p);
        for (const auto& p : s.fitted)
            take(p);
    }
    for (const auto& r : plot.references) {
        ylo = std::min(ylo, r.y);
        yhi = std::max(yhi, r.y);
    }
    if (log_x) {
        xlo = std::floor(xlo);
        xhi = std::ceil(xhi);
    }
    if (xhi == xlo) {
        xlo -= 0.5;
        xhi += 0.5;
    }
    if (yhi == ylo) {
        const double pad = std::max(std::abs(ylo) * 0.1, 1.0);
        ylo -= pad;
        yhi += pad;
    } else {
        const double pad = 0.05 * (yhi - ylo);
        ylo -= pad;
        yhi += pad;
    }
    return {xlo, xhi, ylo, yhi, log_x};
}

std::string polyline(const Frame& f, const std::vector<PlotPoint>& pts, const char* colour, const char* extra)
{
    std::string out = "<polyline fill=\"none\" stroke=\"";
    out += colour;
    out += "\" stroke-width=\"1.5\"";
    out += extra;
    out += " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i)
            out += ' ';
        out += num(f.tx(pts[i].x)) + ',' + num(f.ty(pts[i].y));
    }
    out += "\"/>\n";
    return out;
}

} // namespace

void PlotSeries::validate() const
{
    if (series.empty())
        throw ValidationError("plot has no series");
    for (const auto& s : series) {
        if (s.points.empty())
            throw ValidationError("plot series '" + s.label + "' is empty");
        for (const auto* pts : {&s.points, &s.fitted}) {
            for (const auto& p : *pts) {
                if (!std::isfinite(p.x) || !std::isfinite(p.y))
                    throw ValidationError("plot series '" + s.label + "' has a non-finite point");
                if (x_scale == AxisScale::log10 && !(p.x > 0.0))
                    throw ValidationError("plot series '" + s.label + "' has a non-positive x on a log axis");
            }
        }
    }
    for (const auto& r : references) {
        if (!std::isfinite(r.y))
            throw ValidationError("reference line is not finite");
    }
}

std::string render_svg(const PlotSeries& plot)
{
    plot.validate();
    const Frame f = make_frame(plot);
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
           "\" viewBox=\"0 0 " + num(kWidth) + ' ' + num(kHeight) + "\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) + "\" fill=\"white\"/>\n";
    svg += "<text x=\"" + num(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"16\">" + xml_escape(plot.title) + "</text>\n";

    const double plot_left = kLeft;
    const double plot_right = kWidth - kRight;
    const double plot_top = kTop;
    const double plot_bottom = kHeight - kBottom;

    // Vertical gridlines: every decade on a log axis, five even ticks otherwise.
    svg += "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
    std::vector<std::pair<double, std::string>> xticks;
    if (f.log_x) {
        for (int e = static_cast<int>(f.x_lo); e <= static_cast<int>(f.x_hi); ++e)
            xticks.emplace_back(std::pow(10.0, e), "1e" + std::to_string(e));
    } else {
        for (int i = 0; i <= 4; ++i) {
            const double v = f.x_lo + (f.x_hi - f.x_lo) * i / 4.0;
            xticks.emplace_back(v, tick(v));
        }
    }
    for (const auto& [v, label] : xticks) {
        const double x = f.tx(v);
        svg += "<line x1=\"" + num(x) + "\" y1=\"" + num(plot_top) + "\" x2=\"" + num(x) + "\" y2=\"" +
               num(plot_bottom) + "\"/>\n";
    }
    svg += "</g>\n";

    svg += "<g font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">\n";
    for (const auto& [v, label] : xticks)
        svg += "<text x=\"" + num(f.tx(v)) + "\" y=\"" + num(plot_bottom + 16) + "\">" + xml_escape(label) + "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = f.y_lo + (f.y_hi - f.y_lo) * i / 4.0;
        svg += "<text x=\"" + num(plot_left - 8) + "\" y=\"" + num(f.ty(v) + 4) + "\" text-anchor=\"end\">" + tick(v) +
               "</text>\n";
    }
    svg += "<text x=\"" + num((plot_left + plot_right) / 2) + "\" y=\"" + num(kHeight - 16) + "\">" +
           xml_escape(plot.x_label) + "</text>\n";
    svg += "<text transform=\"translate(18," + num((plot_top + plot_bottom) / 2) + ") rotate(-90)\">" +
           xml_escape(plot.y_label) + "</text>\n";
    svg += "</g>\n";

    svg += "<rect x=\"" + num(plot_left) + "\" y=\"" + num(plot_top) + "\" width=\"" + num(plot_right - plot_left) +
           "\" height=\"" + num(plot_bottom - plot_top) + "\" fill=\"none\" stroke=\"black\"/>\n";

    for (const auto& r : plot.references) {
        const double y = f.ty(r.y);
        svg += "<line class=\"reference\" x1=\"" + num(plot_left) + "\" y1=\"" + num(y) + "\" x2=\"" +
               num(plot_right) + "\" y2=\"" + num(y) + "\" stroke=\"black\" stroke-width=\"1\" "
               "stroke-dasharray=\"6,4\"/>\n";
    }

    for (std::size_t i = 0; i < plot.series.size(); ++i) {
        const auto& s = plot.series[i];
        const char* colour = kPalette[i % std::size(kPalette)];
        svg += polyline(f, s.points, colour, "");
        if (!s.fitted.empty())
            svg += polyline(f, s.fitted, colour, " stroke-dasharray=\"2,2\" opacity=\"0.7\"");
        for (const auto& p : s.points)
            svg += "<circle cx=\"" + num(f.tx(p.x)) + "\" cy=\"" + num(f.ty(p.y)) + "\" r=\"3\" fill=\"" + colour +
                   "\"/>\n";
        const double ly = plot_top + 14.0 + 18.0 * static_cast<double>(i);
        svg += "<text x=\"" + num(plot_right + 12) + "\" y=\"" + num(ly) + "\" fill=\"" + colour +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + xml_escape(s.label) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

std::string render_csv(const PlotSeries& plot)
{
    plot.validate();
    std::string csv = "series,x,y\n";
    char buf[64];
    for (const auto& s : plot.series) {
        std::string label = s.label;
        if (label.find_first_of(",\"") != std::string::npos) {
            std::string quoted = "\"";
            for (char c : label)
                quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
            label = quoted + "\"";
        }
        for (const auto& p : s.points) {
            std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", p.x, p.y);
            csv += label + buf;
        }
    }
    return csv;
}

std::vector<std::filesystem::path> emit_plot(const PlotSeries& plot, const std::filesystem::path& prefix,
                                             PlotFormats formats)
{
    plot.validate();
    std::vector<std::filesystem::path> written;
    if (formats.svg) {
        std::filesystem::path p = prefix;
        p += ".svg";
        write_file_atomic(p, render_svg(plot));
        written.push_back(p);
    }
    if (formats.csv) {
        std::filesystem::path p = prefix;
        p += ".csv";
        write_file_atomic(p, render_csv(plot));
        written.push_back(p);
    }
    return written;
}

} // namespace relscale
