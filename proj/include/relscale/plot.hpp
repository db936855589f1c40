#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace relscale {

enum class AxisScale { linear, log10 };

struct PlotPoint {
    double x = 0.0;
    double y = 0.0;
};

struct PlotLine {
    std::string label;
    std::vector<PlotPoint> points;
    /// Optional samples of a fitted curve, drawn as a second polyline.
    std::vector<PlotPoint> fitted;
};

/// Horizontal dashed reference, e.g. parity with the baseline.
struct ReferenceLine {
    double y = 0.0;
    std::string label;
};

struct PlotSeries {
    std::string title;
    std::string x_label;
    std::string y_label;
    AxisScale x_scale = AxisScale::log10;
    std::vector<PlotLine> series;
    std::vector<ReferenceLine> references;

    void validate() const;
};

/// Self-contained SVG. With a log10 x axis, one vertical gridline per decade.
/// Byte-stable for identical input.
std::string render_svg(const PlotSeries& plot);

/// `series,x,y` with one row per data point (fitted samples excluded),
/// values printed with round-trip precision.
std::string render_csv(const PlotSeries& plot);

struct PlotFormats {
    bool svg = true;
    bool csv = true;
};

/// Writes <prefix>.svg and/or <prefix>.csv; returns the paths written.
std::vector<std::filesystem::path> emit_plot(const PlotSeries& plot, const std::filesystem::path& prefix,
                                             PlotFormats formats = {});

/// n log-spaced samples of f over [lo, hi].
template <typename F>
std::vector<PlotPoint> sample_log(double lo, double hi, int n, F&& f);

} // namespace relscale

#include <cmath>

template <typename F>
std::vector<relscale::PlotPoint> relscale::sample_log(double lo, double hi, int n, F&& f)
{
    std::vector<PlotPoint> out;
    if (n < 2 || !(lo > 0.0) || !(hi >= lo))
        return out;
    const double a = std::log10(lo);
    const double b = std::log10(hi);
    for (int i = 0; i < n; ++i) {
        const double x = std::pow(10.0, a + (b - a) * i / (n - 1));
        out.push_back({x, f(x)});
    }
    return out;
}
