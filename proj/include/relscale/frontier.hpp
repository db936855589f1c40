#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relscale/store.hpp"

namespace relscale {

enum class ScaleAxis { flops, tokens, params };

std::string to_string(ScaleAxis axis);
ScaleAxis scale_axis_from_string(const std::string& text);

/// Compute-optimal point of one IsoFLOP slice.
///
/// For raw isolation series (token or parameter axis) no parabola is fit:
/// curvature is 0, fit_r2 is 1 and n_points is 1.
struct FrontierPoint {
    double budget = 0.0;
    double optimal_tokens = 0.0;
    double optimal_params = 0.0;
    double optimal_metric = 0.0;
    double curvature = 0.0;
    double fit_r2 = 0.0;
    int n_points = 0;
};

struct FrontierSeries {
    std::string metric_key;
    ScaleAxis scale_axis = ScaleAxis::flops;
    std::vector<FrontierPoint> points;

    /// Abscissa of every point along the series' scale axis.
    std::vector<double> scales() const;
    std::vector<double> metrics() const;
};

/// How the optimum of a slice is reported.
enum class OptimumSelection {
    vertex,       ///< parabola vertex
    observed_min, ///< best observed run; the parabola still supplies diagnostics
};

struct TokenMetric {
    double tokens = 0.0;
    double metric = 0.0;
};

/// Minima further than this factor outside the observed token range are
/// rejected.
inline constexpr double kExtrapolationFactor = 2.0;

/// Fits metric = a (log10 T - x0)^2 + c to one IsoFLOP slice.
/// Throws FitError for fewer than three distinct token counts, a <= 0 or an
/// optimum outside the extrapolation window.
FrontierPoint fit_isoflop_slice(std::span<const TokenMetric> slice, double budget,
                                OptimumSelection selection = OptimumSelection::vertex);

struct FrontierOptions {
    ScaleAxis scale_axis = ScaleAxis::flops;
    /// Relative tolerance when bucketing runs into budgets.
    double budget_tolerance = 0.05;
    OptimumSelection selection = OptimumSelection::vertex;
    /// Value of the held-fixed axis for token/parameter isolation series
    /// (params for the token axis, tokens for the parameter axis). When
    /// absent every run carrying the metric is used.
    std::optional<double> fixed_value;
    double fixed_tolerance = 0.05;
};

struct FrontierResult {
    FrontierSeries series;
    std::vector<std::string> warnings;
};

/// On the FLOP axis, buckets internal runs by budget and fits one slice per
/// bucket with at least three runs. Buckets that are too small or whose
/// slice fit fails are skipped with a warning, so the series may come back
/// empty. On the token and parameter axes the matching runs are passed
/// through unfitted. Throws FitError when no run carries the metric.
FrontierResult extract_frontier(const RunSet& runs, const std::string& metric_key, const FrontierOptions& options = {});

nlohmann::json to_json(const FrontierPoint& point);
nlohmann::json to_json(const FrontierSeries& series);
FrontierSeries frontier_from_json(const nlohmann::json& j);

} // namespace relscale
