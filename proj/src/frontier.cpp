#include "relscale/frontier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "relscale/error.hpp"
#include "relscale/regression.hpp"

namespace relscale {

using nlohmann::json;

std::string to_string(ScaleAxis axis)
{
    switch (axis) {
    case ScaleAxis::flops:
        return "flops";
    case ScaleAxis::tokens:
        return "tokens";
    case ScaleAxis::params:
        return "params";
    }
    return "flops";
}

ScaleAxis scale_axis_from_string(const std::string& text)
{
    if (text == "flops")
        return ScaleAxis::flops;
    if (text == "tokens")
        return ScaleAxis::tokens;
    if (text == "params")
        return ScaleAxis::params;
    throw ValidationError("unknown scale axis '" + text + "' (expected flops, tokens or params)");
}

std::vector<double> FrontierSeries::scales() const
{
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        switch (scale_axis) {
        case ScaleAxis::flops:
            out.push_back(p.budget);
            break;
        case ScaleAxis::tokens:
            out.push_back(p.optimal_tokens);
            break;
        case ScaleAxis::params:
            out.push_back(p.optimal_params);
            break;
        }
    }
    return out;
}

std::vector<double> FrontierSeries::metrics() const
{
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points)
        out.push_back(p.optimal_metric);
    return out;
}

FrontierPoint fit_isoflop_slice(std::span<const TokenMetric> slice, double budget, OptimumSelection selection)
{
    if (slice.size() < 3)
        throw FitError("rank-deficient slice: need at least three runs, got " + std::to_string(slice.size()));
    Eigen::VectorXd x(slice.size());
    Eigen::VectorXd y(slice.size());
    for (std::size_t i = 0; i < slice.size(); ++i) {
        if (!(slice[i].tokens > 0.0))
            throw ValidationError("slice token counts must be positive");
        x[i] = std::log10(slice[i].tokens);
        y[i] = slice[i].metric;
    }
    const QuadraticFit<double> q = fit_quadratic(x, y);
    if (!(q.curvature > 0.0))
        throw FitError("no interior minimum: slice is not convex in log tokens");

    FrontierPoint p;
    p.budget = budget;
    p.curvature = q.curvature;
    p.fit_r2 = q.r2;
    p.n_points = static_cast<int>(slice.size());

    if (selection == OptimumSelection::observed_min) {
        const auto best = std::min_element(slice.begin(), slice.end(),
                                           [](const TokenMetric& a, const TokenMetric& b) { return a.metric < b.metric; });
        p.optimal_tokens = best->tokens;
        p.optimal_metric = best->metric;
    } else {
        const double guard = std::log10(kExtrapolationFactor);
        if (q.vertex < x.minCoeff() - guard || q.vertex > x.maxCoeff() + guard) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "argmin 10^%.4f tokens lies outside the allowed window [10^%.4f, 10^%.4f]",
                          q.vertex, x.minCoeff() - guard, x.maxCoeff() + guard);
            throw FitError(buf);
        }
        p.optimal_tokens = std::pow(10.0, q.vertex);
        p.optimal_metric = q.minimum;
    }
    p.optimal_params = budget / (6.0 * p.optimal_tokens);
    return p;
}

namespace {

std::string describe_budget(double budget)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", budget);
    return buf;
}

FrontierResult isoflop_frontier(const RunSet& runs, const std::string& metric_key, const FrontierOptions& options)
{
    std::vector<const RunRecord*> eligible;
    for (const auto& r : runs) {
        if (r.source == Source::internal && r.has_metric(metric_key))
            eligible.push_back(&r);
    }
    if (eligible.empty())
        throw FitError("no internal run carries metric '" + metric_key + "'");
    std::stable_sort(eligible.begin(), eligible.end(),
                     [](const RunRecord* a, const RunRecord* b) { return a->flops < b->flops; });

    std::vector<std::vector<const RunRecord*>> buckets;
    double anchor = 0.0;
    for (const RunRecord* r : eligible) {
        if (buckets.empty() || std::abs(r->flops - anchor) > options.budget_tolerance * anchor) {
            buckets.emplace_back();
            anchor = r->flops;
        }
        buckets.back().push_back(r);
    }

    FrontierResult result;
    result.series.metric_key = metric_key;
    result.series.scale_axis = ScaleAxis::flops;
    for (const auto& bucket : buckets) {
        double log_sum = 0.0;
        for (const RunRecord* r : bucket)
            log_sum += std::log(r->flops);
        const bool uniform = std::all_of(bucket.begin(), bucket.end(),
                                         [&](const RunRecord* r) { return r->flops == bucket.front()->flops; });
        const double budget = uniform ? bucket.front()->flops : std::exp(log_sum / static_cast<double>(bucket.size()));
        if (bucket.size() < 3) {
            result.warnings.push_back("budget " + describe_budget(budget) + ": only " + std::to_string(bucket.size()) +
                                      " run(s), skipped");
            continue;
        }
        std::vector<TokenMetric> slice;
        slice.reserve(bucket.size());
        for (const RunRecord* r : bucket)
            slice.push_back({static_cast<double>(r->tokens), r->metric(metric_key)});
        std::sort(slice.begin(), slice.end(),
                  [](const TokenMetric& a, const TokenMetric& b) { return a.tokens < b.tokens; });
        try {
            result.series.points.push_back(fit_isoflop_slice(slice, budget, options.selection));
        } catch (const FitError& e) {
            result.warnings.push_back("budget " + describe_budget(budget) + ": " + e.what() + ", skipped");
        }
    }
    if (result.series.points.empty())
        result.warnings.push_back("no budget bucket qualified for metric '" + metric_key + "'");
    return result;
}

FrontierResult isolation_series(const RunSet& runs, const std::string& metric_key, const FrontierOptions& options)
{
    FrontierResult result;
    result.series.metric_key = metric_key;
    result.series.scale_axis = options.scale_axis;
    bool any = false;
    for (const auto& r : runs) {
        if (!r.has_metric(metric_key))
            continue;
        any = true;
        if (options.fixed_value) {
            const double held = options.scale_axis == ScaleAxis::tokens ? static_cast<double>(r.params)
                                                                        : static_cast<double>(r.tokens);
            if (std::abs(held - *options.fixed_value) > options.fixed_tolerance * *options.fixed_value)
                continue;
        }
        FrontierPoint p;
        p.budget = r.flops;
        p.optimal_tokens = static_cast<double>(r.tokens);
        p.optimal_params = static_cast<double>(r.params);
        p.optimal_metric = r.metric(metric_key);
        p.curvature = 0.0;
        p.fit_r2 = 1.0;
        p.n_points = 1;
        result.series.points.push_back(p);
    }
    if (!any)
        throw FitError("no run carries metric '" + metric_key + "'");
    const ScaleAxis axis = options.scale_axis;
    std::stable_sort(result.series.points.begin(), result.series.points.end(),
                     [axis](const FrontierPoint& a, const FrontierPoint& b) {
                         return axis == ScaleAxis::tokens ? a.optimal_tokens < b.optimal_tokens
                                                          : a.optimal_params < b.optimal_params;
                     });
    if (result.series.points.empty())
        result.warnings.push_back("no run matches the fixed " +
                                  std::string(axis == ScaleAxis::tokens ? "params" : "tokens") + " value");
    return result;
}

} // namespace

FrontierResult extract_frontier(const RunSet& runs, const std::string& metric_key, const FrontierOptions& options)
{
    if (!(options.budget_tolerance >= 0.0))
        throw ValidationError("budget tolerance must be non-negative");
    if (options.scale_axis == ScaleAxis::flops)
        return isoflop_frontier(runs, metric_key, options);
    return isolation_series(runs, metric_key, options);
}

json to_json(const FrontierPoint& p)
{
    return json{{"budget", p.budget},
                {"optimal_tokens", p.optimal_tokens},
                {"optimal_params", p.optimal_params},
                {"optimal_metric", p.optimal_metric},
                {"curvature", p.curvature},
                {"fit_r2", p.fit_r2},
                {"n_points", p.n_points}};
}

json to_json(const FrontierSeries& s)
{
    json points = json::array();
    for (const auto& p : s.points)
        points.push_back(to_json(p));
    return json{{"metric_key", s.metric_key}, {"scale_axis", to_string(s.scale_axis)}, {"points", points}};
}

FrontierSeries frontier_from_json(const json& j)
{
    try {
        FrontierSeries s;
        s.metric_key = j.at("metric_key").get<std::string>();
        s.scale_axis = scale_axis_from_string(j.at("scale_axis").get<std::string>());
        for (const auto& pj : j.at("points")) {
            FrontierPoint p;
            p.budget = pj.at("budget").get<double>();
            p.optimal_tokens = pj.at("optimal_tokens").get<double>();
            p.optimal_params = pj.at("optimal_params").get<double>();
            p.optimal_metric = pj.at("optimal_metric").get<double>();
            p.curvature = pj.at("curvature").get<double>();
            p.fit_r2 = pj.at("fit_r2").get<double>();
            p.n_points = pj.at("n_points").get<int>();
            s.points.push_back(p);
        }
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed frontier series: ") + e.what());
    }
}

} // namespace relscale
