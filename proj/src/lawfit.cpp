#include "relscale/lawfit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "relscale/error.hpp"
#include "relscale/parallel.hpp"
#include "relscale/regression.hpp"

namespace relscale {

using nlohmann::json;

std::string to_string(RelativeMode mode)
{
    return mode == RelativeMode::ratio ? "ratio" : "difference";
}

RelativeMode relative_mode_from_string(const std::string& text)
{
    if (text == "ratio")
        return RelativeMode::ratio;
    if (text == "difference")
        return RelativeMode::difference;
    throw ValidationError("unknown relative mode '" + text + "' (expected ratio or difference)");
}

namespace {

LineFit<double> line(const Eigen::VectorXd& x, const Eigen::VectorXd& y, Estimator estimator)
{
    return estimator == Estimator::huber ? fit_line_huber(x, y) : fit_line(x, y);
}

void require_positive_scales(std::span<const ScaleValue> series)
{
    for (const auto& p : series) {
        if (!(p.scale > 0.0) || !std::isfinite(p.scale))
            throw ValidationError("scale values must be finite and positive");
        if (!std::isfinite(p.value))
            throw ValidationError("metric values must be finite");
    }
}

std::pair<double, double> span_of(std::span<const ScaleValue> series)
{
    const auto [lo, hi] = std::minmax_element(series.begin(), series.end(),
                                              [](const ScaleValue& a, const ScaleValue& b) { return a.scale < b.scale; });
    return {lo->scale, hi->scale};
}

// Transformed design for the relative fit of a (possibly resampled) pair set.
void relative_design(std::span<const RelativePair> pairs, RelativeMode mode, Eigen::VectorXd& x, Eigen::VectorXd& y)
{
    const auto n = static_cast<Eigen::Index>(pairs.size());
    x.resize(n);
    y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& p = pairs[i];
        if (mode == RelativeMode::ratio) {
            x[i] = std::log(p.scale);
            y[i] = std::log(p.treatment) - std::log(p.baseline);
        } else {
            x[i] = std::log10(p.scale);
            y[i] = p.treatment - p.baseline;
        }
    }
}

void validate_pairs(std::span<const RelativePair> pairs, RelativeMode mode)
{
    for (const auto& p : pairs) {
        if (!(p.scale > 0.0) || !std::isfinite(p.scale))
            throw ValidationError("pair scales must be finite and positive");
        if (!std::isfinite(p.treatment) || !std::isfinite(p.baseline))
            throw ValidationError("pair errors must be finite");
        if (mode == RelativeMode::ratio && !(p.treatment > 0.0 && p.baseline > 0.0))
            throw ValidationError("ratio mode requires positive treatment and baseline errors");
    }
}

} // namespace

PowerLawFit fit_power_law(std::span<const ScaleValue> series, ScaleAxis axis, Estimator estimator)
{
    if (series.size() < 2)
        throw FitError("power law needs at least two points");
    require_positive_scales(series);
    Eigen::VectorXd x(series.size());
    Eigen::VectorXd y(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (!(series[i].value > 0.0))
            throw FitError("power law undefined for non-positive error values");
        x[i] = std::log(series[i].scale);
        y[i] = std::log(series[i].value);
    }
    const LineFit<double> f = line(x, y, estimator);
    PowerLawFit fit;
    fit.alpha = std::exp(f.intercept);
    fit.beta = -f.slope;
    fit.r2 = f.r2;
    fit.n = static_cast<int>(series.size());
    fit.scale_axis = axis;
    std::tie(fit.scale_min, fit.scale_max) = span_of(series);
    return fit;
}

PowerLawFit fit_power_law_with_offset(std::span<const ScaleValue> series, ScaleAxis axis)
{
    if (series.size() < 3)
        throw FitError("power law with offset needs at least three points");
    require_positive_scales(series);
    double min_value = std::numeric_limits<double>::infinity();
    for (const auto& p : series) {
        if (!(p.value > 0.0))
            throw FitError("power law undefined for non-positive error values");
        min_value = std::min(min_value, p.value);
    }

    // Profile the offset: for each candidate, the remaining two parameters
    // come from the log-space line, scored by squared error in value space.
    std::vector<ScaleValue> shifted(series.begin(), series.end());
    auto evaluate = [&](double offset, PowerLawFit& out) {
        for (std::size_t i = 0; i < series.size(); ++i)
            shifted[i].value = series[i].value - offset;
        out = fit_power_law(shifted, axis);
        double sse = 0.0;
        for (const auto& p : series) {
            const double r = p.value - (out.alpha * std::pow(p.scale, -out.beta) + offset);
            sse += r * r;
        }
        return sse;
    };

    const double upper = min_value * (1.0 - 1e-9);
    constexpr int grid = 200;
    PowerLawFit best_fit;
    double best_offset = 0.0;
    double best_sse = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= grid; ++k) {
        const double c = upper * k / grid;
        PowerLawFit f;
        const double sse = evaluate(c, f);
        if (sse < best_sse) {
            best_sse = sse;
            best_offset = c;
        }
    }
    // Golden-section refinement inside the neighbouring grid cells.
    double lo = std::max(0.0, best_offset - upper / grid);
    double hi = std::min(upper, best_offset + upper / grid);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    PowerLawFit scratch;
    for (int it = 0; it < 100 && hi - lo > 1e-15 * std::max(1.0, upper); ++it) {
        const double a = hi - phi * (hi - lo);
        const double b = lo + phi * (hi - lo);
        if (evaluate(a, scratch) <= evaluate(b, scratch))
            hi = b;
        else
            lo = a;
    }
    const double offset = 0.5 * (lo + hi);
    evaluate(offset, best_fit);
    best_fit.offset = offset;
    std::tie(best_fit.scale_min, best_fit.scale_max) = span_of(series);
    return best_fit;
}

double predict(const PowerLawFit& fit, double scale)
{
    if (!(scale > 0.0))
        throw ValidationError("scale must be positive");
    return fit.alpha * std::pow(scale, -fit.beta) + fit.offset;
}

LogLinearFit fit_loglinear(std::span<const ScaleValue> series, Estimator estimator)
{
    if (series.size() < 2)
        throw FitError("log-linear fit needs at least two points");
    require_positive_scales(series);
    Eigen::VectorXd x(series.size());
    Eigen::VectorXd y(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        x[i] = std::log10(series[i].scale);
        y[i] = series[i].value;
    }
    const LineFit<double> f = line(x, y, estimator);
    LogLinearFit fit;
    fit.slope_per_decade = f.slope;
    fit.ref_scale = std::pow(10.0, x.mean());
    fit.intercept_at_ref = f(std::log10(fit.ref_scale));
    fit.r2 = f.r2;
    fit.slope_stderr = f.slope_stderr;
    fit.n = static_cast<int>(series.size());
    return fit;
}

double predict(const LogLinearFit& fit, double scale)
{
    if (!(scale > 0.0))
        throw ValidationError("scale must be positive");
    return fit.intercept_at_ref + fit.slope_per_decade * std::log10(scale / fit.ref_scale);
}

RelativeFit fit_relative(std::span<const RelativePair> pairs, RelativeMode mode, Estimator estimator)
{
    if (pairs.size() < 2)
        throw FitError("relative fit needs at least two pairs");
    validate_pairs(pairs, mode);
    Eigen::VectorXd x;
    Eigen::VectorXd y;
    relative_design(pairs, mode, x, y);
    const LineFit<double> f = line(x, y, estimator);

    RelativeFit fit;
    fit.mode = mode;
    fit.delta_beta = f.slope;
    fit.gamma = mode == RelativeMode::ratio ? std::exp(f.intercept) : f.intercept;
    fit.r2 = f.r2;
    fit.n_pairs = static_cast<int>(pairs.size());
    fit.ci_low = fit.delta_beta;
    fit.ci_high = fit.delta_beta;
    const auto [lo, hi] = std::minmax_element(
        pairs.begin(), pairs.end(), [](const RelativePair& a, const RelativePair& b) { return a.scale < b.scale; });
    fit.scale_min = lo->scale;
    fit.scale_max = hi->scale;
    return fit;
}

std::string to_string(BootstrapInterval interval)
{
    return interval == BootstrapInterval::percentile ? "percentile" : "expanded-percentile";
}

BootstrapInterval bootstrap_interval_from_string(const std::string& text)
{
    if (text == "percentile")
        return BootstrapInterval::percentile;
    if (text == "expanded-percentile")
        return BootstrapInterval::expanded_percentile;
    throw ValidationError("unknown bootstrap interval '" + text + "' (expected percentile or expanded-percentile)");
}

double bootstrap_tail_level(BootstrapInterval interval, std::size_t n_pairs)
{
    if (interval == BootstrapInterval::percentile || n_pairs < 3)
        return 0.025;
    const auto n = static_cast<double>(n_pairs);
    const int df = static_cast<int>(n_pairs) - 2;
    const double z = std::sqrt(n / (n - 2.0)) * student_t_quantile(0.975, df);
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

BootstrapResult bootstrap_sign_test(std::span<const RelativePair> pairs, RelativeMode mode,
                                    const BootstrapConfig& config, Estimator estimator)
{
    if (pairs.size() < 3)
        throw FitError("bootstrap needs at least three pairs, got " + std::to_string(pairs.size()));
    if (config.resamples < 1)
        throw ValidationError("resamples must be positive");
    validate_pairs(pairs, mode);

    Eigen::VectorXd x_all;
    Eigen::VectorXd y_all;
    relative_design(pairs, mode, x_all, y_all);
    const auto n = static_cast<Eigen::Index>(pairs.size());

    BootstrapResult result;
    result.slopes.assign(static_cast<std::size_t>(config.resamples), 0.0);
    parallel_for(result.slopes.size(), config.threads, [&](std::size_t r) {
        Eigen::VectorXd x(n);
        Eigen::VectorXd y(n);
        for (int attempt = 0;; ++attempt) {
            if (attempt > config.max_redraws)
                throw FitError("bootstrap: resample " + std::to_string(r) + " stayed degenerate after " +
                               std::to_string(config.max_redraws) + " redraws");
            auto rng = make_stream(config.seed, r, static_cast<std::uint64_t>(attempt));
            std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
            for (Eigen::Index i = 0; i < n; ++i) {
                const Eigen::Index k = pick(rng);
                x[i] = x_all[k];
                y[i] = y_all[k];
            }
            if (x.maxCoeff() != x.minCoeff())
                break;
        }
        result.slopes[r] = line(x, y, estimator).slope;
    });

    const auto total = static_cast<double>(result.slopes.size());
    const auto at_most_zero = std::count_if(result.slopes.begin(), result.slopes.end(), [](double s) { return s <= 0.0; });
    const auto at_least_zero = std::count_if(result.slopes.begin(), result.slopes.end(), [](double s) { return s >= 0.0; });
    const double p = 2.0 * static_cast<double>(std::min(at_most_zero, at_least_zero)) / total;
    result.p_sign = std::clamp(p, std::min(1.0, 2.0 / total), 1.0);

    std::vector<double> sorted = result.slopes;
    std::sort(sorted.begin(), sorted.end());
    const double tail = bootstrap_tail_level(config.interval, pairs.size());
    result.ci_low = sorted_quantile(sorted, tail);
    result.ci_high = sorted_quantile(sorted, 1.0 - tail);
    return result;
}

RelativeFit fit_relative(std::span<const RelativePair> pairs, RelativeMode mode, const BootstrapConfig& bootstrap,
                         Estimator estimator)
{
    RelativeFit fit = fit_relative(pairs, mode, estimator);
    const BootstrapResult b = bootstrap_sign_test(pairs, mode, bootstrap, estimator);
    fit.p_sign = b.p_sign;
    fit.ci_low = std::min(b.ci_low, fit.delta_beta);
    fit.ci_high = std::max(b.ci_high, fit.delta_beta);
    fit.bootstrapped = true;
    fit.resamples = bootstrap.resamples;
    fit.seed = bootstrap.seed;
    fit.interval = bootstrap.interval;
    return fit;
}

double percent_per_decade(double delta_beta)
{
    return (std::pow(10.0, delta_beta) - 1.0) * 100.0;
}

CrossoverResult crossover(const RelativeFit& a, const RelativeFit& b, std::pair<double, double> observed_span)
{
    if (a.mode != RelativeMode::ratio || b.mode != RelativeMode::ratio)
        throw ValidationError("crossover requires two ratio-mode fits");
    const double slope_gap = b.delta_beta - a.delta_beta;
    if (std::abs(slope_gap) <= 1e-12)
        throw FitError("parallel relative curves never cross");
    CrossoverResult out;
    // gamma_a F^da = gamma_b F^db  =>  F = (gamma_a / gamma_b)^(1 / (db - da)); solved in log space.
    out.f_star = std::exp((std::log(a.gamma) - std::log(b.gamma)) / slope_gap);
    out.in_range = out.f_star >= observed_span.first && out.f_star <= observed_span.second;
    return out;
}

CorrelationResult slope_covariate_correlation(const std::map<std::string, double>& slopes,
                                              const std::map<std::string, double>& covariate,
                                              const PermutationConfig& config)
{
    for (const auto& [group, v] : slopes) {
        if (!covariate.contains(group))
            throw ValidationError("unmatched group key '" + group + "' (missing covariate)");
    }
    for (const auto& [group, v] : covariate) {
        if (!slopes.contains(group))
            throw ValidationError("unmatched group key '" + group + "' (missing slope)");
    }
    const auto n = static_cast<Eigen::Index>(slopes.size());
    if (n < 3)
        throw ValidationError("correlation needs at least three matched groups");

    Eigen::VectorXd x(n);
    Eigen::VectorXd y(n);
    Eigen::Index i = 0;
    for (const auto& [group, slope] : slopes) {
        const double c = covariate.at(group);
        if (!(c > 0.0) || !std::isfinite(c))
            throw ValidationError("covariate for group '" + group + "' must be positive");
        if (!std::isfinite(slope))
            throw ValidationError("slope for group '" + group + "' must be finite");
        x[i] = std::log10(c);
        y[i] = slope;
        ++i;
    }
    if (x.maxCoeff() == x.minCoeff() || y.maxCoeff() == y.minCoeff())
        throw FitError("zero variance: correlation undefined");

    CorrelationResult out;
    out.n = static_cast<int>(n);
    out.pearson_r = pearson(x, y);
    const LineFit<double> f = fit_line(x, y);
    out.regression_slope = f.slope;
    out.regression_intercept = f.intercept;

    // Ties with the observed statistic count as at least as extreme.
    const double threshold = std::abs(out.pearson_r) - 1e-12;
    if (n <= config.exhaustive_max_n) {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::int64_t total = 0;
        std::int64_t extreme = 0;
        Eigen::VectorXd permuted(n);
        do {
            for (Eigen::Index k = 0; k < n; ++k)
                permuted[k] = y[order[static_cast<std::size_t>(k)]];
            ++total;
            if (std::abs(pearson(x, permuted)) >= threshold)
                ++extreme;
        } while (std::next_permutation(order.begin(), order.end()));
        out.exhaustive = true;
        out.permutations = total;
        out.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    } else {
        if (config.permutations < 1)
            throw ValidationError("permutations must be positive");
        std::vector<unsigned char> hit(static_cast<std::size_t>(config.permutations), 0);
        parallel_for(hit.size(), config.threads, [&](std::size_t p) {
            auto rng = make_stream(config.seed, p);
            std::vector<double> shuffled(y.data(), y.data() + n);
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            const Eigen::Map<const Eigen::VectorXd> permuted(shuffled.data(), n);
            hit[p] = std::abs(pearson(x, permuted)) >= threshold ? 1 : 0;
        });
        const auto extreme = std::count(hit.begin(), hit.end(), 1);
        out.exhaustive = false;
        out.permutations = config.permutations;
        out.p_value = (static_cast<double>(extreme) + 1.0) / (static_cast<double>(config.permutations) + 1.0);
    }
    return out;
}

std::vector<RelativePair> pair_series(const FrontierSeries& treatment, const FrontierSeries& baseline, double tolerance)
{
    if (treatment.scale_axis != baseline.scale_axis)
        throw ValidationError("cannot pair series on different scale axes");
    const auto ts = treatment.scales();
    const auto bs = baseline.scales();
    std::vector<RelativePair> pairs;
    std::vector<bool> used(bs.size(), false);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        for (std::size_t j = 0; j < bs.size(); ++j) {
            if (!used[j] && std::abs(ts[i] - bs[j]) <= tolerance * std::max(ts[i], bs[j])) {
                used[j] = true;
                pairs.push_back({ts[i], treatment.points[i].optimal_metric, baseline.points[j].optimal_metric});
                break;
            }
        }
    }
    if (pairs.size() < 2)
        throw ValidationError("treatment '" + treatment.metric_key + "' and baseline '" + baseline.metric_key +
                              "' share fewer than two scales");
    return pairs;
}

std::vector<ScaleValue> to_scale_values(const FrontierSeries& series)
{
    const auto scales = series.scales();
    std::vector<ScaleValue> out;
    out.reserve(scales.size());
    for (std::size_t i = 0; i < scales.size(); ++i)
        out.push_back({scales[i], series.points[i].optimal_metric});
    return out;
}

namespace {

json nullable(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}

double number_or_nan(const json& j, const char* key)
{
    const json& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

} // namespace

json to_json(const PowerLawFit& f)
{
    return json{{"alpha", f.alpha},         {"beta", f.beta},           {"r2", f.r2},
                {"n", f.n},                 {"scale_axis", to_string(f.scale_axis)},
                {"offset", f.offset},       {"scale_min", f.scale_min}, {"scale_max", f.scale_max}};
}

json to_json(const LogLinearFit& f)
{
    return json{{"slope_per_decade", f.slope_per_decade},
                {"intercept_at_ref", f.intercept_at_ref},
                {"ref_scale", f.ref_scale},
                {"r2", f.r2},
                {"slope_stderr", nullable(f.slope_stderr)},
                {"n", f.n}};
}

json to_json(const RelativeFit& f)
{
    return json{{"gamma", f.gamma},
                {"delta_beta", f.delta_beta},
                {"mode", to_string(f.mode)},
                {"p_sign", f.p_sign},
                {"ci_low", f.ci_low},
                {"ci_high", f.ci_high},
                {"n_pairs", f.n_pairs},
                {"r2", f.r2},
                {"bootstrapped", f.bootstrapped},
                {"significant", f.significant()},
                {"resamples", f.resamples},
                {"seed", f.seed},
                {"interval", to_string(f.interval)},
                {"percent_per_decade", f.mode == RelativeMode::ratio ? json(percent_per_decade(f.delta_beta))
                                                                     : json(nullptr)},
                {"scale_min", f.scale_min},
                {"scale_max", f.scale_max}};
}

json to_json(const CrossoverResult& r)
{
    return json{{"f_star", r.f_star}, {"in_range", r.in_range}};
}

json to_json(const CorrelationResult& r)
{
    return json{{"pearson_r", r.pearson_r},
                {"p_value", r.p_value},
                {"regression_slope", r.regression_slope},
                {"regression_intercept", r.regression_intercept},
                {"n", r.n},
                {"exhaustive", r.exhaustive},
                {"permutations", r.permutations}};
}

PowerLawFit power_law_from_json(const json& j)
{
    try {
        PowerLawFit f;
        f.alpha = j.at("alpha").get<double>();
        f.beta = j.at("beta").get<double>();
        f.r2 = number_or_nan(j, "r2");
        f.n = j.at("n").get<int>();
        f.scale_axis = scale_axis_from_string(j.at("scale_axis").get<std::string>());
        f.offset = j.value("offset", 0.0);
        f.scale_min = j.value("scale_min", 0.0);
        f.scale_max = j.value("scale_max", 0.0);
        if (!(f.alpha > 0.0))
            throw ValidationError("power law alpha must be positive");
        return f;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed power-law fit: ") + e.what());
    }
}

RelativeFit relative_fit_from_json(const json& j)
{
    try {
        RelativeFit f;
        f.gamma = j.at("gamma").get<double>();
        f.delta_beta = j.at("delta_beta").get<double>();
        f.mode = relative_mode_from_string(j.at("mode").get<std::string>());
        f.p_sign = j.at("p_sign").get<double>();
        f.ci_low = j.at("ci_low").get<double>();
        f.ci_high = j.at("ci_high").get<double>();
        f.n_pairs = j.at("n_pairs").get<int>();
        f.r2 = number_or_nan(j, "r2");
        f.bootstrapped = j.at("bootstrapped").get<bool>();
        f.resamples = j.value("resamples", 0);
        f.seed = j.value("seed", std::uint64_t{0});
        f.interval = bootstrap_interval_from_string(j.value("interval", std::string("expanded-percentile")));
        f.scale_min = j.at("scale_min").get<double>();
        f.scale_max = j.at("scale_max").get<double>();
        return f;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed relative fit: ") + e.what());
    }
}

} // namespace relscale
