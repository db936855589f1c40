#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "relscale/frontier.hpp"

namespace relscale {

/// Estimator used in the transformed (log or log-linear) space. OLS is the
/// default everywhere; Huber is an opt-in robust alternative.
enum class Estimator { ols, huber };

struct ScaleValue {
    double scale = 0.0;
    double value = 0.0;
};

/// E(F) = alpha * F^-beta (+ offset when the irreducible-term variant is used).
struct PowerLawFit {
    double alpha = 1.0;
    double beta = 0.0;
    double r2 = 1.0;
    int n = 0;
    ScaleAxis scale_axis = ScaleAxis::flops;
    /// Irreducible error; always 0 for the two-parameter law.
    double offset = 0.0;
    double scale_min = 0.0;
    double scale_max = 0.0;
};

/// y = intercept_at_ref + slope_per_decade * log10(F / ref_scale)
struct LogLinearFit {
    double slope_per_decade = 0.0;
    double intercept_at_ref = 0.0;
    double ref_scale = 1.0;
    double r2 = 1.0;
    double slope_stderr = 0.0;
    int n = 0;
};

enum class RelativeMode { ratio, difference };

std::string to_string(RelativeMode mode);
RelativeMode relative_mode_from_string(const std::string& text);

/// One scale at which treatment and baseline were measured on the same run
/// (or the same frontier budget).
struct RelativePair {
    double scale = 0.0;
    double treatment = 0.0;
    double baseline = 0.0;
};

enum class BootstrapInterval {
    /// Plain 2.5 / 97.5 percentiles of the resampled slopes.
    percentile,
    /// Percentile levels widened to the small-sample t reference with n - 2
    /// degrees of freedom; tends to the plain percentiles as n grows.
    expanded_percentile,
};

std::string to_string(BootstrapInterval interval);
BootstrapInterval bootstrap_interval_from_string(const std::string& text);

/// Lower percentile level used for a 95% interval over `n_pairs` pairs.
double bootstrap_tail_level(BootstrapInterval interval, std::size_t n_pairs);

/// Ratio mode: E_t / E_b = gamma * F^delta_beta.
/// Difference mode: E_t - E_b = gamma + delta_beta * log10 F, so delta_beta is
/// the change in the gap per decade of scale and gamma the gap at F = 1.
struct RelativeFit {
    double gamma = 1.0;
    double delta_beta = 0.0;
    RelativeMode mode = RelativeMode::ratio;
    /// Two-sided bootstrap sign p-value; 1 until a bootstrap has run.
    double p_sign = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int n_pairs = 0;
    double r2 = 1.0;
    bool bootstrapped = false;
    int resamples = 0;
    std::uint64_t seed = 0;
    BootstrapInterval interval = BootstrapInterval::expanded_percentile;
    double scale_min = 0.0;
    double scale_max = 0.0;

    /// The sign of delta_beta is only interpreted when this holds.
    bool significant() const { return bootstrapped && p_sign < 0.05; }
};

struct BootstrapConfig {
    int resamples = 2000;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    /// Redraws allowed per resample when every drawn scale is identical.
    int max_redraws = 100;
    BootstrapInterval interval = BootstrapInterval::expanded_percentile;
};

struct BootstrapResult {
    double p_sign = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    /// Slope of every resample, in resample order.
    std::vector<double> slopes;
};

struct CrossoverResult {
    double f_star = 0.0;
    bool in_range = false;
};

struct CorrelationResult {
    double pearson_r = 0.0;
    double p_value = 1.0;
    /// OLS slope of the slopes against log10(covariate).
    double regression_slope = 0.0;
    double regression_intercept = 0.0;
    int n = 0;
    bool exhaustive = false;
    /// Permutations evaluated (n! when exhaustive).
    std::int64_t permutations = 0;
};

struct PermutationConfig {
    int permutations = 10000;
    std::uint64_t seed = 0;
    /// Enumerate every ordering when n is at most this.
    int exhaustive_max_n = 8;
    unsigned threads = 1;
};

/// Least squares of ln E on ln F. Throws FitError on non-positive E, fewer
/// than two points or a single distinct scale.
PowerLawFit fit_power_law(std::span<const ScaleValue> series, ScaleAxis axis = ScaleAxis::flops,
                          Estimator estimator = Estimator::ols);

/// E = alpha F^-beta + offset with offset profiled over [0, min E).
PowerLawFit fit_power_law_with_offset(std::span<const ScaleValue> series, ScaleAxis axis = ScaleAxis::flops);

double predict(const PowerLawFit& fit, double scale);

LogLinearFit fit_loglinear(std::span<const ScaleValue> series, Estimator estimator = Estimator::ols);
double predict(const LogLinearFit& fit, double scale);

/// Point estimate only; p_sign and the interval stay at their
/// non-bootstrapped values (1 and [delta_beta, delta_beta]).
RelativeFit fit_relative(std::span<const RelativePair> pairs, RelativeMode mode,
                         Estimator estimator = Estimator::ols);

/// Point estimate plus bootstrap sign test and percentile interval. The
/// interval is widened to include the point estimate if resampling skews it.
RelativeFit fit_relative(std::span<const RelativePair> pairs, RelativeMode mode, const BootstrapConfig& bootstrap,
                         Estimator estimator = Estimator::ols);

/// Resamples pairs with replacement and refits the slope. Each resample
/// draws from its own counter-derived stream, so the result is identical for
/// any thread count.
BootstrapResult bootstrap_sign_test(std::span<const RelativePair> pairs, RelativeMode mode,
                                    const BootstrapConfig& config, Estimator estimator = Estimator::ols);

/// (10^delta_beta - 1) * 100
double percent_per_decade(double delta_beta);

/// Scale where two ratio-mode curves meet. Throws FitError for parallel
/// curves and ValidationError for difference-mode inputs.
CrossoverResult crossover(const RelativeFit& a, const RelativeFit& b, std::pair<double, double> observed_span);

/// Pearson R between per-group slopes and log10 of a positive covariate,
/// with a permutation p-value (exhaustive for small n).
CorrelationResult slope_covariate_correlation(const std::map<std::string, double>& slopes,
                                              const std::map<std::string, double>& covariate,
                                              const PermutationConfig& config = {});

/// Pairs two frontier series point by point on matching scale (within a
/// relative tolerance). Throws ValidationError if fewer than two scales match.
std::vector<RelativePair> pair_series(const FrontierSeries& treatment, const FrontierSeries& baseline,
                                      double tolerance = 1e-6);

std::vector<ScaleValue> to_scale_values(const FrontierSeries& series);

nlohmann::json to_json(const PowerLawFit& fit);
nlohmann::json to_json(const LogLinearFit& fit);
nlohmann::json to_json(const RelativeFit& fit);
nlohmann::json to_json(const CrossoverResult& result);
nlohmann::json to_json(const CorrelationResult& result);
PowerLawFit power_law_from_json(const nlohmann::json& j);
RelativeFit relative_fit_from_json(const nlohmann::json& j);

} // namespace relscale
