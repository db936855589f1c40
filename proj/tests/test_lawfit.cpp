#include <doctest.h>

#include <array>
#include <random>

#include "relscale/error.hpp"
#include "relscale/lawfit.hpp"
#include "support.hpp"

using namespace relscale;
using testing::rel_close;

namespace {

std::vector<ScaleValue> power_series(double alpha, double beta, std::initializer_list<double> scales)
{
    std::vector<ScaleValue> out;
    for (double f : scales)
        out.push_back({f, alpha * std::pow(f, -beta)});
    return out;
}

std::vector<RelativePair> noisy_pairs(std::mt19937_64& rng, double gamma, double delta_beta, int n, double sigma)
{
    std::normal_distribution<double> eps(0.0, sigma);
    std::vector<RelativePair> out;
    for (int i = 0; i < n; ++i) {
        const double f = std::pow(10.0, 18.0 + 2.0 * i / (n - 1));
        const double base = 3.0 * std::pow(f, -0.1) * std::exp(eps(rng));
        const double treat = gamma * 3.0 * std::pow(f, -0.1 + delta_beta) * std::exp(eps(rng));
        out.push_back({f, treat, base});
    }
    return out;
}

long double plain_pearson(const std::array<double, 4>& x, const std::array<double, 4>& y)
{
    long double mx = 0, my = 0;
    for (int i = 0; i < 4; ++i) {
        mx += x[i] / 4.0L;
        my += y[i] / 4.0L;
    }
    long double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 4; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

} // namespace

TEST_CASE("power law on exact data")
{
    const auto s = power_series(3.0, 0.1, {1e18, 3e18, 1e19, 3e19, 1e20});
    const PowerLawFit f = fit_power_law(s);
    CHECK(rel_close(f.alpha, 3.0, 1e-9));
    CHECK(rel_close(f.beta, 0.1, 1e-9));
    CHECK(f.r2 == doctest::Approx(1.0));
    CHECK(f.n == 5);
    for (const auto& p : s)
        CHECK(rel_close(predict(f, p.scale), p.value, 1e-9));
}

TEST_CASE("two-point power law through the reported endpoints")
{
    const std::vector<ScaleValue> s{{1e18, 2.45}, {1e20, 1.56}};
    const PowerLawFit f = fit_power_law(s);
    const double beta = std::log(2.45 / 1.56) / std::log(100.0);
    CHECK(rel_close(f.beta, beta, 1e-12));
    CHECK(f.beta == doctest::Approx(0.0980).epsilon(0.001));
    CHECK(rel_close(predict(f, 1e19), std::sqrt(2.45 * 1.56), 1e-12));
    CHECK(predict(f, 1e19) == doctest::Approx(1.955).epsilon(0.001));
}

TEST_CASE("flat power law and prediction identities")
{
    const PowerLawFit f = fit_power_law(std::vector<ScaleValue>{{1e18, 2.0}, {1e19, 2.0}, {1e20, 2.0}});
    CHECK(std::abs(f.beta) < 1e-15);
    CHECK(rel_close(f.alpha, 2.0, 1e-12));
    PowerLawFit unit;
    CHECK(predict(unit, 12345.0) == 1.0);
    PowerLawFit three;
    three.alpha = 3.0;
    three.beta = 0.1;
    CHECK(rel_close(predict(three, 1e10), 0.3, 1e-15));
}

TEST_CASE("power law input errors")
{
    CHECK_THROWS_AS(fit_power_law(std::vector<ScaleValue>{{1e18, 2.0}}), FitError);
    CHECK_THROWS_AS(fit_power_law(std::vector<ScaleValue>{{1e18, 2.0}, {1e19, -1.0}}), FitError);
    CHECK_THROWS_AS(fit_power_law(std::vector<ScaleValue>{{1e18, 2.0}, {1e18, 1.0}}), FitError);
}

TEST_CASE("power law with offset recovers an irreducible term")
{
    std::vector<ScaleValue> s;
    for (int i = 0; i < 9; ++i) {
        const double f = std::pow(10.0, 18.0 + 0.5 * i);
        s.push_back({f, 40.0 * std::pow(f, -0.08) + 0.5});
    }
    const PowerLawFit f = fit_power_law_with_offset(s);
    CHECK(f.offset == doctest::Approx(0.5).epsilon(1e-3));
    CHECK(f.beta == doctest::Approx(0.08).epsilon(1e-3));
    for (const auto& p : s)
        CHECK(rel_close(predict(f, p.scale), p.value, 1e-5));
}

TEST_CASE("log-linear fits")
{
    std::vector<ScaleValue> line;
    for (double f : {1e18, 1e19, 1e20, 1e21})
        line.push_back({f, 0.1 + 0.05 * std::log10(f / 1e18)});
    const LogLinearFit l = fit_loglinear(line);
    CHECK(l.slope_per_decade == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(rel_close(l.ref_scale, std::pow(10.0, 19.5), 1e-12));
    CHECK(predict(l, 1e18) == doctest::Approx(0.1).epsilon(1e-12));

    const LogLinearFit flat = fit_loglinear(std::vector<ScaleValue>{{1e18, 0.3}, {1e19, 0.3}, {1e20, 0.3}});
    CHECK(flat.slope_per_decade == 0.0);
}

TEST_CASE("noisy risk-cluster slope within three standard errors, matching a normal-equations oracle")
{
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> eps(0.0, 0.0005);
    std::vector<ScaleValue> s;
    for (int i = 0; i < 12; ++i) {
        const double f = std::pow(10.0, 18.0 + i * 3.0 / 11.0);
        s.push_back({f, 0.21 - 0.0029 * std::log10(f / 1e18) + eps(rng)});
    }
    const LogLinearFit l = fit_loglinear(s);
    CHECK(std::abs(l.slope_per_decade + 0.0029) <= 3.0 * l.slope_stderr);

    long double n = s.size(), sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : s) {
        const long double x = std::log10(p.scale);
        sx += x;
        sy += p.value;
        sxx += x * x;
        sxy += x * p.value;
    }
    const long double oracle = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    CHECK(rel_close(l.slope_per_decade, static_cast<double>(oracle), 1e-8));
}

TEST_CASE("relative fit examples")
{
    std::vector<RelativePair> constant;
    for (double f : {1e18, 1e19, 1e20})
        constant.push_back({f, 0.8 * 2.0 * std::pow(f, -0.1), 2.0 * std::pow(f, -0.1)});
    const RelativeFit c = fit_relative(constant, RelativeMode::ratio);
    CHECK(rel_close(c.gamma, 0.8, 1e-9));
    CHECK(std::abs(c.delta_beta) < 1e-12);
    CHECK(c.p_sign == 1.0);
    CHECK_FALSE(c.significant());

    const std::vector<RelativePair> two{{1e18, 1.29, 1.0}, {1e20, 1.05, 1.0}};
    const RelativeFit t = fit_relative(two, RelativeMode::ratio);
    CHECK(rel_close(t.delta_beta, std::log(1.05 / 1.29) / std::log(100.0), 1e-12));
    CHECK(t.delta_beta == doctest::Approx(-0.0447).epsilon(0.01));

    const std::vector<RelativePair> same{{1e18, 2.0, 2.0}, {1e19, 1.8, 1.8}, {1e20, 1.6, 1.6}};
    const RelativeFit r = fit_relative(same, RelativeMode::ratio);
    CHECK(r.gamma == 1.0);
    CHECK(r.delta_beta == 0.0);
    CHECK(fit_relative(same, RelativeMode::difference).delta_beta == 0.0);

    CHECK_THROWS_AS(fit_relative(std::vector<RelativePair>{{1e18, 1.0, 0.0}, {1e19, 1.0, 1.0}}, RelativeMode::ratio),
                    ValidationError);
    CHECK_THROWS_AS(fit_relative(std::vector<RelativePair>{{1e18, 1.0, 1.0}}, RelativeMode::ratio), FitError);
}

TEST_CASE("consistency identity, antisymmetry and invariances")
{
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const auto pairs = noisy_pairs(rng, 0.5 + u(rng), 0.1 * (u(rng) - 0.5), 6 + trial % 8, 0.02);
        std::vector<ScaleValue> t, b;
        for (const auto& p : pairs) {
            t.push_back({p.scale, p.treatment});
            b.push_back({p.scale, p.baseline});
        }
        const RelativeFit rel = fit_relative(pairs, RelativeMode::ratio);
        const PowerLawFit ft = fit_power_law(t);
        const PowerLawFit fb = fit_power_law(b);
        CHECK(std::abs(rel.delta_beta - (fb.beta - ft.beta)) <= 1e-9);
        CHECK(rel_close(rel.gamma, ft.alpha / fb.alpha, 1e-9));

        auto swapped = pairs;
        for (auto& p : swapped)
            std::swap(p.treatment, p.baseline);
        const RelativeFit sw = fit_relative(swapped, RelativeMode::ratio);
        CHECK(sw.delta_beta == doctest::Approx(-rel.delta_beta).epsilon(1e-12));
        CHECK(rel_close(sw.gamma, 1.0 / rel.gamma, 1e-9));
        const RelativeFit d = fit_relative(pairs, RelativeMode::difference);
        const RelativeFit dsw = fit_relative(swapped, RelativeMode::difference);
        CHECK(dsw.delta_beta == doctest::Approx(-d.delta_beta).epsilon(1e-12));

        auto scaled = pairs;
        for (auto& p : scaled) {
            const double c = 0.1 + 5.0 * u(rng);
            p.treatment *= c;
            p.baseline *= c;
        }
        const RelativeFit sc = fit_relative(scaled, RelativeMode::ratio);
        CHECK(sc.delta_beta == doctest::Approx(rel.delta_beta).epsilon(1e-9));
        CHECK(rel_close(sc.gamma, rel.gamma, 1e-9));

        const double k = std::pow(10.0, 4.0 * u(rng) - 2.0);
        auto moved = pairs;
        for (auto& p : moved)
            p.scale *= k;
        const RelativeFit mv = fit_relative(moved, RelativeMode::ratio);
        CHECK(mv.delta_beta == doctest::Approx(rel.delta_beta).epsilon(1e-9));
        CHECK(rel_close(mv.gamma, rel.gamma * std::pow(k, -rel.delta_beta), 1e-8));
    }
}

TEST_CASE("bootstrap on a zero-noise constant ratio collapses")
{
    std::vector<RelativePair> pairs;
    for (int i = 0; i < 8; ++i) {
        const double f = std::pow(10.0, 18.0 + 0.25 * i);
        pairs.push_back({f, 0.8 * std::pow(f, -0.1), std::pow(f, -0.1)});
    }
    BootstrapConfig cfg;
    cfg.resamples = 500;
    cfg.seed = 3;
    const BootstrapResult b = bootstrap_sign_test(pairs, RelativeMode::ratio, cfg);
    for (double s : b.slopes)
        CHECK(std::abs(s) < 1e-12);
    CHECK(b.ci_high - b.ci_low <= 1e-9);
    CHECK(b.p_sign >= 2.0 / 500);
    CHECK(b.p_sign <= 1.0);
}

TEST_CASE("bootstrap needs three pairs and a positive resample count")
{
    const std::vector<RelativePair> two{{1e18, 1.29, 1.0}, {1e20, 1.05, 1.0}};
    CHECK_THROWS_AS(bootstrap_sign_test(two, RelativeMode::ratio, BootstrapConfig{}), FitError);
    BootstrapConfig bad;
    bad.resamples = 0;
    const std::vector<RelativePair> three{{1e18, 1.29, 1.0}, {1e19, 1.2, 1.0}, {1e20, 1.05, 1.0}};
    CHECK_THROWS_AS(bootstrap_sign_test(three, RelativeMode::ratio, bad), ValidationError);
}

TEST_CASE("bootstrap is bit-identical across thread counts and clips p")
{
    std::mt19937_64 rng(8);
    const auto pairs = noisy_pairs(rng, 1.3, -0.02, 15, 0.01);
    BootstrapConfig cfg;
    cfg.resamples = 2000;
    cfg.seed = 77;
    cfg.threads = 1;
    const RelativeFit one = fit_relative(pairs, RelativeMode::ratio, cfg);
    const BootstrapResult slopes_one = bootstrap_sign_test(pairs, RelativeMode::ratio, cfg);
    for (unsigned threads : {2u, 3u, 8u}) {
        cfg.threads = threads;
        const RelativeFit many = fit_relative(pairs, RelativeMode::ratio, cfg);
        CHECK(many.p_sign == one.p_sign);
        CHECK(many.ci_low == one.ci_low);
        CHECK(many.ci_high == one.ci_high);
        CHECK(bootstrap_sign_test(pairs, RelativeMode::ratio, cfg).slopes == slopes_one.slopes);
    }
    CHECK(one.bootstrapped);
    CHECK(one.ci_low <= one.delta_beta);
    CHECK(one.delta_beta <= one.ci_high);
    CHECK(one.p_sign >= 2.0 / 2000);
    CHECK(one.p_sign <= 1.0);
    cfg.seed = 78;
    CHECK(bootstrap_sign_test(pairs, RelativeMode::ratio, cfg).slopes != slopes_one.slopes);
}

TEST_CASE("p_sign matches a direct count of the resample signs")
{
    std::mt19937_64 rng(12);
    const auto pairs = noisy_pairs(rng, 1.0, 0.002, 6, 0.02);
    BootstrapConfig cfg;
    cfg.resamples = 999;
    cfg.seed = 5;
    cfg.interval = BootstrapInterval::percentile;
    const BootstrapResult b = bootstrap_sign_test(pairs, RelativeMode::ratio, cfg);
    int neg = 0, pos = 0;
    for (double s : b.slopes) {
        neg += s <= 0.0;
        pos += s >= 0.0;
    }
    const double expected = std::clamp(2.0 * std::min(neg, pos) / 999.0, 2.0 / 999.0, 1.0);
    CHECK(b.p_sign == expected);
    std::vector<double> sorted = b.slopes;
    std::sort(sorted.begin(), sorted.end());
    CHECK(b.ci_low == doctest::Approx(sorted[24] + 0.95 * (sorted[25] - sorted[24])));

    cfg.interval = BootstrapInterval::expanded_percentile;
    const BootstrapResult wide = bootstrap_sign_test(pairs, RelativeMode::ratio, cfg);
    CHECK(wide.slopes == b.slopes);
    CHECK(wide.p_sign == b.p_sign);
    CHECK(wide.ci_low <= b.ci_low);
    CHECK(wide.ci_high >= b.ci_high);
}

TEST_CASE("expanded percentile levels")
{
    // n = 15: sqrt(15/13) * t(0.975, 13) = 2.320608, lower tail Phi(-2.320608) = 0.010154
    CHECK(bootstrap_tail_level(BootstrapInterval::expanded_percentile, 15) == doctest::Approx(0.0101549).epsilon(1e-4));
    CHECK(bootstrap_tail_level(BootstrapInterval::percentile, 15) == 0.025);
    double prev = 0.0;
    for (std::size_t n = 3; n < 400; n += 7) {
        const double level = bootstrap_tail_level(BootstrapInterval::expanded_percentile, n);
        CHECK(level > prev);
        CHECK(level < 0.025);
        prev = level;
    }
    CHECK(prev == doctest::Approx(0.025).epsilon(0.02));
    CHECK(bootstrap_interval_from_string(to_string(BootstrapInterval::percentile)) == BootstrapInterval::percentile);
    CHECK_THROWS_AS(bootstrap_interval_from_string("bca"), ValidationError);
}

TEST_CASE("percent per decade")
{
    CHECK(percent_per_decade(0.0) == 0.0);
    CHECK(percent_per_decade(1.0) == doctest::Approx(900.0));
    CHECK(percent_per_decade(-0.01) == doctest::Approx(-2.276278).epsilon(1e-6));
}

TEST_CASE("crossover closed form and error cases")
{
    RelativeFit a, b;
    a.gamma = 0.9;
    a.delta_beta = 0.02;
    b.gamma = 0.8;
    b.delta_beta = 0.05;
    const CrossoverResult x = crossover(a, b, {1.0, 100.0});
    CHECK(rel_close(x.f_star, std::pow(1.125, 1.0 / 0.03), 1e-10));
    CHECK(x.f_star == doctest::Approx(50.7).epsilon(0.002));
    CHECK(x.in_range);
    CHECK_FALSE(crossover(a, b, {1e18, 1e20}).in_range);
    CHECK(rel_close(crossover(b, a, {1.0, 100.0}).f_star, x.f_star, 1e-12));

    RelativeFit c = b;
    c.gamma = a.gamma;
    CHECK(crossover(a, c, {0.5, 2.0}).f_star == doctest::Approx(1.0));
    c = a;
    c.gamma = 0.5;
    CHECK_THROWS_WITH_AS(crossover(a, c, {1.0, 2.0}), doctest::Contains("parallel"), FitError);
    c.mode = RelativeMode::difference;
    c.delta_beta = 0.3;
    CHECK_THROWS_AS(crossover(a, c, {1.0, 2.0}), ValidationError);
}

TEST_CASE("exhaustive permutation p-value on four groups matches hand enumeration")
{
    const std::array<double, 4> cov{10.0, 1000.0, 100.0, 1e5};
    const std::array<double, 4> slope{-0.3, 0.2, -0.1, 0.15};
    std::map<std::string, double> slopes, covariate;
    std::array<double, 4> logs{};
    for (int i = 0; i < 4; ++i) {
        const std::string g(1, static_cast<char>('a' + i));
        slopes[g] = slope[i];
        covariate[g] = cov[i];
        logs[i] = std::log10(cov[i]);
    }
    const CorrelationResult r = slope_covariate_correlation(slopes, covariate);
    CHECK(r.exhaustive);
    CHECK(r.permutations == 24);

    const long double observed = plain_pearson(logs, slope);
    CHECK(r.pearson_r == doctest::Approx(static_cast<double>(observed)).epsilon(1e-12));
    int extreme = 0, total = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 4; ++k)
                for (int l = 0; l < 4; ++l) {
                    if (i == j || i == k || i == l || j == k || j == l || k == l)
                        continue;
                    ++total;
                    const std::array<double, 4> perm{slope[i], slope[j], slope[k], slope[l]};
                    if (std::abs(plain_pearson(logs, perm)) >= std::abs(observed) - 1e-12L)
                        ++extreme;
                }
    REQUIRE(total == 24);
    CHECK(r.p_value == static_cast<double>(extreme) / 24.0);
}

TEST_CASE("perfect linear relation and error cases")
{
    std::map<std::string, double> slopes, covariate;
    for (int i = 0; i < 10; ++i) {
        const std::string g = "g" + std::to_string(i);
        covariate[g] = std::pow(10.0, 0.3 * i + 1.0);
        slopes[g] = 0.35 * (0.3 * i + 1.0) - 0.2;
    }
    PermutationConfig cfg;
    cfg.permutations = 2000;
    cfg.seed = 1;
    const CorrelationResult r = slope_covariate_correlation(slopes, covariate, cfg);
    CHECK(r.pearson_r == doctest::Approx(1.0));
    CHECK(r.regression_slope == doctest::Approx(0.35));
    CHECK_FALSE(r.exhaustive);
    CHECK(r.p_value == doctest::Approx(1.0 / 2001.0));
    cfg.threads = 4;
    CHECK(slope_covariate_correlation(slopes, covariate, cfg).p_value == r.p_value);

    auto constant = covariate;
    for (auto& [g, v] : constant)
        v = 7.0;
    CHECK_THROWS_WITH_AS(slope_covariate_correlation(slopes, constant), doctest::Contains("zero variance"), FitError);
    auto missing = covariate;
    missing.erase("g3");
    CHECK_THROWS_AS(slope_covariate_correlation(slopes, missing), ValidationError);
}

TEST_CASE("pearson R is invariant under positive affine maps of the slopes")
{
    std::mt19937_64 rng(90);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::map<std::string, double> slopes, covariate;
    for (int i = 0; i < 6; ++i) {
        const std::string g = "g" + std::to_string(i);
        covariate[g] = std::pow(10.0, 3.0 * u(rng));
        slopes[g] = u(rng);
    }
    const CorrelationResult base = slope_covariate_correlation(slopes, covariate);
    auto mapped = slopes;
    for (auto& [g, v] : mapped)
        v = 4.0 * v + 3.0;
    auto cov_scaled = covariate;
    for (auto& [g, v] : cov_scaled)
        v *= 1000.0;
    CHECK(slope_covariate_correlation(mapped, covariate).pearson_r == doctest::Approx(base.pearson_r).epsilon(1e-12));
    CHECK(slope_covariate_correlation(slopes, cov_scaled).pearson_r == doctest::Approx(base.pearson_r).epsilon(1e-12));
    CHECK(slope_covariate_correlation(mapped, covariate).p_value == base.p_value);
}

TEST_CASE("relative fit JSON round-trip")
{
    std::mt19937_64 rng(4);
    const auto pairs = noisy_pairs(rng, 1.1, 0.01, 8, 0.01);
    BootstrapConfig cfg;
    cfg.resamples = 200;
    const RelativeFit f = fit_relative(pairs, RelativeMode::ratio, cfg);
    const RelativeFit back = relative_fit_from_json(nlohmann::json::parse(to_json(f).dump()));
    CHECK(back.gamma == f.gamma);
    CHECK(back.delta_beta == f.delta_beta);
    CHECK(back.p_sign == f.p_sign);
    CHECK(back.ci_low == f.ci_low);
    CHECK(back.ci_high == f.ci_high);
    CHECK(back.bootstrapped);
    const PowerLawFit p = fit_power_law(power_series(3.0, 0.1, {1e18, 1e19, 1e20}));
    const PowerLawFit pb = power_law_from_json(nlohmann::json::parse(to_json(p).dump()));
    CHECK(pb.alpha == p.alpha);
    CHECK(pb.beta == p.beta);
}
