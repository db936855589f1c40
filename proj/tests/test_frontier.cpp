#include <doctest.h>

#include <random>

#include "relscale/error.hpp"
#include "relscale/frontier.hpp"
#include "relscale/synthlab.hpp"
#include "support.hpp"

using namespace relscale;
using testing::rel_close;

namespace {

std::vector<TokenMetric> parabola(double a, double x0, double c, int n, double lo, double hi)
{
    std::vector<TokenMetric> out;
    for (int i = 0; i < n; ++i) {
        const double x = lo + (hi - lo) * i / (n - 1);
        out.push_back({std::pow(10.0, x), a * (x - x0) * (x - x0) + c});
    }
    return out;
}

RunRecord internal_run(std::string id, double flops, std::int64_t tokens, double metric)
{
    RunRecord r;
    r.run_id = std::move(id);
    r.source = Source::internal;
    r.dataset = "d";
    r.flops = flops;
    r.tokens = tokens;
    r.params = std::llround(flops / (6.0 * static_cast<double>(tokens)));
    r.metrics["m"] = metric;
    return r;
}

} // namespace

TEST_CASE("symmetric exact parabola")
{
    const std::vector<TokenMetric> s{{1e9, 3.0}, {1e10, 2.0}, {1e11, 3.0}};
    const FrontierPoint p = fit_isoflop_slice(s, 1e19);
    CHECK(rel_close(p.optimal_tokens, 1e10, 1e-12));
    CHECK(rel_close(p.optimal_metric, 2.0, 1e-12));
    CHECK(rel_close(p.curvature, 1.0, 1e-12));
    CHECK(p.fit_r2 == doctest::Approx(1.0));
    CHECK(p.n_points == 3);
    CHECK(p.budget == 1e19);
}

TEST_CASE("seven-point parabola recovers its parameters to 1e-9")
{
    const FrontierPoint p = fit_isoflop_slice(parabola(0.5, 9.7, 1.8, 7, 8.9, 10.6), 1e19);
    CHECK(rel_close(std::log10(p.optimal_tokens), 9.7, 1e-9));
    CHECK(rel_close(p.optimal_metric, 1.8, 1e-9));
    CHECK(rel_close(p.curvature, 0.5, 1e-9));
}

TEST_CASE("slice fit errors")
{
    const std::vector<TokenMetric> concave{{1e9, 1.0}, {1e10, 2.0}, {1e11, 2.5}, {1e12, 2.6}};
    CHECK_THROWS_WITH_AS(fit_isoflop_slice(concave, 1e19), doctest::Contains("no interior minimum"), FitError);
    const std::vector<TokenMetric> two{{1e9, 3.0}, {1e10, 2.0}};
    CHECK_THROWS_AS(fit_isoflop_slice(two, 1e19), FitError);
    const std::vector<TokenMetric> repeated{{1e9, 3.0}, {1e9, 2.0}, {1e10, 1.0}};
    CHECK_THROWS_WITH_AS(fit_isoflop_slice(repeated, 1e19), doctest::Contains("rank-deficient"), FitError);
    // Vertex at 10^13 with data in [10^9, 10^10]: outside the 2x window.
    CHECK_THROWS_WITH_AS(fit_isoflop_slice(parabola(0.1, 13.0, 1.0, 5, 9.0, 10.0), 1e19), doctest::Contains("window"),
                         FitError);
    // Inside the window but beyond the data: accepted.
    CHECK_NOTHROW(fit_isoflop_slice(parabola(1.0, 10.2, 1.0, 5, 9.0, 10.0), 1e19));
}

TEST_CASE("observed-min selection reports the best run")
{
    const auto s = parabola(0.5, 9.71, 1.8, 7, 8.9, 10.6);
    const FrontierPoint p = fit_isoflop_slice(s, 1e19, OptimumSelection::observed_min);
    const auto best = std::min_element(s.begin(), s.end(), [](auto& a, auto& b) { return a.metric < b.metric; });
    CHECK(p.optimal_tokens == best->tokens);
    CHECK(p.optimal_metric == best->metric);
    CHECK(p.curvature == doctest::Approx(0.5));
}

TEST_CASE("scale equivariance and vertical offset")
{
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double a = 0.1 + u(rng);
        const double x0 = 9.0 + u(rng);
        const auto s = parabola(a, x0, 1.0 + u(rng), 7, x0 - 1.0 + 0.3 * u(rng), x0 + 1.0 - 0.3 * u(rng));
        const FrontierPoint base = fit_isoflop_slice(s, 1e19);
        const double k = std::pow(10.0, 3.0 * u(rng) - 1.5);
        const double delta = u(rng) - 0.5;
        auto scaled = s;
        auto shifted = s;
        for (auto& p : scaled)
            p.tokens *= k;
        for (auto& p : shifted)
            p.metric += delta;
        const FrontierPoint ps = fit_isoflop_slice(scaled, 1e19);
        const FrontierPoint po = fit_isoflop_slice(shifted, 1e19);
        CHECK(std::log10(ps.optimal_tokens) == doctest::Approx(std::log10(base.optimal_tokens) + std::log10(k)).epsilon(1e-9));
        CHECK(rel_close(ps.optimal_metric, base.optimal_metric, 1e-9));
        CHECK(rel_close(ps.curvature, base.curvature, 1e-9));
        CHECK(po.optimal_metric == doctest::Approx(base.optimal_metric + delta).epsilon(1e-9));
        CHECK(rel_close(po.optimal_tokens, base.optimal_tokens, 1e-9));
    }
}

TEST_CASE("synthetic sweep frontier lands on the known minima")
{
    SyntheticSpec spec;
    spec.budgets = {1e18, 1e19, 1e20};
    spec.subgroups = {{"g", 3.0, 0.1}};
    const RunSet runs = generate(spec);
    const FrontierResult res = extract_frontier(runs, metric_key(spec, "g"));
    CHECK(res.warnings.empty());
    REQUIRE(res.series.points.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const double F = spec.budgets[i];
        const auto& p = res.series.points[i];
        CHECK(p.budget == F);
        CHECK(rel_close(p.optimal_metric, 3.0 * std::pow(F, -0.1), 1e-9));
        CHECK(rel_close(p.optimal_tokens, std::sqrt(20.0 * F / 6.0), 1e-9));
        CHECK(p.n_points == 7);
    }
}

TEST_CASE("one run per budget yields an empty series with warnings")
{
    const RunSet runs({internal_run("a", 1e18, 1'000'000'000, 2.0), internal_run("b", 1e19, 3'000'000'000, 1.8)}, "t");
    const FrontierResult res = extract_frontier(runs, "m");
    CHECK(res.series.points.empty());
    CHECK(res.warnings.size() >= 2);
    CHECK_THROWS_AS(extract_frontier(runs, "absent"), FitError);
}

TEST_CASE("budget bucketing tolerates small FLOP drift")
{
    std::vector<RunRecord> recs;
    const double xs[] = {9.0, 9.5, 10.0, 10.5, 11.0};
    for (int i = 0; i < 5; ++i) {
        const double x = xs[i];
        const auto tokens = static_cast<std::int64_t>(std::pow(10.0, x));
        recs.push_back(internal_run("r" + std::to_string(i), 1e20 * (1.0 + 0.01 * i), tokens, (x - 10.0) * (x - 10.0) + 1.0));
    }
    const FrontierResult res = extract_frontier(RunSet(recs, "t"), "m");
    REQUIRE(res.series.points.size() == 1);
    CHECK(res.series.points[0].budget > 1e20);
    CHECK(res.series.points[0].budget < 1.04e20);
    FrontierOptions tight;
    tight.budget_tolerance = 0.001;
    CHECK(extract_frontier(RunSet(recs, "t"), "m", tight).series.points.empty());
}

TEST_CASE("token axis passes matching runs through unfitted")
{
    std::vector<RunRecord> recs;
    recs.push_back(internal_run("a", 6.0 * 1e8 * 5e8, 500'000'000, 2.0));
    recs.push_back(internal_run("b", 6.0 * 1e8 * 1e9, 1'000'000'000, 1.9));
    recs.push_back(internal_run("c", 6.0 * 3e8 * 1e9, 1'000'000'000, 1.7));
    recs.push_back(internal_run("d", 6.0 * 1e8 * 2e9, 2'000'000'000, 1.8));
    FrontierOptions o;
    o.scale_axis = ScaleAxis::tokens;
    o.fixed_value = 1e8;
    const FrontierResult res = extract_frontier(RunSet(recs, "t"), "m", o);
    REQUIRE(res.series.points.size() == 3);
    CHECK(res.series.scales() == std::vector<double>{5e8, 1e9, 2e9});
    CHECK(res.series.metrics() == std::vector<double>{2.0, 1.9, 1.8});
    CHECK(res.series.points[0].n_points == 1);
    CHECK(res.series.points[0].curvature == 0.0);

    o.scale_axis = ScaleAxis::params;
    o.fixed_value = 1e9;
    const FrontierResult by_params = extract_frontier(RunSet(recs, "t"), "m", o);
    REQUIRE(by_params.series.points.size() == 2);
    CHECK(by_params.series.scales() == std::vector<double>{1e8, 3e8});
}

TEST_CASE("frontier series round-trip through JSON")
{
    SyntheticSpec spec;
    spec.budgets = {1e18, 1e19};
    spec.subgroups = {{"g", 3.0, 0.1}};
    const FrontierSeries s = extract_frontier(generate(spec), "loss/g").series;
    const FrontierSeries back = frontier_from_json(nlohmann::json::parse(to_json(s).dump()));
    REQUIRE(back.points.size() == s.points.size());
    CHECK(back.metric_key == s.metric_key);
    for (std::size_t i = 0; i < s.points.size(); ++i) {
        CHECK(back.points[i].budget == s.points[i].budget);
        CHECK(back.points[i].optimal_metric == s.points[i].optimal_metric);
        CHECK(back.points[i].optimal_tokens == s.points[i].optimal_tokens);
    }
}
