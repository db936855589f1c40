#include "relscale/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "relscale/calibration.hpp"
#include "relscale/error.hpp"
#include "relscale/frontier.hpp"
#include "relscale/io.hpp"
#include "relscale/lawfit.hpp"
#include "relscale/planner.hpp"
#include "relscale/plot.hpp"
#include "relscale/report.hpp"
#include "relscale/store.hpp"
#include "relscale/synthlab.hpp"

namespace relscale {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Context {
    unsigned threads = 1;
    std::ostream* out = nullptr;
};

using Runner = std::function<void()>;
using Registry = std::vector<std::pair<CLI::App*, Runner>>;

constexpr int kFittedSamples = 64;

void emit(const std::string& path, const std::string& text, std::ostream& out)
{
    if (path.empty() || path == "-")
        out << text;
    else
        write_file_atomic(path, text);
}

void emit_report(const AnalysisReport& report, const std::string& path, std::ostream& out)
{
    emit(path, to_json(report).dump(2) + "\n", out);
}

json read_json(const fs::path& path)
{
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

const json& field(const json& j, const char* key, const std::string& what)
{
    if (!j.is_object() || !j.contains(key))
        throw ValidationError(what + " has no '" + key + "' entry");
    return j.at(key);
}

LogFormat resolve_format(const std::string& format, const fs::path& path)
{
    if (format == "jsonl")
        return LogFormat::jsonl;
    if (format == "csv")
        return LogFormat::csv;
    return format_from_path(path);
}

RunSet load_runs(const std::string& path, const std::string& format)
{
    return ingest_runs(path, resolve_format(format, path));
}

std::string runs_text(const RunSet& runs, LogFormat format)
{
    std::ostringstream s;
    if (format == LogFormat::csv)
        write_runs_csv(runs, s);
    else
        write_runs_jsonl(runs, s);
    return s.str();
}

Estimator estimator_from(const std::string& text)
{
    return text == "huber" ? Estimator::huber : Estimator::ols;
}

const auto kFormats = CLI::IsMember({"auto", "jsonl", "csv"});
const auto kAxes = CLI::IsMember({"flops", "tokens", "params"});
const auto kModes = CLI::IsMember({"ratio", "difference"});
const auto kEstimators = CLI::IsMember({"ols", "huber"});

struct FrontierArgs {
    std::string axis = "flops";
    double tolerance = 0.05;
    std::string select = "vertex";
    double fixed = std::numeric_limits<double>::quiet_NaN();

    void add_to(CLI::App* sub)
    {
        sub->add_option("--axis", axis, "Scale axis: flops, tokens or params")->check(kAxes)->capture_default_str();
        sub->add_option("--tolerance", tolerance, "Relative tolerance when bucketing budgets")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        sub->add_option("--select", select, "Slice optimum: vertex or observed-min")
            ->check(CLI::IsMember({"vertex", "observed-min"}))
            ->capture_default_str();
        sub->add_option("--fixed", fixed, "Held-fixed value on the token or parameter axis");
    }

    FrontierOptions options() const
    {
        FrontierOptions o;
        o.scale_axis = scale_axis_from_string(axis);
        o.budget_tolerance = tolerance;
        o.selection = select == "observed-min" ? OptimumSelection::observed_min : OptimumSelection::vertex;
        if (!std::isnan(fixed))
            o.fixed_value = fixed;
        return o;
    }
};

json pairs_json(std::span<const RelativePair> pairs, RelativeMode mode)
{
    json out = json::array();
    for (const auto& p : pairs) {
        json row{{"scale", p.scale}, {"treatment", p.treatment}, {"baseline", p.baseline}};
        if (mode == RelativeMode::ratio)
            row["ratio"] = p.treatment / p.baseline;
        else
            row["difference"] = p.treatment - p.baseline;
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<ScaleValue> treatment_values(std::span<const RelativePair> pairs)
{
    std::vector<ScaleValue> v;
    for (const auto& p : pairs)
        v.push_back({p.scale, p.treatment});
    return v;
}

std::vector<ScaleValue> baseline_values(std::span<const RelativePair> pairs)
{
    std::vector<ScaleValue> v;
    for (const auto& p : pairs)
        v.push_back({p.scale, p.baseline});
    return v;
}

// ---------------------------------------------------------------------------

void add_plan(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string config;
        std::vector<double> budgets{1e18, 3e18, 1e19, 3e19, 1e20};
        std::string output;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("plan", "Generate IsoFLOP sweep configurations as JSONL");
    sub->add_option("--config", a->config, "Sweep policy JSON");
    sub->add_option("--budgets", a->budgets, "FLOP budgets")->capture_default_str();
    sub->add_option("--output", a->output, "Output JSONL (default stdout)");
    reg.emplace_back(sub, [a, &ctx] {
        const SweepPolicy policy = a->config.empty() ? SweepPolicy{} : load_policy(a->config);
        policy.validate();
        std::string text;
        for (const auto& p : plan_sweep(a->budgets, policy))
            text += to_json(p).dump() + "\n";
        emit(a->output, text, *ctx.out);
    });
}

void add_simulate(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string config;
        std::string output;
        std::string truth;
        std::string format = "auto";
        std::uint64_t seed = 0;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("simulate", "Generate synthetic runs with known scaling laws");
    sub->add_option("--config", a->config, "Synthetic spec JSON")->required();
    sub->add_option("--output", a->output, "Run log to write")->required();
    sub->add_option("--truth", a->truth, "Ground-truth report to write");
    sub->add_option("--format", a->format, "Run log format")->check(kFormats)->capture_default_str();
    auto* seed = sub->add_option("--seed", a->seed, "Override the spec's seed");
    reg.emplace_back(sub, [a, seed, &ctx] {
        SyntheticSpec spec = load_synthetic_spec(a->config);
        if (seed->count() > 0)
            spec.seed = a->seed;
        if (!spec.subgroups.empty() && !spec.mixture.empty())
            throw ValidationError("synthetic spec mixes power-law and mixture subgroups");
        RunSet runs;
        json truth;
        if (spec.subgroups.empty()) {
            MixtureOutput m = generate_mixture(spec, spec.token_schedule);
            truth = to_json(m);
            runs = std::move(m.runs);
        } else {
            runs = generate(spec, ctx.threads);
            truth = to_json(known_truth(spec));
        }
        write_file_atomic(a->output, runs_text(runs, resolve_format(a->format, a->output)));
        if (!a->truth.empty()) {
            AnalysisReport r = make_report("simulate", {a->config});
            r.results = {{"seed", spec.seed}, {"truth", truth}};
            save_report(r, a->truth);
        }
    });
}

void add_ingest(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string input;
        std::string format = "auto";
        std::string grouping;
        std::string prefix;
        std::string output;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("ingest", "Validate a run log, optionally aggregating metrics into groups");
    sub->add_option("--input", a->input, "Run log (JSONL or CSV)")->required();
    sub->add_option("--format", a->format, "Input format")->check(kFormats)->capture_default_str();
    sub->add_option("--grouping", a->grouping, "Grouping JSON, or 'risk-clusters' for the built-in table");
    sub->add_option("--prefix", a->prefix, "Metric prefix of the grouped items");
    sub->add_option("--output", a->output, "Write the (aggregated) runs here; format from extension");
    reg.emplace_back(sub, [a, &ctx] {
        RunSet runs = load_runs(a->input, a->format);
        if (!a->grouping.empty()) {
            const GroupingSpec spec =
                a->grouping == "risk-clusters" ? risk_cluster_grouping() : load_grouping(a->grouping);
            runs = aggregate_by_group(runs, spec, a->prefix);
        }
        if (!a->output.empty())
            write_file_atomic(a->output, runs_text(runs, format_from_path(a->output)));

        std::size_t internal = 0;
        std::map<std::string, std::size_t> metrics;
        for (const auto& r : runs) {
            internal += r.source == Source::internal;
            for (const auto& [k, v] : r.metrics)
                ++metrics[k];
        }
        auto& out = *ctx.out;
        out << "runs: " << runs.size() << " (" << internal << " internal, " << runs.size() - internal
            << " external)\n";
        out << "metrics: " << metrics.size() << "\n";
        for (const auto& [k, n] : metrics)
            out << "  " << k << " (" << n << ")\n";
    });
}

void add_frontier(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string input;
        std::string format = "auto";
        std::string metric;
        FrontierArgs frontier;
        std::string output;
        std::string csv;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("frontier", "Extract the compute-optimal frontier of one metric");
    sub->add_option("--input", a->input, "Run log")->required();
    sub->add_option("--format", a->format, "Input format")->check(kFormats)->capture_default_str();
    sub->add_option("--metric", a->metric, "Metric key")->required();
    a->frontier.add_to(sub);
    sub->add_option("--output", a->output, "Report JSON (default stdout)");
    sub->add_option("--csv", a->csv, "Also write budget,optimal_tokens,optimal_metric rows");
    reg.emplace_back(sub, [a, &ctx] {
        const RunSet runs = load_runs(a->input, a->format);
        FrontierResult res = extract_frontier(runs, a->metric, a->frontier.options());
        AnalysisReport r = make_report("frontier", {a->input});
        r.results = {{"metric", a->metric}, {"frontier", to_json(res.series)}};
        r.warnings = std::move(res.warnings);
        emit_report(r, a->output, *ctx.out);
        if (!a->csv.empty()) {
            std::string text = "budget,optimal_tokens,optimal_metric\n";
            char buf[96];
            for (const auto& p : res.series.points) {
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.budget, p.optimal_tokens, p.optimal_metric);
                text += buf;
            }
            write_file_atomic(a->csv, text);
        }
    });
}

void add_fit(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string input;
        std::string format = "auto";
        std::string metric;
        std::string law = "power";
        std::string estimator = "ols";
        FrontierArgs frontier;
        std::string output;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("fit", "Fit an absolute scaling law to a frontier");
    sub->add_option("--input", a->input, "Run log, or a frontier report (.json)")->required();
    sub->add_option("--format", a->format, "Run log format")->check(kFormats)->capture_default_str();
    sub->add_option("--metric", a->metric, "Metric key (run logs only)");
    sub->add_option("--law", a->law, "power, power-offset or loglinear")
        ->check(CLI::IsMember({"power", "power-offset", "loglinear"}))
        ->capture_default_str();
    sub->add_option("--estimator", a->estimator, "ols or huber")->check(kEstimators)->capture_default_str();
    a->frontier.add_to(sub);
    sub->add_option("--output", a->output, "Report JSON (default stdout)");
    reg.emplace_back(sub, [a, &ctx] {
        AnalysisReport r = make_report("fit", {a->input});
        FrontierSeries series;
        if (fs::path(a->input).extension() == ".json") {
            const AnalysisReport src = report_from_json(read_json(a->input));
            series = frontier_from_json(field(src.results, "frontier", a->input));
        } else {
            if (a->metric.empty())
                throw ValidationError("--metric is required when fitting a run log");
            FrontierResult res = extract_frontier(load_runs(a->input, a->format), a->metric, a->frontier.options());
            series = std::move(res.series);
            r.warnings = std::move(res.warnings);
        }
        const auto values = to_scale_values(series);
        const Estimator est = estimator_from(a->estimator);
        json fit;
        if (a->law == "loglinear")
            fit = to_json(fit_loglinear(values, est));
        else if (a->law == "power-offset")
            fit = to_json(fit_power_law_with_offset(values, series.scale_axis));
        else
            fit = to_json(fit_power_law(values, series.scale_axis, est));
        r.results = {{"metric", series.metric_key},
                     {"law", a->law},
                     {"estimator", a->estimator},
                     {"fit", fit},
                     {"frontier", to_json(series)}};
        emit_report(r, a->output, *ctx.out);
    });
}

struct RelativeArgs {
    std::string mode = "ratio";
    int resamples = 2000;
    std::uint64_t seed = 0;
    std::string estimator = "ols";
    std::string interval = "expanded-percentile";

    void add_to(CLI::App* sub)
    {
        sub->add_option("--mode", mode, "ratio or difference")->check(kModes)->capture_default_str();
        sub->add_option("--resamples", resamples, "Bootstrap resamples (0 disables the bootstrap)")
            ->check(CLI::NonNegativeNumber)
            ->capture_default_str();
        sub->add_option("--seed", seed, "Bootstrap seed")->capture_default_str();
        sub->add_option("--estimator", estimator, "ols or huber")->check(kEstimators)->capture_default_str();
        sub->add_option("--interval", interval, "Bootstrap CI: expanded-percentile or percentile")
            ->check(CLI::IsMember({"expanded-percentile", "percentile"}))
            ->capture_default_str();
    }

    BootstrapConfig bootstrap(unsigned threads) const
    {
        BootstrapConfig cfg;
        cfg.resamples = resamples;
        cfg.seed = seed;
        cfg.threads = threads;
        cfg.interval = bootstrap_interval_from_string(interval);
        return cfg;
    }

    RelativeFit fit(std::span<const RelativePair> pairs, unsigned threads) const
    {
        const RelativeMode m = relative_mode_from_string(mode);
        if (resamples == 0)
            return fit_relative(pairs, m, estimator_from(estimator));
        return fit_relative(pairs, m, bootstrap(threads), estimator_from(estimator));
    }
};

// Relative fit of `treatment` against `baseline` on their paired frontiers.
json relative_block(const RunSet& runs, const std::string& treatment, const std::string& baseline,
                    const FrontierOptions& options, const RelativeArgs& rel, unsigned threads,
                    std::vector<std::string>& warnings, std::vector<RelativePair>* pairs_out = nullptr)
{
    FrontierResult t = extract_frontier(runs, treatment, options);
    FrontierResult b = extract_frontier(runs, baseline, options);
    warnings.insert(warnings.end(), t.warnings.begin(), t.warnings.end());
    warnings.insert(warnings.end(), b.warnings.begin(), b.warnings.end());
    const std::vector<RelativePair> pairs = pair_series(t.series, b.series);
    const RelativeFit fit = rel.fit(pairs, threads);
    json block{{"treatment", treatment},
               {"baseline", baseline},
               {"relative", to_json(fit)},
               {"pairs", pairs_json(pairs, fit.mode)}};
    if (fit.mode == RelativeMode::ratio) {
        const ScaleAxis axis = options.scale_axis;
        block["treatment_fit"] = to_json(fit_power_law(treatment_values(pairs), axis));
        block["baseline_fit"] = to_json(fit_power_law(baseline_values(pairs), axis));
    }
    if (pairs_out)
        *pairs_out = pairs;
    return block;
}

void add_relfit(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string input;
        std::string format = "auto";
        std::string metric;
        std::string baseline;
        RelativeArgs rel;
        FrontierArgs frontier;
        std::string output;
        std::string slopes_csv;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("relfit", "Fit a relative scaling law of one metric against a baseline");
    sub->add_option("--input", a->input, "Run log")->required();
    sub->add_option("--format", a->format, "Input format")->check(kFormats)->capture_default_str();
    sub->add_option("--metric", a->metric, "Treatment metric key")->required();
    sub->add_option("--baseline", a->baseline, "Baseline metric key")->required();
    a->rel.add_to(sub);
    a->frontier.add_to(sub);
    sub->add_option("--output", a->output, "Report JSON (default stdout)");
    sub->add_option("--slopes-csv", a->slopes_csv, "Write every bootstrap slope as CSV");
    reg.emplace_back(sub, [a, &ctx] {
        const RunSet runs = load_runs(a->input, a->format);
        AnalysisReport r = make_report("relfit", {a->input});
        std::vector<RelativePair> pairs;
        r.results = relative_block(runs, a->metric, a->baseline, a->frontier.options(), a->rel, ctx.threads,
                                   r.warnings, &pairs);
        emit_report(r, a->output, *ctx.out);
        if (!a->slopes_csv.empty()) {
            if (a->rel.resamples == 0)
                throw ValidationError("--slopes-csv needs --resamples > 0");
            const BootstrapResult boot = bootstrap_sign_test(pairs, relative_mode_from_string(a->rel.mode),
                                                             a->rel.bootstrap(ctx.threads),
                                                             estimator_from(a->rel.estimator));
            std::string text = "resample,slope\n";
            char buf[64];
            for (std::size_t i = 0; i < boot.slopes.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, boot.slopes[i]);
                text += buf;
            }
            write_file_atomic(a->slopes_csv, text);
        }
    });
}

void add_crossover(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::vector<std::string> inputs;
        std::vector<double> span;
        std::string output;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("crossover", "Find where two relative scaling curves meet");
    sub->add_option("--input", a->inputs, "Two relfit reports")->required()->expected(2);
    sub->add_option("--span", a->span, "Observed scale range LO HI (default: union of both fits)")->expected(2);
    sub->add_option("--output", a->output, "Report JSON (default stdout)");
    reg.emplace_back(sub, [a, &ctx] {
        std::vector<RelativeFit> fits;
        for (const auto& path : a->inputs) {
            const AnalysisReport src = report_from_json(read_json(path));
            fits.push_back(relative_fit_from_json(field(src.results, "relative", path)));
        }
        std::pair<double, double> span{std::min(fits[0].scale_min, fits[1].scale_min),
                                       std::max(fits[0].scale_max, fits[1].scale_max)};
        if (a->span.size() == 2)
            span = {a->span[0], a->span[1]};
        if (!(span.first > 0.0) || !(span.second >= span.first))
            throw ValidationError("observed span must satisfy 0 < lo <= hi");
        const CrossoverResult x = crossover(fits[0], fits[1], span);
        AnalysisReport r = make_report("crossover", {a->inputs[0], a->inputs[1]});
        r.results = {{"crossover", to_json(x)},
                     {"span", {span.first, span.second}},
                     {"a", to_json(fits[0])},
                     {"b", to_json(fits[1])}};
        if (!x.in_range)
            r.warnings.push_back("crossover lies outside the observed span");
        emit_report(r, a->output, *ctx.out);
    });
}

void add_correlate(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string input;
        int permutations = 10000;
        std::uint64_t seed = 0;
        std::string output;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("correlate", "Permutation test of per-group slopes against a covariate");
    sub->add_option("--input", a->input, "JSON with 'slopes' and 'covariate' objects keyed by group")->required();
    sub->add_option("--permutations", a->permutations, "Monte Carlo permutations for large n")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--seed", a->seed, "Permutation seed")->capture_default_str();
    sub->add_option("--output", a->output, "Report JSON (default stdout)");
    reg.emplace_back(sub, [a, &ctx] {
        const json in = read_json(a->input);
        std::map<std::string, double> slopes;
        std::map<std::string, double> covariate;
        try {
            slopes = field(in, "slopes", a->input).get<std::map<std::string, double>>();
            covariate = field(in, "covariate", a->input).get<std::map<std::string, double>>();
        } catch (const json::type_error& e) {
            throw ValidationError(a->input + ": " + e.what());
        }
        PermutationConfig cfg;
        cfg.permutations = a->permutations;
        cfg.seed = a->seed;
        cfg.threads = ctx.threads;
        const CorrelationResult res = slope_covariate_correlation(slopes, covariate, cfg);
        json points = json::array();
        for (const auto& [group, slope] : slopes)
            points.push_back({{"group", group}, {"slope", slope}, {"covariate", covariate.at(group)}});
        AnalysisReport r = make_report("correlate", {a->input});
        r.results = {{"correlation", to_json(res)}, {"points", points}};
        emit_report(r, a->output, *ctx.out);
    });
}

void add_calibrate(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string input;
        std::string format = "auto";
        std::string metric;
        std::string accuracy;
        std::string floor = "0.25";
        std::string kind = "sigmoid";
        std::string output;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("calibrate", "Fit a loss-to-accuracy calibration curve");
    sub->add_option("--input", a->input, "Run log")->required();
    sub->add_option("--format", a->format, "Input format")->check(kFormats)->capture_default_str();
    sub->add_option("--metric", a->metric, "Loss metric key")->required();
    sub->add_option("--accuracy", a->accuracy, "Accuracy metric key")->required();
    sub->add_option("--floor", a->floor, "Chance-level floor, or 'free' to fit it")->capture_default_str();
    sub->add_option("--kind", a->kind, "sigmoid or linear")
        ->check(CLI::IsMember({"sigmoid", "linear"}))
        ->capture_default_str();
    sub->add_option("--output", a->output, "Report JSON (default stdout)");
    reg.emplace_back(sub, [a, &ctx] {
        const RunSet runs = load_runs(a->input, a->format);
        std::vector<LossAccuracy> points;
        json rows = json::array();
        for (const auto& run : runs) {
            if (run.has_metric(a->metric) && run.has_metric(a->accuracy)) {
                points.push_back({run.metric(a->metric), run.metric(a->accuracy)});
                rows.push_back({{"run_id", run.run_id}, {"loss", points.back().loss},
                                {"accuracy", points.back().accuracy}});
            }
        }
        Calibration cal;
        if (a->kind == "linear") {
            cal = fit_linear_calibration(points);
        } else {
            FloorPolicy policy = FloorPolicy::free();
            if (a->floor != "free") {
                try {
                    std::size_t used = 0;
                    policy = FloorPolicy::fixed(std::stod(a->floor, &used));
                    if (used != a->floor.size())
                        throw std::invalid_argument(a->floor);
                } catch (const std::logic_error&) {
                    throw ValidationError("--floor must be a number or 'free', got '" + a->floor + "'");
                }
            }
            cal = fit_sigmoid(points, policy);
        }
        AnalysisReport r = make_report("calibrate", {a->input});
        r.results = {{"loss_metric", a->metric},
                     {"accuracy_metric", a->accuracy},
                     {"calibration", to_json(cal)},
                     {"points", rows}};
        if (const auto* s = std::get_if<SigmoidCalibration>(&cal); s && s->degenerate)
            r.warnings.push_back("sigmoid fit is degenerate (flat curve)");
        emit_report(r, a->output, *ctx.out);
    });
}

void add_forecast(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string law;
        std::string calibration;
        std::vector<double> flops;
        std::string output;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("forecast", "Forecast accuracy at new scales: compute to loss to accuracy");
    sub->add_option("--law", a->law, "Report from `fit` with a power law")->required();
    sub->add_option("--calibration", a->calibration, "Report from `calibrate`")->required();
    sub->add_option("--flops", a->flops, "Scales to forecast at")->required();
    sub->add_option("--output", a->output, "Report JSON (default stdout)");
    reg.emplace_back(sub, [a, &ctx] {
        const AnalysisReport law_src = report_from_json(read_json(a->law));
        const std::string kind = field(law_src.results, "law", a->law).get<std::string>();
        if (kind != "power" && kind != "power-offset")
            throw ValidationError(a->law + ": forecasting needs a power-law fit, got '" + kind + "'");
        const PowerLawFit law = power_law_from_json(field(law_src.results, "fit", a->law));
        const AnalysisReport cal_src = report_from_json(read_json(a->calibration));
        const Calibration cal = calibration_from_json(field(cal_src.results, "calibration", a->calibration));
        json rows = json::array();
        for (double f : a->flops) {
            if (!(f > 0.0) || !std::isfinite(f))
                throw ValidationError("forecast scales must be positive");
            rows.push_back(to_json(forecast_accuracy(law, cal, f)));
        }
        AnalysisReport r = make_report("forecast", {a->law, a->calibration});
        r.results = {{"forecasts", rows}};
        for (double f : a->flops) {
            if (f < law.scale_min || f > law.scale_max) {
                r.warnings.push_back("forecast extrapolates beyond the fitted scale range");
                break;
            }
        }
        emit_report(r, a->output, *ctx.out);
    });
}

void add_report(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string input;
        std::string format = "auto";
        std::string prefix;
        std::string baseline;
        RelativeArgs rel;
        FrontierArgs frontier;
        std::string output;
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("report", "Absolute fits for every metric and relative fits against a baseline");
    sub->add_option("--input", a->input, "Run log")->required();
    sub->add_option("--format", a->format, "Input format")->check(kFormats)->capture_default_str();
    sub->add_option("--prefix", a->prefix, "Only metrics whose key starts with this");
    sub->add_option("--baseline", a->baseline, "Baseline metric key for relative fits");
    a->rel.add_to(sub);
    a->frontier.add_to(sub);
    sub->add_option("--output", a->output, "Report JSON (default stdout)");
    reg.emplace_back(sub, [a, &ctx] {
        const RunSet runs = load_runs(a->input, a->format);
        const FrontierOptions options = a->frontier.options();
        std::set<std::string> keys;
        for (const auto& r : runs)
            for (const auto& [k, v] : r.metrics)
                if (k.starts_with(a->prefix))
                    keys.insert(k);
        if (keys.empty())
            throw ValidationError("no metric matches prefix '" + a->prefix + "'");
        if (!a->baseline.empty() && !keys.contains(a->baseline))
            throw ValidationError("baseline metric '" + a->baseline + "' not found");

        AnalysisReport r = make_report("report", {a->input});
        json metrics = json::object();
        for (const auto& key : keys) {
            FrontierResult res = extract_frontier(runs, key, options);
            r.warnings.insert(r.warnings.end(), res.warnings.begin(), res.warnings.end());
            json entry{{"frontier", to_json(res.series)}};
            try {
                entry["fit"] = to_json(fit_power_law(to_scale_values(res.series), options.scale_axis));
            } catch (const FitError& e) {
                r.warnings.push_back(key + ": " + e.what());
            }
            metrics[key] = std::move(entry);
        }
        json relative = json::object();
        if (!a->baseline.empty()) {
            for (const auto& key : keys) {
                if (key == a->baseline)
                    continue;
                try {
                    std::vector<std::string> ignored;
                    relative[key] = relative_block(runs, key, a->baseline, options, a->rel, ctx.threads, ignored);
                } catch (const Error& e) {
                    r.warnings.push_back(key + " vs " + a->baseline + ": " + e.what());
                }
            }
        }
        r.results = {{"baseline", a->baseline}, {"metrics", metrics}, {"relative", relative}};
        emit_report(r, a->output, *ctx.out);
    });
}

// ---------------------------------------------------------------------------

PlotLine frontier_line(const FrontierSeries& series)
{
    PlotLine line{series.metric_key, {}, {}};
    const auto x = series.scales();
    const auto y = series.metrics();
    for (std::size_t i = 0; i < x.size(); ++i)
        line.points.push_back({x[i], y[i]});
    return line;
}

void add_power_curve(PlotLine& line, const PowerLawFit& fit)
{
    if (fit.scale_max > fit.scale_min)
        line.fitted = sample_log(fit.scale_min, fit.scale_max, kFittedSamples, [&](double f) { return predict(fit, f); });
}

std::string axis_label(const FrontierSeries& s)
{
    switch (s.scale_axis) {
    case ScaleAxis::tokens:
        return "training tokens";
    case ScaleAxis::params:
        return "parameters";
    default:
        return "training FLOPs";
    }
}

PlotLine relative_line(const json& block)
{
    const RelativeFit fit = relative_fit_from_json(block.at("relative"));
    const char* value_key = fit.mode == RelativeMode::ratio ? "ratio" : "difference";
    PlotLine line{block.at("treatment").get<std::string>() + " vs " + block.at("baseline").get<std::string>(), {}, {}};
    for (const auto& p : block.at("pairs"))
        line.points.push_back({p.at("scale").get<double>(), p.at(value_key).get<double>()});
    if (fit.scale_max > fit.scale_min) {
        line.fitted = sample_log(fit.scale_min, fit.scale_max, kFittedSamples, [&](double f) {
            return fit.mode == RelativeMode::ratio ? fit.gamma * std::pow(f, fit.delta_beta)
                                                   : fit.gamma + fit.delta_beta * std::log10(f);
        });
    }
    return line;
}

PlotSeries plot_from_report(const AnalysisReport& report)
{
    const json& res = report.results;
    PlotSeries plot;
    plot.title = report.command;
    plot.x_label = "training FLOPs";
    if (report.command == "frontier") {
        const FrontierSeries s = frontier_from_json(res.at("frontier"));
        plot.title = "Compute-optimal frontier: " + s.metric_key;
        plot.x_label = axis_label(s);
        plot.y_label = s.metric_key;
        plot.series.push_back(frontier_line(s));
    } else if (report.command == "fit") {
        const FrontierSeries s = frontier_from_json(res.at("frontier"));
        plot.title = "Scaling law: " + s.metric_key;
        plot.x_label = axis_label(s);
        plot.y_label = s.metric_key;
        PlotLine line = frontier_line(s);
        const std::string law = res.at("law").get<std::string>();
        if (law == "loglinear") {
            const auto xs = s.scales();
            const double lo = *std::min_element(xs.begin(), xs.end());
            const double hi = *std::max_element(xs.begin(), xs.end());
            LogLinearFit fit;
            fit.slope_per_decade = res.at("fit").at("slope_per_decade").get<double>();
            fit.intercept_at_ref = res.at("fit").at("intercept_at_ref").get<double>();
            fit.ref_scale = res.at("fit").at("ref_scale").get<double>();
            if (hi > lo)
                line.fitted = sample_log(lo, hi, kFittedSamples, [&](double f) { return predict(fit, f); });
        } else {
            add_power_curve(line, power_law_from_json(res.at("fit")));
        }
        plot.series.push_back(std::move(line));
    } else if (report.command == "relfit") {
        const RelativeMode mode = relative_mode_from_string(res.at("relative").at("mode").get<std::string>());
        plot.title = "Relative scaling: " + res.at("treatment").get<std::string>();
        plot.y_label = mode == RelativeMode::ratio ? "treatment / baseline" : "treatment - baseline";
        plot.series.push_back(relative_line(res));
        plot.references.push_back({mode == RelativeMode::ratio ? 1.0 : 0.0, res.at("baseline").get<std::string>()});
    } else if (report.command == "report") {
        const std::string baseline = res.at("baseline").get<std::string>();
        if (!res.at("relative").empty()) {
            plot.title = "Relative scaling against " + baseline;
            std::optional<RelativeMode> mode;
            for (const auto& [key, block] : res.at("relative").items()) {
                mode = relative_mode_from_string(block.at("relative").at("mode").get<std::string>());
                plot.series.push_back(relative_line(block));
            }
            plot.y_label = *mode == RelativeMode::ratio ? "metric / baseline" : "metric - baseline";
            plot.references.push_back({*mode == RelativeMode::ratio ? 1.0 : 0.0, baseline});
        } else {
            plot.title = "Compute-optimal frontiers";
            plot.y_label = "metric";
            for (const auto& [key, entry] : res.at("metrics").items()) {
                const FrontierSeries s = frontier_from_json(entry.at("frontier"));
                if (s.points.empty())
                    continue;
                plot.x_label = axis_label(s);
                PlotLine line = frontier_line(s);
                if (entry.contains("fit"))
                    add_power_curve(line, power_law_from_json(entry.at("fit")));
                plot.series.push_back(std::move(line));
            }
        }
    } else if (report.command == "calibrate") {
        const Calibration cal = calibration_from_json(res.at("calibration"));
        plot.title = "Loss to accuracy";
        plot.x_label = res.at("loss_metric").get<std::string>();
        plot.y_label = res.at("accuracy_metric").get<std::string>();
        plot.x_scale = AxisScale::linear;
        PlotLine line{plot.y_label, {}, {}};
        for (const auto& p : res.at("points"))
            line.points.push_back({p.at("loss").get<double>(), p.at("accuracy").get<double>()});
        if (!line.points.empty()) {
            auto [lo, hi] = std::minmax_element(line.points.begin(), line.points.end(),
                                                [](const PlotPoint& a, const PlotPoint& b) { return a.x < b.x; });
            const double x0 = lo->x;
            const double x1 = hi->x;
            for (int i = 0; i < kFittedSamples && x1 > x0; ++i) {
                const double x = x0 + (x1 - x0) * i / (kFittedSamples - 1);
                line.fitted.push_back({x, accuracy_from_loss(cal, x)});
            }
        }
        plot.series.push_back(std::move(line));
    } else if (report.command == "forecast") {
        plot.title = "Accuracy forecast";
        plot.y_label = "accuracy";
        PlotLine line{"forecast", {}, {}};
        for (const auto& f : res.at("forecasts"))
            line.points.push_back({f.at("scale").get<double>(), f.at("accuracy").get<double>()});
        plot.series.push_back(std::move(line));
    } else if (report.command == "correlate") {
        plot.title = "Slope against covariate";
        plot.x_label = "covariate";
        plot.y_label = "slope";
        PlotLine line{"groups", {}, {}};
        for (const auto& p : res.at("points"))
            line.points.push_back({p.at("covariate").get<double>(), p.at("slope").get<double>()});
        plot.series.push_back(std::move(line));
    } else {
        throw ValidationError("nothing to plot for a '" + report.command + "' report");
    }
    return plot;
}

void add_plot(CLI::App& app, Context& ctx, Registry& reg)
{
    struct A {
        std::string input;
        std::string output;
        std::string format = "svg,csv";
    };
    auto a = std::make_shared<A>();
    auto* sub = app.add_subcommand("plot", "Render a report as SVG and/or CSV");
    sub->add_option("--input", a->input, "Report JSON")->required();
    sub->add_option("--output", a->output, "Output prefix; writes PREFIX.svg and PREFIX.csv")->required();
    sub->add_option("--format", a->format, "Comma-separated subset of svg,csv")->capture_default_str();
    reg.emplace_back(sub, [a, &ctx] {
        PlotFormats formats{false, false};
        std::stringstream list(a->format);
        for (std::string item; std::getline(list, item, ',');) {
            if (item == "svg")
                formats.svg = true;
            else if (item == "csv")
                formats.csv = true;
            else
                throw ValidationError("unknown plot format '" + item + "'");
        }
        if (!formats.svg && !formats.csv)
            throw ValidationError("no plot format selected");
        const AnalysisReport report = report_from_json(read_json(a->input));
        for (const auto& path : emit_plot(plot_from_report(report), a->output, formats))
            *ctx.out << path.string() << "\n";
    });
}

} // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Scaling-law analysis for subgroup disparities", "relscale"};
    app.set_version_flag("--version", tool_version());
    app.require_subcommand(1);
    app.fallthrough();

    Context ctx;
    ctx.out = &out;
    app.add_option("--threads", ctx.threads, "Worker threads for resampling and generation")
        ->check(CLI::Range(1u, 1024u))
        ->capture_default_str();

    Registry reg;
    add_plan(app, ctx, reg);
    add_simulate(app, ctx, reg);
    add_ingest(app, ctx, reg);
    add_frontier(app, ctx, reg);
    add_fit(app, ctx, reg);
    add_relfit(app, ctx, reg);
    add_crossover(app, ctx, reg);
    add_correlate(app, ctx, reg);
    add_calibrate(app, ctx, reg);
    add_forecast(app, ctx, reg);
    add_report(app, ctx, reg);
    add_plot(app, ctx, reg);
    for (auto& [sub, run] : reg)
        sub->fallthrough();

    std::vector<std::string> storage{"relscale"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : storage)
        argv.push_back(s.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }

    try {
        for (auto& [sub, run] : reg) {
            if (sub->parsed())
                run();
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        err << "error: malformed input: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace relscale
