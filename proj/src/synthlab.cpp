#include "relscale/synthlab.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "relscale/error.hpp"
#include "relscale/parallel.hpp"

namespace relscale {

using nlohmann::json;

void SyntheticSpec::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok)
            throw ValidationError("synthetic spec: " + what);
    };
    require(!(subgroups.empty() && mixture.empty()), "needs at least one subgroup");
    for (std::size_t i = 0; i < budgets.size(); ++i) {
        require(budgets[i] > 0.0 && std::isfinite(budgets[i]), "budgets must be positive");
        require(i == 0 || budgets[i] > budgets[i - 1], "budgets must be strictly increasing");
    }
    require(widths_per_budget >= 1, "widths_per_budget must be at least 1");
    require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "noise_sigma must be non-negative");
    require(curvature > 0.0, "curvature must be positive");
    require(tokens_per_param > 0.0, "tokens_per_param must be positive");
    require(token_span_decades >= 0.0, "token_span_decades must be non-negative");
    require(mixture_params > 0, "mixture_params must be positive");

    std::set<std::string> names;
    for (const auto& g : subgroups) {
        require(!g.name.empty() && names.insert(g.name).second, "subgroup names must be unique and non-empty");
        require(g.alpha > 0.0, "alpha of '" + g.name + "' must be positive");
        require(std::isfinite(g.beta), "beta of '" + g.name + "' must be finite");
    }
    double share_sum = 0.0;
    for (const auto& g : mixture) {
        require(!g.name.empty() && names.insert(g.name).second, "subgroup names must be unique and non-empty");
        require(g.data_share > 0.0 && g.data_share < 1.0, "data_share of '" + g.name + "' must lie in (0, 1)");
        require(g.transfer >= 0.0 && g.transfer <= 1.0, "transfer of '" + g.name + "' must lie in [0, 1]");
        require(g.scale > 0.0, "scale of '" + g.name + "' must be positive");
        require(g.exponent >= 0.0, "exponent of '" + g.name + "' must be non-negative");
        require(g.irreducible >= 0.0, "irreducible of '" + g.name + "' must be non-negative");
        share_sum += g.data_share;
    }
    require(share_sum <= 1.0 + 1e-12, "data shares must sum to at most 1");
    require(baseline.empty() || names.contains(baseline), "baseline '" + baseline + "' is not a subgroup");
}

std::string metric_key(const SyntheticSpec& spec, const std::string& subgroup)
{
    return spec.metric_prefix + subgroup;
}

namespace {

std::string run_name(const char* prefix, std::size_t a, std::size_t b)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s-b%03zu-w%03zu", prefix, a, b);
    return buf;
}

double mixture_error(const MixtureSubgroup& g, double n)
{
    const double effective = g.data_share * n + g.transfer * (1.0 - g.data_share) * n;
    return g.scale * std::pow(effective, -g.exponent) + g.irreducible;
}

} // namespace

RunSet generate(const SyntheticSpec& spec, unsigned threads)
{
    spec.validate();
    if (spec.subgroups.empty())
        throw ValidationError("synthetic spec: generate needs power-law subgroups");
    if (spec.budgets.empty())
        throw ValidationError("synthetic spec: generate needs at least one budget");

    std::vector<std::vector<RunRecord>> per_budget(spec.budgets.size());
    parallel_for(spec.budgets.size(), threads, [&](std::size_t b) {
        const double budget = spec.budgets[b];
        const double opt_log_tokens = 0.5 * std::log10(spec.tokens_per_param * budget / 6.0);
        auto rng = make_stream(spec.seed, b);
        std::normal_distribution<double> noise(0.0, 1.0);
        const int w = spec.widths_per_budget;
        for (int k = 0; k < w; ++k) {
            const double offset =
                w == 1 ? 0.0 : spec.token_span_decades * (2.0 * k / static_cast<double>(w - 1) - 1.0);
            const auto tokens = static_cast<std::int64_t>(std::llround(std::pow(10.0, opt_log_tokens + offset)));
            const auto params = static_cast<std::int64_t>(std::llround(budget / (6.0 * static_cast<double>(tokens))));
            if (tokens < 1 || params < 1)
                throw ValidationError("synthetic spec: budget too small for the token span");
            RunRecord r;
            r.run_id = run_name("syn", b, static_cast<std::size_t>(k));
            r.source = Source::internal;
            r.dataset = spec.dataset;
            r.flops = budget;
            r.params = params;
            r.tokens = tokens;
            const double dx = std::log10(static_cast<double>(tokens)) - opt_log_tokens;
            for (const auto& g : spec.subgroups) {
                const double optimum = g.alpha * std::pow(budget, -g.beta);
                double value = optimum * (1.0 + spec.curvature * dx * dx);
                if (spec.noise_sigma > 0.0)
                    value *= std::exp(spec.noise_sigma * noise(rng));
                r.metrics.emplace(metric_key(spec, g.name), value);
            }
            per_budget[b].push_back(std::move(r));
        }
    });

    std::vector<RunRecord> records;
    for (auto& batch : per_budget) {
        for (auto& r : batch)
            records.push_back(std::move(r));
    }
    char provenance[64];
    std::snprintf(provenance, sizeof provenance, "synthlab:seed=%llu", static_cast<unsigned long long>(spec.seed));
    return RunSet(std::move(records), provenance);
}

MixtureOutput generate_mixture(const SyntheticSpec& spec, const std::vector<double>& total_tokens_schedule)
{
    spec.validate();
    if (spec.mixture.empty())
        throw ValidationError("synthetic spec: generate_mixture needs mixture subgroups");
    if (total_tokens_schedule.size() < 2)
        throw ValidationError("synthetic spec: token schedule needs at least two entries");
    for (std::size_t i = 0; i < total_tokens_schedule.size(); ++i) {
        if (!(total_tokens_schedule[i] >= 1.0) || (i > 0 && total_tokens_schedule[i] <= total_tokens_schedule[i - 1]))
            throw ValidationError("synthetic spec: token schedule must be increasing and at least 1");
    }

    MixtureOutput out;
    std::vector<RunRecord> records;
    for (std::size_t i = 0; i < total_tokens_schedule.size(); ++i) {
        auto rng = make_stream(spec.seed, i);
        std::normal_distribution<double> noise(0.0, 1.0);
        RunRecord r;
        r.run_id = run_name("mix", 0, i);
        r.source = Source::internal;
        r.dataset = spec.dataset;
        r.params = spec.mixture_params;
        r.tokens = static_cast<std::int64_t>(std::llround(total_tokens_schedule[i]));
        r.flops = 6.0 * static_cast<double>(r.params) * static_cast<double>(r.tokens);
        for (const auto& g : spec.mixture) {
            double value = mixture_error(g, static_cast<double>(r.tokens));
            if (spec.noise_sigma > 0.0)
                value *= std::exp(spec.noise_sigma * noise(rng));
            r.metrics.emplace(metric_key(spec, g.name), value);
        }
        records.push_back(std::move(r));
    }
    char provenance[64];
    std::snprintf(provenance, sizeof provenance, "synthlab-mixture:seed=%llu",
                  static_cast<unsigned long long>(spec.seed));
    out.runs = RunSet(std::move(records), provenance);

    const double n_lo = std::round(total_tokens_schedule.front());
    const double n_hi = std::round(total_tokens_schedule.back());
    const double log_span = std::log(n_hi) - std::log(n_lo);
    for (const auto& g : spec.mixture) {
        const double slope = (std::log(mixture_error(g, n_hi)) - std::log(mixture_error(g, n_lo))) / log_span;
        out.truths.push_back({g.name, g.data_share, -slope});
    }
    const std::string& base_name = spec.baseline.empty() ? spec.mixture.front().name : spec.baseline;
    const MixtureSubgroup* base = nullptr;
    for (const auto& g : spec.mixture) {
        if (g.name == base_name)
            base = &g;
    }
    if (!base)
        throw ValidationError("synthetic spec: mixture baseline '" + base_name + "' is not a mixture subgroup");
    for (const auto& g : spec.mixture) {
        if (g.name == base->name)
            continue;
        const double g_lo = std::log(mixture_error(g, n_lo)) - std::log(mixture_error(*base, n_lo));
        const double g_hi = std::log(mixture_error(g, n_hi)) - std::log(mixture_error(*base, n_hi));
        const double slope = (g_hi - g_lo) / log_span;
        out.pairs.push_back({g.name, base->name, std::exp(g_lo - slope * std::log(n_lo)), slope});
    }
    return out;
}

TruthReport known_truth(const SyntheticSpec& spec)
{
    spec.validate();
    TruthReport truth;
    for (const auto& g : spec.subgroups)
        truth.subgroups.push_back({g.name, g.alpha, g.beta});
    auto relative = [](const PowerLawSubgroup& t, const PowerLawSubgroup& b) {
        return PairTruth{t.name, b.name, t.alpha / b.alpha, b.beta - t.beta};
    };
    const auto& groups = spec.subgroups;
    if (!spec.baseline.empty()) {
        const auto base = std::find_if(groups.begin(), groups.end(),
                                       [&](const PowerLawSubgroup& g) { return g.name == spec.baseline; });
        if (base != groups.end()) {
            for (const auto& g : groups) {
                if (g.name != base->name)
                    truth.pairs.push_back(relative(g, *base));
            }
        }
        return truth;
    }
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i + 1; j < groups.size(); ++j)
            truth.pairs.push_back(relative(groups[j], groups[i]));
    }
    return truth;
}

SyntheticSpec synthetic_spec_from_json(const json& j)
{
    if (!j.is_object())
        throw ValidationError("synthetic spec must be a JSON object");
    static const std::set<std::string> known = {
        "budgets",  "widths_per_budget", "subgroups", "noise_sigma",   "curvature", "tokens_per_param",
        "token_span_decades", "mixture_params", "token_schedule", "baseline", "metric_prefix", "dataset", "seed"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key))
            throw ValidationError("synthetic spec: unknown key '" + key + "'");
    }
    try {
        SyntheticSpec s;
        s.budgets = j.value("budgets", std::vector<double>{});
        s.widths_per_budget = j.value("widths_per_budget", s.widths_per_budget);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.curvature = j.value("curvature", s.curvature);
        s.tokens_per_param = j.value("tokens_per_param", s.tokens_per_param);
        s.token_span_decades = j.value("token_span_decades", s.token_span_decades);
        if (j.contains("mixture_params"))
            s.mixture_params = static_cast<std::int64_t>(j.at("mixture_params").get<double>());
        s.token_schedule = j.value("token_schedule", std::vector<double>{});
        s.baseline = j.value("baseline", std::string{});
        s.metric_prefix = j.value("metric_prefix", s.metric_prefix);
        s.dataset = j.value("dataset", s.dataset);
        s.seed = j.value("seed", std::uint64_t{0});
        for (const auto& g : j.at("subgroups")) {
            if (g.contains("data_share")) {
                MixtureSubgroup m;
                m.name = g.at("name").get<std::string>();
                m.data_share = g.at("data_share").get<double>();
                m.transfer = g.at("transfer").get<double>();
                m.exponent = g.at("exponent").get<double>();
                m.scale = g.value("scale", 1.0);
                m.irreducible = g.value("irreducible", 0.0);
                s.mixture.push_back(m);
            } else {
                s.subgroups.push_back({g.at("name").get<std::string>(), g.at("alpha").get<double>(),
                                       g.at("beta").get<double>()});
            }
        }
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed synthetic spec: ") + e.what());
    }
}

json to_json(const SyntheticSpec& s)
{
    json groups = json::array();
    for (const auto& g : s.subgroups)
        groups.push_back({{"name", g.name}, {"alpha", g.alpha}, {"beta", g.beta}});
    for (const auto& g : s.mixture)
        groups.push_back({{"name", g.name},
                          {"data_share", g.data_share},
                          {"transfer", g.transfer},
                          {"exponent", g.exponent},
                          {"scale", g.scale},
                          {"irreducible", g.irreducible}});
    return json{{"budgets", s.budgets},
                {"widths_per_budget", s.widths_per_budget},
                {"subgroups", groups},
                {"noise_sigma", s.noise_sigma},
                {"curvature", s.curvature},
                {"tokens_per_param", s.tokens_per_param},
                {"token_span_decades", s.token_span_decades},
                {"mixture_params", s.mixture_params},
                {"token_schedule", s.token_schedule},
                {"baseline", s.baseline},
                {"metric_prefix", s.metric_prefix},
                {"dataset", s.dataset},
                {"seed", s.seed}};
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    try {
        return synthetic_spec_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": malformed JSON: " + e.what());
    }
}

json to_json(const TruthReport& t)
{
    json groups = json::array();
    for (const auto& g : t.subgroups)
        groups.push_back({{"name", g.name}, {"alpha", g.alpha}, {"beta", g.beta}});
    json pairs = json::array();
    for (const auto& p : t.pairs)
        pairs.push_back(
            {{"treatment", p.treatment}, {"baseline", p.baseline}, {"gamma", p.gamma}, {"delta_beta", p.delta_beta}});
    return json{{"subgroups", groups}, {"pairs", pairs}};
}

json to_json(const MixtureOutput& m)
{
    json groups = json::array();
    for (const auto& g : m.truths)
        groups.push_back({{"name", g.name}, {"data_share", g.data_share}, {"effective_beta", g.effective_beta}});
    json pairs = json::array();
    for (const auto& p : m.pairs)
        pairs.push_back(
            {{"treatment", p.treatment}, {"baseline", p.baseline}, {"gamma", p.gamma}, {"delta_beta", p.delta_beta}});
    return json{{"mixture_subgroups", groups}, {"pairs", pairs}};
}

} // namespace relscale
