#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relscale/store.hpp"

namespace relscale {

/// Subgroup whose compute-optimal error is alpha * F^-beta.
struct PowerLawSubgroup {
    std::string name;
    double alpha = 1.0;
    double beta = 0.0;
};

/// Subgroup whose error depends on how much of the training data it owns:
///   E = scale * (share * n + transfer * (1 - share) * n)^-exponent + irreducible
struct MixtureSubgroup {
    std::string name;
    double data_share = 0.0;
    double transfer = 0.0;
    double exponent = 0.0;
    double scale = 1.0;
    double irreducible = 0.0;
};

struct SyntheticSpec {
    std::vector<double> budgets;
    int widths_per_budget = 7;
    std::vector<PowerLawSubgroup> subgroups;
    std::vector<MixtureSubgroup> mixture;
    /// Lognormal multiplicative noise on every metric value.
    double noise_sigma = 0.0;
    /// IsoFLOP slice curvature: metric = E* (1 + curvature (log10 T - log10 T*)^2).
    double curvature = 0.5;
    /// Compute-optimal tokens per parameter, T* = sqrt(tokens_per_param * F / 6).
    double tokens_per_param = 20.0;
    /// Slices span T* 10^[-span, +span].
    double token_span_decades = 1.0;
    /// Parameter count held fixed for mixture token sweeps.
    std::int64_t mixture_params = 100'000'000;
    /// Token amounts for mixture sweeps.
    std::vector<double> token_schedule;
    /// Baseline subgroup for truth pairs; empty means the first subgroup.
    std::string baseline;
    std::string metric_prefix = "loss/";
    std::string dataset = "synthetic";
    std::uint64_t seed = 0;

    void validate() const;
};

struct SubgroupTruth {
    std::string name;
    double alpha = 0.0;
    double beta = 0.0;
};

/// Ground-truth relative law of `treatment` against `baseline`.
struct PairTruth {
    std::string treatment;
    std::string baseline;
    double gamma = 1.0;
    double delta_beta = 0.0;
};

struct TruthReport {
    std::vector<SubgroupTruth> subgroups;
    std::vector<PairTruth> pairs;
};

struct MixtureTruth {
    std::string name;
    double data_share = 0.0;
    /// Secant slope -d ln E / d ln n across the schedule's endpoints.
    double effective_beta = 0.0;
};

struct MixtureOutput {
    RunSet runs;
    std::vector<MixtureTruth> truths;
    /// Secant relative slopes of each subgroup against the baseline.
    std::vector<PairTruth> pairs;
};

/// IsoFLOP sweep with known per-subgroup power laws. Runs are ordered by
/// budget, then tokens; noise streams are derived per budget from the seed.
RunSet generate(const SyntheticSpec& spec, unsigned threads = 1);

/// Token sweep at fixed parameter count for mixture subgroups.
MixtureOutput generate_mixture(const SyntheticSpec& spec, const std::vector<double>& total_tokens_schedule);

/// Exact (alpha, beta) per power-law subgroup and (gamma, delta_beta) per
/// pair: with an explicit baseline every other subgroup is paired against
/// it, otherwise every (earlier, later) pair uses the earlier as baseline.
TruthReport known_truth(const SyntheticSpec& spec);

std::string metric_key(const SyntheticSpec& spec, const std::string& subgroup);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);
nlohmann::json to_json(const TruthReport& truth);
nlohmann::json to_json(const MixtureOutput& output);

} // namespace relscale
