#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "relscale/store.hpp"

namespace relscale {

/// Rules that turn a FLOP budget into concrete training configurations.
///
/// depth_kappa, depth_theta and lr_base have no published values; the
/// defaults are calibratable starting points. `depth_alignment_target`
/// records the width/depth aspect ratio the depth rule is meant to track and
/// is informational only.
struct SweepPolicy {
    double depth_kappa = 32.0;
    double depth_theta = 4.0;
    double depth_alignment_target = 0.0;
    double lr_base = 0.05;
    double lr_cap = 0.01;
    std::int64_t step_target = std::int64_t{1} << 16;
    int head_dim = 128;
    int ffn_ratio = 4;
    int width_step_small = 128;
    int width_step_large = 256;
    double small_budget_threshold = 9e18;
    int width_min = 512;
    int width_max = 4096;
    double warmup_frac = 0.05;
    double decay_frac = 0.20;
    double beta1 = 0.95;
    double beta2 = 0.95;
    double eps = 1e-15;
    double weight_decay = 0.1;
    double grad_clip = 1.0;
    /// Batch size at which beta2 applies unchanged. When > 0, smaller batches
    /// use beta2^(B / beta2_reference_batch) so the second-moment half-life in
    /// tokens stays fixed. 0 disables the adjustment.
    std::int64_t beta2_reference_batch = 0;

    void validate() const;
};

struct ModelShape {
    int width = 0;
    int depth = 0;
    int n_heads = 0;
    int ffn_dim = 0;
    std::int64_t params = 0;
};

struct WsdSchedule {
    std::int64_t warmup_steps = 0;
    std::int64_t stable_steps = 0;
    std::int64_t decay_steps = 0;
};

struct BatchSteps {
    std::int64_t batch = 0;
    std::int64_t steps = 0;
};

struct LearningRate {
    double lr = 0.0;
    std::int64_t batch = 0;
    std::int64_t steps = 0;
};

struct TrainPlan {
    double budget = 0.0;
    ModelShape shape;
    /// Tokens actually consumed, batch * steps.
    std::int64_t tokens = 0;
    /// floor(budget / (6 * params)) before batch quantization.
    std::int64_t target_tokens = 0;
    std::int64_t batch = 0;
    std::int64_t steps = 0;
    double lr = 0.0;
    WsdSchedule schedule;
    double beta2_effective = 0.0;
};

std::vector<int> width_grid(double budget, const SweepPolicy& policy);

/// round(d / (kappa + theta * log2 d)), at least 1.
int depth_for_width(int width, const SweepPolicy& policy);

ModelShape shape_for_width(int width, const SweepPolicy& policy);

/// Non-embedding parameters: 4d^2 attention + 8d^2 MLP per layer.
std::int64_t param_count(const ModelShape& shape);

/// floor(budget / (6 * params)).
std::int64_t tokens_for_budget(double budget, std::int64_t params);

/// Batch is the power of two nearest (in log space, ties up) to
/// tokens / step_target; steps = round(tokens / batch).
BatchSteps batch_and_steps(std::int64_t tokens, const SweepPolicy& policy);

/// lr = lr_base * sqrt(batch) / width, halving the batch (and recomputing
/// steps from `tokens`) until lr <= lr_cap.
LearningRate learning_rate(std::int64_t batch, int width, std::int64_t tokens, const SweepPolicy& policy);

WsdSchedule wsd_schedule(std::int64_t steps, const SweepPolicy& policy);

double effective_beta2(std::int64_t batch, const SweepPolicy& policy);

TrainPlan plan_for_width(double budget, int width, const SweepPolicy& policy);

std::vector<TrainPlan> plan_sweep(std::span<const double> budgets, const SweepPolicy& policy);

/// The run record a finished plan would log (no metrics).
RunRecord to_run_record(const TrainPlan& plan, std::string run_id);

nlohmann::json to_json(const TrainPlan& plan);
nlohmann::json to_json(const SweepPolicy& policy);
/// Missing keys keep their defaults; unknown keys are rejected.
SweepPolicy policy_from_json(const nlohmann::json& j);
SweepPolicy load_policy(const std::filesystem::path& path);

} // namespace relscale
