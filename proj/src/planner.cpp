#include "relscale/planner.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "relscale/error.hpp"

namespace relscale {

using nlohmann::json;

void SweepPolicy::validate() const
{
    auto require = [](bool ok, const char* what) {
        if (!ok)
            throw ValidationError(std::string("sweep policy: ") + what);
    };
    require(lr_base >= 0.0, "eta_base must be non-negative");
    require(lr_cap > 0.0, "lr_cap must be positive");
    require(step_target > 0, "step_target must be positive");
    require(head_dim > 0, "head_dim must be positive");
    require(ffn_ratio > 0, "ffn_ratio must be positive");
    require(width_step_small > 0 && width_step_large > 0, "width steps must be positive");
    require(width_min > 0 && width_min <= width_max, "need 0 < width_min <= width_max");
    require(width_min % head_dim == 0 && width_step_small % head_dim == 0 && width_step_large % head_dim == 0,
            "width_min and width steps must be multiples of head_dim");
    require(small_budget_threshold > 0.0, "small_budget_threshold must be positive");
    require(warmup_frac >= 0.0 && decay_frac >= 0.0 && warmup_frac + decay_frac < 1.0,
            "warmup_frac + decay_frac must be in [0, 1)");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "betas must lie in (0, 1)");
    require(eps > 0.0 && weight_decay >= 0.0 && grad_clip > 0.0, "eps, weight_decay, grad_clip out of range");
    require(beta2_reference_batch >= 0, "beta2_reference_batch must be non-negative");
}

std::vector<int> width_grid(double budget, const SweepPolicy& policy)
{
    if (!(budget > 0.0))
        throw ValidationError("budget must be positive");
    const int step = budget <= policy.small_budget_threshold ? policy.width_step_small : policy.width_step_large;
    std::vector<int> widths;
    for (int d = policy.width_min; d <= policy.width_max; d += step)
        widths.push_back(d);
    return widths;
}

int depth_for_width(int width, const SweepPolicy& policy)
{
    const double denom = policy.depth_kappa + policy.depth_theta * std::log2(static_cast<double>(width));
    if (!(denom > 0.0))
        throw ValidationError("depth rule denominator kappa + theta*log2(d) must be positive");
    const long depth = std::lround(static_cast<double>(width) / denom);
    return static_cast<int>(std::max(1L, depth));
}

std::int64_t param_count(const ModelShape& shape)
{
    const auto d = static_cast<std::int64_t>(shape.width);
    return 12 * static_cast<std::int64_t>(shape.depth) * d * d;
}

ModelShape shape_for_width(int width, const SweepPolicy& policy)
{
    if (width <= 0 || width % policy.head_dim != 0)
        throw ValidationError("width " + std::to_string(width) + " is not a positive multiple of head_dim " +
                              std::to_string(policy.head_dim));
    ModelShape shape;
    shape.width = width;
    shape.depth = depth_for_width(width, policy);
    shape.n_heads = width / policy.head_dim;
    shape.ffn_dim = policy.ffn_ratio * width;
    shape.params = param_count(shape);
    return shape;
}

std::int64_t tokens_for_budget(double budget, std::int64_t params)
{
    if (!(budget > 0.0) || params <= 0)
        throw ValidationError("budget and params must be positive");
    const long double t = static_cast<long double>(budget) / (6.0L * static_cast<long double>(params));
    return static_cast<std::int64_t>(std::floor(t));
}

BatchSteps batch_and_steps(std::int64_t tokens, const SweepPolicy& policy)
{
    if (tokens < policy.step_target)
        throw ValidationError("token budget " + std::to_string(tokens) + " is below the step target " +
                              std::to_string(policy.step_target));
    const long double ideal = static_cast<long double>(tokens) / static_cast<long double>(policy.step_target);
    const long double exponent = std::log2(ideal);
    auto lower = static_cast<int>(std::floor(exponent));
    // Round to nearest in log space; the geometric midpoint rounds up.
    const int chosen = exponent - lower >= 0.5L ? lower + 1 : lower;
    BatchSteps out;
    out.batch = std::int64_t{1} << chosen;
    out.steps = (tokens + out.batch / 2) / out.batch;
    return out;
}

LearningRate learning_rate(std::int64_t batch, int width, std::int64_t tokens, const SweepPolicy& policy)
{
    if (batch <= 0 || (batch & (batch - 1)) != 0)
        throw ValidationError("batch size must be a power of two");
    if (width <= 0)
        throw ValidationError("width must be positive");
    auto lr_at = [&](std::int64_t b) {
        return policy.lr_base * std::sqrt(static_cast<double>(b)) / static_cast<double>(width);
    };
    LearningRate out{lr_at(batch), batch, 0};
    while (out.lr > policy.lr_cap) {
        if (out.batch == 1)
            throw ValidationError("learning rate exceeds cap even at batch size 1");
        out.batch /= 2;
        out.lr = lr_at(out.batch);
    }
    out.steps = (tokens + out.batch / 2) / out.batch;
    return out;
}

WsdSchedule wsd_schedule(std::int64_t steps, const SweepPolicy& policy)
{
    if (steps < 20)
        throw ValidationError("schedule needs at least 20 steps, got " + std::to_string(steps));
    WsdSchedule s;
    s.warmup_steps = std::llround(policy.warmup_frac * static_cast<double>(steps));
    s.decay_steps = std::llround(policy.decay_frac * static_cast<double>(steps));
    s.stable_steps = steps - s.warmup_steps - s.decay_steps;
    if (s.stable_steps < 0)
        throw ValidationError("warmup and decay phases exceed the step count");
    return s;
}

double effective_beta2(std::int64_t batch, const SweepPolicy& policy)
{
    if (policy.beta2_reference_batch <= 0 || batch >= policy.beta2_reference_batch)
        return policy.beta2;
    return std::pow(policy.beta2, static_cast<double>(batch) / static_cast<double>(policy.beta2_reference_batch));
}

TrainPlan plan_for_width(double budget, int width, const SweepPolicy& policy)
{
    TrainPlan plan;
    plan.budget = budget;
    plan.shape = shape_for_width(width, policy);
    plan.target_tokens = tokens_for_budget(budget, plan.shape.params);
    const BatchSteps initial = batch_and_steps(plan.target_tokens, policy);
    const LearningRate lr = learning_rate(initial.batch, width, plan.target_tokens, policy);
    plan.batch = lr.batch;
    plan.steps = lr.steps;
    plan.lr = lr.lr;
    plan.tokens = plan.batch * plan.steps;
    plan.schedule = wsd_schedule(plan.steps, policy);
    plan.beta2_effective = effective_beta2(plan.batch, policy);
    return plan;
}

std::vector<TrainPlan> plan_sweep(std::span<const double> budgets, const SweepPolicy& policy)
{
    policy.validate();
    std::vector<TrainPlan> plans;
    for (const double budget : budgets) {
        for (const int width : width_grid(budget, policy))
            plans.push_back(plan_for_width(budget, width, policy));
    }
    return plans;
}

RunRecord to_run_record(const TrainPlan& plan, std::string run_id)
{
    RunRecord r;
    r.run_id = std::move(run_id);
    r.source = Source::internal;
    r.dataset = "planned";
    r.flops = plan.budget;
    r.params = plan.shape.params;
    r.tokens = plan.tokens;
    return r;
}

json to_json(const TrainPlan& p)
{
    return json{{"budget", p.budget},
                {"width", p.shape.width},
                {"depth", p.shape.depth},
                {"n_heads", p.shape.n_heads},
                {"ffn_dim", p.shape.ffn_dim},
                {"params", p.shape.params},
                {"tokens", p.tokens},
                {"target_tokens", p.target_tokens},
                {"batch", p.batch},
                {"steps", p.steps},
                {"lr", p.lr},
                {"warmup_steps", p.schedule.warmup_steps},
                {"stable_steps", p.schedule.stable_steps},
                {"decay_steps", p.schedule.decay_steps},
                {"beta2_effective", p.beta2_effective}};
}

json to_json(const SweepPolicy& p)
{
    return json{{"kappa", p.depth_kappa},
                {"theta", p.depth_theta},
                {"depth_alignment_target", p.depth_alignment_target},
                {"eta_base", p.lr_base},
                {"lr_cap", p.lr_cap},
                {"step_target", p.step_target},
                {"head_dim", p.head_dim},
                {"ffn_ratio", p.ffn_ratio},
                {"width_step_small", p.width_step_small},
                {"width_step_large", p.width_step_large},
                {"small_budget_threshold", p.small_budget_threshold},
                {"width_min", p.width_min},
                {"width_max", p.width_max},
                {"warmup_frac", p.warmup_frac},
                {"decay_frac", p.decay_frac},
                {"beta1", p.beta1},
                {"beta2", p.beta2},
                {"eps", p.eps},
                {"weight_decay", p.weight_decay},
                {"grad_clip", p.grad_clip},
                {"beta2_reference_batch", p.beta2_reference_batch}};
}

SweepPolicy policy_from_json(const json& j)
{
    if (!j.is_object())
        throw ValidationError("sweep policy must be a JSON object");
    SweepPolicy p;
    const json defaults = to_json(p);
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key))
            throw ValidationError("sweep policy: unknown key '" + key + "'");
        if (!value.is_number())
            throw ValidationError("sweep policy: '" + key + "' must be a number");
    }
    auto num = [&](const char* key, auto& field) {
        if (j.contains(key))
            field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    num("kappa", p.depth_kappa);
    num("theta", p.depth_theta);
    num("depth_alignment_target", p.depth_alignment_target);
    num("eta_base", p.lr_base);
    num("lr_cap", p.lr_cap);
    num("step_target", p.step_target);
    num("head_dim", p.head_dim);
    num("ffn_ratio", p.ffn_ratio);
    num("width_step_small", p.width_step_small);
    num("width_step_large", p.width_step_large);
    num("small_budget_threshold", p.small_budget_threshold);
    num("width_min", p.width_min);
    num("width_max", p.width_max);
    num("warmup_frac", p.warmup_frac);
    num("decay_frac", p.decay_frac);
    num("beta1", p.beta1);
    num("beta2", p.beta2);
    num("eps", p.eps);
    num("weight_decay", p.weight_decay);
    num("grad_clip", p.grad_clip);
    num("beta2_reference_batch", p.beta2_reference_batch);
    p.validate();
    return p;
}

SweepPolicy load_policy(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    try {
        return policy_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": malformed JSON: " + e.what());
    }
}

} // namespace relscale
