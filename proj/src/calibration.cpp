#include "relscale/calibration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "relscale/error.hpp"
#include "relscale/regression.hpp"

namespace relscale {

using nlohmann::json;

namespace {

constexpr double kMinSteepness = 1e-8;
constexpr double kMaxSteepness = 1e6;

double logistic_tail(double z)
{
    // 1 / (1 + e^z) without overflow for large |z|.
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
}

// Parameter vector layout: [floor?, ceiling, steepness, midpoint].
struct SigmoidProblem {
    Eigen::VectorXd loss;
    Eigen::VectorXd acc;
    std::optional<double> fixed_floor;

    int dim() const { return fixed_floor ? 3 : 4; }
    int offset() const { return fixed_floor ? 0 : 1; }

    double floor_of(const Eigen::VectorXd& p) const { return fixed_floor ? *fixed_floor : p[0]; }

    void project(Eigen::VectorXd& p) const
    {
        const int o = offset();
        if (!fixed_floor)
            p[0] = std::clamp(p[0], 0.0, 1.0 - kMinSigmoidSpan);
        const double c = floor_of(p);
        p[o] = std::clamp(p[o], c + kMinSigmoidSpan, 1.0);
        p[o + 1] = std::clamp(p[o + 1], kMinSteepness, kMaxSteepness);
    }

    void evaluate(const Eigen::VectorXd& p, Eigen::VectorXd& resid, Eigen::MatrixXd* jac) const
    {
        const int o = offset();
        const double c = floor_of(p);
        const double a = p[o];
        const double k = p[o + 1];
        const double mid = p[o + 2];
        const auto n = loss.size();
        resid.resize(n);
        if (jac)
            jac->resize(n, dim());
        for (Eigen::Index i = 0; i < n; ++i) {
            const double u = loss[i] - mid;
            const double s = logistic_tail(k * u);
            resid[i] = c + (a - c) * s - acc[i];
            if (jac) {
                const double ds = -s * (1.0 - s);
                if (!fixed_floor)
                    (*jac)(i, 0) = 1.0 - s;
                (*jac)(i, o) = s;
                (*jac)(i, o + 1) = (a - c) * ds * u;
                (*jac)(i, o + 2) = -(a - c) * ds * k;
            }
        }
    }
};

struct LmOutcome {
    Eigen::VectorXd params;
    double cost = std::numeric_limits<double>::infinity();
};

LmOutcome levenberg_marquardt(const SigmoidProblem& prob, Eigen::VectorXd p)
{
    prob.project(p);
    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    prob.evaluate(p, r, &jac);
    double cost = 0.5 * r.squaredNorm();
    double lambda = 1e-3;
    // Runs until stationary or out of iterations; saturating fits (k growing
    // without bound on flat data) end on the cap with the best point so far.
    bool done = false;
    for (int iter = 0; iter < 2000 && !done; ++iter) {
        if (cost <= 1e-32)
            break;
        const Eigen::VectorXd grad = jac.transpose() * r;
        if (grad.lpNorm<Eigen::Infinity>() <= 1e-20)
            break;
        const Eigen::MatrixXd hess = jac.transpose() * jac;
        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd damped = hess;
            damped.diagonal() += lambda * (hess.diagonal().array() + 1e-12).matrix();
            const Eigen::VectorXd step = damped.ldlt().solve(-grad);
            Eigen::VectorXd trial = p + step;
            prob.project(trial);
            Eigen::VectorXd r_trial;
            prob.evaluate(trial, r_trial, nullptr);
            const double trial_cost = 0.5 * r_trial.squaredNorm();
            if (std::isfinite(trial_cost) && trial_cost < cost) {
                const double moved = (trial - p).norm();
                const double drop = cost - trial_cost;
                p = trial;
                cost = trial_cost;
                prob.evaluate(p, r, &jac);
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                done = moved <= 1e-14 * (p.norm() + 1e-14) || drop <= 1e-30 * std::max(cost, 1e-300);
            } else {
                lambda *= 4.0;
                if (lambda > 1e16) {
                    // No descent direction left within the box.
                    done = true;
                    break;
                }
            }
        }
    }
    return {p, cost};
}

void check_points(std::span<const LossAccuracy> points)
{
    for (const auto& pt : points) {
        if (!std::isfinite(pt.loss))
            throw ValidationError("calibration losses must be finite");
        if (!(pt.accuracy >= 0.0 && pt.accuracy <= 1.0))
            throw ValidationError("accuracy values must lie in [0, 1]");
    }
}

} // namespace

SigmoidCalibration fit_sigmoid(std::span<const LossAccuracy> points, const FloorPolicy& floor_policy)
{
    check_points(points);
    const bool fixed = floor_policy.fixed_floor.has_value();
    if (fixed && !(*floor_policy.fixed_floor >= 0.0 && *floor_policy.fixed_floor < 1.0))
        throw ValidationError("fixed floor must lie in [0, 1)");
    const std::size_t needed = fixed ? 3 : 4;
    if (points.size() < needed)
        throw ValidationError("sigmoid calibration needs at least " + std::to_string(needed) + " points");

    SigmoidProblem prob;
    prob.fixed_floor = floor_policy.fixed_floor;
    prob.loss.resize(static_cast<Eigen::Index>(points.size()));
    prob.acc.resize(static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
        prob.loss[static_cast<Eigen::Index>(i)] = points[i].loss;
        prob.acc[static_cast<Eigen::Index>(i)] = points[i].accuracy;
    }

    std::vector<double> sorted_loss(prob.loss.data(), prob.loss.data() + prob.loss.size());
    std::sort(sorted_loss.begin(), sorted_loss.end());
    const double floor0 = fixed ? *floor_policy.fixed_floor : std::clamp(prob.acc.minCoeff(), 0.0, 1.0 - kMinSigmoidSpan);
    const double ceiling0 = std::clamp(prob.acc.maxCoeff(), floor0 + kMinSigmoidSpan, 1.0);

    constexpr std::array<double, 5> steepness_grid = {0.5, 1.0, 2.0, 4.0, 8.0};
    constexpr std::array<double, 3> midpoint_quantiles = {0.25, 0.5, 0.75};

    LmOutcome best;
    bool have_best = false;
    for (const double k0 : steepness_grid) {
        for (const double q : midpoint_quantiles) {
            Eigen::VectorXd p0(prob.dim());
            const int o = prob.offset();
            if (!fixed)
                p0[0] = floor0;
            p0[o] = ceiling0;
            p0[o + 1] = k0;
            p0[o + 2] = sorted_quantile(sorted_loss, q);
            LmOutcome trial = levenberg_marquardt(prob, p0);
            if (!std::isfinite(trial.cost))
                continue;
            if (!have_best) {
                best = std::move(trial);
                have_best = true;
                continue;
            }
            const double tie = 1e-15 + 1e-9 * std::max(best.cost, trial.cost);
            const double k_trial = trial.params[o + 1];
            const double k_best = best.params[o + 1];
            if (trial.cost < best.cost - tie || (std::abs(trial.cost - best.cost) <= tie && k_trial < k_best))
                best = std::move(trial);
        }
    }
    if (!have_best)
        throw FitError("sigmoid calibration produced no finite fit from any start");

    SigmoidCalibration cal;
    const int o = prob.offset();
    cal.floor = prob.floor_of(best.params);
    cal.ceiling = best.params[o];
    cal.steepness = best.params[o + 1];
    cal.midpoint = best.params[o + 2];
    cal.n = static_cast<int>(points.size());
    cal.floor_fixed = fixed;
    cal.rmse = std::sqrt(2.0 * best.cost / static_cast<double>(points.size()));
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& pt : points) {
        const double v = accuracy_from_loss(cal, pt.loss);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    cal.degenerate = cal.ceiling - cal.floor <= 2.0 * kMinSigmoidSpan || hi - lo <= 1e-9;
    return cal;
}

LinearCalibration fit_linear_calibration(std::span<const LossAccuracy> points)
{
    check_points(points);
    if (points.size() < 2)
        throw ValidationError("linear calibration needs at least two points");
    Eigen::VectorXd x(static_cast<Eigen::Index>(points.size()));
    Eigen::VectorXd y(static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
        x[static_cast<Eigen::Index>(i)] = points[i].loss;
        y[static_cast<Eigen::Index>(i)] = points[i].accuracy;
    }
    const LineFit<double> f = fit_line(x, y);
    LinearCalibration cal{f.slope, f.intercept, 0.0, static_cast<int>(points.size())};
    double sse = 0.0;
    for (const auto& pt : points) {
        const double r = accuracy_from_loss(cal, pt.loss) - pt.accuracy;
        sse += r * r;
    }
    cal.rmse = std::sqrt(sse / static_cast<double>(points.size()));
    return cal;
}

double accuracy_from_loss(const SigmoidCalibration& cal, double loss)
{
    const double s = logistic_tail(cal.steepness * (loss - cal.midpoint));
    return std::clamp(cal.floor + (cal.ceiling - cal.floor) * s, cal.floor, cal.ceiling);
}

double accuracy_from_loss(const LinearCalibration& cal, double loss)
{
    return std::clamp(cal.intercept + cal.slope * loss, 0.0, 1.0);
}

double accuracy_from_loss(const Calibration& cal, double loss)
{
    return std::visit([loss](const auto& c) { return accuracy_from_loss(c, loss); }, cal);
}

Forecast forecast_accuracy(const PowerLawFit& law, const Calibration& cal, double scale)
{
    Forecast f;
    f.scale = scale;
    f.loss = predict(law, scale);
    f.accuracy = accuracy_from_loss(cal, f.loss);
    return f;
}

json to_json(const SigmoidCalibration& c)
{
    return json{{"kind", "sigmoid"},      {"floor", c.floor},
                {"ceiling", c.ceiling},   {"steepness", c.steepness},
                {"midpoint", c.midpoint}, {"rmse", c.rmse},
                {"n", c.n},               {"floor_fixed", c.floor_fixed},
                {"degenerate", c.degenerate}};
}

json to_json(const LinearCalibration& c)
{
    return json{{"kind", "linear"}, {"slope", c.slope}, {"intercept", c.intercept}, {"rmse", c.rmse}, {"n", c.n}};
}

json to_json(const Calibration& cal)
{
    return std::visit([](const auto& c) { return to_json(c); }, cal);
}

json to_json(const Forecast& f)
{
    return json{{"scale", f.scale}, {"loss", f.loss}, {"accuracy", f.accuracy}};
}

Calibration calibration_from_json(const json& j)
{
    try {
        const std::string kind = j.value("kind", std::string("sigmoid"));
        if (kind == "linear") {
            LinearCalibration c;
            c.slope = j.at("slope").get<double>();
            c.intercept = j.at("intercept").get<double>();
            c.rmse = j.value("rmse", 0.0);
            c.n = j.value("n", 0);
            return c;
        }
        if (kind != "sigmoid")
            throw ValidationError("unknown calibration kind '" + kind + "'");
        SigmoidCalibration c;
        c.floor = j.at("floor").get<double>();
        c.ceiling = j.at("ceiling").get<double>();
        c.steepness = j.at("steepness").get<double>();
        c.midpoint = j.at("midpoint").get<double>();
        c.rmse = j.value("rmse", 0.0);
        c.n = j.value("n", 0);
        c.floor_fixed = j.value("floor_fixed", false);
        c.degenerate = j.value("degenerate", false);
        if (!(c.floor >= 0.0 && c.floor < c.ceiling && c.ceiling <= 1.0 && c.steepness > 0.0))
            throw ValidationError("sigmoid calibration violates 0 <= floor < ceiling <= 1, steepness > 0");
        return c;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed calibration: ") + e.what());
    }
}

} // namespace relscale
