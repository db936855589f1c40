#pragma once

#include <optional>
#include <span>
#include <variant>

#include <nlohmann/json.hpp>

#include "relscale/lawfit.hpp"

namespace relscale {

/// acc(loss) = floor + (ceiling - floor) / (1 + exp(steepness * (loss - midpoint)))
struct SigmoidCalibration {
    double floor = 0.0;
    double ceiling = 1.0;
    double steepness = 1.0;
    double midpoint = 0.0;
    double rmse = 0.0;
    int n = 0;
    bool floor_fixed = false;
    /// The fit collapsed onto a flat curve (ceiling at its lower bound).
    bool degenerate = false;
};

/// acc(loss) = clamp(intercept + slope * loss, 0, 1)
struct LinearCalibration {
    double slope = 0.0;
    double intercept = 0.0;
    double rmse = 0.0;
    int n = 0;
};

using Calibration = std::variant<SigmoidCalibration, LinearCalibration>;

struct LossAccuracy {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Either pin the floor at a known chance level or fit it.
struct FloorPolicy {
    std::optional<double> fixed_floor;

    static FloorPolicy fixed(double chance) { return FloorPolicy{chance}; }
    static FloorPolicy free() { return FloorPolicy{}; }
};

/// Smallest ceiling - floor gap the fitter allows.
inline constexpr double kMinSigmoidSpan = 1e-6;

/// Multi-start Levenberg-Marquardt fit over the grid
/// steepness in {0.5, 1, 2, 4, 8} x midpoint at the 25/50/75% loss quantiles.
/// The lowest-rmse result wins; ties go to the smaller steepness.
SigmoidCalibration fit_sigmoid(std::span<const LossAccuracy> points, const FloorPolicy& floor_policy);

LinearCalibration fit_linear_calibration(std::span<const LossAccuracy> points);

double accuracy_from_loss(const SigmoidCalibration& cal, double loss);
double accuracy_from_loss(const LinearCalibration& cal, double loss);
double accuracy_from_loss(const Calibration& cal, double loss);

struct Forecast {
    double scale = 0.0;
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Compute -> loss through the power law, then loss -> accuracy.
Forecast forecast_accuracy(const PowerLawFit& law, const Calibration& cal, double scale);

nlohmann::json to_json(const SigmoidCalibration& cal);
nlohmann::json to_json(const LinearCalibration& cal);
nlohmann::json to_json(const Calibration& cal);
nlohmann::json to_json(const Forecast& f);
Calibration calibration_from_json(const nlohmann::json& j);

} // namespace relscale
