#pragma once

// Small dense least-squares kernels shared by the fitters. Everything here is
// templated on the scalar type and accepts any Eigen vector expression.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "relscale/error.hpp"

namespace relscale {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// y ~ intercept + slope * x
template <typename Scalar>
struct LineFit {
    Scalar slope{};
    Scalar intercept{};
    Scalar r2{};
    /// Standard error of the slope; NaN when n == 2.
    Scalar slope_stderr{};
    Scalar x_mean{};
    Scalar y_mean{};
    Eigen::Index n{};

    Scalar operator()(Scalar x) const { return intercept + slope * x; }
};

namespace detail {

template <typename Derived>
typename Derived::Scalar stable_mean(const Eigen::MatrixBase<Derived>& v)
{
    using Scalar = typename Derived::Scalar;
    Scalar m = v.mean();
    // One correction pass removes most of the summation rounding.
    m += (v.array() - m).mean();
    return m;
}

template <typename Scalar>
Scalar coefficient_of_determination(Scalar ss_res, Scalar ss_tot)
{
    if (!(ss_tot > Scalar(0)))
        return Scalar(1);
    return std::clamp(Scalar(1) - ss_res / ss_tot, Scalar(0), Scalar(1));
}

template <typename DerivedX, typename DerivedY, typename DerivedW>
LineFit<typename DerivedX::Scalar> weighted_line(const Eigen::MatrixBase<DerivedX>& x,
                                                 const Eigen::MatrixBase<DerivedY>& y,
                                                 const Eigen::MatrixBase<DerivedW>& w)
{
    using Scalar = typename DerivedX::Scalar;
    const Scalar wsum = w.sum();
    const Scalar xm = x.dot(w) / wsum;
    const Scalar ym = y.dot(w) / wsum;
    const Vector<Scalar> dx = x.array() - xm;
    const Vector<Scalar> dy = y.array() - ym;
    const Scalar sxx = (w.array() * dx.array().square()).sum();
    if (!(sxx > Scalar(0)))
        throw FitError("degenerate design: all abscissae are equal");
    const Scalar sxy = (w.array() * dx.array() * dy.array()).sum();

    LineFit<Scalar> fit;
    fit.n = x.size();
    fit.slope = sxy / sxx;
    fit.intercept = ym - fit.slope * xm;
    fit.x_mean = xm;
    fit.y_mean = ym;
    const Vector<Scalar> resid = dy - fit.slope * dx;
    const Scalar ss_res = (w.array() * resid.array().square()).sum();
    const Scalar ss_tot = (w.array() * dy.array().square()).sum();
    fit.r2 = coefficient_of_determination(ss_res, ss_tot);
    fit.slope_stderr = fit.n > 2 ? std::sqrt(ss_res / Scalar(fit.n - 2) / sxx)
                                 : std::numeric_limits<Scalar>::quiet_NaN();
    return fit;
}

} // namespace detail

/// Ordinary least squares line through (x, y). Throws FitError when fewer
/// than two points are given or every x is identical.
template <typename DerivedX, typename DerivedY>
LineFit<typename DerivedX::Scalar> fit_line(const Eigen::MatrixBase<DerivedX>& x,
                                            const Eigen::MatrixBase<DerivedY>& y)
{
    using Scalar = typename DerivedX::Scalar;
    if (x.size() != y.size())
        throw FitError("fit_line: x and y differ in length");
    if (x.size() < 2)
        throw FitError("fit_line: need at least two points");
    if (x.maxCoeff() == x.minCoeff())
        throw FitError("degenerate design: all abscissae are equal");

    const Scalar xm = detail::stable_mean(x);
    const Scalar ym = detail::stable_mean(y);
    const Vector<Scalar> dx = x.array() - xm;
    const Vector<Scalar> dy = y.array() - ym;
    const Scalar sxx = dx.squaredNorm();
    const Scalar sxy = dx.dot(dy);

    LineFit<Scalar> fit;
    fit.n = x.size();
    fit.slope = sxy / sxx;
    fit.intercept = ym - fit.slope * xm;
    fit.x_mean = xm;
    fit.y_mean = ym;
    const Scalar ss_res = (dy - fit.slope * dx).squaredNorm();
    fit.r2 = detail::coefficient_of_determination(ss_res, dy.squaredNorm());
    fit.slope_stderr = fit.n > 2 ? std::sqrt(ss_res / Scalar(fit.n - 2) / sxx)
                                 : std::numeric_limits<Scalar>::quiet_NaN();
    return fit;
}

/// Huber M-estimate of a line by iteratively reweighted least squares.
/// The residual scale is the normalized MAD of the current residuals.
template <typename DerivedX, typename DerivedY>
LineFit<typename DerivedX::Scalar> fit_line_huber(const Eigen::MatrixBase<DerivedX>& x,
                                                  const Eigen::MatrixBase<DerivedY>& y,
                                                  typename DerivedX::Scalar k = 1.345,
                                                  int max_iter = 100)
{
    using Scalar = typename DerivedX::Scalar;
    LineFit<Scalar> fit = fit_line(x, y);
    Vector<Scalar> w = Vector<Scalar>::Ones(x.size());
    for (int it = 0; it < max_iter; ++it) {
        const Vector<Scalar> resid = y - (fit.intercept + fit.slope * x.array()).matrix();
        std::vector<Scalar> abs_r(resid.size());
        for (Eigen::Index i = 0; i < resid.size(); ++i)
            abs_r[i] = std::abs(resid[i]);
        std::nth_element(abs_r.begin(), abs_r.begin() + abs_r.size() / 2, abs_r.end());
        const Scalar scale = abs_r[abs_r.size() / 2] / Scalar(0.6744897501960817);
        if (!(scale > Scalar(0)))
            break;
        for (Eigen::Index i = 0; i < resid.size(); ++i) {
            const Scalar u = std::abs(resid[i]) / (k * scale);
            w[i] = u <= Scalar(1) ? Scalar(1) : Scalar(1) / u;
        }
        const LineFit<Scalar> next = detail::weighted_line(x, y, w);
        const bool converged = std::abs(next.slope - fit.slope) <= Scalar(1e-14) * (Scalar(1) + std::abs(fit.slope))
            && std::abs(next.intercept - fit.intercept) <= Scalar(1e-14) * (Scalar(1) + std::abs(fit.intercept));
        fit = next;
        if (converged)
            break;
    }
    return fit;
}

/// y ~ curvature * (x - vertex)^2 + minimum
template <typename Scalar>
struct QuadraticFit {
    Scalar curvature{};
    Scalar vertex{};
    Scalar minimum{};
    Scalar r2{};
    Eigen::Index n{};

    Scalar operator()(Scalar x) const
    {
        const Scalar u = x - vertex;
        return curvature * u * u + minimum;
    }
};

/// Least-squares parabola in vertex form. The design is centred and scaled
/// before the QR solve so that noiseless quadratics come back to round-off.
/// Throws FitError on a rank-deficient design (fewer than three distinct x).
/// The caller decides what to do with a non-positive curvature.
template <typename DerivedX, typename DerivedY>
QuadraticFit<typename DerivedX::Scalar> fit_quadratic(const Eigen::MatrixBase<DerivedX>& x,
                                                      const Eigen::MatrixBase<DerivedY>& y)
{
    using Scalar = typename DerivedX::Scalar;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    if (x.size() != y.size())
        throw FitError("fit_quadratic: x and y differ in length");
    if (x.size() < 3)
        throw FitError("rank-deficient slice: need at least three points");

    const Eigen::Index n = x.size();
    const Scalar xm = detail::stable_mean(x);
    const Vector<Scalar> dx = x.array() - xm;
    const Scalar spread = std::sqrt(dx.squaredNorm() / Scalar(n));
    if (!(spread > Scalar(0)))
        throw FitError("rank-deficient slice: all abscissae are equal");
    const Vector<Scalar> u = dx / spread;

    Matrix design(n, 3);
    design.col(0) = u.array().square().matrix();
    design.col(1) = u;
    design.col(2).setOnes();
    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    qr.setThreshold(Scalar(1e-10));
    if (qr.rank() < 3)
        throw FitError("rank-deficient slice: need at least three distinct abscissae");
    const Vector<Scalar> p = qr.solve(y.template cast<Scalar>());

    QuadraticFit<Scalar> fit;
    fit.n = n;
    fit.curvature = p[0] / (spread * spread);
    if (p[0] != Scalar(0)) {
        fit.vertex = xm - p[1] * spread / (Scalar(2) * p[0]);
        fit.minimum = p[2] - p[1] * p[1] / (Scalar(4) * p[0]);
    } else {
        fit.vertex = std::numeric_limits<Scalar>::quiet_NaN();
        fit.minimum = std::numeric_limits<Scalar>::quiet_NaN();
    }
    const Vector<Scalar> resid = y - design * p;
    const Scalar ym = detail::stable_mean(y);
    fit.r2 = detail::coefficient_of_determination(resid.squaredNorm(),
                                                  (y.array() - ym).matrix().squaredNorm());
    return fit;
}

/// Linear-interpolated empirical quantile of an ascending-sorted sample
/// (the "type 7" definition).
template <typename Scalar>
Scalar sorted_quantile(const std::vector<Scalar>& sorted, Scalar q)
{
    if (sorted.empty())
        throw FitError("quantile of an empty sample");
    const Scalar pos = q * Scalar(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const Scalar frac = pos - Scalar(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Lower-tail probability of Student's t with `df` degrees of freedom,
/// integrated with composite Simpson in long double.
template <typename Scalar>
Scalar student_t_cdf(Scalar t, int df)
{
    if (df < 1)
        throw ValidationError("student t needs at least one degree of freedom");
    const long double nu = df;
    const long double log_norm = std::lgamma((nu + 1.0L) / 2.0L) - std::lgamma(nu / 2.0L) -
                                 0.5L * std::log(nu * 3.141592653589793238462643383279503L);
    const auto density = [&](long double u) {
        return std::exp(log_norm - (nu + 1.0L) / 2.0L * std::log1p(u * u / nu));
    };
    const long double b = std::abs(static_cast<long double>(t));
    constexpr int intervals = 4096;
    const long double h = b / intervals;
    long double sum = density(0.0L) + density(b);
    for (int i = 1; i < intervals; ++i)
        sum += (i % 2 ? 4.0L : 2.0L) * density(h * i);
    const long double half_mass = std::min(sum * h / 3.0L, 0.5L);
    return static_cast<Scalar>(t >= Scalar(0) ? 0.5L + half_mass : 0.5L - half_mass);
}

/// Inverse of student_t_cdf by bisection.
template <typename Scalar>
Scalar student_t_quantile(Scalar p, int df)
{
    if (!(p > Scalar(0) && p < Scalar(1)))
        throw ValidationError("quantile probability must lie in (0, 1)");
    if (p < Scalar(0.5))
        return -student_t_quantile(Scalar(1) - p, df);
    Scalar lo = 0;
    Scalar hi = 1;
    while (student_t_cdf(hi, df) < p && hi < Scalar(1e12))
        hi *= 2;
    for (int i = 0; i < 200 && hi - lo > std::numeric_limits<Scalar>::epsilon() * hi; ++i) {
        const Scalar mid = (lo + hi) / 2;
        (student_t_cdf(mid, df) < p ? lo : hi) = mid;
    }
    return (lo + hi) / 2;
}

/// Pearson product-moment correlation of two equally sized vectors.
template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar pearson(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y)
{
    using Scalar = typename DerivedX::Scalar;
    const Vector<Scalar> dx = x.array() - detail::stable_mean(x);
    const Vector<Scalar> dy = y.array() - detail::stable_mean(y);
    const Scalar denom = std::sqrt(dx.squaredNorm() * dy.squaredNorm());
    if (!(denom > Scalar(0)))
        throw FitError("zero variance: correlation undefined");
    return std::clamp(dx.dot(dy) / denom, Scalar(-1), Scalar(1));
}

} // namespace relscale
