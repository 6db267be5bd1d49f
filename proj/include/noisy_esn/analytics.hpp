#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "noisy_esn/errors.hpp"
#include "noisy_esn/noise.hpp"
#include "noisy_esn/topology.hpp"

namespace noisy_esn
{

/// Analytic output variance split into its additive pieces.
///
/// `term_recirculated` carries the contribution of noise injected at earlier steps. It is
/// never predicted: callers plug in the empirical mean reservoir variance, or leave it out
/// to get the bare noise floor.
struct VariancePrediction
{
    double term_corr_additive = 0.0;
    double term_uncorr_additive = 0.0;
    double term_corr_mult = 0.0;
    double term_uncorr_mult = 0.0;
    std::optional<double> term_recirculated;
    /// Output-layer prediction only: (1 + 2 D_CM) Var[x^out].
    double term_passthrough = 0.0;
    double total = 0.0;
};

struct SampleStats
{
    double mean = 0.0;
    double variance = 0.0; // unbiased, count - 1 denominator
    std::size_t count = 0;
};

namespace detail
{

inline void require_nonnegative(double v, const char* what)
{
    if (!(v >= 0.0) || !std::isfinite(v))
        throw ParameterError(std::string("analytics: ") + what + " must be finite and >= 0");
}

inline void finish(VariancePrediction& p)
{
    p.total = p.term_corr_additive + p.term_uncorr_additive + p.term_corr_mult +
              p.term_uncorr_mult + p.term_passthrough + p.term_recirculated.value_or(0.0);
}

} // namespace detail

/// Output-layer noise: Var[y^out] = 2 D_CA + 2 D_CM E^2[y^out] + (1 + 2 D_CM) Var[x^out].
/// Open-loop callers pass var_x_out = 0.
inline VariancePrediction predict_output_layer(double d_ca, double d_cm, double mean_out,
                                               double var_x_out)
{
    detail::require_nonnegative(d_ca, "d_ca");
    detail::require_nonnegative(d_cm, "d_cm");
    detail::require_nonnegative(var_x_out, "var_x_out");
    VariancePrediction p;
    p.term_corr_additive = 2.0 * d_ca;
    p.term_corr_mult = 2.0 * d_cm * mean_out * mean_out;
    p.term_passthrough = (1.0 + 2.0 * d_cm) * var_x_out;
    detail::finish(p);
    return p;
}

/// Four-way reservoir noise seen at the (noise-free) output layer:
///   2 D_CA N^2 mu^2 + 2 D_UA N eta + 2 D_CM E^2[y^out]
///   + 2 D_UM (1 + 2 D_CM) sum_j (W_j E[x_j])^2
///   + (1 + 2 D_UM)(1 + 2 D_CM) N^2 mu^2 mean_res_var.
/// `weighted_mean_sq` is sum_j (W^out_j E[x^res_{t,j}])^2.
inline VariancePrediction predict_reservoir_full(const NoiseConfig& cfg,
                                                 const MatrixStats& w_out_stats, std::size_t n,
                                                 double mean_out, double weighted_mean_sq,
                                                 std::optional<double> mean_res_var)
{
    validate(cfg);
    detail::require_nonnegative(weighted_mean_sq, "weighted_mean_sq");
    if (mean_res_var)
        detail::require_nonnegative(*mean_res_var, "mean_res_var");
    const double nn = static_cast<double>(n);
    const double n2mu2 = nn * nn * w_out_stats.mean_squared;
    VariancePrediction p;
    p.term_corr_additive = 2.0 * cfg.d_ca * n2mu2;
    p.term_uncorr_additive = 2.0 * cfg.d_ua * nn * w_out_stats.mean_of_squares;
    p.term_corr_mult = 2.0 * cfg.d_cm * mean_out * mean_out;
    p.term_uncorr_mult = 2.0 * cfg.d_um * (1.0 + 2.0 * cfg.d_cm) * weighted_mean_sq;
    if (mean_res_var)
        p.term_recirculated =
            (1.0 + 2.0 * cfg.d_um) * (1.0 + 2.0 * cfg.d_cm) * n2mu2 * *mean_res_var;
    detail::finish(p);
    return p;
}

/// Correlated-only restriction:
///   2 D_CA N^2 mu^2 + 2 D_CM E^2[y^out] + (1 + 2 D_CM) N^2 mu^2 mean_res_var.
inline VariancePrediction predict_reservoir_correlated(double d_ca, double d_cm,
                                                       const MatrixStats& w_out_stats,
                                                       std::size_t n, double mean_out,
                                                       std::optional<double> mean_res_var)
{
    NoiseConfig cfg;
    cfg.d_ca = d_ca;
    cfg.d_cm = d_cm;
    return predict_reservoir_full(cfg, w_out_stats, n, mean_out, 0.0, mean_res_var);
}

/// Uncorrelated-only restriction:
///   2 D_UA N eta + 2 D_UM sum_j (W_j E[x_j])^2 + (1 + 2 D_UM) N^2 mu^2 mean_res_var.
///
/// With `approximate_weighted_mean_sq` the weighted sum is replaced by N eta, the crude
/// estimate that holds when every E[x_j]^2 is close to 1 (bounded activation, positive
/// input). Off by default.
inline VariancePrediction predict_reservoir_uncorrelated(double d_ua, double d_um,
                                                         const MatrixStats& w_out_stats,
                                                         std::size_t n, double weighted_mean_sq,
                                                         std::optional<double> mean_res_var,
                                                         bool approximate_weighted_mean_sq = false)
{
    NoiseConfig cfg;
    cfg.d_ua = d_ua;
    cfg.d_um = d_um;
    const double wms = approximate_weighted_mean_sq
                           ? static_cast<double>(n) * w_out_stats.mean_of_squares
                           : weighted_mean_sq;
    return predict_reservoir_full(cfg, w_out_stats, n, 0.0, wms, mean_res_var);
}

/// The output-layer overlay law g(x) = 2 D_CA + 2 D_CM x^2.
inline double output_layer_overlay(double d_ca, double d_cm, double x) noexcept
{
    return 2.0 * d_ca + 2.0 * d_cm * x * x;
}

/// Sample mean and unbiased variance (two-pass).
inline SampleStats ensemble_stats(std::span<const double> samples)
{
    if (samples.size() < 2)
        throw ParameterError("ensemble_stats: need at least 2 samples, got " +
                             std::to_string(samples.size()));
    SampleStats s;
    s.count = samples.size();
    double sum = 0.0;
    for (double v : samples)
        sum += v;
    s.mean = sum / static_cast<double>(s.count);
    double ss = 0.0;
    for (double v : samples)
    {
        const double d = v - s.mean;
        ss += d * d;
    }
    s.variance = ss / static_cast<double>(s.count - 1);
    return s;
}

/// Two-sided relative half-width for a sample variance from k Gaussian draws at `sigmas`
/// standard errors: sigmas * sqrt(2 / (k - 1)).
inline double variance_tolerance(std::size_t k, double sigmas = 2.0)
{
    if (k < 2)
        throw ParameterError("variance_tolerance: k must be >= 2");
    return sigmas * std::sqrt(2.0 / static_cast<double>(k - 1));
}

} // namespace noisy_esn
