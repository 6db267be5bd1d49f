#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "noisy_esn/detail/philox.hpp"
#include "noisy_esn/errors.hpp"

namespace noisy_esn
{

/// Noise intensities. Each deviate enters as sqrt(2 D) * xi with xi ~ N(0, 1), so its
/// variance is 2 D. Reservoir intensities follow the four-way operator; the output layer
/// has a single neuron and only the correlated (per-step) kinds.
struct NoiseConfig
{
    double d_ua = 0.0; // reservoir, uncorrelated additive
    double d_um = 0.0; // reservoir, uncorrelated multiplicative
    double d_ca = 0.0; // reservoir, correlated additive
    double d_cm = 0.0; // reservoir, correlated multiplicative
    double d_ca_out = 0.0;
    double d_cm_out = 0.0;
    std::uint64_t master_seed = 0;

    [[nodiscard]] bool reservoir_active() const noexcept
    {
        return d_ua > 0.0 || d_um > 0.0 || d_ca > 0.0 || d_cm > 0.0;
    }
    [[nodiscard]] bool output_active() const noexcept
    {
        return d_ca_out > 0.0 || d_cm_out > 0.0;
    }
    [[nodiscard]] bool any_active() const noexcept
    {
        return reservoir_active() || output_active();
    }
};

inline void validate(const NoiseConfig& cfg)
{
    for (double d : {cfg.d_ua, cfg.d_um, cfg.d_ca, cfg.d_cm, cfg.d_ca_out, cfg.d_cm_out})
        if (!(d >= 0.0) || !std::isfinite(d))
            throw ParameterError("noise: intensities must be finite and >= 0");
}

enum class NoiseSite : std::uint32_t
{
    reservoir = 0,
    output = 1,
};

enum class NoiseKind : std::uint32_t
{
    uncorrelated_additive = 0,
    uncorrelated_multiplicative = 1,
    correlated_additive = 2,
    correlated_multiplicative = 3,
};

/// Address of one deviate. Correlated kinds always use neuron = 0.
struct NoiseKey
{
    NoiseSite site = NoiseSite::reservoir;
    NoiseKind kind = NoiseKind::uncorrelated_additive;
    std::uint64_t realization = 0;
    std::uint64_t t = 0;
    std::uint64_t neuron = 0;
};

/// Stream tag mixed into the master seed for the Philox key.
inline constexpr std::uint64_t kNoiseStreamTag = 0x6E6F6973655F7869ull; // "noise_xi"

/// Keyed standard-normal source.
///
/// The Philox4x32-10 counter is
///   { t, neuron >> 1, realization, site << 8 | kind }
/// (each word truncated to 32 bits) and the key is splitmix64(master_seed ^ tag) split into
/// two words. The 128-bit output feeds one Box-Muller transform: neuron parity selects the
/// cosine (even) or sine (odd) branch. Values therefore depend on (master_seed, key) only.
class NoiseStream
{
  public:
    explicit NoiseStream(std::uint64_t master_seed) noexcept
    {
        const std::uint64_t k = detail::splitmix64(master_seed ^ kNoiseStreamTag);
        key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    }

    [[nodiscard]] double normal(const NoiseKey& key) const noexcept
    {
        const detail::Philox4x32::Counter ctr{
            static_cast<std::uint32_t>(key.t), static_cast<std::uint32_t>(key.neuron >> 1),
            static_cast<std::uint32_t>(key.realization),
            (static_cast<std::uint32_t>(key.site) << 8) | static_cast<std::uint32_t>(key.kind)};
        const auto r = detail::Philox4x32::generate(ctr, key_);
        const double u1 = unit_open_closed((std::uint64_t{r[0]} << 32) | r[1]);
        const double u2 = unit_open_closed((std::uint64_t{r[2]} << 32) | r[3]);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        return (key.neuron & 1u) ? radius * std::sin(angle) : radius * std::cos(angle);
    }

    /// Fills out[i] with the deviates for neurons 0..out.size()-1, one Philox call per pair.
    void normals(NoiseSite site, NoiseKind kind, std::uint64_t realization, std::uint64_t t,
                 std::span<double> out) const noexcept
    {
        const auto tag = (static_cast<std::uint32_t>(site) << 8) | static_cast<std::uint32_t>(kind);
        for (std::size_t pair = 0; 2 * pair < out.size(); ++pair)
        {
            const detail::Philox4x32::Counter ctr{static_cast<std::uint32_t>(t),
                                                  static_cast<std::uint32_t>(pair),
                                                  static_cast<std::uint32_t>(realization), tag};
            const auto r = detail::Philox4x32::generate(ctr, key_);
            const double u1 = unit_open_closed((std::uint64_t{r[0]} << 32) | r[1]);
            const double u2 = unit_open_closed((std::uint64_t{r[2]} << 32) | r[3]);
            const double radius = std::sqrt(-2.0 * std::log(u1));
            const double angle = 2.0 * std::numbers::pi * u2;
            out[2 * pair] = radius * std::cos(angle);
            if (2 * pair + 1 < out.size())
                out[2 * pair + 1] = radius * std::sin(angle);
        }
    }

  private:
    // (0, 1]: never zero, so log() stays finite.
    static double unit_open_closed(std::uint64_t bits) noexcept
    {
        return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
    }

    detail::Philox4x32::Key key_{};
};

inline double sample_standard_normal(const NoiseStream& stream, const NoiseKey& key) noexcept
{
    return stream.normal(key);
}

/// Scratch space for the per-neuron deviates of one reservoir step.
struct ReservoirNoiseScratch
{
    std::vector<double> additive;
    std::vector<double> multiplicative;
};

/// In-place four-way reservoir operator:
///   y_i = x_i (1 + sqrt(2 D_UM) xi^UM_{t,i}) (1 + sqrt(2 D_CM) xi^CM_t)
///         + sqrt(2 D_UA) xi^UA_{t,i} + sqrt(2 D_CA) xi^CA_t.
/// Kinds with zero intensity are skipped, so an all-zero config leaves x untouched.
inline void apply_reservoir_noise_inplace(std::span<double> x, const NoiseConfig& cfg,
                                          std::uint64_t t, std::uint64_t realization,
                                          const NoiseStream& stream,
                                          ReservoirNoiseScratch& scratch)
{
    const std::size_t n = x.size();
    if (cfg.d_um > 0.0)
    {
        scratch.multiplicative.resize(n);
        stream.normals(NoiseSite::reservoir, NoiseKind::uncorrelated_multiplicative,
                       realization, t, scratch.multiplicative);
        const double amp = std::sqrt(2.0 * cfg.d_um);
        for (std::size_t i = 0; i < n; ++i)
            x[i] *= 1.0 + amp * scratch.multiplicative[i];
    }
    if (cfg.d_cm > 0.0)
    {
        const double xi = stream.normal(
            {NoiseSite::reservoir, NoiseKind::correlated_multiplicative, realization, t, 0});
        const double factor = 1.0 + std::sqrt(2.0 * cfg.d_cm) * xi;
        for (std::size_t i = 0; i < n; ++i)
            x[i] *= factor;
    }
    if (cfg.d_ua > 0.0)
    {
        scratch.additive.resize(n);
        stream.normals(NoiseSite::reservoir, NoiseKind::uncorrelated_additive, realization, t,
                       scratch.additive);
        const double amp = std::sqrt(2.0 * cfg.d_ua);
        for (std::size_t i = 0; i < n; ++i)
            x[i] += amp * scratch.additive[i];
    }
    if (cfg.d_ca > 0.0)
    {
        const double xi = stream.normal(
            {NoiseSite::reservoir, NoiseKind::correlated_additive, realization, t, 0});
        const double shift = std::sqrt(2.0 * cfg.d_ca) * xi;
        for (std::size_t i = 0; i < n; ++i)
            x[i] += shift;
    }
}

inline std::vector<double> apply_reservoir_noise(std::span<const double> x_res,
                                                 const NoiseConfig& cfg, std::uint64_t t,
                                                 const NoiseStream& stream,
                                                 std::uint64_t realization = 0)
{
    std::vector<double> y(x_res.begin(), x_res.end());
    ReservoirNoiseScratch scratch;
    apply_reservoir_noise_inplace(y, cfg, t, realization, stream, scratch);
    return y;
}

/// Output-layer operator: y = x (1 + sqrt(2 D_CM) xi^CM_t) + sqrt(2 D_CA) xi^CA_t, with
/// deviates keyed on the output site and therefore independent of the reservoir ones.
inline double apply_output_noise(double x_out, const NoiseConfig& cfg, std::uint64_t t,
                                 const NoiseStream& stream, std::uint64_t realization = 0)
{
    double y = x_out;
    if (cfg.d_cm_out > 0.0)
        y *= 1.0 + std::sqrt(2.0 * cfg.d_cm_out) *
                       stream.normal({NoiseSite::output, NoiseKind::correlated_multiplicative,
                                      realization, t, 0});
    if (cfg.d_ca_out > 0.0)
        y += std::sqrt(2.0 * cfg.d_ca_out) *
             stream.normal(
                 {NoiseSite::output, NoiseKind::correlated_additive, realization, t, 0});
    return y;
}

} // namespace noisy_esn
