#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "noisy_esn/detail/philox.hpp"
#include "noisy_esn/errors.hpp"

namespace noisy_esn
{

/// Dense weight matrix. Row-major so that row-vector-times-matrix products stream rows.
using WeightMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ReservoirKind
{
    uniform,
    band,
};

struct ReservoirSpec
{
    ReservoirKind kind = ReservoirKind::uniform;
    double connectivity_percent = 100.0; // band only
    std::size_t n_neurons = 500;
    double spectral_radius = 2.2;
    std::uint64_t seed = 0;
};

struct MatrixStats
{
    double mean = 0.0;
    double mean_squared = 0.0;    // mean^2
    double mean_of_squares = 0.0; // eta
    double std_dev = 0.0;
    std::optional<double> spectral_radius;
};

/// Stream tag mixed into ReservoirSpec::seed for topology draws. Noise uses Philox keys
/// derived from a different tag, so the two never share random numbers.
inline constexpr std::uint64_t kTopologyStreamTag = 0x746F706F6C6F6779ull; // "topology"

namespace detail
{

/// Uniform double on [-0.5, 0.5) built from the top 53 bits of a 64-bit draw.
inline double centered_uniform(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
}

inline std::mt19937_64 topology_engine(std::uint64_t seed)
{
    return std::mt19937_64(splitmix64(seed ^ kTopologyStreamTag));
}

inline void validate(const ReservoirSpec& spec)
{
    if (spec.n_neurons == 0)
        throw ParameterError("reservoir: n_neurons must be positive");
    if (!(spec.spectral_radius > 0.0) || !std::isfinite(spec.spectral_radius))
        throw ParameterError("reservoir: spectral_radius must be positive");
    if (spec.kind == ReservoirKind::band &&
        !(spec.connectivity_percent > 0.0 && spec.connectivity_percent <= 100.0))
        throw ParameterError("reservoir: connectivity_percent must lie in (0, 100]");
}

} // namespace detail

/// Nonzero count of an n x n band matrix with half-width w.
constexpr std::size_t band_nonzeros(std::size_t n, std::size_t w) noexcept
{
    return (2 * w + 1) * n - w * (w + 1);
}

/// Half-width whose nonzero fraction best approximates `connectivity_percent`.
///
/// Throws ParameterError when the requested density is closer to an empty matrix than to
/// the bare diagonal.
inline std::size_t band_half_width(std::size_t n, double connectivity_percent)
{
    if (n == 0)
        throw ParameterError("band: n must be positive");
    const double n2 = static_cast<double>(n) * static_cast<double>(n);
    const double target = connectivity_percent / 100.0;
    if (target * n2 < 0.5 * static_cast<double>(n))
        throw ParameterError("band: connectivity " + std::to_string(connectivity_percent) +
                             "% is below half the main diagonal");
    std::size_t best = 0;
    double best_err = std::abs(static_cast<double>(band_nonzeros(n, 0)) / n2 - target);
    for (std::size_t w = 1; w < n; ++w)
    {
        const double err = std::abs(static_cast<double>(band_nonzeros(n, w)) / n2 - target);
        if (err < best_err)
        {
            best_err = err;
            best = w;
        }
    }
    return best;
}

struct SpectralRadiusOptions
{
    std::size_t max_iterations = 100000;
    double tolerance = 1e-10; // relative change over `window` iterations
    std::size_t window = 10;
    std::size_t block = 4;
    std::uint64_t seed = 0x5eed5eedull;
};

/// Modulus of the dominant eigenvalue.
///
/// Block power iteration: a small orthonormal block is pushed through the matrix and the
/// dominant modulus is read off the Rayleigh-Ritz projection, which resolves complex
/// conjugate pairs that defeat single-vector iteration. Stops once the estimate moves by
/// less than `tolerance` (relative) across `window` iterations.
inline double spectral_radius(const WeightMatrix& m, const SpectralRadiusOptions& opt = {})
{
    if (m.rows() != m.cols())
        throw ShapeError("spectral_radius: matrix is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", expected square");
    const Eigen::Index n = m.rows();
    if (n == 0)
        throw ShapeError("spectral_radius: empty matrix");
    if (!m.allFinite())
        throw NumericError("spectral_radius: matrix has non-finite entries");

    const Eigen::Index b = std::min<Eigen::Index>(n, static_cast<Eigen::Index>(opt.block));
    std::mt19937_64 rng(detail::splitmix64(opt.seed));
    Eigen::MatrixXd q(n, b);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < b; ++j)
            q(i, j) = detail::centered_uniform(rng);

    auto orthonormalize = [b](const Eigen::MatrixXd& z) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(z);
        return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(z.rows(), b));
    };
    q = orthonormalize(q);

    std::vector<double> history;
    history.reserve(1024);
    double estimate = 0.0;
    for (std::size_t it = 0; it < opt.max_iterations; ++it)
    {
        const Eigen::MatrixXd z = m * q;
        const Eigen::MatrixXd h = q.transpose() * z;
        Eigen::EigenSolver<Eigen::MatrixXd> es(h, false);
        estimate = 0.0;
        for (Eigen::Index k = 0; k < b; ++k)
            estimate = std::max(estimate, std::abs(es.eigenvalues()(k)));
        history.push_back(estimate);

        // With a full-dimensional block the projection is similar to m itself.
        if (b == n)
            break;
        if (history.size() > opt.window)
        {
            const double past = history[history.size() - 1 - opt.window];
            const double scale = std::max(estimate, 1e-300);
            if (std::abs(estimate - past) < opt.tolerance * scale)
                break;
            if (estimate < 1e-14 && past < 1e-14)
                break;
        }
        q = orthonormalize(z);
    }
    return estimate < 1e-14 ? 0.0 : estimate;
}

/// Returns m * (s / spectral_radius(m)).
inline WeightMatrix scale_to_spectral_radius(const WeightMatrix& m, double s)
{
    if (!(s > 0.0) || !std::isfinite(s))
        throw ParameterError("scale_to_spectral_radius: target must be positive");
    const double rho = spectral_radius(m);
    if (rho <= 1e-14)
        throw ScalingError("scale_to_spectral_radius: matrix has zero spectral radius");
    return m * (s / rho);
}

/// Dense N x N reservoir with i.i.d. U[-0.5, 0.5] entries, rescaled to the target radius.
/// Entries are drawn in row-major order.
inline WeightMatrix gen_uniform(const ReservoirSpec& spec)
{
    detail::validate(spec);
    if (spec.kind != ReservoirKind::uniform)
        throw ParameterError("gen_uniform: spec kind is not uniform");
    const auto n = static_cast<Eigen::Index>(spec.n_neurons);
    auto rng = detail::topology_engine(spec.seed);
    WeightMatrix w(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            w(i, j) = detail::centered_uniform(rng);
    return scale_to_spectral_radius(w, spec.spectral_radius);
}

/// Band reservoir: entries with |i - j| <= w drawn as in gen_uniform (row-major over the
/// band only), everything else zero; w from band_half_width.
inline WeightMatrix gen_band(const ReservoirSpec& spec)
{
    detail::validate(spec);
    if (spec.kind != ReservoirKind::band)
        throw ParameterError("gen_band: spec kind is not band");
    const std::size_t half = band_half_width(spec.n_neurons, spec.connectivity_percent);
    const auto n = static_cast<Eigen::Index>(spec.n_neurons);
    const auto w = static_cast<Eigen::Index>(half);
    auto rng = detail::topology_engine(spec.seed);
    WeightMatrix m = WeightMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        const Eigen::Index lo = std::max<Eigen::Index>(0, i - w);
        const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + w);
        for (Eigen::Index j = lo; j <= hi; ++j)
            m(i, j) = detail::centered_uniform(rng);
    }
    return scale_to_spectral_radius(m, spec.spectral_radius);
}

inline WeightMatrix gen_reservoir(const ReservoirSpec& spec)
{
    return spec.kind == ReservoirKind::uniform ? gen_uniform(spec) : gen_band(spec);
}

/// 1 x N matrix of ones.
inline WeightMatrix gen_input_weights(std::size_t n_neurons)
{
    if (n_neurons == 0)
        throw ParameterError("gen_input_weights: n_neurons must be positive");
    return WeightMatrix::Ones(1, static_cast<Eigen::Index>(n_neurons));
}

inline MatrixStats matrix_stats(const WeightMatrix& m)
{
    if (m.size() == 0)
        throw ShapeError("matrix_stats: empty matrix");
    const double count = static_cast<double>(m.size());
    MatrixStats s;
    s.mean = m.sum() / count;
    s.mean_squared = s.mean * s.mean;
    s.mean_of_squares = m.squaredNorm() / count;
    s.std_dev = std::sqrt(std::max(0.0, s.mean_of_squares - s.mean_squared));
    if (m.rows() == m.cols())
        s.spectral_radius = spectral_radius(m);
    return s;
}

inline std::string to_string(ReservoirKind kind)
{
    return kind == ReservoirKind::uniform ? "uniform" : "band";
}

} // namespace noisy_esn
