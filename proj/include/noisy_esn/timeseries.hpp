#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "noisy_esn/errors.hpp"

namespace noisy_esn
{

/// Parameters of the Mackey-Glass delay equation
///   du/dt = beta * u(t - tau) / (1 + u(t - tau)^n) - gamma * u(t)
/// integrated with an explicit Euler step.
struct MackeyGlassParams
{
    double beta = 0.2;
    double gamma = 0.1;
    double tau = 16.0;
    double n = 10.0;
    double dt = 1.0;
    double history = 1.2;       // constant value on [-tau, 0]
    std::size_t transient = 1000; // Euler steps discarded before sample 0
};

struct TimeSeries
{
    std::vector<double> values;
    double dt = 1.0;

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    [[nodiscard]] double operator[](std::size_t i) const { return values[i]; }
};

/// One-step-ahead supervised split: targets[i] == inputs[i + 1] of the source series.
struct SupervisedSplit
{
    std::vector<double> inputs_train;
    std::vector<double> targets_train;
    std::vector<double> inputs_test;
    std::vector<double> targets_test;
};

/// Number of Euler steps spanned by the delay. Throws ParameterError when tau/dt is not a
/// positive integer.
inline std::size_t delay_steps(const MackeyGlassParams& p)
{
    if (!(p.dt > 0.0) || !std::isfinite(p.dt))
        throw ParameterError("mackey-glass: dt must be positive and finite");
    const double ratio = p.tau / p.dt;
    const double rounded = std::round(ratio);
    if (!std::isfinite(ratio) || rounded < 1.0 ||
        std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
        throw ParameterError("mackey-glass: tau/dt = " + std::to_string(ratio) +
                             " is not a positive integer");
    return static_cast<std::size_t>(rounded);
}

inline void validate(const MackeyGlassParams& p)
{
    (void)delay_steps(p);
    if (!(p.n >= 1.0))
        throw ParameterError("mackey-glass: exponent n must be >= 1");
    if (!std::isfinite(p.beta) || !std::isfinite(p.gamma) || !std::isfinite(p.history))
        throw ParameterError("mackey-glass: beta, gamma and history must be finite");
}

/// Integrates the delay equation and returns `length` samples taken after the transient.
///
/// The delayed value u_{k - tau/dt} is read from a ring buffer of tau/dt + 1 samples that
/// starts out filled with the constant history, so the update is exact from the first step.
inline TimeSeries integrate_mackey_glass(const MackeyGlassParams& p, std::size_t length)
{
    validate(p);
    if (length == 0)
        throw ParameterError("mackey-glass: length must be positive");

    const std::size_t delay = delay_steps(p);
    const std::size_t slots = delay + 1;
    // ring[k mod slots] holds u_k; indices -delay..0 all hold the history.
    std::vector<double> ring(slots, p.history);

    TimeSeries out;
    out.dt = p.dt;
    out.values.reserve(length);

    double u = p.history;
    const std::size_t total = p.transient + length;
    for (std::size_t k = 0; k < total; ++k)
    {
        if (k >= p.transient)
            out.values.push_back(u);
        if (k + 1 == total)
            break;
        const std::size_t next = (k + 1) % slots;
        const double delayed = ring[next];
        const double drive = p.beta * delayed / (1.0 + std::pow(delayed, p.n));
        u = u + p.dt * (drive - p.gamma * u);
        if (!std::isfinite(u))
            throw NumericError("mackey-glass: non-finite value at step " +
                               std::to_string(k + 1));
        ring[next] = u;
    }
    return out;
}

/// Splits a series into train/test windows for one-step-ahead prediction.
///
/// Train inputs cover [0, train_len), train targets [1, train_len]; test inputs follow
/// contiguously. Without `test_len` the test window takes everything that still has a
/// shifted target.
inline SupervisedSplit split_supervised(const TimeSeries& series, std::size_t train_len,
                                        std::optional<std::size_t> test_len = std::nullopt)
{
    const std::size_t n = series.size();
    if (train_len == 0)
        throw SliceError("split: train_len must be positive");
    if (train_len + 1 > n)
        throw SliceError("split: series of length " + std::to_string(n) +
                         " leaves no shifted target for train_len " +
                         std::to_string(train_len));
    const std::size_t available = n - train_len - 1;
    const std::size_t test = test_len.value_or(available);
    if (test > available)
        throw SliceError("split: train_len + test_len + 1 = " +
                         std::to_string(train_len + test + 1) + " exceeds series length " +
                         std::to_string(n));

    const auto& v = series.values;
    SupervisedSplit s;
    s.inputs_train.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(train_len));
    s.targets_train.assign(v.begin() + 1, v.begin() + static_cast<std::ptrdiff_t>(train_len + 1));
    s.inputs_test.assign(v.begin() + static_cast<std::ptrdiff_t>(train_len),
                         v.begin() + static_cast<std::ptrdiff_t>(train_len + test));
    s.targets_test.assign(v.begin() + static_cast<std::ptrdiff_t>(train_len + 1),
                          v.begin() + static_cast<std::ptrdiff_t>(train_len + test + 1));
    return s;
}

} // namespace noisy_esn
