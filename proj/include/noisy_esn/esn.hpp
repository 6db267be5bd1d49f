#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "noisy_esn/errors.hpp"
#include "noisy_esn/noise.hpp"
#include "noisy_esn/topology.hpp"

namespace noisy_esn
{

enum class Activation
{
    tanh,
    sigmoid,
    linear,
};

inline std::string to_string(Activation a)
{
    switch (a)
    {
    case Activation::tanh:
        return "tanh";
    case Activation::sigmoid:
        return "sigmoid";
    case Activation::linear:
        return "linear";
    }
    return "unknown";
}

inline Activation parse_activation(const std::string& name)
{
    if (name == "tanh")
        return Activation::tanh;
    if (name == "sigmoid")
        return Activation::sigmoid;
    if (name == "linear")
        return Activation::linear;
    throw ParameterError("unknown activation '" + name + "'");
}

inline double activate(Activation a, double x) noexcept
{
    switch (a)
    {
    case Activation::tanh:
        return std::tanh(x);
    case Activation::sigmoid:
        return 1.0 / (1.0 + std::exp(-x));
    case Activation::linear:
        return x;
    }
    return x;
}

struct EsnModel
{
    WeightMatrix w_in;                 // 1 x N
    WeightMatrix w_res;                // N x N
    std::optional<WeightMatrix> w_out; // N x 1, present once trained
    Activation activation = Activation::tanh;

    [[nodiscard]] std::size_t n_neurons() const noexcept
    {
        return static_cast<std::size_t>(w_res.rows());
    }
    [[nodiscard]] bool trained() const noexcept { return w_out.has_value(); }
};

inline void validate(const EsnModel& m)
{
    const auto n = m.w_res.rows();
    if (n == 0 || m.w_res.cols() != n)
        throw ShapeError("esn: reservoir matrix must be square and non-empty");
    if (m.w_in.rows() != 1 || m.w_in.cols() != n)
        throw ShapeError("esn: input weights must be 1 x N");
    if (m.w_out && (m.w_out->rows() != n || m.w_out->cols() != 1))
        throw ShapeError("esn: readout must be N x 1");
}

struct ReservoirState
{
    Eigen::RowVectorXd x; // pre-noise neuron outputs
    Eigen::RowVectorXd y; // post-noise outputs, fed back at the next step

    static ReservoirState zero(std::size_t n)
    {
        return {Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(n)),
                Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(n))};
    }
};

struct TrainConfig
{
    double ridge_lambda = 1e-8;
    std::size_t washout = 100;
};

namespace detail
{

/// x_r = f(u_r * w_in + y_r * W_res) for `rows` independent rows stored contiguously.
///
/// Every element is accumulated as ((u w_in + y_0 W_0) + y_1 W_1) + ... in index order,
/// whatever the row count, so a row computed alone is bit-identical to the same row computed
/// inside a batch (this relies on -ffp-contract=off). Returns false if any produced value
/// is non-finite.
inline bool propagate_rows(const EsnModel& m, const double* y_prev, const double* u,
                           std::size_t rows, double* x_out) noexcept
{
    constexpr std::size_t kRowTile = 8;
    const std::size_t n = m.n_neurons();
    const double* w_in = m.w_in.data();
    const double* w = m.w_res.data();
    bool finite = true;
    for (std::size_t r0 = 0; r0 < rows; r0 += kRowTile)
    {
        const std::size_t r1 = std::min(rows, r0 + kRowTile);
        for (std::size_t r = r0; r < r1; ++r)
        {
            double* __restrict x = x_out + r * n;
            const double ur = u[r];
            for (std::size_t j = 0; j < n; ++j)
                x[j] = ur * w_in[j];
        }
        std::size_t i = 0;
        // Four terms per pass halve the load/store traffic on x; the additions still
        // happen one term at a time in index order.
        for (; i + 4 <= n; i += 4)
        {
            const double* __restrict w0 = w + i * n;
            const double* __restrict w1 = w0 + n;
            const double* __restrict w2 = w1 + n;
            const double* __restrict w3 = w2 + n;
            for (std::size_t r = r0; r < r1; ++r)
            {
                const double* yr = y_prev + r * n + i;
                const double a0 = yr[0], a1 = yr[1], a2 = yr[2], a3 = yr[3];
                double* __restrict x = x_out + r * n;
                for (std::size_t j = 0; j < n; ++j)
                {
                    double v = x[j];
                    v += a0 * w0[j];
                    v += a1 * w1[j];
                    v += a2 * w2[j];
                    v += a3 * w3[j];
                    x[j] = v;
                }
            }
        }
        for (; i < n; ++i)
        {
            const double* __restrict wi = w + i * n;
            for (std::size_t r = r0; r < r1; ++r)
            {
                const double a = y_prev[r * n + i];
                double* __restrict x = x_out + r * n;
                for (std::size_t j = 0; j < n; ++j)
                    x[j] += a * wi[j];
            }
        }
        for (std::size_t r = r0; r < r1; ++r)
        {
            double* x = x_out + r * n;
            for (std::size_t j = 0; j < n; ++j)
            {
                x[j] = activate(m.activation, x[j]);
                finite = finite && std::isfinite(x[j]);
            }
        }
    }
    return finite;
}

/// Readout dot product in fixed index order.
inline double readout_dot(const double* w_out, const double* y, std::size_t n) noexcept
{
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j)
        acc += w_out[j] * y[j];
    return acc;
}

} // namespace detail

/// One noise-free reservoir update; the returned state has y == x.
inline ReservoirState step(const EsnModel& model, const ReservoirState& state, double u)
{
    validate(model);
    const auto n = static_cast<Eigen::Index>(model.n_neurons());
    if (state.y.size() != n)
        throw ShapeError("step: state size does not match the reservoir");
    ReservoirState next{Eigen::RowVectorXd(n), Eigen::RowVectorXd(n)};
    if (!detail::propagate_rows(model, state.y.data(), &u, 1, next.x.data()))
        throw NumericError("step: reservoir state became non-finite");
    next.y = next.x;
    return next;
}

/// x^out = sum_j W^out_j y_j.
inline double readout(const EsnModel& model, const ReservoirState& state)
{
    if (!model.trained())
        throw StateError("readout: model is not trained");
    if (state.y.size() != model.w_out->rows())
        throw ShapeError("readout: state size does not match the readout");
    return detail::readout_dot(model.w_out->data(), state.y.data(), model.n_neurons());
}

/// Runs the noise-free reservoir over `inputs` from `initial_y` and returns the final y.
inline Eigen::RowVectorXd run_reservoir(const EsnModel& model, std::span<const double> inputs,
                                        const Eigen::RowVectorXd& initial_y)
{
    validate(model);
    Eigen::RowVectorXd y = initial_y;
    Eigen::RowVectorXd x(y.size());
    for (std::size_t t = 0; t < inputs.size(); ++t)
    {
        if (!detail::propagate_rows(model, y.data(), &inputs[t], 1, x.data()))
            throw NumericError("run_reservoir: non-finite state at step " + std::to_string(t));
        y.swap(x);
    }
    return y;
}

/// Noise-free states for every training input after the washout, starting from zero.
/// Row r holds the state produced by inputs[washout + r].
inline Eigen::MatrixXd collect_states(const EsnModel& model, std::span<const double> inputs,
                                      const TrainConfig& cfg)
{
    validate(model);
    if (cfg.washout >= inputs.size())
        throw ParameterError("collect_states: washout " + std::to_string(cfg.washout) +
                             " must be smaller than the training length " +
                             std::to_string(inputs.size()));
    const auto n = static_cast<Eigen::Index>(model.n_neurons());
    Eigen::MatrixXd states(static_cast<Eigen::Index>(inputs.size() - cfg.washout), n);
    Eigen::RowVectorXd y = Eigen::RowVectorXd::Zero(n);
    Eigen::RowVectorXd x(n);
    for (std::size_t t = 0; t < inputs.size(); ++t)
    {
        if (!detail::propagate_rows(model, y.data(), &inputs[t], 1, x.data()))
            throw NumericError("collect_states: non-finite state at step " + std::to_string(t));
        y.swap(x);
        if (t >= cfg.washout)
            states.row(static_cast<Eigen::Index>(t - cfg.washout)) = y;
    }
    return states;
}

/// Ridge readout W = argmin |X W - d|^2 + lambda |W|^2.
///
/// Solved as the least-squares problem [X; sqrt(lambda) I] W = [d; 0] with Householder QR,
/// which never forms X^T X. With lambda = 0 a rank-revealing QR rejects singular systems.
inline WeightMatrix train_readout(const Eigen::MatrixXd& states, std::span<const double> targets,
                                  const TrainConfig& cfg)
{
    if (states.rows() != static_cast<Eigen::Index>(targets.size()))
        throw ShapeError("train_readout: " + std::to_string(states.rows()) + " states vs " +
                         std::to_string(targets.size()) + " targets");
    if (!(cfg.ridge_lambda >= 0.0) || !std::isfinite(cfg.ridge_lambda))
        throw ParameterError("train_readout: ridge_lambda must be >= 0");
    const Eigen::Index rows = states.rows();
    const Eigen::Index n = states.cols();
    Eigen::VectorXd d(rows);
    for (Eigen::Index r = 0; r < rows; ++r)
    {
        d(r) = targets[static_cast<std::size_t>(r)];
        if (!std::isfinite(d(r)))
            throw ParameterError("train_readout: non-finite target at index " + std::to_string(r));
    }

    Eigen::VectorXd w;
    if (cfg.ridge_lambda > 0.0)
    {
        Eigen::MatrixXd a(rows + n, n);
        a.topRows(rows) = states;
        a.bottomRows(n) = std::sqrt(cfg.ridge_lambda) * Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(rows + n);
        b.head(rows) = d;
        w = a.householderQr().solve(b);
    }
    else
    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(states);
        if (qr.rank() < n)
            throw SolverError("train_readout: state matrix is rank deficient (rank " +
                              std::to_string(qr.rank()) + " < " + std::to_string(n) +
                              "); use ridge_lambda > 0");
        w = qr.solve(d);
    }
    if (!w.allFinite())
        throw SolverError("train_readout: solution is not finite; use ridge_lambda > 0");
    return WeightMatrix(w);
}

/// Collects states, fits the readout and returns a trained copy of the model.
inline EsnModel train(EsnModel model, std::span<const double> inputs,
                      std::span<const double> targets, const TrainConfig& cfg)
{
    if (inputs.size() != targets.size())
        throw ShapeError("train: inputs and targets differ in length");
    const Eigen::MatrixXd states = collect_states(model, inputs, cfg);
    model.w_out = train_readout(states, targets.subspan(cfg.washout), cfg);
    return model;
}

inline double mse(std::span<const double> predicted, std::span<const double> truth)
{
    if (predicted.size() != truth.size())
        throw ShapeError("mse: lengths " + std::to_string(predicted.size()) + " and " +
                         std::to_string(truth.size()) + " differ");
    if (predicted.empty())
        throw ShapeError("mse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
    {
        const double e = predicted[i] - truth[i];
        acc += e * e;
    }
    return acc / static_cast<double>(predicted.size());
}

enum class LoopMode
{
    open,
    closed,
};

inline std::string to_string(LoopMode m) { return m == LoopMode::open ? "open" : "closed"; }

/// Everything a batch of noisy trajectories shares.
struct SimulationSpec
{
    const EsnModel* model = nullptr;
    LoopMode mode = LoopMode::open;
    /// Open loop: one input per step. Closed loop: only inputs[0] is used, as the first input.
    std::span<const double> inputs;
    std::size_t steps = 0;
    Eigen::RowVectorXd initial_y;
    NoiseConfig noise;
    double divergence_bound = 1e6;
};

/// Rows x steps outputs of one batch; diverged rows hold NaN after their divergence step.
struct BatchResult
{
    std::size_t rows = 0;
    std::size_t steps = 0;
    std::vector<double> outputs; // row-major
    std::vector<std::optional<std::size_t>> diverged_at;

    [[nodiscard]] std::span<const double> row(std::size_t r) const
    {
        return std::span<const double>(outputs).subspan(r * steps, steps);
    }
};

/// Called once per step with the pre-noise states of the batch (rows x N, row-major).
using StateObserver =
    std::function<void(std::size_t t, std::span<const double> x, std::size_t rows)>;

/// Simulates realizations [first, first + rows) in lockstep.
///
/// Per step: x = f(u W^in + y_prev W^res); y = reservoir noise(x), fed back next step;
/// x^out = y W^out; y^out = output noise(x^out). In closed loop y^out becomes the next input.
/// Noise keys use the absolute realization index, so a realization is reproduced exactly
/// whatever batch it is simulated in.
inline BatchResult simulate_batch(const SimulationSpec& spec, std::uint64_t first, std::size_t rows,
                                  const StateObserver& observer = {})
{
    const EsnModel& model = *spec.model;
    validate(model);
    validate(spec.noise);
    if (!model.trained())
        throw StateError("simulate: model is not trained");
    const std::size_t n = model.n_neurons();
    if (static_cast<std::size_t>(spec.initial_y.size()) != n)
        throw ShapeError("simulate: initial state size does not match the reservoir");
    if (spec.mode == LoopMode::open && spec.inputs.size() < spec.steps)
        throw ShapeError("simulate: open loop needs one input per step");
    if (spec.mode == LoopMode::closed && spec.inputs.empty() && spec.steps > 0)
        throw ShapeError("simulate: closed loop needs a seed input");

    BatchResult res;
    res.rows = rows;
    res.steps = spec.steps;
    res.outputs.assign(rows * spec.steps, std::numeric_limits<double>::quiet_NaN());
    res.diverged_at.assign(rows, std::nullopt);

    std::vector<double> y(rows * n), x(rows * n), u(rows);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(spec.initial_y.data(), spec.initial_y.data() + n, y.begin() + static_cast<std::ptrdiff_t>(r * n));
    if (spec.mode == LoopMode::closed && spec.steps > 0)
        std::fill(u.begin(), u.end(), spec.inputs[0]);

    const NoiseStream stream(spec.noise.master_seed);
    ReservoirNoiseScratch scratch;
    const double* w_out = model.w_out->data();

    for (std::size_t t = 0; t < spec.steps; ++t)
    {
        if (spec.mode == LoopMode::open)
            std::fill(u.begin(), u.end(), spec.inputs[t]);
        const bool finite = detail::propagate_rows(model, y.data(), u.data(), rows, x.data());
        if (!finite && spec.mode == LoopMode::open)
            throw NumericError("simulate: non-finite reservoir state at step " + std::to_string(t));
        if (observer)
            observer(t, x, rows);
        for (std::size_t r = 0; r < rows; ++r)
        {
            double* xr = x.data() + r * n;
            if (res.diverged_at[r])
            {
                std::fill(xr, xr + n, 0.0);
                u[r] = 0.0;
                continue;
            }
            const std::uint64_t k = first + r;
            apply_reservoir_noise_inplace(std::span<double>(xr, n), spec.noise, t, k, stream,
                                          scratch);
            const double out = detail::readout_dot(w_out, xr, n);
            const double noisy = apply_output_noise(out, spec.noise, t, stream, k);
            if (spec.mode == LoopMode::closed &&
                (!std::isfinite(noisy) || std::abs(noisy) > spec.divergence_bound))
            {
                res.diverged_at[r] = t;
                res.outputs[r * spec.steps + t] = noisy;
                std::fill(xr, xr + n, 0.0);
                u[r] = 0.0;
                continue;
            }
            if (!std::isfinite(noisy))
                throw NumericError("simulate: non-finite output at step " + std::to_string(t));
            res.outputs[r * spec.steps + t] = noisy;
            if (spec.mode == LoopMode::closed)
                u[r] = noisy;
        }
        y.swap(x);
    }
    return res;
}

struct PredictOptions
{
    std::optional<Eigen::RowVectorXd> initial_y; // zero state when absent
    std::uint64_t realization = 0;
};

/// Drives the reservoir with true inputs; reservoir noise recirculates through y^res.
inline std::vector<double> predict_open_loop(const EsnModel& model, std::span<const double> inputs,
                                             const NoiseConfig& noise,
                                             const PredictOptions& opt = {})
{
    if (!model.trained())
        throw StateError("predict_open_loop: model is not trained");
    SimulationSpec spec;
    spec.model = &model;
    spec.mode = LoopMode::open;
    spec.inputs = inputs;
    spec.steps = inputs.size();
    spec.initial_y = opt.initial_y.value_or(Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(model.n_neurons())));
    spec.noise = noise;
    return simulate_batch(spec, opt.realization, 1).outputs;
}

struct ClosedLoopResult
{
    std::vector<double> outputs; // truncated after the divergence step
    std::optional<std::size_t> diverged_at;
};

/// Free-running prediction: the first input is `seed_input`, every later input is the
/// previous noisy output. Stops when |y^out| exceeds the divergence bound.
inline ClosedLoopResult predict_closed_loop(const EsnModel& model, double seed_input,
                                            std::size_t steps, const NoiseConfig& noise,
                                            const PredictOptions& opt = {},
                                            double divergence_bound = 1e6)
{
    if (!model.trained())
        throw StateError("predict_closed_loop: model is not trained");
    SimulationSpec spec;
    spec.model = &model;
    spec.mode = LoopMode::closed;
    spec.inputs = std::span<const double>(&seed_input, 1);
    spec.steps = steps;
    spec.initial_y = opt.initial_y.value_or(Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(model.n_neurons())));
    spec.noise = noise;
    spec.divergence_bound = divergence_bound;
    BatchResult batch = simulate_batch(spec, opt.realization, 1);
    ClosedLoopResult res;
    res.diverged_at = batch.diverged_at[0];
    const std::size_t keep = res.diverged_at ? *res.diverged_at + 1 : steps;
    res.outputs.assign(batch.outputs.begin(), batch.outputs.begin() + static_cast<std::ptrdiff_t>(keep));
    return res;
}

} // namespace noisy_esn
