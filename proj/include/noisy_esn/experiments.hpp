#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "noisy_esn/analytics.hpp"
#include "noisy_esn/esn.hpp"
#include "noisy_esn/noise.hpp"
#include "noisy_esn/timeseries.hpp"
#include "noisy_esn/topology.hpp"

namespace noisy_esn
{

/// Which Mackey-Glass data the model sees, and how the evaluation window is prepared.
struct DataConfig
{
    MackeyGlassParams mg;
    std::size_t train_len = 40000;
    std::size_t test_len = 1000;
    std::size_t warmup = 100; // noise-free true inputs preceding the test window
};

struct ExperimentSetup
{
    DataConfig data;
    ReservoirSpec reservoir;
    Activation activation = Activation::tanh;
    TrainConfig train;
};

/// Starting state plus inputs and one-step-ahead targets of the test window.
struct EvaluationWindow
{
    Eigen::RowVectorXd initial_y;
    std::vector<double> inputs;
    std::vector<double> targets;
};

/// Warms the reservoir up on the last `warmup` training inputs (zero state, no noise).
inline EvaluationWindow make_window(const EsnModel& model, const SupervisedSplit& split,
                                    std::size_t warmup)
{
    if (warmup > split.inputs_train.size())
        throw ParameterError("make_window: warmup exceeds the training length");
    const auto n = static_cast<Eigen::Index>(model.n_neurons());
    EvaluationWindow w;
    const std::span<const double> train(split.inputs_train);
    w.initial_y = run_reservoir(model, train.subspan(train.size() - warmup),
                                Eigen::RowVectorXd::Zero(n));
    w.inputs = split.inputs_test;
    w.targets = split.targets_test;
    return w;
}

struct TrainedSetup
{
    ExperimentSetup setup;
    TimeSeries series;
    SupervisedSplit split;
    EsnModel model;
    EvaluationWindow window;
    double train_mse = 0.0;
    double test_mse = 0.0;
    double closed_mse = 0.0; // +inf when the noise-free free run diverges
};

namespace detail
{

inline double training_mse(const Eigen::MatrixXd& states, const WeightMatrix& w_out,
                           std::span<const double> targets)
{
    const Eigen::VectorXd fit = states * Eigen::Map<const Eigen::VectorXd>(w_out.data(), w_out.rows());
    return mse(std::span<const double>(fit.data(), static_cast<std::size_t>(fit.size())), targets);
}

} // namespace detail

/// Regenerates the data of `setup` around an already trained model and scores it noise-free.
/// The training MSE is recomputed unless supplied.
inline TrainedSetup attach(const ExperimentSetup& setup, EsnModel model,
                           std::optional<double> train_mse = std::nullopt)
{
    if (!model.trained())
        throw StateError("attach: model is not trained");
    validate(model);
    TrainedSetup ts;
    ts.setup = setup;
    const DataConfig& d = setup.data;
    ts.series = integrate_mackey_glass(d.mg, d.train_len + d.test_len + 1);
    ts.split = split_supervised(ts.series, d.train_len, d.test_len);
    ts.model = std::move(model);
    ts.window = make_window(ts.model, ts.split, d.warmup);

    if (train_mse)
        ts.train_mse = *train_mse;
    else
        ts.train_mse = detail::training_mse(
            collect_states(ts.model, ts.split.inputs_train, setup.train), *ts.model.w_out,
            std::span<const double>(ts.split.targets_train).subspan(setup.train.washout));

    const NoiseConfig clean;
    PredictOptions opt;
    opt.initial_y = ts.window.initial_y;
    const auto open = predict_open_loop(ts.model, ts.window.inputs, clean, opt);
    ts.test_mse = mse(open, ts.window.targets);
    const auto closed =
        predict_closed_loop(ts.model, ts.window.inputs.front(), ts.window.inputs.size(), clean, opt);
    ts.closed_mse = closed.diverged_at ? std::numeric_limits<double>::infinity()
                                       : mse(closed.outputs, ts.window.targets);
    return ts;
}

/// Generates the data, builds the reservoir, trains the readout and scores it noise-free.
inline TrainedSetup prepare(const ExperimentSetup& setup)
{
    const DataConfig& d = setup.data;
    const TimeSeries series = integrate_mackey_glass(d.mg, d.train_len + d.test_len + 1);
    const SupervisedSplit split = split_supervised(series, d.train_len, d.test_len);

    EsnModel model;
    model.w_in = gen_input_weights(setup.reservoir.n_neurons);
    model.w_res = gen_reservoir(setup.reservoir);
    model.activation = setup.activation;
    const Eigen::MatrixXd states = collect_states(model, split.inputs_train, setup.train);
    const auto targets = std::span<const double>(split.targets_train).subspan(setup.train.washout);
    model.w_out = train_readout(states, targets, setup.train);
    const double fit = detail::training_mse(states, *model.w_out, targets);
    return attach(setup, std::move(model), fit);
}

struct EnsembleOptions
{
    std::size_t workers = 1;
    /// Per-time-point reservoir statistics (open loop only): weighted_mean_sq and mean_res_var.
    bool collect_reservoir_stats = false;
    /// Simulate every realization even when only the output layer is noisy.
    bool force_full_simulation = false;
};

/// Realizations simulated together. Fixed, so results do not depend on the worker count.
inline constexpr std::size_t kEnsembleBlock = 32;

struct EnsembleRun
{
    std::size_t k = 0;
    LoopMode mode = LoopMode::open;
    NoiseConfig noise;
    std::vector<double> mean;     // per time point, over included realizations
    std::vector<double> variance; // unbiased; NaN when fewer than 2 realizations remain
    std::vector<double> clean;    // noise-free output
    std::vector<double> targets;
    std::vector<double> mse;      // per included realization, in realization order
    std::vector<std::size_t> excluded; // diverged realizations
    /// sum_j (W^out_j E[x^res_{t,j}])^2 per time point (open loop, when collected).
    std::vector<double> weighted_mean_sq;
    /// (1/N) sum_j Var[x^res_{t,j}] per time point (open loop, when collected).
    std::vector<double> mean_res_var;

    [[nodiscard]] std::size_t k_effective() const noexcept { return k - excluded.size(); }

    [[nodiscard]] double mean_mse() const
    {
        if (mse.empty())
            return std::numeric_limits<double>::infinity();
        double s = 0.0;
        for (double v : mse)
            s += v;
        return s / static_cast<double>(mse.size());
    }

    [[nodiscard]] double mean_variance() const
    {
        double s = 0.0;
        for (double v : variance)
            s += v;
        return variance.empty() ? std::numeric_limits<double>::quiet_NaN()
                                : s / static_cast<double>(variance.size());
    }
};

namespace detail
{

struct ReservoirPartial
{
    std::vector<double> sum;    // steps x N, deviations from the clean state
    std::vector<double> sum_sq;
};

} // namespace detail

/// K noisy trajectories over the evaluation window and their per-time-point statistics.
///
/// Realization k uses noise keys with repeat index k. Blocks of kEnsembleBlock realizations
/// are independent work units; reductions run in realization order, so the result is
/// bit-identical for every worker count. Closed-loop realizations whose output leaves
/// [-1e6, 1e6] are excluded from the statistics and listed in `excluded`.
inline EnsembleRun run_ensemble(const EsnModel& model, const EvaluationWindow& window,
                                const NoiseConfig& cfg, std::size_t k, LoopMode mode,
                                const EnsembleOptions& opt = {})
{
    if (k < 2)
        throw ParameterError("run_ensemble: k must be >= 2");
    if (!model.trained())
        throw StateError("run_ensemble: model is not trained");
    validate(cfg);
    const std::size_t steps = window.targets.size();
    if (window.inputs.size() != steps || steps == 0)
        throw ShapeError("run_ensemble: window inputs and targets must be non-empty and aligned");
    const std::size_t n = model.n_neurons();
    const bool collect = opt.collect_reservoir_stats && mode == LoopMode::open;

    SimulationSpec spec;
    spec.model = &model;
    spec.mode = mode;
    spec.inputs = window.inputs;
    spec.steps = steps;
    spec.initial_y = window.initial_y;

    // Noise-free reference, recording the clean pre-noise reservoir states.
    std::vector<double> clean_x;
    if (collect)
        clean_x.resize(steps * n);
    const BatchResult clean = simulate_batch(
        spec, 0, 1,
        collect ? StateObserver([&](std::size_t t, std::span<const double> x, std::size_t) {
            std::copy(x.begin(), x.end(), clean_x.begin() + static_cast<std::ptrdiff_t>(t * n));
        })
                : StateObserver{});

    EnsembleRun run;
    run.k = k;
    run.mode = mode;
    run.noise = cfg;
    run.clean = clean.outputs;
    run.targets = window.targets;
    spec.noise = cfg;

    std::vector<double> outputs(k * steps);
    std::vector<std::optional<std::size_t>> diverged(k);
    std::vector<double> res_sum, res_sum_sq;
    if (collect)
    {
        res_sum.assign(steps * n, 0.0);
        res_sum_sq.assign(steps * n, 0.0);
    }

    const bool shortcut = mode == LoopMode::open && !cfg.reservoir_active() && !opt.force_full_simulation;
    if (shortcut)
    {
        // Reservoir trajectories are identical for every realization; only the output
        // layer draws differ.
        const NoiseStream stream(cfg.master_seed);
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t t = 0; t < steps; ++t)
                outputs[r * steps + t] = apply_output_noise(clean.outputs[t], cfg, t, stream, r);
    }
    else
    {
        const std::size_t blocks = (k + kEnsembleBlock - 1) / kEnsembleBlock;
        std::atomic<std::size_t> next{0};
        std::mutex merge_mutex;
        std::map<std::size_t, detail::ReservoirPartial> pending;
        std::size_t next_merge = 0;
        std::exception_ptr failure;

        auto merge_ready = [&]() {
            // Caller holds merge_mutex.
            for (auto it = pending.find(next_merge); it != pending.end(); it = pending.find(next_merge))
            {
                for (std::size_t i = 0; i < res_sum.size(); ++i)
                {
                    res_sum[i] += it->second.sum[i];
                    res_sum_sq[i] += it->second.sum_sq[i];
                }
                pending.erase(it);
                ++next_merge;
            }
        };

        auto worker = [&]() {
            try
            {
                for (std::size_t b = next++; b < blocks; b = next++)
                {
                    const std::size_t first = b * kEnsembleBlock;
                    const std::size_t rows = std::min(kEnsembleBlock, k - first);
                    detail::ReservoirPartial part;
                    StateObserver observer;
                    if (collect)
                    {
                        part.sum.assign(steps * n, 0.0);
                        part.sum_sq.assign(steps * n, 0.0);
                        observer = [&](std::size_t t, std::span<const double> x, std::size_t nrows) {
                            const double* ref = clean_x.data() + t * n;
                            double* s = part.sum.data() + t * n;
                            double* s2 = part.sum_sq.data() + t * n;
                            for (std::size_t r = 0; r < nrows; ++r)
                                for (std::size_t j = 0; j < n; ++j)
                                {
                                    const double dev = x[r * n + j] - ref[j];
                                    s[j] += dev;
                                    s2[j] += dev * dev;
                                }
                        };
                    }
                    BatchResult br = simulate_batch(spec, first, rows, observer);
                    std::copy(br.outputs.begin(), br.outputs.end(),
                              outputs.begin() + static_cast<std::ptrdiff_t>(first * steps));
                    for (std::size_t r = 0; r < rows; ++r)
                        diverged[first + r] = br.diverged_at[r];
                    if (collect)
                    {
                        std::lock_guard lock(merge_mutex);
                        pending.emplace(b, std::move(part));
                        merge_ready();
                    }
                }
            }
            catch (...)
            {
                std::lock_guard lock(merge_mutex);
                if (!failure)
                    failure = std::current_exception();
                next = blocks;
            }
        };

        const std::size_t workers = std::clamp<std::size_t>(opt.workers, 1, blocks);
        if (workers == 1)
            worker();
        else
        {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w)
                pool.emplace_back(worker);
            for (auto& th : pool)
                th.join();
        }
        if (failure)
            std::rethrow_exception(failure);
    }

    std::vector<std::size_t> included;
    for (std::size_t r = 0; r < k; ++r)
    {
        if (diverged[r])
            run.excluded.push_back(r);
        else
            included.push_back(r);
    }

    run.mean.assign(steps, std::numeric_limits<double>::quiet_NaN());
    run.variance.assign(steps, std::numeric_limits<double>::quiet_NaN());
    if (!included.empty())
    {
        std::vector<double> column(included.size());
        for (std::size_t t = 0; t < steps; ++t)
        {
            for (std::size_t i = 0; i < included.size(); ++i)
                column[i] = outputs[included[i] * steps + t];
            if (column.size() >= 2)
            {
                const SampleStats s = ensemble_stats(column);
                run.mean[t] = s.mean;
                run.variance[t] = s.variance;
            }
            else
                run.mean[t] = column[0];
        }
        for (std::size_t r : included)
            run.mse.push_back(mse(std::span<const double>(outputs).subspan(r * steps, steps),
                                  window.targets));
    }

    if (collect)
    {
        const double kk = static_cast<double>(k);
        const double* w_out = model.w_out->data();
        run.weighted_mean_sq.assign(steps, 0.0);
        run.mean_res_var.assign(steps, 0.0);
        for (std::size_t t = 0; t < steps; ++t)
        {
            double wms = 0.0;
            double var_sum = 0.0;
            for (std::size_t j = 0; j < n; ++j)
            {
                const double s = res_sum[t * n + j];
                const double mean_dev = s / kk;
                const double expected = clean_x[t * n + j] + mean_dev;
                const double weighted = w_out[j] * expected;
                wms += weighted * weighted;
                const double var = std::max(0.0, (res_sum_sq[t * n + j] - s * mean_dev) / (kk - 1.0));
                var_sum += var;
            }
            run.weighted_mean_sq[t] = wms;
            run.mean_res_var[t] = var_sum / static_cast<double>(n);
        }
    }
    return run;
}

enum class NoiseTarget
{
    reservoir_ua,
    reservoir_um,
    reservoir_ca,
    reservoir_cm,
    output_ca,
    output_cm,
};

inline const std::vector<NoiseTarget>& all_noise_targets()
{
    static const std::vector<NoiseTarget> targets{
        NoiseTarget::reservoir_ca, NoiseTarget::reservoir_cm, NoiseTarget::reservoir_ua,
        NoiseTarget::reservoir_um, NoiseTarget::output_ca,    NoiseTarget::output_cm};
    return targets;
}

inline std::string to_string(NoiseTarget t)
{
    switch (t)
    {
    case NoiseTarget::reservoir_ua:
        return "res-ua";
    case NoiseTarget::reservoir_um:
        return "res-um";
    case NoiseTarget::reservoir_ca:
        return "res-ca";
    case NoiseTarget::reservoir_cm:
        return "res-cm";
    case NoiseTarget::output_ca:
        return "out-ca";
    case NoiseTarget::output_cm:
        return "out-cm";
    }
    return "unknown";
}

inline NoiseTarget parse_noise_target(const std::string& name)
{
    for (NoiseTarget t : all_noise_targets())
        if (to_string(t) == name)
            return t;
    throw ParameterError("unknown noise target '" + name + "'");
}

/// Config with only `target` set to `intensity`.
inline NoiseConfig noise_for(NoiseTarget target, double intensity, std::uint64_t seed)
{
    NoiseConfig cfg;
    cfg.master_seed = seed;
    switch (target)
    {
    case NoiseTarget::reservoir_ua:
        cfg.d_ua = intensity;
        break;
    case NoiseTarget::reservoir_um:
        cfg.d_um = intensity;
        break;
    case NoiseTarget::reservoir_ca:
        cfg.d_ca = intensity;
        break;
    case NoiseTarget::reservoir_cm:
        cfg.d_cm = intensity;
        break;
    case NoiseTarget::output_ca:
        cfg.d_ca_out = intensity;
        break;
    case NoiseTarget::output_cm:
        cfg.d_cm_out = intensity;
        break;
    }
    validate(cfg);
    return cfg;
}

struct SweepPoint
{
    double intensity = 0.0;
    double mse_mean = 0.0;
    double var_mean = 0.0;
    double var_min = 0.0;
    double var_max = 0.0;
    std::size_t k_effective = 0;
    std::size_t excluded = 0;
};

struct SweepResult
{
    NoiseTarget target = NoiseTarget::reservoir_ca;
    LoopMode mode = LoopMode::open;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<SweepPoint> points;
    /// Smallest swept intensity whose mean MSE exceeds `critical_mse` (closed sweeps).
    std::optional<double> critical_intensity;
};

inline constexpr double kCriticalMse = 0.5;

inline SweepPoint summarize(const EnsembleRun& run, double intensity)
{
    SweepPoint p;
    p.intensity = intensity;
    p.mse_mean = run.mean_mse();
    p.k_effective = run.k_effective();
    p.excluded = run.excluded.size();
    if (p.k_effective >= 2)
    {
        p.var_mean = run.mean_variance();
        const auto [lo, hi] = std::minmax_element(run.variance.begin(), run.variance.end());
        p.var_min = *lo;
        p.var_max = *hi;
    }
    else
    {
        p.var_mean = p.var_min = p.var_max = std::numeric_limits<double>::quiet_NaN();
    }
    return p;
}

/// One ensemble per intensity with only `target` switched on.
inline SweepResult intensity_sweep(const EsnModel& model, const EvaluationWindow& window,
                                   NoiseTarget target, std::span<const double> intensities,
                                   std::size_t k, LoopMode mode, std::uint64_t seed,
                                   const EnsembleOptions& opt = {})
{
    if (intensities.empty())
        throw ParameterError("intensity_sweep: empty intensity list");
    for (std::size_t i = 1; i < intensities.size(); ++i)
        if (!(intensities[i] > intensities[i - 1]))
            throw ParameterError("intensity_sweep: intensities must be strictly increasing");
    SweepResult res;
    res.target = target;
    res.mode = mode;
    res.k = k;
    res.seed = seed;
    for (double d : intensities)
    {
        const EnsembleRun run = run_ensemble(model, window, noise_for(target, d, seed), k, mode, opt);
        res.points.push_back(summarize(run, d));
    }
    for (const SweepPoint& p : res.points)
        if (p.mse_mean > kCriticalMse)
        {
            res.critical_intensity = p.intensity;
            break;
        }
    return res;
}

/// Self-closed sweep; `critical_intensity` is the first intensity with mean MSE above 0.5.
inline SweepResult closed_loop_sweep(const EsnModel& model, const EvaluationWindow& window,
                                     NoiseTarget target, std::span<const double> intensities,
                                     std::size_t k, std::uint64_t seed,
                                     const EnsembleOptions& opt = {})
{
    return intensity_sweep(model, window, target, intensities, k, LoopMode::closed, seed, opt);
}

/// Analytic floor per time point for a single-target open-loop reservoir run, without the
/// recirculated term. Output targets get the output-layer law.
inline std::vector<double> analytic_overlay(const EnsembleRun& run, NoiseTarget target,
                                            double intensity, const MatrixStats& w_out_stats,
                                            std::size_t n)
{
    std::vector<double> out(run.mean.size());
    for (std::size_t t = 0; t < out.size(); ++t)
    {
        const double e = run.mean[t];
        const double wms = run.weighted_mean_sq.empty() ? 0.0 : run.weighted_mean_sq[t];
        switch (target)
        {
        case NoiseTarget::reservoir_ca:
            out[t] = predict_reservoir_correlated(intensity, 0.0, w_out_stats, n, e, std::nullopt).total;
            break;
        case NoiseTarget::reservoir_cm:
            out[t] = predict_reservoir_correlated(0.0, intensity, w_out_stats, n, e, std::nullopt).total;
            break;
        case NoiseTarget::reservoir_ua:
            out[t] = predict_reservoir_uncorrelated(intensity, 0.0, w_out_stats, n, wms, std::nullopt).total;
            break;
        case NoiseTarget::reservoir_um:
            out[t] = predict_reservoir_uncorrelated(0.0, intensity, w_out_stats, n, wms, std::nullopt).total;
            break;
        case NoiseTarget::output_ca:
            out[t] = predict_output_layer(intensity, 0.0, e, 0.0).total;
            break;
        case NoiseTarget::output_cm:
            out[t] = predict_output_layer(0.0, intensity, e, 0.0).total;
            break;
        }
    }
    return out;
}

/// Intensities for the activation study: one for the uncorrelated kinds, one for the
/// correlated kinds.
struct ActivationGrid
{
    double uncorrelated = 1e-3;
    double correlated = 1e-3;
    std::size_t k = 300;

    /// Defaults per activation: uncorrelated 1e-15 (sigmoid), 1e-25 (linear), 1e-3 (tanh).
    static ActivationGrid defaults_for(Activation a)
    {
        ActivationGrid g;
        if (a == Activation::sigmoid)
            g.uncorrelated = 1e-15;
        else if (a == Activation::linear)
            g.uncorrelated = 1e-25;
        return g;
    }
};

struct ActivationScatter
{
    NoiseTarget target = NoiseTarget::reservoir_ca;
    double intensity = 0.0;
    EnsembleRun run;
    std::vector<double> analytic;
};

struct ActivationEntry
{
    ReservoirSpec reservoir;
    Activation activation = Activation::tanh;
    std::optional<MatrixStats> w_res_stats;
    std::optional<MatrixStats> w_out_stats;
    double test_mse = std::numeric_limits<double>::quiet_NaN();
    double closed_mse = std::numeric_limits<double>::quiet_NaN();
    std::vector<ActivationScatter> scatters;
    std::optional<std::string> error; // training or simulation failure
};

struct ActivationReport
{
    std::vector<ActivationEntry> entries;
};

/// Trains one model per reservoir spec with the given activation, tabulates its matrix
/// statistics and runs the four reservoir noise kinds at the grid intensities with analytic
/// overlays. Failures are recorded per entry rather than aborting the comparison.
inline ActivationReport activation_comparison(const std::vector<ReservoirSpec>& specs,
                                              Activation activation, const ActivationGrid& grid,
                                              const DataConfig& data, const TrainConfig& train,
                                              std::uint64_t noise_seed,
                                              const EnsembleOptions& opt = {})
{
    ActivationReport report;
    for (const ReservoirSpec& spec : specs)
    {
        ActivationEntry entry;
        entry.reservoir = spec;
        entry.activation = activation;
        try
        {
            ExperimentSetup setup;
            setup.data = data;
            setup.reservoir = spec;
            setup.activation = activation;
            setup.train = train;
            const TrainedSetup ts = prepare(setup);
            entry.w_res_stats = matrix_stats(ts.model.w_res);
            entry.w_out_stats = matrix_stats(*ts.model.w_out);
            entry.test_mse = ts.test_mse;
            entry.closed_mse = ts.closed_mse;

            EnsembleOptions eo = opt;
            eo.collect_reservoir_stats = true;
            for (NoiseTarget target : {NoiseTarget::reservoir_ca, NoiseTarget::reservoir_cm,
                                       NoiseTarget::reservoir_ua, NoiseTarget::reservoir_um})
            {
                const bool correlated =
                    target == NoiseTarget::reservoir_ca || target == NoiseTarget::reservoir_cm;
                ActivationScatter sc;
                sc.target = target;
                sc.intensity = correlated ? grid.correlated : grid.uncorrelated;
                sc.run = run_ensemble(ts.model, ts.window, noise_for(target, sc.intensity, noise_seed),
                                      grid.k, LoopMode::open, eo);
                sc.analytic = analytic_overlay(sc.run, target, sc.intensity, *entry.w_out_stats,
                                               ts.model.n_neurons());
                entry.scatters.push_back(std::move(sc));
            }
        }
        catch (const Error& e)
        {
            entry.error = e.what();
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace noisy_esn
