// End-to-end acceptance run on the default configuration (uniform reservoir, N = 500, tanh,
// s = 2.2, 40000 training steps, seed 7). Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. All tolerances are fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "noisy_esn/noisy_esn.hpp"

using namespace noisy_esn;

namespace
{

constexpr std::uint64_t kSeed = 7;
constexpr std::size_t kK = 300;
constexpr std::size_t kClosedK = 100;

constexpr double kMaxTestMse = 5e-3;
constexpr double kMaxClosedMse = 0.15;
constexpr double kMaxTrainSeconds = 120.0;
constexpr double kOutputTolerance = 0.15;
constexpr double kMaxFlatSlopeRatio = 0.10;
constexpr double kMaxMultIntercept = 2e-4;
constexpr double kFloorSlack = 1.0 - 0.17;
constexpr double kMinFractionAboveFloor = 0.99;
constexpr double kMedianFactor = 5.0;
constexpr double kSubstantialFactor = 2.0; // "much higher": median at least twice the floor
constexpr double kMinR2 = 0.98;
constexpr double kClosedCaMax = 1e-3;
constexpr double kClosedUaCentre = 2.5e-3;
constexpr double kClosedUmCentre = 4e-3;
constexpr double kClosedFactor = 3.0;
constexpr double kClosedCmStable = 0.02;
constexpr double kMinLinearEta = 1e8;
constexpr double kLinearIntensity = 1e-15;
constexpr double kMinLinearVariance = 1.0;
constexpr std::size_t kAlgebraSamples = 1'000'000;
constexpr double kAlgebraTolerance = 0.01;
constexpr double kDecompositionTolerance = 1e-13;

const std::vector<double> kLinearityGrid{1e-5, 1e-4, 1e-3, 1e-2};
const std::vector<double> kClosedGrid{1e-5,    1e-4, 3e-4, 6e-4,   8.3e-4, 1e-3, 1.33e-3, 2.5e-3,
                                      4e-3,    7.5e-3, 1.2e-2, 2e-2, 2.5e-2, 5e-2, 1e-1};

struct Fit
{
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

Fit linear_fit(const std::vector<double>& x, const std::vector<double>& y)
{
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    Fit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

std::vector<double> squared(const std::vector<double>& v)
{
    std::vector<double> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](double x) { return x * x; });
    return out;
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("none"); }

struct Verdict
{
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Verdict()>& check)
{
    Verdict v;
    try
    {
        v = check();
    }
    catch (const std::exception& e)
    {
        v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass)
        ++failures;
    std::printf("%s [%2d] %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
    std::fflush(stdout);
}

EnsembleOptions options()
{
    EnsembleOptions opt;
    opt.workers = std::max(1u, std::thread::hardware_concurrency());
    return opt;
}

std::string payload(const EnsembleRun& run)
{
    std::ostringstream os;
    io::write_ensemble_csv(os, io::Provenance{}, run);
    return os.str();
}

} // namespace

int main()
{
    ExperimentSetup setup; // library defaults are the reference configuration
    setup.reservoir.seed = kSeed;

    const auto t0 = std::chrono::steady_clock::now();
    const TrainedSetup ts = prepare(setup);
    const double train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const EsnModel& model = ts.model;
    const EvaluationWindow& window = ts.window;
    const MatrixStats w_out = matrix_stats(*model.w_out);
    const double n = static_cast<double>(model.n_neurons());

    report(1, "training quality", [&] {
        return Verdict{ts.test_mse <= kMaxTestMse && ts.closed_mse <= kMaxClosedMse && train_seconds < kMaxTrainSeconds,
                       "test MSE " + fmt(ts.test_mse) + " (<= " + fmt(kMaxTestMse) + "), closed MSE " +
                           fmt(ts.closed_mse) + " (<= " + fmt(kMaxClosedMse) + "), " + fmt(train_seconds) +
                           " s (< " + fmt(kMaxTrainSeconds) + ")"};
    });

    // Open-loop ensembles for every noise type over the linearity grid. The 1e-3 runs feed the
    // output-layer, floor and ordering checks.
    std::map<NoiseTarget, std::vector<double>> var_by_target;
    std::map<NoiseTarget, EnsembleRun> at_1e3;
    for (NoiseTarget target : all_noise_targets())
        for (double d : kLinearityGrid)
        {
            EnsembleRun run = run_ensemble(model, window, noise_for(target, d, kSeed), kK, LoopMode::open, options());
            var_by_target[target].push_back(run.mean_variance());
            if (d == 1e-3)
                at_1e3.emplace(target, std::move(run));
        }

    const EnsembleRun& out_ca = at_1e3.at(NoiseTarget::output_ca);
    const EnsembleRun& out_cm = at_1e3.at(NoiseTarget::output_cm);
    const Fit ca_fit = linear_fit(squared(out_ca.mean), out_ca.variance);
    const Fit cm_fit = linear_fit(squared(out_cm.mean), out_cm.variance);

    report(2, "output-layer additive noise", [&] {
        const double avg = out_ca.mean_variance();
        const double ratio = std::abs(ca_fit.slope) / cm_fit.slope;
        return Verdict{std::abs(avg - 2e-3) <= kOutputTolerance * 2e-3 && ratio <= kMaxFlatSlopeRatio,
                       "time-averaged variance " + fmt(avg) + " (2e-3 +/- 15%), |slope| vs multiplicative slope " +
                           fmt(ratio) + " (<= " + fmt(kMaxFlatSlopeRatio) + ")"};
    });

    report(3, "output-layer multiplicative noise", [&] {
        return Verdict{std::abs(cm_fit.slope - 2e-3) <= kOutputTolerance * 2e-3 &&
                           std::abs(cm_fit.intercept) <= kMaxMultIntercept,
                       "slope " + fmt(cm_fit.slope) + " (2e-3 +/- 15%), intercept " + fmt(cm_fit.intercept) +
                           " (|.| <= " + fmt(kMaxMultIntercept) + ")"};
    });

    report(4, "reservoir correlated-additive floor", [&] {
        const double floor = 2.0 * 1e-3 * n * n * w_out.mean_squared;
        const auto& v = at_1e3.at(NoiseTarget::reservoir_ca).variance;
        const double above =
            double(std::count_if(v.begin(), v.end(), [&](double x) { return x > floor * kFloorSlack; })) / double(v.size());
        const double med = median(v);
        const bool med_ok = med <= kMedianFactor * floor && med >= floor / kMedianFactor;
        return Verdict{above >= kMinFractionAboveFloor && med_ok,
                       "floor " + fmt(floor) + ", fraction above 0.83 floor " + fmt(above) + " (>= 0.99), median " +
                           fmt(med) + " (" + fmt(med / floor) + "x floor, within 5x)"};
    });

    report(5, "reservoir uncorrelated-additive floor", [&] {
        const double floor = 2.0 * 1e-3 * n * w_out.mean_of_squares;
        const auto& v = at_1e3.at(NoiseTarget::reservoir_ua).variance;
        const double lo = *std::min_element(v.begin(), v.end());
        const double med = median(v);
        return Verdict{lo >= floor * kFloorSlack && med >= kSubstantialFactor * floor,
                       "floor " + fmt(floor) + ", min " + fmt(lo) + " (>= 0.83 floor), median " + fmt(med) + " (" +
                           fmt(med / floor) + "x floor, >= " + fmt(kSubstantialFactor) + "x)"};
    });

    report(6, "linearity in intensity", [&] {
        bool ok = true;
        std::string detail = "R^2";
        for (NoiseTarget target : all_noise_targets())
        {
            const double r2 = linear_fit(kLinearityGrid, var_by_target.at(target)).r2;
            ok = ok && r2 > kMinR2;
            detail += " " + to_string(target) + "=" + fmt(r2);
        }
        return Verdict{ok, detail + " (each > " + fmt(kMinR2) + ")"};
    });

    report(7, "correlated above uncorrelated", [&] {
        const double ca = at_1e3.at(NoiseTarget::reservoir_ca).mean_variance();
        const double ua = at_1e3.at(NoiseTarget::reservoir_ua).mean_variance();
        const double cm = at_1e3.at(NoiseTarget::reservoir_cm).mean_variance();
        const double um = at_1e3.at(NoiseTarget::reservoir_um).mean_variance();
        return Verdict{ca > ua && cm > um, "CA " + fmt(ca) + " > UA " + fmt(ua) + ", CM " + fmt(cm) + " > UM " + fmt(um)};
    });

    report(8, "self-closed criticality", [&] {
        std::map<NoiseTarget, SweepResult> sweeps;
        for (NoiseTarget target : {NoiseTarget::reservoir_ca, NoiseTarget::reservoir_ua, NoiseTarget::reservoir_um,
                                   NoiseTarget::reservoir_cm})
            sweeps.emplace(target, closed_loop_sweep(model, window, target, kClosedGrid, kClosedK, kSeed, options()));
        auto within = [](const std::optional<double>& c, double centre) {
            return c && *c >= centre / kClosedFactor && *c <= centre * kClosedFactor;
        };
        const auto& ca = sweeps.at(NoiseTarget::reservoir_ca).critical_intensity;
        const auto& ua = sweeps.at(NoiseTarget::reservoir_ua).critical_intensity;
        const auto& um = sweeps.at(NoiseTarget::reservoir_um).critical_intensity;
        double cm_worst = 0.0;
        for (const SweepPoint& p : sweeps.at(NoiseTarget::reservoir_cm).points)
            if (p.intensity <= kClosedCmStable)
                cm_worst = std::max(cm_worst, p.mse_mean);
        const bool ca_ok = ca && *ca <= kClosedCaMax;
        const bool cm_ok = cm_worst <= kCriticalMse;
        return Verdict{ca_ok && within(ua, kClosedUaCentre) && within(um, kClosedUmCentre) && cm_ok,
                       "critical CA " + fmt_opt(ca) + " (<= 1e-3), UA " + fmt_opt(ua) + " ([8.33e-4, 7.5e-3]), UM " +
                           fmt_opt(um) + " ([1.33e-3, 1.2e-2]), CM max MSE up to 0.02 " + fmt(cm_worst) +
                           " (<= 0.5), CM critical " + fmt_opt(sweeps.at(NoiseTarget::reservoir_cm).critical_intensity)};
    });

    report(9, "linear activation blow-up", [&] {
        ExperimentSetup lin = setup;
        lin.activation = Activation::linear;
        lin.reservoir.spectral_radius = 1.0;
        const TrainedSetup lt = prepare(lin);
        const double eta = matrix_stats(*lt.model.w_out).mean_of_squares;
        const EnsembleRun run = run_ensemble(lt.model, lt.window, noise_for(NoiseTarget::reservoir_ua, kLinearIntensity, kSeed),
                                             kK, LoopMode::open, options());
        const double var = run.mean_variance();
        return Verdict{eta >= kMinLinearEta && var > kMinLinearVariance,
                       "eta(W_out) " + fmt(eta) + " (>= 1e8), time-averaged variance at UA 1e-15 " + fmt(var) +
                           " (> 1), test MSE " + fmt(lt.test_mse)};
    });

    report(10, "variance algebra", [&] {
        const NoiseStream stream(kSeed);
        std::uint64_t next = 0;
        auto draw = [&] { return stream.normal({NoiseSite::output, NoiseKind::uncorrelated_additive, 1, next++, 0}); };
        std::vector<double> scaled(kAlgebraSamples), sum(kAlgebraSamples), product(kAlgebraSamples);
        const double c = 2.5, m1 = 0.8, s1 = 0.4, m2 = -1.2, s2 = 0.3;
        for (std::size_t i = 0; i < kAlgebraSamples; ++i)
        {
            const double y1 = m1 + s1 * draw();
            const double y2 = m2 + s2 * draw();
            scaled[i] = c * y1;
            sum[i] = y1 + y2;
            product[i] = y1 * y2;
        }
        const double e_scaled = c * c * s1 * s1;
        const double e_sum = s1 * s1 + s2 * s2;
        const double e_product = m1 * m1 * s2 * s2 + (m2 * m2 + s2 * s2) * s1 * s1;
        const double r_scaled = ensemble_stats(scaled).variance / e_scaled - 1.0;
        const double r_sum = ensemble_stats(sum).variance / e_sum - 1.0;
        const double r_product = ensemble_stats(product).variance / e_product - 1.0;

        double worst = 0.0;
        for (int i = 0; i < 20; ++i)
        {
            NoiseConfig cfg;
            cfg.d_ua = 1e-3 * (i + 1);
            cfg.d_um = 2e-3 / (i + 1);
            cfg.d_ca = 5e-4 * (i % 3 + 1);
            cfg.d_cm = 1e-3 * (i % 5);
            const double e = 0.3 + 0.05 * i, wms = 0.5 + 0.1 * i, v = 1e-3 * (i + 1);
            const double full = predict_reservoir_full(cfg, w_out, model.n_neurons(), e, wms, v).total;
            const double corr = predict_reservoir_correlated(cfg.d_ca, cfg.d_cm, w_out, model.n_neurons(), e, v).total;
            const double unc = predict_reservoir_uncorrelated(cfg.d_ua, cfg.d_um, w_out, model.n_neurons(), wms, v).total;
            const double n2mu2 = n * n * w_out.mean_squared;
            const double rebuilt = corr + unc - n2mu2 * v + 4.0 * cfg.d_um * cfg.d_cm * (wms + n2mu2 * v);
            worst = std::max(worst, std::abs(full - rebuilt) / full);
        }
        const bool mc_ok = std::abs(r_scaled) <= kAlgebraTolerance && std::abs(r_sum) <= kAlgebraTolerance &&
                           std::abs(r_product) <= kAlgebraTolerance;
        return Verdict{mc_ok && worst <= kDecompositionTolerance,
                       "relative errors cY " + fmt(r_scaled) + ", Y1+Y2 " + fmt(r_sum) + ", Y1*Y2 " + fmt(r_product) +
                           " (each <= 1%), decomposition " + fmt(worst) + " (<= 1e-13)"};
    });

    report(11, "determinism across worker counts", [&] {
        NoiseConfig cfg;
        cfg.d_ua = 1e-3;
        cfg.d_cm = 1e-3;
        cfg.d_ca_out = 1e-3;
        cfg.master_seed = kSeed;
        EnsembleOptions one, four;
        four.workers = 4;
        bool ok = true;
        std::string detail;
        for (LoopMode mode : {LoopMode::open, LoopMode::closed})
        {
            const std::uint64_t h1 = io::fnv1a64(payload(run_ensemble(model, window, cfg, 100, mode, one)));
            const std::uint64_t h4 = io::fnv1a64(payload(run_ensemble(model, window, cfg, 100, mode, four)));
            ok = ok && h1 == h4;
            detail += to_string(mode) + " " + io::hex64(h1) + (h1 == h4 ? " == " : " != ") + io::hex64(h4) + "; ";
        }
        return Verdict{ok, detail + "workers 1 vs 4"};
    });

    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
