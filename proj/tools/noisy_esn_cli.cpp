// Command-line front end: data generation, training, noise ensembles, sweeps and analytic
// predictions. Every subcommand writes its CSV outputs plus a resolved-config snapshot into
// --out-dir (default: $NOISY_ESN_OUT_DIR, else the current directory).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "noisy_esn/noisy_esn.hpp"

namespace fs = std::filesystem;
using namespace noisy_esn;

namespace
{

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct RunConfig
{
    // data
    MackeyGlassParams mg;
    std::size_t length = 41001;
    std::size_t train_len = 40000;
    std::size_t test_len = 1000;
    std::size_t warmup = 100;
    // reservoir
    std::string reservoir = "uniform";
    double connectivity = 100.0;
    std::size_t n = 500;
    std::optional<double> spectral_radius;
    std::string activation = "tanh";
    // training
    double lambda = 1e-8;
    std::size_t washout = 100;
    // noise
    std::string site = "reservoir";
    double d_ua = 0.0, d_um = 0.0, d_ca = 0.0, d_cm = 0.0;
    // experiments
    std::uint64_t seed = 7;
    std::size_t k = 300;
    std::string mode = "open";
    std::string target = "res-ca";
    std::vector<double> intensities;
    std::size_t workers = 1;
    std::string model_path;
    std::string out_dir;
    // stats / analytic / activation-compare
    std::string matrix = "all";
    bool csv = false;
    bool grid = false;
    std::string grid_in;
    std::vector<double> mean_out;
    double var_x_out = 0.0;
    double weighted_mean_sq = 0.0;
    std::optional<double> mean_res_var;
    std::optional<double> w_out_mean;
    std::optional<double> w_out_eta;
    std::vector<std::uint64_t> seeds;
    std::optional<double> d_uncorr;
    std::optional<double> d_corr;
};

// ---------------------------------------------------------------- option groups

void add_common(CLI::App* sub, RunConfig& c)
{
    sub->add_option("--seed", c.seed, "Master seed; topology and noise streams derive from it")
        ->capture_default_str();
    sub->add_option("--out-dir", c.out_dir, "Output directory (default $NOISY_ESN_OUT_DIR or .)");
}

void add_data(CLI::App* sub, RunConfig& c)
{
    auto* g = sub->add_option_group("data");
    g->add_option("--mg-beta", c.mg.beta)->capture_default_str();
    g->add_option("--mg-gamma", c.mg.gamma)->capture_default_str();
    g->add_option("--mg-tau", c.mg.tau)->capture_default_str();
    g->add_option("--mg-n", c.mg.n, "Mackey-Glass exponent")->capture_default_str();
    g->add_option("--mg-dt", c.mg.dt)->capture_default_str();
    g->add_option("--mg-history", c.mg.history)->capture_default_str();
    g->add_option("--mg-transient", c.mg.transient)->capture_default_str();
    g->add_option("--train-len", c.train_len)->capture_default_str();
    g->add_option("--test-len", c.test_len)->capture_default_str();
    g->add_option("--warmup", c.warmup, "Noise-free steps before the test window")->capture_default_str();
}

void add_reservoir(CLI::App* sub, RunConfig& c)
{
    auto* g = sub->add_option_group("reservoir");
    g->add_option("--reservoir", c.reservoir)
        ->check(CLI::IsMember({"uniform", "band"}))
        ->capture_default_str();
    g->add_option("--connectivity", c.connectivity, "Band connectivity in percent")->capture_default_str();
    g->add_option("--n", c.n, "Number of neurons")->capture_default_str();
    g->add_option("--s", c.spectral_radius, "Spectral radius (default 2.2; 11 sigmoid, 1 linear)");
    g->add_option("--activation", c.activation)
        ->check(CLI::IsMember({"tanh", "sigmoid", "linear"}))
        ->capture_default_str();
    g->add_option("--lambda", c.lambda, "Ridge regularization")->capture_default_str();
    g->add_option("--washout", c.washout)->capture_default_str();
}

void add_noise(CLI::App* sub, RunConfig& c)
{
    auto* g = sub->add_option_group("noise");
    g->add_option("--site", c.site)->check(CLI::IsMember({"reservoir", "output"}))->capture_default_str();
    g->add_option("--d-ua", c.d_ua, "Uncorrelated additive intensity (reservoir only)")->capture_default_str();
    g->add_option("--d-um", c.d_um, "Uncorrelated multiplicative intensity (reservoir only)")->capture_default_str();
    g->add_option("--d-ca", c.d_ca, "Correlated additive intensity")->capture_default_str();
    g->add_option("--d-cm", c.d_cm, "Correlated multiplicative intensity")->capture_default_str();
}

void add_model(CLI::App* sub, RunConfig& c)
{
    sub->add_option("--model", c.model_path, "Model file from `train`; trains a fresh model if absent");
}

void add_ensemble(CLI::App* sub, RunConfig& c)
{
    sub->add_option("--k", c.k, "Realizations per ensemble")->capture_default_str();
    sub->add_option("--workers", c.workers, "Worker threads")->capture_default_str();
}

// ---------------------------------------------------------------- resolution

double default_radius(Activation a)
{
    switch (a)
    {
    case Activation::sigmoid:
        return 11.0;
    case Activation::linear:
        return 1.0;
    case Activation::tanh:
        break;
    }
    return 2.2;
}

ExperimentSetup resolve_setup(const RunConfig& c)
{
    ExperimentSetup s;
    s.data.mg = c.mg;
    s.data.train_len = c.train_len;
    s.data.test_len = c.test_len;
    s.data.warmup = c.warmup;
    s.activation = parse_activation(c.activation);
    s.reservoir.kind = c.reservoir == "band" ? ReservoirKind::band : ReservoirKind::uniform;
    s.reservoir.connectivity_percent = c.connectivity;
    s.reservoir.n_neurons = c.n;
    s.reservoir.spectral_radius = c.spectral_radius.value_or(default_radius(s.activation));
    s.reservoir.seed = c.seed;
    s.train.ridge_lambda = c.lambda;
    s.train.washout = c.washout;
    return s;
}

NoiseConfig resolve_noise(const RunConfig& c)
{
    NoiseConfig cfg;
    cfg.master_seed = c.seed;
    if (c.site == "output")
    {
        if (c.d_ua > 0.0 || c.d_um > 0.0)
            throw ParameterError("--d-ua/--d-um apply to the reservoir site only");
        cfg.d_ca_out = c.d_ca;
        cfg.d_cm_out = c.d_cm;
    }
    else
    {
        cfg.d_ua = c.d_ua;
        cfg.d_um = c.d_um;
        cfg.d_ca = c.d_ca;
        cfg.d_cm = c.d_cm;
    }
    validate(cfg);
    return cfg;
}

std::map<std::string, std::string> model_metadata(const ExperimentSetup& s)
{
    using io::format_double;
    return {
        {"mg_beta", format_double(s.data.mg.beta)},
        {"mg_gamma", format_double(s.data.mg.gamma)},
        {"mg_tau", format_double(s.data.mg.tau)},
        {"mg_n", format_double(s.data.mg.n)},
        {"mg_dt", format_double(s.data.mg.dt)},
        {"mg_history", format_double(s.data.mg.history)},
        {"mg_transient", std::to_string(s.data.mg.transient)},
        {"train_len", std::to_string(s.data.train_len)},
        {"test_len", std::to_string(s.data.test_len)},
        {"warmup", std::to_string(s.data.warmup)},
        {"reservoir", to_string(s.reservoir.kind)},
        {"connectivity", format_double(s.reservoir.connectivity_percent)},
        {"spectral_radius", format_double(s.reservoir.spectral_radius)},
        {"seed", std::to_string(s.reservoir.seed)},
        {"lambda", format_double(s.train.ridge_lambda)},
        {"washout", std::to_string(s.train.washout)},
    };
}

ExperimentSetup setup_from_metadata(const io::ModelFile& f)
{
    auto get = [&](const char* key) -> const std::string& {
        const auto it = f.metadata.find(key);
        if (it == f.metadata.end())
            throw FormatError(std::string("model file: missing metadata '") + key + "'");
        return it->second;
    };
    auto num = [&](const char* key) { return io::parse_double(get(key)); };
    auto count = [&](const char* key) { return static_cast<std::size_t>(std::stoull(get(key))); };
    ExperimentSetup s;
    s.data.mg.beta = num("mg_beta");
    s.data.mg.gamma = num("mg_gamma");
    s.data.mg.tau = num("mg_tau");
    s.data.mg.n = num("mg_n");
    s.data.mg.dt = num("mg_dt");
    s.data.mg.history = num("mg_history");
    s.data.mg.transient = count("mg_transient");
    s.data.train_len = count("train_len");
    s.data.test_len = count("test_len");
    s.data.warmup = count("warmup");
    s.reservoir.kind = get("reservoir") == "band" ? ReservoirKind::band : ReservoirKind::uniform;
    s.reservoir.connectivity_percent = num("connectivity");
    s.reservoir.n_neurons = f.model.n_neurons();
    s.reservoir.spectral_radius = num("spectral_radius");
    s.reservoir.seed = std::stoull(get("seed"));
    s.train.ridge_lambda = num("lambda");
    s.train.washout = count("washout");
    s.activation = f.model.activation;
    return s;
}

/// Loads --model (data and training settings come from the file) or trains a fresh model.
TrainedSetup obtain_model(const RunConfig& c)
{
    if (!c.model_path.empty())
    {
        io::ModelFile f = io::load_model(c.model_path);
        if (!f.model.trained())
            throw StateError("model file '" + c.model_path + "' holds an untrained model");
        const ExperimentSetup s = setup_from_metadata(f);
        return attach(s, std::move(f.model));
    }
    std::cerr << "training a model (no --model given)\n";
    return prepare(resolve_setup(c));
}

fs::path out_dir(const RunConfig& c)
{
    fs::path dir = c.out_dir;
    if (dir.empty())
    {
        const char* env = std::getenv("NOISY_ESN_OUT_DIR");
        dir = env && *env ? fs::path(env) : fs::path(".");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

std::ofstream open_out(const fs::path& path)
{
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot write '" + path.string() + "'");
    return os;
}

io::Provenance provenance(const std::string& subcommand, const RunConfig& c)
{
    io::Provenance p;
    p.add("subcommand", subcommand).add("seed", c.seed);
    return p;
}

std::string join(const std::vector<double>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + io::format_double(v[i]);
    return s;
}

/// Resolved options of the active subcommand as an INI section; replay with
/// `noisy_esn --config <file> <subcommand>`.
void write_snapshot(const CLI::App& sub, const fs::path& dir)
{
    std::ofstream os = open_out(dir / (sub.get_name() + ".config.ini"));
    os << '[' << sub.get_name() << "]\n" << sub.config_to_str(true, false);
}

// ---------------------------------------------------------------- subcommands

void cmd_generate(const RunConfig& c, const fs::path& dir)
{
    const TimeSeries series = integrate_mackey_glass(c.mg, c.length);
    io::Provenance p = provenance("generate", c);
    p.add("length", static_cast<std::uint64_t>(c.length));
    std::ofstream os = open_out(dir / "series.csv");
    io::write_series_csv(os, p, series.values);
    std::cout << "wrote " << (dir / "series.csv").string() << " (" << c.length << " samples)\n";
}

void cmd_train(const RunConfig& c, const fs::path& dir)
{
    const ExperimentSetup setup = resolve_setup(c);
    const TrainedSetup ts = prepare(setup);
    io::ModelFile f{ts.model, model_metadata(setup)};
    const fs::path path = c.model_path.empty() ? dir / "model.nesn" : fs::path(c.model_path);
    io::save_model(path.string(), f);
    io::print_stats(std::cout, "W_res", matrix_stats(ts.model.w_res));
    io::print_stats(std::cout, "W_out", matrix_stats(*ts.model.w_out));
    std::cout << "train MSE   " << io::format_double(ts.train_mse) << '\n'
              << "test MSE    " << io::format_double(ts.test_mse) << '\n'
              << "closed MSE  " << io::format_double(ts.closed_mse) << '\n'
              << "model       " << path.string() << " (" << io::model_hash(ts.model) << ")\n";
}

void cmd_stats(const RunConfig& c, const fs::path& dir)
{
    std::vector<std::pair<std::string, WeightMatrix>> matrices;
    if (!c.grid_in.empty())
    {
        std::ifstream is(c.grid_in);
        if (!is)
            throw std::runtime_error("cannot open '" + c.grid_in + "'");
        matrices.emplace_back("grid", io::read_grid(is));
    }
    else if (!c.model_path.empty())
    {
        io::ModelFile f = io::load_model(c.model_path);
        matrices.emplace_back("w_in", f.model.w_in);
        matrices.emplace_back("w_res", f.model.w_res);
        if (f.model.w_out)
            matrices.emplace_back("w_out", *f.model.w_out);
    }
    else
    {
        const ExperimentSetup s = resolve_setup(c);
        matrices.emplace_back("w_in", gen_input_weights(s.reservoir.n_neurons));
        matrices.emplace_back("w_res", gen_reservoir(s.reservoir));
    }
    bool any = false;
    for (const auto& [name, m] : matrices)
    {
        if (c.matrix != "all" && c.matrix != name)
            continue;
        any = true;
        const MatrixStats s = matrix_stats(m);
        io::print_stats(std::cout, name, s);
        if (c.csv)
        {
            std::ofstream os = open_out(dir / ("stats_" + name + ".csv"));
            provenance("stats", c).add("matrix", name).write(os);
            os << io::kStatsHeader << '\n';
            io::write_stats_row(os, s);
        }
        if (c.grid)
        {
            std::ofstream os = open_out(dir / (name + ".grid"));
            io::write_grid(os, m);
        }
    }
    if (!any)
        throw ParameterError("--matrix '" + c.matrix + "' is not available from this source");
}

void cmd_predict(const RunConfig& c, const fs::path& dir)
{
    const TrainedSetup ts = obtain_model(c);
    const NoiseConfig noise = resolve_noise(c);
    PredictOptions opt;
    opt.initial_y = ts.window.initial_y;
    std::vector<double> clean, noisy;
    if (c.mode == "closed")
    {
        const double seed_input = ts.window.inputs.front();
        const std::size_t steps = ts.window.inputs.size();
        clean = predict_closed_loop(ts.model, seed_input, steps, NoiseConfig{}, opt).outputs;
        noisy = predict_closed_loop(ts.model, seed_input, steps, noise, opt).outputs;
        // Truncated trajectories are padded so both columns stay aligned.
        clean.resize(steps, std::numeric_limits<double>::quiet_NaN());
        noisy.resize(steps, std::numeric_limits<double>::quiet_NaN());
    }
    else
    {
        clean = predict_open_loop(ts.model, ts.window.inputs, NoiseConfig{}, opt);
        noisy = predict_open_loop(ts.model, ts.window.inputs, noise, opt);
    }
    io::Provenance p = provenance("predict", c);
    p.add("model", io::model_hash(ts.model)).add("mode", c.mode);
    io::add_noise(p, noise);
    std::ofstream os = open_out(dir / "predict.csv");
    io::write_predict_csv(os, p, clean, noisy);
    std::cout << "test MSE (clean) " << io::format_double(ts.test_mse) << '\n';
}

LoopMode parse_mode(const std::string& m) { return m == "closed" ? LoopMode::closed : LoopMode::open; }

void cmd_ensemble(const RunConfig& c, const fs::path& dir)
{
    const TrainedSetup ts = obtain_model(c);
    const NoiseConfig noise = resolve_noise(c);
    EnsembleOptions opt;
    opt.workers = c.workers;
    const EnsembleRun run = run_ensemble(ts.model, ts.window, noise, c.k, parse_mode(c.mode), opt);
    io::Provenance p = provenance("ensemble", c);
    p.add("model", io::model_hash(ts.model))
        .add("mode", c.mode)
        .add("k", static_cast<std::uint64_t>(c.k))
        .add("excluded", static_cast<std::uint64_t>(run.excluded.size()))
        .add("mse_mean", run.mean_mse());
    io::add_noise(p, noise);
    std::ofstream os = open_out(dir / "ensemble.csv");
    io::write_ensemble_csv(os, p, run);
    std::cout << "mean MSE " << io::format_double(run.mean_mse()) << ", time-averaged variance "
              << io::format_double(run.mean_variance()) << ", excluded " << run.excluded.size() << '\n';
}

void cmd_sweep(const RunConfig& c, const fs::path& dir, bool closed)
{
    const TrainedSetup ts = obtain_model(c);
    const NoiseTarget target = parse_noise_target(c.target);
    std::vector<double> grid = c.intensities;
    if (grid.empty())
        grid = closed ? std::vector<double>{1e-5, 1e-4, 3e-4, 1e-3, 2.5e-3, 4e-3, 1e-2, 2e-2, 5e-2, 1e-1}
                      : std::vector<double>{1e-5, 1e-4, 1e-3, 1e-2};
    EnsembleOptions opt;
    opt.workers = c.workers;
    const LoopMode mode = closed ? LoopMode::closed : parse_mode(c.mode);
    const SweepResult sweep = intensity_sweep(ts.model, ts.window, target, grid, c.k, mode, c.seed, opt);
    const std::string name = closed ? "closed-sweep" : "sweep";
    io::Provenance p = provenance(name, c);
    p.add("model", io::model_hash(ts.model))
        .add("mode", to_string(mode))
        .add("target", to_string(target))
        .add("k", static_cast<std::uint64_t>(c.k))
        .add("intensities", join(grid));
    if (closed)
        p.add("critical_intensity",
              sweep.critical_intensity ? io::format_double(*sweep.critical_intensity) : std::string("none"));
    std::ofstream os = open_out(dir / (name + ".csv"));
    io::write_sweep_csv(os, p, sweep);
    for (const SweepPoint& pt : sweep.points)
        std::cout << "D=" << io::format_double(pt.intensity) << "  mse=" << io::format_double(pt.mse_mean)
                  << "  var=" << io::format_double(pt.var_mean) << "  excluded=" << pt.excluded << '\n';
    if (closed)
        std::cout << "critical intensity: "
                  << (sweep.critical_intensity ? io::format_double(*sweep.critical_intensity) : "none") << '\n';
}

void cmd_analytic(const RunConfig& c, const fs::path& dir)
{
    const NoiseConfig noise = resolve_noise(c);
    std::vector<double> abscissas = c.mean_out;
    if (abscissas.empty())
        for (int i = 0; i <= 10; ++i)
            abscissas.push_back(0.4 + 0.1 * i);

    io::Provenance p = provenance("analytic", c);
    io::add_noise(p, noise);
    std::vector<std::pair<double, VariancePrediction>> rows;
    if (c.site == "output")
    {
        for (double e : abscissas)
            rows.emplace_back(e, predict_output_layer(noise.d_ca_out, noise.d_cm_out, e, c.var_x_out));
    }
    else
    {
        MatrixStats w_stats;
        std::size_t n = c.n;
        if (c.w_out_mean && c.w_out_eta)
        {
            w_stats.mean = *c.w_out_mean;
            w_stats.mean_squared = w_stats.mean * w_stats.mean;
            w_stats.mean_of_squares = *c.w_out_eta;
        }
        else
        {
            const TrainedSetup ts = obtain_model(c);
            w_stats = matrix_stats(*ts.model.w_out);
            n = ts.model.n_neurons();
            p.add("model", io::model_hash(ts.model));
        }
        p.add("n", static_cast<std::uint64_t>(n))
            .add("w_out_mean", w_stats.mean)
            .add("w_out_eta", w_stats.mean_of_squares)
            .add("weighted_mean_sq", c.weighted_mean_sq);
        for (double e : abscissas)
            rows.emplace_back(e, predict_reservoir_full(noise, w_stats, n, e, c.weighted_mean_sq, c.mean_res_var));
    }

    const auto& first = rows.front().second;
    auto term = [](const char* label, double v) {
        std::cout << "  " << label << std::string(22 - std::strlen(label), ' ') << io::format_double(v) << '\n';
    };
    std::cout << "prediction at mean output " << io::format_double(rows.front().first) << '\n';
    term("corr additive", first.term_corr_additive);
    term("uncorr additive", first.term_uncorr_additive);
    term("corr multiplicative", first.term_corr_mult);
    term("uncorr multiplicative", first.term_uncorr_mult);
    if (first.term_recirculated)
        term("recirculated", *first.term_recirculated);
    if (c.site == "output")
        term("passthrough", first.term_passthrough);
    term("total", first.total);

    std::ofstream os = open_out(dir / "analytic.csv");
    p.write(os);
    os << io::kAnalyticHeader << '\n';
    for (const auto& [e, pred] : rows)
        io::write_analytic_row(os, e, pred);
}

void cmd_activation_compare(const RunConfig& c, const fs::path& dir)
{
    const Activation act = parse_activation(c.activation);
    ActivationGrid grid = ActivationGrid::defaults_for(act);
    if (c.d_uncorr)
        grid.uncorrelated = *c.d_uncorr;
    if (c.d_corr)
        grid.correlated = *c.d_corr;
    grid.k = c.k;

    const ExperimentSetup base = resolve_setup(c);
    std::vector<ReservoirSpec> specs;
    for (std::uint64_t s : c.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : c.seeds)
    {
        ReservoirSpec r = base.reservoir;
        r.seed = s;
        specs.push_back(r);
    }
    EnsembleOptions opt;
    opt.workers = c.workers;
    const ActivationReport report =
        activation_comparison(specs, act, grid, base.data, base.train, c.seed, opt);

    const std::string stem = "activation_" + c.activation;
    std::ofstream table = open_out(dir / (stem + "_stats.csv"));
    io::Provenance p = provenance("activation-compare", c);
    p.add("activation", c.activation)
        .add("d_uncorrelated", grid.uncorrelated)
        .add("d_correlated", grid.correlated)
        .add("k", static_cast<std::uint64_t>(grid.k));
    p.write(table);
    table << "reservoir_seed,matrix," << io::kStatsHeader << ",test_mse,closed_mse\n";
    for (const ActivationEntry& e : report.entries)
    {
        std::cout << "reservoir seed " << e.reservoir.seed << " (s=" << io::format_double(e.reservoir.spectral_radius)
                  << ")\n";
        if (e.error)
        {
            std::cout << "  failed: " << *e.error << '\n';
            continue;
        }
        io::print_stats(std::cout, "W_res", *e.w_res_stats);
        io::print_stats(std::cout, "W_out", *e.w_out_stats);
        std::cout << "  test MSE " << io::format_double(e.test_mse) << ", closed MSE "
                  << io::format_double(e.closed_mse) << '\n';
        for (const auto& [name, stats] : {std::pair{"w_res", *e.w_res_stats}, std::pair{"w_out", *e.w_out_stats}})
        {
            std::ostringstream row;
            io::write_stats_row(row, stats);
            std::string r = row.str();
            r.pop_back();
            table << e.reservoir.seed << ',' << name << ',' << r << ',' << io::format_double(e.test_mse) << ','
                  << io::format_double(e.closed_mse) << '\n';
        }
        for (const ActivationScatter& sc : e.scatters)
        {
            io::Provenance sp = provenance("activation-compare", c);
            sp.add("activation", c.activation)
                .add("reservoir_seed", e.reservoir.seed)
                .add("target", to_string(sc.target))
                .add("intensity", sc.intensity)
                .add("k", static_cast<std::uint64_t>(sc.run.k));
            const std::string file = stem + "_seed" + std::to_string(e.reservoir.seed) + "_" + to_string(sc.target) + ".csv";
            std::ofstream os = open_out(dir / file);
            io::write_scatter_csv(os, sp, sc);
            std::cout << "  " << to_string(sc.target) << " D=" << io::format_double(sc.intensity)
                      << "  time-averaged variance " << io::format_double(sc.run.mean_variance()) << '\n';
        }
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Noise propagation in echo state networks"};
    app.set_config("--config", "", "INI config file; command-line flags take precedence");
    app.require_subcommand(1);

    RunConfig c;

    auto* generate = app.add_subcommand("generate", "Write a Mackey-Glass series (index,value)");
    add_common(generate, c);
    add_data(generate, c);
    generate->add_option("--length", c.length)->capture_default_str();

    auto* train = app.add_subcommand("train", "Train a readout and save the model");
    add_common(train, c);
    add_data(train, c);
    add_reservoir(train, c);
    train->add_option("--model", c.model_path, "Model output path (default <out-dir>/model.nesn)");

    auto* stats = app.add_subcommand("stats", "Matrix statistics of a model, grid file or fresh reservoir");
    add_common(stats, c);
    add_reservoir(stats, c);
    add_model(stats, c);
    stats->add_option("--grid-in", c.grid_in, "Read a matrix from a grid file");
    stats->add_option("--matrix", c.matrix, "w_in, w_res, w_out or all")->capture_default_str();
    stats->add_flag("--csv", c.csv, "Also write stats_<matrix>.csv");
    stats->add_flag("--grid", c.grid, "Also write <matrix>.grid");

    auto* predict = app.add_subcommand("predict", "Clean and noisy prediction over the test window");
    add_common(predict, c);
    add_data(predict, c);
    add_reservoir(predict, c);
    add_noise(predict, c);
    add_model(predict, c);
    predict->add_option("--mode", c.mode)->check(CLI::IsMember({"open", "closed"}))->capture_default_str();

    auto* ensemble = app.add_subcommand("ensemble", "K noisy realizations and per-time-point statistics");
    add_common(ensemble, c);
    add_data(ensemble, c);
    add_reservoir(ensemble, c);
    add_noise(ensemble, c);
    add_model(ensemble, c);
    add_ensemble(ensemble, c);
    ensemble->add_option("--mode", c.mode)->check(CLI::IsMember({"open", "closed"}))->capture_default_str();

    std::vector<std::string> target_names;
    for (NoiseTarget t : all_noise_targets())
        target_names.push_back(to_string(t));

    auto* sweep = app.add_subcommand("sweep", "Ensembles over a grid of one noise intensity");
    auto* closed_sweep = app.add_subcommand("closed-sweep", "Self-closed sweep with critical intensity");
    for (auto* sub : {sweep, closed_sweep})
    {
        add_common(sub, c);
        add_data(sub, c);
        add_reservoir(sub, c);
        add_model(sub, c);
        add_ensemble(sub, c);
        sub->add_option("--target", c.target, "Noise type")->check(CLI::IsMember(target_names))->capture_default_str();
        sub->add_option("--intensities", c.intensities, "Strictly increasing intensities")->delimiter(',');
    }
    sweep->add_option("--mode", c.mode)->check(CLI::IsMember({"open", "closed"}))->capture_default_str();

    auto* analytic = app.add_subcommand("analytic", "Analytic variance prediction");
    add_common(analytic, c);
    add_data(analytic, c);
    add_reservoir(analytic, c);
    add_noise(analytic, c);
    add_model(analytic, c);
    analytic->add_option("--mean-out", c.mean_out, "Mean-output abscissas")->delimiter(',');
    analytic->add_option("--var-x-out", c.var_x_out, "Output site: Var[x_out]")->capture_default_str();
    analytic->add_option("--weighted-mean-sq", c.weighted_mean_sq, "Reservoir site: sum_j (W_j E[x_j])^2")
        ->capture_default_str();
    analytic->add_option("--mean-res-var", c.mean_res_var, "Reservoir site: empirical mean reservoir variance");
    analytic->add_option("--w-out-mean", c.w_out_mean, "Readout mean (skips loading a model)");
    analytic->add_option("--w-out-eta", c.w_out_eta, "Readout mean of squares (skips loading a model)");

    auto* activation = app.add_subcommand("activation-compare", "Matrix stats and noise scatters per activation");
    add_common(activation, c);
    add_data(activation, c);
    add_reservoir(activation, c);
    add_ensemble(activation, c);
    activation->add_option("--seeds", c.seeds, "Reservoir seeds, one model each")->delimiter(',');
    activation->add_option("--d-uncorr", c.d_uncorr, "Uncorrelated intensity (default per activation)");
    activation->add_option("--d-corr", c.d_corr, "Correlated intensity (default 1e-3)");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::CallForAllHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e);
        return kExitUsage;
    }

    try
    {
        const fs::path dir = out_dir(c);
        CLI::App* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        write_snapshot(*sub, dir);
        if (name == "generate")
            cmd_generate(c, dir);
        else if (name == "train")
            cmd_train(c, dir);
        else if (name == "stats")
            cmd_stats(c, dir);
        else if (name == "predict")
            cmd_predict(c, dir);
        else if (name == "ensemble")
            cmd_ensemble(c, dir);
        else if (name == "sweep")
            cmd_sweep(c, dir, false);
        else if (name == "closed-sweep")
            cmd_sweep(c, dir, true);
        else if (name == "analytic")
            cmd_analytic(c, dir);
        else if (name == "activation-compare")
            cmd_activation_compare(c, dir);
        return kExitOk;
    }
    catch (const ParameterError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const ShapeError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const SliceError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const StateError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
