#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "noisy_esn/analytics.hpp"
#include "noisy_esn/errors.hpp"
#include "noisy_esn/esn.hpp"
#include "noisy_esn/experiments.hpp"
#include "noisy_esn/timeseries.hpp"
#include "noisy_esn/topology.hpp"

namespace noisy_esn::io
{

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v)
{
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

inline double parse_double(std::string_view text)
{
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t'))
        text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
        text.remove_suffix(1);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw FormatError("cannot parse number '" + std::string(text) + "'");
    return v;
}

/// Commented `# key: value` lines written at the top of every result file.
class Provenance
{
  public:
    Provenance& add(std::string key, std::string value)
    {
        entries_.emplace_back(std::move(key), std::move(value));
        return *this;
    }
    Provenance& add(std::string key, double value) { return add(std::move(key), format_double(value)); }
    Provenance& add(std::string key, std::uint64_t value)
    {
        return add(std::move(key), std::to_string(value));
    }

    void write(std::ostream& os) const
    {
        for (const auto& [k, v] : entries_)
            os << "# " << k << ": " << v << '\n';
    }

    [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& entries() const noexcept
    {
        return entries_;
    }

  private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

inline Provenance& add_noise(Provenance& p, const NoiseConfig& cfg)
{
    return p.add("d_ua", cfg.d_ua)
        .add("d_um", cfg.d_um)
        .add("d_ca", cfg.d_ca)
        .add("d_cm", cfg.d_cm)
        .add("d_ca_out", cfg.d_ca_out)
        .add("d_cm_out", cfg.d_cm_out);
}

inline void write_series_csv(std::ostream& os, const Provenance& prov, std::span<const double> values)
{
    prov.write(os);
    os << "index,value\n";
    for (std::size_t i = 0; i < values.size(); ++i)
        os << i << ',' << format_double(values[i]) << '\n';
}

inline void write_predict_csv(std::ostream& os, const Provenance& prov, std::span<const double> clean,
                              std::span<const double> noisy)
{
    if (clean.size() != noisy.size())
        throw ShapeError("write_predict_csv: clean and noisy lengths differ");
    prov.write(os);
    os << "index,clean,noisy\n";
    for (std::size_t i = 0; i < clean.size(); ++i)
        os << i << ',' << format_double(clean[i]) << ',' << format_double(noisy[i]) << '\n';
}

inline void write_ensemble_csv(std::ostream& os, const Provenance& prov, const EnsembleRun& run)
{
    prov.write(os);
    os << "t,mean,variance,clean\n";
    for (std::size_t t = 0; t < run.mean.size(); ++t)
        os << t << ',' << format_double(run.mean[t]) << ',' << format_double(run.variance[t]) << ','
           << format_double(run.clean[t]) << '\n';
}

/// Per-time-point reservoir statistics and the analytic floor of an activation scatter.
inline void write_scatter_csv(std::ostream& os, const Provenance& prov, const ActivationScatter& sc)
{
    prov.write(os);
    os << "t,mean,variance,analytic,weighted_mean_sq,mean_res_var\n";
    const EnsembleRun& run = sc.run;
    for (std::size_t t = 0; t < run.mean.size(); ++t)
        os << t << ',' << format_double(run.mean[t]) << ',' << format_double(run.variance[t]) << ','
           << format_double(sc.analytic[t]) << ',' << format_double(run.weighted_mean_sq[t]) << ','
           << format_double(run.mean_res_var[t]) << '\n';
}

inline void write_sweep_csv(std::ostream& os, const Provenance& prov, const SweepResult& sweep)
{
    prov.write(os);
    os << "intensity,mse_mean,var_mean,var_min,var_max\n";
    for (const SweepPoint& p : sweep.points)
        os << format_double(p.intensity) << ',' << format_double(p.mse_mean) << ','
           << format_double(p.var_mean) << ',' << format_double(p.var_min) << ','
           << format_double(p.var_max) << '\n';
}

inline constexpr std::string_view kAnalyticHeader =
    "mean_out,total,term_corr_additive,term_uncorr_additive,term_corr_mult,term_uncorr_mult,"
    "term_recirculated,term_passthrough";

inline void write_analytic_row(std::ostream& os, double mean_out, const VariancePrediction& p)
{
    os << format_double(mean_out) << ',' << format_double(p.total) << ','
       << format_double(p.term_corr_additive) << ',' << format_double(p.term_uncorr_additive) << ','
       << format_double(p.term_corr_mult) << ',' << format_double(p.term_uncorr_mult) << ','
       << (p.term_recirculated ? format_double(*p.term_recirculated) : std::string()) << ','
       << format_double(p.term_passthrough) << '\n';
}

inline constexpr std::string_view kStatsHeader = "mean,mean_squared,mean_of_squares,std_dev,spectral_radius";

inline void write_stats_row(std::ostream& os, const MatrixStats& s)
{
    os << format_double(s.mean) << ',' << format_double(s.mean_squared) << ','
       << format_double(s.mean_of_squares) << ',' << format_double(s.std_dev) << ','
       << (s.spectral_radius ? format_double(*s.spectral_radius) : std::string()) << '\n';
}

/// Human-readable statistics table.
inline void print_stats(std::ostream& os, const std::string& name, const MatrixStats& s)
{
    auto line = [&](const char* label, const std::string& value) {
        os << "  " << label << std::string(18 - std::strlen(label), ' ') << value << '\n';
    };
    os << name << '\n';
    line("mean", format_double(s.mean));
    line("mean^2", format_double(s.mean_squared));
    line("mean of squares", format_double(s.mean_of_squares));
    line("std", format_double(s.std_dev));
    if (s.spectral_radius)
        line("spectral radius", format_double(*s.spectral_radius));
}

/// Reads data lines of a CSV, skipping `#` comments and the header. Column count is checked;
/// empty cells read as NaN.
inline std::vector<std::vector<double>> read_csv_columns(std::istream& is, std::size_t columns,
                                                         std::string_view expected_header)
{
    std::vector<std::vector<double>> cols(columns);
    std::string line;
    bool header_seen = false;
    std::size_t line_no = 0;
    while (std::getline(is, line))
    {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line.front() == '#')
            continue;
        if (!header_seen)
        {
            if (line != expected_header)
                throw FormatError("line " + std::to_string(line_no) + ": expected header '" +
                                  std::string(expected_header) + "', got '" + line + "'");
            header_seen = true;
            continue;
        }
        std::size_t col = 0;
        std::string_view rest(line);
        while (true)
        {
            const auto comma = rest.find(',');
            if (col >= columns)
                throw FormatError("line " + std::to_string(line_no) + ": too many columns");
            const std::string_view cell = rest.substr(0, comma);
            // An empty cell is a value that was not computed (e.g. no recirculated term).
            cols[col++].push_back(cell.empty() ? std::numeric_limits<double>::quiet_NaN()
                                               : parse_double(cell));
            if (comma == std::string_view::npos)
                break;
            rest.remove_prefix(comma + 1);
        }
        if (col != columns)
            throw FormatError("line " + std::to_string(line_no) + ": expected " +
                              std::to_string(columns) + " columns");
    }
    if (!header_seen)
        throw FormatError("missing header '" + std::string(expected_header) + "'");
    return cols;
}

inline std::vector<double> read_series_csv(std::istream& is)
{
    return read_csv_columns(is, 2, "index,value")[1];
}

/// Text grid: first line `rows,cols`, then one comma-separated line per row.
inline void write_grid(std::ostream& os, const WeightMatrix& m)
{
    os << m.rows() << ',' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            os << (j ? "," : "") << format_double(m(i, j));
        os << '\n';
    }
}

inline WeightMatrix read_grid(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw FormatError("grid: missing 'rows,cols' line");
    const auto comma = line.find(',');
    if (comma == std::string::npos)
        throw FormatError("grid: malformed size line '" + line + "'");
    const double r = parse_double(std::string_view(line).substr(0, comma));
    const double c = parse_double(std::string_view(line).substr(comma + 1));
    if (r < 0 || c < 0 || r != std::floor(r) || c != std::floor(c))
        throw FormatError("grid: bad dimensions '" + line + "'");
    WeightMatrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        if (!std::getline(is, line))
            throw FormatError("grid: truncated at row " + std::to_string(i));
        std::string_view rest(line);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
        {
            const auto pos = rest.find(',');
            if ((pos == std::string_view::npos) != (j + 1 == m.cols()))
                throw FormatError("grid: row " + std::to_string(i) + " has the wrong column count");
            m(i, j) = parse_double(rest.substr(0, pos));
            if (pos != std::string_view::npos)
                rest.remove_prefix(pos + 1);
        }
    }
    return m;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) noexcept
{
    for (unsigned char c : bytes)
    {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    std::array<char, 17> buf{};
    std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf.data());
}

/// Hash of activation and weight bytes; identifies a model in provenance headers.
inline std::string model_hash(const EsnModel& m)
{
    auto bytes = [](const WeightMatrix& w) {
        return std::string_view(reinterpret_cast<const char*>(w.data()),
                                static_cast<std::size_t>(w.size()) * sizeof(double));
    };
    std::uint64_t h = fnv1a64(to_string(m.activation));
    h = fnv1a64(bytes(m.w_in), h);
    h = fnv1a64(bytes(m.w_res), h);
    if (m.w_out)
        h = fnv1a64(bytes(*m.w_out), h);
    return hex64(h);
}

/// Model file, little-endian:
///   "NESNMDL1"                      8 bytes magic
///   u32 version (= 1)
///   u64 metadata length, then that many bytes of `key=value\n` lines
///   three matrices w_in, w_res, w_out: u64 rows, u64 cols, rows*cols f64 row-major
/// An untrained model stores w_out as 0 x 0. The activation is the metadata key `activation`.
struct ModelFile
{
    EsnModel model;
    std::map<std::string, std::string> metadata;
};

inline constexpr std::string_view kModelMagic = "NESNMDL1";
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail
{

template <typename T>
void put(std::ostream& os, T v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what)
{
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw FormatError(std::string("model file truncated reading ") + what);
    return v;
}

inline void put_matrix(std::ostream& os, const WeightMatrix& m)
{
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * static_cast<Eigen::Index>(sizeof(double))));
}

inline WeightMatrix get_matrix(std::istream& is, const char* what)
{
    const auto rows = get<std::uint64_t>(is, what);
    const auto cols = get<std::uint64_t>(is, what);
    if (rows > (1u << 20) || cols > (1u << 20))
        throw FormatError(std::string("model file: implausible size for ") + what);
    WeightMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!is.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(rows * cols * sizeof(double))))
        throw FormatError(std::string("model file truncated reading ") + what);
    return m;
}

} // namespace detail

inline void write_model(std::ostream& os, const ModelFile& f)
{
    validate(f.model);
    std::string meta = "activation=" + to_string(f.model.activation) + "\n";
    for (const auto& [k, v] : f.metadata)
    {
        if (k == "activation")
            continue;
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw FormatError("model metadata key/value contains a reserved character: " + k);
        meta += k + "=" + v + "\n";
    }
    os.write(kModelMagic.data(), static_cast<std::streamsize>(kModelMagic.size()));
    detail::put<std::uint32_t>(os, kModelVersion);
    detail::put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::put_matrix(os, f.model.w_in);
    detail::put_matrix(os, f.model.w_res);
    detail::put_matrix(os, f.model.w_out.value_or(WeightMatrix(0, 0)));
    if (!os)
        throw FormatError("model file: write failed");
}

inline ModelFile read_model(std::istream& is)
{
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) ||
        std::string_view(magic.data(), magic.size()) != kModelMagic)
        throw FormatError("model file: bad magic");
    const auto version = detail::get<std::uint32_t>(is, "version");
    if (version != kModelVersion)
        throw FormatError("model file: unsupported version " + std::to_string(version));
    const auto meta_len = detail::get<std::uint64_t>(is, "metadata length");
    if (meta_len > (1u << 20))
        throw FormatError("model file: implausible metadata length");
    std::string meta(meta_len, '\0');
    if (!is.read(meta.data(), static_cast<std::streamsize>(meta_len)))
        throw FormatError("model file truncated reading metadata");

    ModelFile f;
    std::istringstream ms(meta);
    std::string line;
    while (std::getline(ms, line))
    {
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("model file: malformed metadata line '" + line + "'");
        f.metadata[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto act = f.metadata.find("activation");
    if (act == f.metadata.end())
        throw FormatError("model file: missing activation");
    f.model.activation = parse_activation(act->second);
    f.model.w_in = detail::get_matrix(is, "w_in");
    f.model.w_res = detail::get_matrix(is, "w_res");
    WeightMatrix w_out = detail::get_matrix(is, "w_out");
    if (w_out.size() > 0)
        f.model.w_out = std::move(w_out);
    validate(f.model);
    return f;
}

inline void save_model(const std::string& path, const ModelFile& f)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw FormatError("cannot open '" + path + "' for writing");
    write_model(os, f);
}

inline ModelFile load_model(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError("cannot open '" + path + "'");
    return read_model(is);
}

} // namespace noisy_esn::io
