#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "noisy_esn/io.hpp"

using namespace noisy_esn;
namespace nio = noisy_esn::io;

namespace
{

EsnModel tiny_model(bool trained)
{
    EsnModel m;
    m.w_in = gen_input_weights(3);
    m.w_res = WeightMatrix(3, 3);
    m.w_res << 0.1, -0.2, 0.3, 1e-300, 0.0, -0.0, 7.0, 8.5, -9.25;
    m.activation = Activation::sigmoid;
    if (trained)
    {
        m.w_out = WeightMatrix(3, 1);
        *m.w_out << 0.5, -1.0 / 3.0, 2e-17;
    }
    return m;
}

std::string serialize(const nio::ModelFile& f)
{
    std::ostringstream os(std::ios::binary);
    nio::write_model(os, f);
    return os.str();
}

std::vector<std::string> data_lines(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty() && line[0] != '#')
            out.push_back(line);
    return out;
}

} // namespace

TEST(Numbers, FormatRoundTripsExactly)
{
    for (double v : {0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 4.9e-324, 0.0041109609})
        EXPECT_EQ(nio::parse_double(nio::format_double(v)), v) << nio::format_double(v);
    EXPECT_EQ(nio::format_double(0.001), "0.001");
    EXPECT_EQ(nio::format_double(2.0), "2");
}

TEST(Numbers, ParseTrimsAndRejects)
{
    EXPECT_EQ(nio::parse_double("  1.5\r"), 1.5);
    EXPECT_EQ(nio::parse_double("1e-3"), 1e-3);
    for (const char* bad : {"", "abc", "1.5x", "1,5", " "})
        EXPECT_THROW(nio::parse_double(bad), FormatError) << bad;
}

TEST(Provenance, WritesCommentLinesInOrder)
{
    nio::Provenance p;
    p.add("command", std::string("ensemble")).add("seed", std::uint64_t{7}).add("lambda", 1e-8);
    std::ostringstream os;
    p.write(os);
    EXPECT_EQ(os.str(), "# command: ensemble\n# seed: 7\n# lambda: 1e-08\n");
    ASSERT_EQ(p.entries().size(), 3u);
    nio::Provenance q;
    NoiseConfig cfg;
    cfg.d_cm_out = 2e-3;
    nio::add_noise(q, cfg);
    EXPECT_EQ(q.entries().size(), 6u);
    EXPECT_EQ(q.entries().back(), (std::pair<std::string, std::string>{"d_cm_out", "0.002"}));
}

TEST(Csv, SeriesRoundTrip)
{
    const std::vector<double> v{0.9, 1.0 / 7.0, -3e-12, 1.2};
    nio::Provenance p;
    p.add("tau", 17.0);
    std::stringstream ss;
    nio::write_series_csv(ss, p, v);
    EXPECT_EQ(data_lines(ss.str()).front(), "index,value");
    EXPECT_EQ(nio::read_series_csv(ss), v);
}

TEST(Csv, EnsembleAndPredictSchemas)
{
    EnsembleRun run;
    run.mean = {1.0, 2.0};
    run.variance = {0.25, std::numeric_limits<double>::quiet_NaN()};
    run.clean = {1.5, 2.5};
    std::stringstream ss;
    nio::write_ensemble_csv(ss, {}, run);
    const auto lines = data_lines(ss.str());
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_EQ(lines[0], "t,mean,variance,clean");
    EXPECT_EQ(lines[1], "0,1,0.25,1.5");
    EXPECT_EQ(lines[2], "1,2,nan,2.5");

    std::stringstream ps;
    const std::vector<double> clean{0.5, 0.25}, noisy{0.75, 0.125};
    nio::write_predict_csv(ps, {}, clean, noisy);
    const auto cols = nio::read_csv_columns(ps, 3, "index,clean,noisy");
    EXPECT_EQ(cols[1], clean);
    EXPECT_EQ(cols[2], noisy);
    const std::vector<double> short_noisy{1.0};
    EXPECT_THROW(nio::write_predict_csv(ps, {}, clean, short_noisy), ShapeError);
}

TEST(Csv, SweepAndScatterSchemas)
{
    SweepResult sw;
    sw.points.push_back({1e-3, 0.01, 2e-3, 1e-3, 3e-3, 300, 0});
    std::stringstream ss;
    nio::write_sweep_csv(ss, {}, sw);
    const auto cols = nio::read_csv_columns(ss, 5, "intensity,mse_mean,var_mean,var_min,var_max");
    EXPECT_EQ(cols[0], std::vector<double>{1e-3});
    EXPECT_EQ(cols[4], std::vector<double>{3e-3});

    ActivationScatter sc;
    sc.run.mean = {0.1};
    sc.run.variance = {0.2};
    sc.run.weighted_mean_sq = {0.3};
    sc.run.mean_res_var = {0.4};
    sc.analytic = {0.5};
    std::stringstream cs;
    nio::write_scatter_csv(cs, {}, sc);
    const auto sc_cols =
        nio::read_csv_columns(cs, 6, "t,mean,variance,analytic,weighted_mean_sq,mean_res_var");
    EXPECT_EQ(sc_cols[3], std::vector<double>{0.5});
    EXPECT_EQ(sc_cols[5], std::vector<double>{0.4});
}

TEST(Csv, AnalyticAndStatsRows)
{
    EXPECT_EQ(nio::kAnalyticHeader, "mean_out,total,term_corr_additive,term_uncorr_additive,term_corr_mult,"
                                    "term_uncorr_mult,term_recirculated,term_passthrough");
    VariancePrediction p;
    p.term_corr_additive = 2e-3;
    p.total = 2e-3;
    std::stringstream os;
    os << nio::kAnalyticHeader << '\n';
    nio::write_analytic_row(os, 0.5, p);
    EXPECT_EQ(data_lines(os.str()).back(), "0.5,0.002,0.002,0,0,0,,0");
    EXPECT_TRUE(std::isnan(nio::read_csv_columns(os, 8, nio::kAnalyticHeader)[6][0]));
    p.term_recirculated = 0.25;
    std::ostringstream os2;
    nio::write_analytic_row(os2, 0.5, p);
    EXPECT_EQ(os2.str(), "0.5,0.002,0.002,0,0,0,0.25,0\n");

    std::stringstream ss;
    ss << nio::kStatsHeader << '\n';
    WeightMatrix m(2, 2);
    m << 1.0, -1.0, -1.0, 1.0;
    nio::write_stats_row(ss, matrix_stats(m));
    const auto cols = nio::read_csv_columns(ss, 5, nio::kStatsHeader);
    EXPECT_EQ(cols[2], std::vector<double>{1.0});
    EXPECT_NEAR(cols[4][0], 2.0, 1e-12);
}

TEST(Csv, ReaderErrors)
{
    {
        std::istringstream is("# only comments\n");
        EXPECT_THROW(nio::read_series_csv(is), FormatError);
    }
    {
        std::istringstream is("idx,value\n0,1\n");
        EXPECT_THROW(nio::read_series_csv(is), FormatError);
    }
    {
        std::istringstream is("index,value\n0,1,2\n");
        EXPECT_THROW(nio::read_series_csv(is), FormatError);
    }
    {
        std::istringstream is("index,value\n0\n");
        EXPECT_THROW(nio::read_series_csv(is), FormatError);
    }
    {
        std::istringstream is("index,value\n0,x\n");
        EXPECT_THROW(nio::read_series_csv(is), FormatError);
    }
    std::istringstream ok("# a: b\r\nindex,value\r\n0,0.5\r\n\r\n1,0.25\n");
    EXPECT_EQ(nio::read_series_csv(ok), (std::vector<double>{0.5, 0.25}));
}

TEST(Grid, RoundTrip)
{
    WeightMatrix m(2, 3);
    m << 1.0, -0.1, 1.0 / 3.0, 1e-300, 0.0, -7.5;
    std::stringstream ss;
    nio::write_grid(ss, m);
    EXPECT_EQ(nio::read_grid(ss), m);
}

TEST(Grid, MalformedInputRejected)
{
    for (const char* bad : {"", "2\n", "2,2\n1,2\n", "2,2\n1,2\n3\n", "2,2\n1,2\n3,4,5\n", "1.5,2\n1,2\n",
                            "-1,2\n", "1,1\nq\n"})
    {
        std::istringstream is(bad);
        EXPECT_THROW(nio::read_grid(is), FormatError) << '"' << bad << '"';
    }
}

TEST(Hash, FnvKnownVectors)
{
    EXPECT_EQ(nio::fnv1a64(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(nio::fnv1a64("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(nio::fnv1a64("foobar"), 0x85944171f73967e8ull);
    EXPECT_EQ(nio::hex64(0xabcull), "0000000000000abc");
}

TEST(Hash, ModelHashTracksContent)
{
    EsnModel a = tiny_model(true);
    const std::string h = nio::model_hash(a);
    EXPECT_EQ(h.size(), 16u);
    EXPECT_EQ(nio::model_hash(tiny_model(true)), h);
    EXPECT_NE(nio::model_hash(tiny_model(false)), h);
    a.activation = Activation::tanh;
    EXPECT_NE(nio::model_hash(a), h);
}

TEST(ModelFile, RoundTripIsBitExact)
{
    nio::ModelFile f{tiny_model(true), {{"seed", "7"}, {"lambda", "1e-08"}}};
    std::istringstream is(serialize(f), std::ios::binary);
    const nio::ModelFile g = nio::read_model(is);
    EXPECT_EQ(g.model.activation, Activation::sigmoid);
    EXPECT_EQ(g.model.w_in, f.model.w_in);
    EXPECT_EQ(g.model.w_res, f.model.w_res);
    ASSERT_TRUE(g.model.w_out.has_value());
    EXPECT_EQ(*g.model.w_out, *f.model.w_out);
    EXPECT_EQ(g.metadata.at("seed"), "7");
    EXPECT_EQ(g.metadata.at("lambda"), "1e-08");
    EXPECT_EQ(g.metadata.at("activation"), "sigmoid");
    EXPECT_EQ(nio::model_hash(g.model), nio::model_hash(f.model));
}

TEST(ModelFile, UntrainedModelRoundTrips)
{
    std::istringstream is(serialize({tiny_model(false), {}}), std::ios::binary);
    EXPECT_FALSE(nio::read_model(is).model.trained());
}

TEST(ModelFile, BadMagicAndTruncationRejected)
{
    std::string bytes = serialize({tiny_model(true), {}});
    {
        std::string bad = bytes;
        bad[0] = 'X';
        std::istringstream is(bad, std::ios::binary);
        EXPECT_THROW(nio::read_model(is), FormatError);
    }
    for (std::size_t cut : {std::size_t{4}, std::size_t{10}, std::size_t{30}, bytes.size() - 1})
    {
        std::istringstream is(bytes.substr(0, cut), std::ios::binary);
        EXPECT_THROW(nio::read_model(is), FormatError) << "cut " << cut;
    }
}

TEST(ModelFile, ReservedCharactersInMetadataRejected)
{
    std::ostringstream os;
    EXPECT_THROW(nio::write_model(os, {tiny_model(true), {{"bad=key", "v"}}}), FormatError);
    EXPECT_THROW(nio::write_model(os, {tiny_model(true), {{"k", "two\nlines"}}}), FormatError);
}

TEST(ModelFile, MissingFileReported)
{
    EXPECT_THROW(nio::load_model("/nonexistent/dir/model.nesn"), FormatError);
}
