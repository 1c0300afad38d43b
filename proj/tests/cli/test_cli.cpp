// End-to-end runs of the cxvae executable: one process per command, files in between.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "cxvae/emulation.hpp"
#include "cxvae/io.hpp"
#include "cxvae/preprocess.hpp"

#ifndef CXVAE_BIN
#error "CXVAE_BIN must name the cxvae executable"
#endif
#ifndef CXVAE_WORK
#error "CXVAE_WORK must name a scratch directory"
#endif

using namespace cxvae;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = CXVAE_WORK;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run_cli(const std::string& args) {
    static int counter = 0;
    const auto tag = std::to_string(counter++);
    const auto o = kWork / ("stdout_" + tag), e = kWork / ("stderr_" + tag);
    const std::string cmd = std::string("\"") + CXVAE_BIN + "\" " + args + " >\"" + o.string() + "\" 2>\"" + e.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
}

std::string at(const std::string& name) { return (kWork / name).string(); }

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        const auto sim = run_cli("simulate --desk --seed 7 --out " + at("desk"));
        ASSERT_EQ(sim.code, 0) << sim.err;
        const auto tr = run_cli("train --data " + at("desk") + " --epochs 20 --seed 7 --out " + at("trained"));
        ASSERT_EQ(tr.code, 0) << tr.err;
    }
};

}  // namespace

TEST_F(Cli, DeskSimulationIsByteIdenticalAcrossRuns) {
    ASSERT_EQ(run_cli("simulate --desk --seed 7 --out " + at("desk_again")).code, 0);
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(kWork / "desk")) {
        const auto other = kWork / "desk_again" / entry.path().filename();
        ASSERT_TRUE(fs::exists(other)) << other;
        EXPECT_EQ(slurp(entry.path()), slurp(other)) << entry.path().filename();
        ++n;
    }
    EXPECT_GE(n, 10u);
    ASSERT_EQ(run_cli("simulate --desk --seed 8 --out " + at("desk_seed8")).code, 0);
    EXPECT_NE(slurp(kWork / "desk" / "fields.csv"), slurp(kWork / "desk_seed8" / "fields.csv"));
}

TEST_F(Cli, DefaultPresetReportsK64) {
    io::write_text(at("short.json"), R"({"schema_version": 1, "data": {"overrides": {"n_t": 8}}})");
    const auto r = run_cli("simulate --config " + at("short.json") + " --out " + at("full"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("K=64"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("50x50"), std::string::npos) << r.out;
    const auto desk = run_cli("simulate --desk --config " + at("short.json") + " --out " + at("desk_short"));
    EXPECT_NE(desk.out.find("K=16"), std::string::npos) << desk.out;
}

TEST_F(Cli, TruthZReconstructsY) {
    const auto z = io::read_fields(at("desk/z.csv"), "knot_").values;
    const auto y = io::read_fields(at("desk/y.csv")).values;
    const auto t = io::read_table(at("desk/basis.csv"));
    Matrix w(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()) - 1);
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t k = 1; k < t.header.size(); ++k)
            w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k - 1)) = io::parse_double(t.rows[i][k], "basis");
    ASSERT_EQ(z.cols(), 16);
    ASSERT_EQ(y.cols(), 400);
    const Matrix recon = z * w.transpose();
    EXPECT_LT((recon - y).cwiseAbs().maxCoeff(), 1e-10);
}

TEST_F(Cli, ManifestRecordsSeedVersionAndHashes) {
    const auto m = io::read_json(at("desk/manifest.json"));
    EXPECT_EQ(m.at("command"), "simulate");
    EXPECT_EQ(m.at("seed"), 7);
    EXPECT_EQ(m.at("version"), io::kVersion);
    EXPECT_TRUE(m.at("outputs").contains("fields.csv"));
    const auto t = io::read_json(at("trained/manifest.json"));
    EXPECT_EQ(t.at("command"), "train");
    EXPECT_TRUE(t.at("inputs").contains(at("desk/fields.csv")));
    EXPECT_EQ(t.at("inputs").at(at("desk/fields.csv")), m.at("outputs").at("fields.csv"));
}

TEST_F(Cli, TrainWritesCheckpointAndLossReport) {
    const auto rep = io::read_table(at("trained/train_report.csv"));
    EXPECT_EQ(rep.header, (std::vector<std::string>{"epoch", "loss"}));
    EXPECT_EQ(rep.rows.size(), 20u);
    const auto j = io::read_json(at("trained/report.json"));
    EXPECT_EQ(j.at("epochs"), 20);
    EXPECT_TRUE(fs::exists(at("trained/checkpoint.json")));
}

TEST_F(Cli, MissingInputFileExitsTwoWithPath) {
    const auto missing = at("no_such_dir");
    const auto r = run_cli("train --data " + missing + " --out " + at("t_missing"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
    const auto e = run_cli("emulate --data " + at("desk") + " --checkpoint " + at("nope.json") + " --out " + at("e_missing"));
    EXPECT_EQ(e.code, 2);
    EXPECT_NE(e.err.find(at("nope.json")), std::string::npos) << e.err;
}

TEST_F(Cli, ConfigErrorsExitTwo) {
    io::write_text(at("unknown.json"), R"({"schema_version": 1, "trian": {}})");
    EXPECT_EQ(run_cli("simulate --config " + at("unknown.json") + " --out " + at("x")).code, 2);
    io::write_text(at("version.json"), R"({"schema_version": 2})");
    EXPECT_EQ(run_cli("simulate --config " + at("version.json") + " --out " + at("x")).code, 2);
    io::write_text(at("nested.json"), R"({"schema_version": 1, "emulate": {"n_sample": 5}})");
    EXPECT_EQ(run_cli("simulate --config " + at("nested.json") + " --out " + at("x")).code, 2);
    EXPECT_EQ(run_cli("simulate --no-such-flag").code, 2);
    EXPECT_EQ(run_cli("").code, 2);
}

TEST_F(Cli, GridSearchEmitsPerCandidateScores) {
    io::write_text(at("grid.json"), R"([{"learning_rate": 0.001}, {"learning_rate": 0.003}, {"hyper": {"rho0": 0.01}}])");
    const auto r = run_cli("train --data " + at("desk") + " --epochs 5 --grid " + at("grid.json") + " --out " + at("grid"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = io::read_table(at("grid/grid_scores.csv"));
    EXPECT_EQ(t.header, (std::vector<std::string>{"candidate", "delta", "score", "aborted", "message"}));
    ASSERT_EQ(t.rows.size(), 3u);
    double best = INFINITY;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double s = io::parse_double(t.rows[i][2], "score");
        if (s < best) best = s, arg = i;
    }
    EXPECT_EQ(io::read_json(at("grid/manifest.json")).at("extra").at("grid_best"), arg);
}

TEST_F(Cli, EmulateDefaultsToTwoThousandSamples) {
    const auto r = run_cli("emulate --data " + at("desk") + " --checkpoint " + at("trained/checkpoint.json") +
                         " --times 3 --sites 0,1 --format binary --out " + at("emu_default"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto e = emu::read_ensemble(at("emu_default/ensemble_factual.bin"));
    ASSERT_EQ(e.samples.size(), 1u);
    EXPECT_EQ(e.samples[0].rows(), 2000);
    EXPECT_EQ(e.site_ids, (std::vector<long>{0, 1}));
    const auto th = io::read_table(at("emu_default/theta_hat_factual.csv"));
    EXPECT_EQ(th.header.size(), 17u);
}

TEST_F(Cli, ConditionModesAndFlip) {
    const auto c = io::read_condition(at("desk/condition.csv"));
    const std::string base = "--data " + at("desk") + " --checkpoint " + at("trained/checkpoint.json") + " --samples 5 --times 0-2 ";
    ASSERT_EQ(run_cli("emulate " + base + "--flip --out " + at("flip")).code, 0);
    const auto flipped = io::read_condition(at("flip/condition_counterfactual.csv"));
    ASSERT_EQ(flipped.size(), c.size());
    for (std::size_t t = 0; t < c.size(); ++t) EXPECT_EQ(flipped[t], 1.0 - c[t]);

    ASSERT_EQ(run_cli("counterfactual " + base + "--out " + at("cf")).code, 0);
    EXPECT_EQ(slurp(at("cf/ensemble_counterfactual.csv")), slurp(at("flip/ensemble_counterfactual.csv")));

    ASSERT_EQ(run_cli("emulate " + base + "--condition-mode white-noise --out " + at("wn")).code, 0);
    const auto wn = io::read_condition(at("wn/condition_white-noise.csv"));
    const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
    bool differs = false;
    for (std::size_t t = 0; t < c.size(); ++t) {
        EXPECT_GE(wn[t], *lo);
        EXPECT_LE(wn[t], *hi);
        differs = differs || wn[t] != c[t];
    }
    EXPECT_TRUE(differs);
    EXPECT_EQ(run_cli("emulate " + base + "--condition-mode sideways --out " + at("bad")).code, 2);
}

TEST_F(Cli, MetricsWritesCurvesTwcrpsAndQq) {
    const std::string base = "--data " + at("desk") + " --checkpoint " + at("trained/checkpoint.json") + " --samples 10 --times 0-19 ";
    ASSERT_EQ(run_cli("emulate " + base + "--out " + at("mx")).code, 0);
    ASSERT_EQ(run_cli("counterfactual " + base + "--format binary --out " + at("mx")).code, 0);
    io::write_text(at("metrics.json"), R"({"schema_version": 1, "metrics": {"n_boot": 10}})");
    const auto r = run_cli("metrics --config " + at("metrics.json") + " --data " + at("desk") + " --ensemble " +
                         at("mx/ensemble_factual.csv") + " --ensemble " + at("mx/ensemble_counterfactual.bin") + " --out " +
                         at("metrics"));
    ASSERT_EQ(r.code, 0) << r.err;
    const std::vector<std::string> cols{"u", "estimate", "lo95", "hi95"};
    for (const char* f : {"chi_truth_d0.csv", "chi_truth_d1.csv", "chi_factual_d1.csv", "are_truth.csv", "are_factual.csv",
                          "are_counterfactual.csv"})
        EXPECT_EQ(io::read_table(at(std::string("metrics/") + f)).header, cols) << f;

    const auto self = io::read_table(at("metrics/chi_truth_d0.csv"));
    ASSERT_EQ(self.rows.size(), 3u);
    for (const auto& row : self.rows) EXPECT_EQ(io::parse_double(row[1], "chi"), 1.0);

    const auto summary = io::read_table(at("metrics/twcrps_summary.csv"));
    EXPECT_EQ(summary.header[0], "scenario");
    EXPECT_EQ(summary.header[1], "median");
    ASSERT_EQ(summary.rows.size(), 2u);
    EXPECT_EQ(summary.rows[0][0], "factual");
    EXPECT_EQ(summary.rows[1][0], "counterfactual");
    EXPECT_EQ(summary.rows[0][2], "40");
    EXPECT_EQ(io::read_table(at("metrics/qq_factual.csv")).header, (std::vector<std::string>{"q", "obs", "ens"}));
}

TEST_F(Cli, GradcheckAndTailcheckPass) {
    const auto g = run_cli("gradcheck --out " + at("gc"));
    EXPECT_EQ(g.code, 0) << g.out << g.err;
    EXPECT_EQ(g.out.rfind("PASS", 0), 0u) << g.out;
    EXPECT_TRUE(io::read_json(at("gc/gradcheck.json")).at("pass").get<bool>());
    const auto strict = run_cli("gradcheck --tol 0 --out " + at("gc0"));
    EXPECT_EQ(strict.code, 1);
    EXPECT_EQ(strict.out.rfind("FAIL", 0), 0u) << strict.out;

    const auto t = run_cli("tailcheck --tau 1 --alpha0 2 --out " + at("tc"));
    EXPECT_EQ(t.code, 0) << t.out << t.err;
    const auto j = io::read_json(at("tc/tailcheck.json"));
    EXPECT_NEAR(j.at("marginal").get<double>(), 2.0, 0.4);
    EXPECT_NEAR(j.at("joint").get<double>(), 4.0, 1.4);
}

TEST_F(Cli, PreprocessDetrendsAndTransforms) {
    const std::size_t n_days = 1200;
    const auto start = prep::Date{std::chrono::year{2014}, std::chrono::May, std::chrono::day{1}};
    const auto dates = prep::calendar(start, n_days);
    Matrix daily(static_cast<Eigen::Index>(n_days), 3);
    for (Eigen::Index j = 0; j < 3; ++j) daily.col(j) = prep::synthetic_daily(dates, {}, 40 + static_cast<std::uint64_t>(j));
    io::write_fields(at("daily.csv"), daily, {0, 1, 2});
    io::write_text(at("geo.csv"), "site_id,lon,lat\n0,10.0,45.0\n1,10.3,45.1\n2,12.0,46.0\n");
    const auto r = run_cli("preprocess --data " + at("daily.csv") + " --sites " + at("geo.csv") + " --out " + at("prep"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto f = io::read_fields(at("prep/fields.csv"));
    EXPECT_EQ(f.values.rows(), 40);  // May 2014 .. Aug 2017
    EXPECT_TRUE((f.values.array() > 0.0).all());
    const auto gof = io::read_table(at("prep/gof.csv"));
    ASSERT_EQ(gof.rows.size(), 3u);
    EXPECT_EQ(gof.rows[0][7], "2");  // sites 0 and 1 are 25 km apart, site 2 is isolated
    EXPECT_EQ(gof.rows[2][7], "1");
    EXPECT_EQ(run_cli("preprocess --data " + at("daily_missing.csv") + " --sites " + at("geo.csv") + " --out " + at("p2")).code, 2);
}
