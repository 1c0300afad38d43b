#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cxvae/emulation.hpp"
#include "cxvae/io.hpp"
#include "oracles.hpp"

using namespace cxvae;
using namespace cxvae::emu;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    model::Model m;
    DataTensor x;
    std::vector<double> c;
    Fixture() {
        model::HyperParams h;
        h.n_sites = 9;
        h.K = 4;
        h.M = 4;
        h.channels = 4;
        h.encoder_hidden = {6};
        const auto grid = sim::regular_grid(3, 3, 1.0);
        const auto knots = sim::knot_lattice(2, 0.0, 3.0);
        model::ModelInit init;
        init.w_init = sim::wendland_basis(grid, knots, 3.0);
        init.knots = knots;
        m = model::make_model(h, init);
        m.params.block("cond.A") << 0.4, -0.2, 0.1, 0.3;
        Rng rng(2);
        x.resize(5, 9);
        for (Eigen::Index t = 0; t < 5; ++t)
            for (Eigen::Index j = 0; j < 9; ++j) x(t, j) = std::exp(rng.normal());
        c = {0.0, 0.3, 0.9, 0.5, 1.0};
    }
};

EmulationOptions small_opts(int n = 50, std::uint64_t seed = 4) {
    EmulationOptions o;
    o.n_samples = n;
    o.seed = seed;
    return o;
}

bool same_bits(const EmulationEnsemble& a, const EmulationEnsemble& b) {
    if (a.samples.size() != b.samples.size()) return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        if (a.samples[i].size() != b.samples[i].size()) return false;
        if (std::memcmp(a.samples[i].data(), b.samples[i].data(), sizeof(double) * a.samples[i].size()) != 0) return false;
    }
    return a.theta_mean == b.theta_mean;
}

}  // namespace

TEST(Emulate, DegeneratePipeline) {
    Fixture f;
    // sigma head -> softplus(-800) = 0, data noise alpha0 -> 1e4
    f.m.params.block("enc.b_out").rightCols(4).setConstant(-800.0);
    f.m.params.block("enc.w_out").rightCols(4).setZero();
    f.m.hyper.alpha0 = 1e4;
    const auto e = emulate(f.m, f.x, f.c, small_opts(20));
    const Matrix w = f.m.basis_weights();
    for (std::size_t i = 0; i < e.times.size(); ++i) {
        const auto t = e.times[i];
        const auto enc = model::encode(f.x.row(t).transpose(), f.m);
        const Vector z = enc.mu.cwiseProduct(model::condition_map(f.c[t], f.m).array().exp().matrix());
        const Vector y = w * z;
        for (Eigen::Index s = 0; s < 20; ++s)
            for (Eigen::Index j = 0; j < 9; ++j) EXPECT_NEAR(e.samples[i](s, j) / y[j], 1.0, 2e-3);
    }
}

TEST(Emulate, FrozenNoiseIsExact) {
    Fixture f;
    auto o = small_opts(3);
    o.freeze_latent_noise = true;
    o.freeze_data_noise = true;
    const auto e = emulate(f.m, f.x, f.c, o);
    const Matrix w = f.m.basis_weights();
    const auto enc = model::encode(f.x.row(2).transpose(), f.m);
    const Vector y = w * enc.mu.cwiseProduct(model::condition_map(f.c[2], f.m).array().exp().matrix());
    for (Eigen::Index j = 0; j < 9; ++j) EXPECT_NEAR(e.samples[2](1, j), y[j], 1e-12 * y[j]);
}

TEST(Emulate, SameSeedSameBits) {
    Fixture f;
    EXPECT_TRUE(same_bits(emulate(f.m, f.x, f.c, small_opts()), emulate(f.m, f.x, f.c, small_opts())));
    EXPECT_FALSE(same_bits(emulate(f.m, f.x, f.c, small_opts(50, 4)), emulate(f.m, f.x, f.c, small_opts(50, 5))));
}

TEST(Emulate, SubsetsAgreeWithFullRun) {
    Fixture f;
    const auto full = emulate(f.m, f.x, f.c, small_opts());
    auto o = small_opts();
    o.times = {3, 1};
    o.sites = {8, 2};
    const auto sub = emulate(f.m, f.x, f.c, o);
    ASSERT_EQ(sub.samples.size(), 2u);
    EXPECT_EQ(sub.samples[0].col(0), full.samples[3].col(8));
    EXPECT_EQ(sub.samples[0].col(1), full.samples[3].col(2));
    EXPECT_EQ(sub.samples[1].col(0), full.samples[1].col(8));
    EXPECT_EQ(sub.theta_mean.row(0), full.theta_mean.row(3));
}

TEST(Emulate, ThetaSamplesKeptOnRequest) {
    Fixture f;
    auto o = small_opts(7);
    o.keep_theta_samples = true;
    const auto e = emulate(f.m, f.x, f.c, o);
    ASSERT_EQ(e.theta.size(), 5u);
    EXPECT_EQ(e.theta[0].rows(), 7);
    EXPECT_EQ(e.theta[0].cols(), 4);
    EXPECT_GE(e.theta[0].minCoeff(), 0.0);
    EXPECT_LT((e.theta[2].colwise().mean() - e.theta_mean.row(2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Emulate, PriorOnlyDrawsArePositive) {
    Fixture f;
    auto o = small_opts(30);
    o.prior_only = true;
    const auto e = emulate(f.m, f.x, f.c, o);
    for (const auto& s : e.samples) EXPECT_GT(s.minCoeff(), 0.0);
    EXPECT_FALSE(same_bits(e, emulate(f.m, f.x, f.c, small_opts(30))));
}

TEST(Emulate, StreamMatchesCollected) {
    Fixture f;
    const auto e = emulate(f.m, f.x, f.c, small_opts(10));
    std::size_t calls = 0;
    emulate_stream(f.m, f.x, f.c, small_opts(10), [&](std::size_t pos, Eigen::Index t, const Matrix& s, const Matrix&) {
        EXPECT_EQ(t, e.times[pos]);
        EXPECT_EQ(s, e.samples[pos]);
        ++calls;
    });
    EXPECT_EQ(calls, 5u);
}

TEST(Emulate, Errors) {
    Fixture f;
    auto o = small_opts();
    o.n_samples = 0;
    EXPECT_THROW(emulate(f.m, f.x, f.c, o), DomainError);
    o = small_opts();
    o.times = {9};
    EXPECT_THROW(emulate(f.m, f.x, f.c, o), DomainError);
    std::vector<double> short_c(2, 0.5);
    EXPECT_THROW(emulate(f.m, f.x, short_c, small_opts()), DomainError);
}

TEST(Counterfactual, NoOpInterventionIsIdentical) {
    Fixture f;
    EXPECT_TRUE(same_bits(counterfactual(f.m, f.x, f.c, f.c, small_opts()), emulate(f.m, f.x, f.c, small_opts())));
}

TEST(Counterfactual, FlipChangesTheEnsemble) {
    Fixture f;
    const auto cf = counterfactual(f.m, f.x, f.c, flip_condition(f.c), small_opts());
    EXPECT_EQ(cf.scenario, Scenario::Counterfactual);
    EXPECT_FALSE(same_bits(cf, emulate(f.m, f.x, f.c, small_opts())));
}

TEST(Counterfactual, SeveredPathwayIsIdentical) {
    Fixture f;
    f.m.params.block("cond.A").setZero();
    f.m.hyper.fuse_condition = false;
    EXPECT_TRUE(same_bits(counterfactual(f.m, f.x, f.c, flip_condition(f.c), small_opts()),
                          emulate(f.m, f.x, f.c, small_opts())));
}

TEST(Counterfactual, LengthMismatch) {
    Fixture f;
    EXPECT_THROW(counterfactual(f.m, f.x, f.c, {0.1}, small_opts()), DomainError);
}

TEST(Ablation, WhiteNoiseRangeAndUniformity) {
    std::vector<double> c;
    for (int i = 0; i < 10000; ++i) c.push_back(0.2 + 0.5 * std::sin(i * 0.01) * std::sin(i * 0.01));
    const double lo = *std::min_element(c.begin(), c.end()), hi = *std::max_element(c.begin(), c.end());
    const auto w = ablate_condition(c, AblationMode::WhiteNoise, 3);
    ASSERT_EQ(w.size(), c.size());
    for (double v : w) {
        EXPECT_GE(v, lo);
        EXPECT_LE(v, hi);
    }
    const double ks = oracle::ks_distance(w, [&](double v) { return std::clamp((v - lo) / (hi - lo), 0.0, 1.0); });
    EXPECT_LT(ks, oracle::ks_critical_1pct(w.size()));
    EXPECT_EQ(w, ablate_condition(c, AblationMode::WhiteNoise, 3));
}

TEST(Ablation, FixedMode) {
    const std::vector<double> half(12, 0.5);
    EXPECT_EQ(ablate_condition(half, AblationMode::Fixed, 1), half);
    const auto f = ablate_condition({0.0, 1.0, 0.5}, AblationMode::Fixed, 1);
    for (double v : f) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Ablation, Flip) {
    const auto f = flip_condition({0.0, 0.25, 1.0});
    EXPECT_EQ(f, (std::vector<double>{1.0, 0.75, 0.0}));
}

TEST(Output, CsvAndBinaryLayouts) {
    Fixture f;
    auto o = small_opts(3);
    o.times = {0, 4};
    o.sites = {1, 5};
    const auto e = emulate(f.m, f.x, f.c, o);
    const auto dir = fs::temp_directory_path() / "cxvae_unit_emu";
    fs::create_directories(dir);
    const std::vector<long> ids{10, 11, 12, 13, 14, 15, 16, 17, 18};
    write_ensemble_csv((dir / "e.csv").string(), e, ids);
    const auto tab = io::read_table((dir / "e.csv").string());
    EXPECT_EQ(tab.header, (std::vector<std::string>{"time_index", "site_id", "sample_index", "value", "scenario"}));
    ASSERT_EQ(tab.rows.size(), 2u * 3u * 2u);
    EXPECT_EQ(tab.rows[0][1], "11");
    EXPECT_EQ(tab.rows[0][4], "factual");
    EXPECT_EQ(io::parse_double(tab.rows[0][3], "value"), e.samples[0](0, 0));  // 17 significant digits round trip
    write_ensemble_binary((dir / "e.bin").string(), e, ids);
    EXPECT_EQ(fs::file_size(dir / "e.bin"), 2u * 3u * 2u * sizeof(double));
    EXPECT_TRUE(fs::exists(dir / "e.bin.json"));
    for (const auto* name : {"e.csv", "e.bin"}) {
        const auto back = read_ensemble((dir / name).string());
        EXPECT_EQ(back.times, e.times);
        EXPECT_EQ(back.site_ids, (std::vector<long>{11, 15}));
        EXPECT_EQ(back.scenario, "factual");
        ASSERT_EQ(back.samples.size(), 2u);
        EXPECT_EQ(back.samples[1], e.samples[1]);
    }
    write_theta_csv((dir / "theta.csv").string(), e);
    EXPECT_EQ(io::read_table((dir / "theta.csv").string()).rows.size(), 2u);
}
