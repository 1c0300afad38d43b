#include <benchmark/benchmark.h>

#include <vector>

#include "cxvae/distributions.hpp"
#include "cxvae/emulation.hpp"
#include "cxvae/fieldsim.hpp"
#include "cxvae/metrics.hpp"
#include "cxvae/model.hpp"
#include "cxvae/training.hpp"

using namespace cxvae;

namespace {

struct Desk {
    sim::Preset p = sim::desk_preset();
    SpatialGrid grid;
    KnotGrid knots;
    BasisMatrix w;
    ConditionSeries c;
    sim::SimulatedData data;
    model::Model m;

    Desk() {
        grid = sim::regular_grid(p.grid_side, p.grid_side, p.cell_side());
        knots = sim::knot_lattice(p.knots_per_side, 0.0, p.domain);
        w = sim::wendland_basis(grid, knots, p.wendland_radius);
        c = sim::smooth_condition(sim::enso_like_raw(p.n_t, 7));
        data = sim::simulate_dataset(sim::simulate_theta(c, knots, p.kernel), w, p.alpha, p.alpha0, 7);
        model::HyperParams h;
        h.n_sites = static_cast<int>(grid.size());
        h.K = p.n_knots();
        h.M = p.n_xi_basis();
        model::ModelInit init;
        init.w_init = w;
        init.knots = knots;
        m = model::make_model(h, init);
    }
};

const Desk& desk() {
    static const Desk d;
    return d;
}

void BM_ExpPSSample(benchmark::State& st) {
    const double theta = static_cast<double>(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(dist::expps_sample({0.5, theta}, 10000, 1));
    st.SetItemsProcessed(st.iterations() * 10000);
}
BENCHMARK(BM_ExpPSSample)->Arg(0)->Arg(1)->Arg(2);

void BM_SimulateFullPreset(benchmark::State& st) {
    const auto p = sim::full_preset();
    const auto grid = sim::regular_grid(p.grid_side, p.grid_side, p.cell_side());
    const auto knots = sim::knot_lattice(p.knots_per_side, 0.0, p.domain);
    const auto w = sim::wendland_basis(grid, knots, p.wendland_radius);
    const auto c = sim::smooth_condition(sim::enso_like_raw(p.n_t, 1));
    const auto theta = sim::simulate_theta(c, knots, p.kernel);
    for (auto _ : st) benchmark::DoNotOptimize(sim::simulate_dataset(theta, w, p.alpha, p.alpha0, 1));
}
BENCHMARK(BM_SimulateFullPreset)->Unit(benchmark::kMillisecond);

void BM_ElboGradientDesk(benchmark::State& st) {
    const auto& d = desk();
    model::ElboInputs in;
    in.x = &d.data.x;
    in.c = &d.c.values;
    for (Eigen::Index t = 0; t < d.data.x.rows(); ++t) in.batch.push_back(t);
    in.noise = Rng(3);
    const ad::Loss loss = [&](ad::Tape& t, const ad::Var& p) { return model::penalized_elbo(t, p, d.m, in); };
    for (auto _ : st) benchmark::DoNotOptimize(ad::gradient(loss, d.m.params.values));
}
BENCHMARK(BM_ElboGradientDesk)->Unit(benchmark::kMillisecond);

void BM_EmulateOneTime(benchmark::State& st) {
    const auto& d = desk();
    emu::EmulationOptions opt;
    opt.n_samples = static_cast<int>(st.range(0));
    opt.times = {100};
    for (auto _ : st) benchmark::DoNotOptimize(emu::emulate(d.m, d.data.x, d.c.values, opt));
}
BENCHMARK(BM_EmulateOneTime)->Arg(200)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_ChiEstimate(benchmark::State& st) {
    const auto& d = desk();
    const Matrix u = metrics::rank_transform(d.data.x);
    const auto pairs = metrics::pairs_at_distance(d.grid, d.p.cell_side(), d.p.cell_side() / 2, 200, 1);
    const std::vector<double> us{0.9, 0.95, 0.99};
    for (auto _ : st) benchmark::DoNotOptimize(metrics::chi_estimate(u, pairs, us));
}
BENCHMARK(BM_ChiEstimate);

void BM_TwCrps(benchmark::State& st) {
    const auto ens = dist::loglaplace_sample({30.0}, 2000, 5);
    for (auto _ : st) benchmark::DoNotOptimize(metrics::twcrps(ens, 1.05));
}
BENCHMARK(BM_TwCrps);

}  // namespace

BENCHMARK_MAIN();
