#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include "commands.hpp"
#include "cxvae/distributions.hpp"
#include "cxvae/emulation.hpp"
#include "cxvae/error.hpp"
#include "cxvae/io.hpp"
#include "cxvae/metrics.hpp"
#include "cxvae/model.hpp"
#include "dataset.hpp"

namespace cxvae::cli {

namespace {

std::string tag(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

/// Cell side of a regular grid, else the smallest inter-site distance.
double grid_psi(const SpatialGrid& g) {
    if (g.regular) return g.regular->side;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = i + 1; j < g.size(); ++j) best = std::min(best, distance(g.sites[i], g.sites[j]));
    if (!std::isfinite(best) || best <= 0.0) throw DomainError("cannot derive a grid spacing from fewer than two distinct sites");
    return best;
}

struct MetricsFlags {
    std::string data;
    std::vector<std::string> ensembles;
};

struct Loaded {
    std::string name;
    emu::StoredEnsemble e;
    std::vector<Eigen::Index> cols;  ///< dataset column of each ensemble site
};

/// Rows: every (time, sample); columns: the ensemble's sites.
Matrix stack(const emu::StoredEnsemble& e) {
    const Eigen::Index per = e.samples.empty() ? 0 : e.samples.front().rows();
    const auto n_sites = static_cast<Eigen::Index>(e.site_ids.size());
    Matrix out(per * static_cast<Eigen::Index>(e.samples.size()), n_sites);
    Eigen::Index r = 0;
    for (const auto& m : e.samples) {
        out.middleRows(r, per) = m;
        r += per;
    }
    return out;
}

int run_metrics(const CommonFlags& f, const MetricsFlags& mf) {
    const RunConfig rc = resolve(f);
    const auto& mc = rc.metrics;
    const auto dir = mf.data.empty() ? rc.path("data") : mf.data;
    if (dir.empty()) throw ConfigError("no dataset directory: pass --data or set paths.data");
    const Dataset ds = load_dataset(dir);
    std::vector<std::string> inputs = ds.files;
    if (!f.config.empty()) inputs.push_back(f.config);

    std::map<long, Eigen::Index> col_of;
    for (std::size_t j = 0; j < ds.grid.ids.size(); ++j) col_of[ds.grid.ids[j]] = static_cast<Eigen::Index>(j);
    std::vector<Loaded> ens;
    std::set<std::string> names;
    for (const auto& p : mf.ensembles) {
        require_file(p);
        Loaded l;
        l.e = emu::read_ensemble(p);
        inputs.push_back(p);
        if (file_exists(p + ".json")) inputs.push_back(p + ".json");
        if (l.e.samples.empty()) throw IoError(p + ": ensemble holds no time steps");
        for (long id : l.e.site_ids) {
            if (!col_of.contains(id)) throw IoError(p + ": site " + std::to_string(id) + " is not in " + dir);
            l.cols.push_back(col_of.at(id));
        }
        for (auto t : l.e.times)
            if (t < 0 || t >= ds.fields.values.rows()) throw IoError(p + ": time index " + std::to_string(t) + " is not in " + dir);
        l.name = l.e.scenario.empty() ? "ensemble" : l.e.scenario;
        for (int k = 2; names.contains(l.name); ++k) l.name = l.e.scenario + "_" + std::to_string(k);
        names.insert(l.name);
        ens.push_back(std::move(l));
    }

    ensure_dir(f.out);
    std::vector<std::string> outputs;
    const auto out = [&](const std::string& name) {
        outputs.push_back(join(f.out, name));
        return outputs.back();
    };
    const Matrix& x = ds.fields.values;
    const double psi = grid_psi(ds.grid);
    const double tol = mc.tolerance < 0.0 ? psi / 2.0 : mc.tolerance;
    std::vector<double> distances = mc.distances;
    if (distances.empty()) distances = {0.0, psi, 2.0 * psi, 4.0 * psi};
    const metrics::BootstrapOptions boot{mc.n_boot, rc.seed};

    auto subgrid = [&](const Loaded& l) {
        SpatialGrid g;
        for (auto j : l.cols) {
            g.sites.push_back(ds.grid.sites[static_cast<std::size_t>(j)]);
            g.ids.push_back(ds.grid.ids[static_cast<std::size_t>(j)]);
        }
        if (l.cols.size() == ds.grid.size()) g.regular = ds.grid.regular;
        return g;
    };
    auto meta = [&](const std::string& what, const std::string& source, double d) {
        return io::json{{"metric", what}, {"source", source}, {"distance", d}, {"tolerance", tol}, {"psi", psi},
                        {"n_boot", mc.n_boot}, {"seed", rc.seed}}
            .dump();
    };

    // chi(u) by distance bin
    for (double d : distances) {
        const auto pairs = metrics::pairs_at_distance(ds.grid, d, tol, static_cast<std::size_t>(mc.max_pairs), rc.seed);
        if (pairs.empty()) {
            std::cerr << "metrics: no site pairs at distance " << d << " +/- " << tol << "; skipped\n";
            continue;
        }
        const auto truth = metrics::chi_curve(x, pairs, mc.u_chi, boot);
        metrics::write_curve(out("chi_truth_d" + tag(d) + ".csv"), truth, meta("chi", "truth", d));
        outputs.push_back(outputs.back() + ".json");
        for (const auto& l : ens) {
            const auto g = subgrid(l);
            const auto p = metrics::pairs_at_distance(g, d, tol, static_cast<std::size_t>(mc.max_pairs), rc.seed);
            if (p.empty()) continue;
            const auto curve = metrics::chi_curve(stack(l.e), p, mc.u_chi, boot);
            metrics::write_curve(out("chi_" + l.name + "_d" + tag(d) + ".csv"), curve, meta("chi", l.name, d));
            outputs.push_back(outputs.back() + ".json");
        }
    }

    // ARE(u) around the grid centre
    const auto ref = metrics::center_site(ds.grid);
    {
        const auto truth = metrics::are_curve(x, ds.grid, ref, mc.u_are, boot);
        metrics::write_curve(out("are_truth.csv"), truth, meta("are", "truth", 0.0));
        outputs.push_back(outputs.back() + ".json");
        for (const auto& l : ens) {
            if (l.cols.size() != ds.grid.size()) {
                std::cerr << "metrics: ensemble '" << l.name << "' covers a site subset; ARE skipped\n";
                continue;
            }
            const auto curve = metrics::are_curve(stack(l.e), subgrid(l), ref, mc.u_are, boot);
            metrics::write_curve(out("are_" + l.name + ".csv"), curve, meta("are", l.name, 0.0));
            outputs.push_back(outputs.back() + ".json");
        }
    }

    // twCRPS at held-out sites, averaged over the ensemble's times
    if (!ens.empty()) {
        std::vector<Eigen::Index> all(ds.grid.size());
        std::iota(all.begin(), all.end(), Eigen::Index{0});
        Rng hr = Rng(rc.seed).substream({77});
        shuffle(std::span(all), hr);
        const auto n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(mc.holdout_fraction * static_cast<double>(ds.grid.size())));
        std::vector<Eigen::Index> holdout(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_hold));
        std::sort(holdout.begin(), holdout.end());

        io::Table per_site, summary;
        per_site.header = {"scenario", "site_id", "twcrps"};
        summary.header = {"scenario", "median", "n_sites", "n_times"};
        for (const auto& l : ens) {
            std::vector<double> scores;
            for (auto site : holdout) {
                const auto it = std::find(l.cols.begin(), l.cols.end(), site);
                if (it == l.cols.end()) continue;
                const auto i = static_cast<Eigen::Index>(it - l.cols.begin());
                double sum = 0.0;
                for (std::size_t p = 0; p < l.e.times.size(); ++p) {
                    const Vector col = l.e.samples[p].col(i);
                    sum += metrics::twcrps(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                           x(l.e.times[p], site));
                }
                const double s = sum / static_cast<double>(l.e.times.size());
                scores.push_back(s);
                per_site.rows.push_back({l.name, std::to_string(ds.grid.ids[static_cast<std::size_t>(site)]), io::fmt(s)});
            }
            if (scores.empty()) {
                std::cerr << "metrics: ensemble '" << l.name << "' has no holdout sites; twCRPS skipped\n";
                continue;
            }
            const double med = metrics::median(scores);
            summary.rows.push_back({l.name, io::fmt(med), std::to_string(scores.size()), std::to_string(l.e.times.size())});
            std::cout << "twCRPS median over " << scores.size() << " holdout sites, " << l.name << ": " << med << '\n';
        }
        io::write_table(out("twcrps.csv"), per_site);
        io::write_table(out("twcrps_summary.csv"), summary);
    }

    // Q-Q: observed values at the ensemble's (time, site) cells vs pooled samples
    for (const auto& l : ens) {
        std::vector<double> obs, sam;
        for (std::size_t p = 0; p < l.e.times.size(); ++p) {
            for (std::size_t i = 0; i < l.cols.size(); ++i) obs.push_back(x(l.e.times[p], l.cols[i]));
            const auto& m = l.e.samples[p];
            sam.insert(sam.end(), m.data(), m.data() + m.size());
        }
        const auto qq = metrics::qq_data(obs, sam, mc.qq);
        io::Table t;
        t.header = {"q", "obs", "ens"};
        for (std::size_t k = 0; k < qq.q.size(); ++k) t.rows.push_back({io::fmt(qq.q[k]), io::fmt(qq.obs[k]), io::fmt(qq.ens[k])});
        io::write_table(out("qq_" + l.name + ".csv"), t);
    }

    std::cout << "metrics: " << outputs.size() << " files written to " << f.out << '\n';
    io::write_manifest(join(f.out, "manifest.json"), "metrics", rc.seed, inputs, outputs, {{"config", rc.to_json()}});
    return 0;
}

// --- gradcheck ------------------------------------------------------------------------------

struct GradFlags {
    double tol = 1e-4;
};

int run_gradcheck(const CommonFlags& f, const GradFlags& gf) {
    const RunConfig rc = resolve(f);
    const auto t0 = std::chrono::steady_clock::now();
    // 5x5 sites, 2x2 knots, six time steps
    const auto grid = sim::regular_grid(5, 5, 1.0);
    const auto knots = sim::knot_lattice(2, 0.0, 5.0);
    const auto w = sim::wendland_basis(grid, knots, 4.0);
    const auto c = sim::smooth_condition(sim::enso_like_raw(6, rc.seed), 1);
    const sim::ThetaKernel kernel{2.0, 2.0, 3.0, {0.0, 5.0}, {5.0, 0.0}};
    const auto theta = sim::simulate_theta(c, knots, kernel);
    const auto data = sim::simulate_dataset(theta, w, 0.5, 30.0, rc.seed);

    model::HyperParams h;
    h.n_sites = 25;
    h.K = 4;
    h.M = 4;
    h.channels = 8;
    h.encoder_hidden = {16};
    h.rho0 = 0.05;
    model::ModelInit init;
    init.w_init = w;
    init.knots = knots;
    init.seed = rc.seed + 2;
    auto m = model::make_model(h, init);
    Rng jitter = Rng(rc.seed).substream({11});
    for (Eigen::Index i = 0; i < m.params.values.size(); ++i) m.params.values(i) += 0.3 * jitter.normal();

    model::ElboInputs in;
    in.x = &data.x;
    in.c = &c.values;
    in.batch = {0, 1, 2, 3, 4, 5};
    in.noise = Rng(rc.seed).substream({9});
    const ad::Loss loss = [&](ad::Tape& t, const ad::Var& p) { return model::penalized_elbo(t, p, m, in); };
    const auto rep = ad::fd_check(loss, m.params.values);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = rep.checked > 0 && rep.max_rel_error <= gf.tol;

    const std::string worst = rep.checked > 0 ? m.params.layout.owner(rep.argmax).name : "-";
    std::cout << (pass ? "PASS" : "FAIL") << "  gradcheck: max rel err " << rep.max_rel_error << " (tol " << gf.tol << ") over "
              << rep.checked << " coordinates, " << rep.skipped.size() << " kink-filtered, worst in " << worst << ", " << secs
              << " s\n";

    ensure_dir(f.out);
    const auto report = join(f.out, "gradcheck.json");
    io::write_json(report, {{"pass", pass},
                            {"tol", gf.tol},
                            {"max_rel_error", rep.max_rel_error},
                            {"argmax", rep.argmax},
                            {"worst_block", worst},
                            {"checked", rep.checked},
                            {"skipped", rep.skipped.size()},
                            {"seconds", secs}});
    io::write_manifest(join(f.out, "manifest.json"), "gradcheck", rc.seed, {}, {report});
    return pass ? 0 : 1;
}

// --- tailcheck ------------------------------------------------------------------------------

struct TailFlags {
    std::optional<double> tau;
    std::optional<double> alpha0;
    std::optional<std::size_t> n;
};

int run_tailcheck(const CommonFlags& f, const TailFlags& tf) {
    const RunConfig rc = resolve(f);
    dist::TailCheckOptions opt;
    if (tf.tau) opt.tau = *tf.tau;
    if (tf.alpha0) opt.alpha0 = *tf.alpha0;
    if (tf.n) opt.n = *tf.n;
    if (f.seed) opt.seed = rc.seed;
    const auto r = dist::tail_equivalence(opt);
    const double target_j = r.target * r.target;
    const bool ok_m = std::abs(r.marginal / r.target - 1.0) <= 0.20;
    const bool ok_j = std::abs(r.joint / target_j - 1.0) <= 0.35;
    std::cout << (ok_m ? "PASS" : "FAIL") << "  tailcheck marginal: ratio " << r.marginal << " vs " << r.target
              << " (within 20%) at x=" << r.x << '\n';
    std::cout << (ok_j ? "PASS" : "FAIL") << "  tailcheck joint: ratio " << r.joint << " vs " << target_j
              << " (within 35%); raw exceedances " << r.raw_joint_f << "/" << r.raw_joint_l << '\n';

    ensure_dir(f.out);
    const auto report = join(f.out, "tailcheck.json");
    io::write_json(report, {{"pass", ok_m && ok_j},
                            {"x", r.x},
                            {"target", r.target},
                            {"marginal", r.marginal},
                            {"joint", r.joint},
                            {"tau", opt.tau},
                            {"alpha0", opt.alpha0},
                            {"n", opt.n},
                            {"seed", opt.seed},
                            {"raw", {r.raw_marginal_f, r.raw_marginal_l, r.raw_joint_f, r.raw_joint_l}}});
    io::write_manifest(join(f.out, "manifest.json"), "tailcheck", opt.seed, {}, {report});
    return ok_m && ok_j ? 0 : 1;
}

}  // namespace

void add_check_commands(CLI::App& app, Action& action) {
    auto mc = std::make_shared<CommonFlags>();
    auto mf = std::make_shared<MetricsFlags>();
    auto* me = app.add_subcommand("metrics", "chi(u), ARE(u), twCRPS and Q-Q data for the truth and any ensembles");
    add_common(*me, *mc);
    me->add_option("--data", mf->data, "Dataset directory holding the truth");
    me->add_option("--ensemble", mf->ensembles, "Ensemble file(s) written by emulate/counterfactual");
    me->callback([&action, mc, mf] { action = [mc, mf] { return run_metrics(*mc, *mf); }; });

    auto gc = std::make_shared<CommonFlags>();
    auto gf = std::make_shared<GradFlags>();
    auto* gr = app.add_subcommand("gradcheck", "Reverse-mode gradient vs finite differences on a 25-site instance");
    add_common(*gr, *gc);
    gr->add_option("--tol", gf->tol, "Maximum relative error")->capture_default_str();
    gr->callback([&action, gc, gf] { action = [gc, gf] { return run_gradcheck(*gc, *gf); }; });

    auto tc = std::make_shared<CommonFlags>();
    auto tf = std::make_shared<TailFlags>();
    auto* tl = app.add_subcommand("tailcheck", "Monte-Carlo tail ratios of Frechet vs log-Laplace noise");
    add_common(*tl, *tc);
    tl->add_option("--tau", tf->tau, "Frechet scale (default 1)");
    tl->add_option("--alpha0", tf->alpha0, "Noise tail index (default 2)");
    tl->add_option("--n", tf->n, "Monte-Carlo draws (default 1e6)");
    tl->callback([&action, tc, tf] { action = [tc, tf] { return run_tailcheck(*tc, *tf); }; });
}

}  // namespace cxvae::cli
