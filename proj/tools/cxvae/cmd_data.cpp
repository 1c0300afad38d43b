#include <cstdio>
#include <iostream>

#include "commands.hpp"
#include "cxvae/distributions.hpp"
#include "cxvae/error.hpp"
#include "cxvae/io.hpp"
#include "cxvae/preprocess.hpp"
#include "dataset.hpp"

namespace cxvae::cli {

namespace {

io::json preset_json(const sim::Preset& p, const std::string& name) {
    return {{"preset", name},
            {"grid_side", p.grid_side},
            {"domain", p.domain},
            {"knots_per_side", p.knots_per_side},
            {"wendland_radius", p.wendland_radius},
            {"xi_basis_per_side", p.xi_basis_per_side},
            {"n_t", p.n_t},
            {"alpha", p.alpha},
            {"alpha0", p.alpha0},
            {"gamma", p.kernel.gamma},
            {"b", p.kernel.b},
            {"tau", p.kernel.tau},
            {"K", p.n_knots()},
            {"M", p.n_xi_basis()}};
}

int run_simulate(const CommonFlags& f) {
    const RunConfig rc = resolve(f);
    const sim::Preset p = rc.preset();
    ensure_dir(f.out);

    const auto grid = sim::regular_grid(p.grid_side, p.grid_side, p.cell_side());
    const auto knots = sim::knot_lattice(p.knots_per_side, 0.0, p.domain);
    const auto w = sim::wendland_basis(grid, knots, p.wendland_radius);
    const auto edges = rc.data.edges == "drop" ? sim::EdgeMode::Drop : sim::EdgeMode::Shrink;
    const auto c = sim::smooth_condition(sim::enso_like_raw(p.n_t, rc.seed), rc.data.condition_window, edges);
    const auto theta = sim::simulate_theta(c, knots, p.kernel);
    const auto data = sim::simulate_dataset(theta, w, p.alpha, p.alpha0, rc.seed);

    std::cout << "simulate: preset " << rc.data.preset << ", " << p.grid_side << "x" << p.grid_side << " grid ("
              << grid.size() << " sites), K=" << p.n_knots() << ", M=" << p.n_xi_basis() << ", n_t=" << c.size()
              << ", alpha=" << p.alpha << ", alpha0=" << p.alpha0 << ", gamma=" << p.kernel.gamma << ", b=" << p.kernel.b
              << ", tau=" << p.kernel.tau << ", radius=" << p.wendland_radius << ", seed=" << rc.seed << '\n';

    const auto out = [&](const char* name) { return join(f.out, name); };
    io::write_fields(out("fields.csv"), data.x, grid.ids);
    io::write_sites(out("sites.csv"), grid);
    io::write_condition(out("condition.csv"), c.values);
    write_matrix(out("theta.csv"), theta, "knot_");
    write_matrix(out("z.csv"), data.z, "knot_");
    io::write_fields(out("y.csv"), data.y, grid.ids);
    write_knots(out("knots.csv"), knots);
    write_basis(out("basis.csv"), w, grid.ids);
    io::write_json(out("preset.json"), preset_json(p, rc.data.preset));

    std::vector<std::string> outputs;
    for (const char* n : {"fields.csv", "sites.csv", "sites.csv.json", "condition.csv", "theta.csv", "z.csv", "y.csv",
                          "knots.csv", "knots.csv.json", "basis.csv", "preset.json"})
        outputs.push_back(out(n));
    std::vector<std::string> inputs;
    if (!f.config.empty()) inputs.push_back(f.config);
    io::write_manifest(out("manifest.json"), "simulate", rc.seed, inputs, outputs, {{"config", rc.to_json()}});
    return 0;
}

prep::Date parse_date(const std::string& s) {
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    if (std::sscanf(s.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3)
        throw ConfigError("preprocess.start must be YYYY-MM-DD, got '" + s + "'");
    const prep::Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!date.ok()) throw ConfigError("preprocess.start is not a calendar date: '" + s + "'");
    return date;
}

struct PreprocessFlags {
    std::string daily;
    std::string sites;
    std::string condition;
};

int run_preprocess(const CommonFlags& f, const PreprocessFlags& pf) {
    const RunConfig rc = resolve(f);
    require_file(pf.daily);
    require_file(pf.sites);
    if (!pf.condition.empty()) require_file(pf.condition);

    const auto daily = io::read_fields(pf.daily);
    const auto st = io::read_table(pf.sites);
    const auto ci = st.column("site_id"), clon = st.column("lon"), clat = st.column("lat");
    std::vector<prep::GeoPoint> geo(daily.ids.size());
    std::vector<bool> seen(daily.ids.size(), false);
    for (const auto& r : st.rows) {
        const long id = io::parse_long(r[ci], pf.sites);
        for (std::size_t j = 0; j < daily.ids.size(); ++j)
            if (daily.ids[j] == id) {
                geo[j] = {io::parse_double(r[clon], pf.sites), io::parse_double(r[clat], pf.sites)};
                seen[j] = true;
            }
    }
    for (std::size_t j = 0; j < seen.size(); ++j)
        if (!seen[j]) throw IoError(pf.sites + ": no coordinates for site " + std::to_string(daily.ids[j]));

    const auto n_days = static_cast<std::size_t>(daily.values.rows());
    const auto start = parse_date(rc.preprocess.start);
    const auto dates = prep::calendar(start, n_days);
    const auto design = prep::build_design(n_days, start);
    const auto vdesign = prep::variance_design(n_days);
    const auto hood = prep::neighborhood(geo, rc.preprocess.radius_km);

    const auto n_sites = daily.ids.size();
    Matrix maxima, transformed;
    io::Table gof;
    gof.header = {"site_id", "mu", "sigma", "xi", "statistic", "df", "p_value", "n_neighbours"};
    int rejected = 0;
    for (std::size_t j = 0; j < n_sites; ++j) {
        std::vector<Vector> responses;
        for (auto i : hood[j]) responses.push_back(daily.values.col(static_cast<Eigen::Index>(i)));
        const Vector xj = daily.values.col(static_cast<Eigen::Index>(j));
        const auto fit = prep::fit_seasonal(design.m, responses);
        const auto var = prep::fit_variance(xj - fit.fitted, vdesign);
        const Vector z = prep::detrend(xj, fit.fitted, var.sd);
        const auto mm = prep::monthly_maxima(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())), dates);
        if (j == 0) {
            maxima.resize(static_cast<Eigen::Index>(mm.size()), static_cast<Eigen::Index>(n_sites));
            transformed.resizeLike(maxima);
        }
        std::vector<double> m(mm.size());
        for (std::size_t k = 0; k < mm.size(); ++k) m[k] = mm[k].value;
        const auto g = dist::gev_fit(m).params;
        prep::GofOptions go;
        go.n_bins = rc.preprocess.n_bins;
        go.doubled = rc.preprocess.doubled;
        const auto r = prep::chi2_gof(m, [&](double v) { return dist::gev_cdf(v, g); }, go);
        if (r.p_value < 0.05) ++rejected;
        const auto tr = prep::marginal_transform(m, g, "site " + std::to_string(daily.ids[j]));
        for (std::size_t k = 0; k < m.size(); ++k) {
            maxima(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = m[k];
            transformed(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = tr[k];
        }
        gof.rows.push_back({std::to_string(daily.ids[j]), io::fmt(g.mu), io::fmt(g.sigma), io::fmt(g.xi), io::fmt(r.statistic),
                            std::to_string(r.df), io::fmt(r.p_value), std::to_string(hood[j].size())});
    }

    ensure_dir(f.out);
    const auto out = [&](const char* name) { return join(f.out, name); };
    SpatialGrid grid;
    grid.ids = daily.ids;
    for (const auto& p : geo) grid.sites.push_back({p.lon, p.lat});
    io::write_fields(out("fields.csv"), transformed, daily.ids);
    io::write_fields(out("monthly_maxima.csv"), maxima, daily.ids);
    io::write_sites(out("sites.csv"), grid);
    io::write_table(out("gof.csv"), gof);
    std::vector<std::string> outputs{out("fields.csv"), out("monthly_maxima.csv"), out("sites.csv"), out("gof.csv")};
    std::vector<std::string> inputs{pf.daily, pf.sites};
    if (!pf.condition.empty()) {
        const auto raw = io::read_condition(pf.condition);
        if (raw.size() != static_cast<std::size_t>(maxima.rows()))
            throw IoError(pf.condition + ": " + std::to_string(raw.size()) + " values for " + std::to_string(maxima.rows()) +
                          " months");
        const auto edges = rc.data.edges == "drop" ? sim::EdgeMode::Drop : sim::EdgeMode::Shrink;
        if (edges == sim::EdgeMode::Drop) throw ConfigError("preprocess keeps every month; data.edges must be 'shrink'");
        io::write_condition(out("condition.csv"), sim::smooth_condition(raw, rc.data.condition_window, edges).values);
        outputs.push_back(out("condition.csv"));
        inputs.push_back(pf.condition);
    }
    if (!f.config.empty()) inputs.push_back(f.config);
    std::cout << "preprocess: " << n_sites << " sites, " << n_days << " days, " << maxima.rows()
              << " monthly maxima per site, GEV fit rejected (p < 0.05) at " << rejected << " sites\n";
    io::write_manifest(out("manifest.json"), "preprocess", rc.seed, inputs, outputs, {{"config", rc.to_json()}});
    return 0;
}

}  // namespace

void add_data_commands(CLI::App& app, Action& action) {
    auto sim_flags = std::make_shared<CommonFlags>();
    auto* sim = app.add_subcommand("simulate", "Synthetic dataset with known tilting field and latent process");
    add_common(*sim, *sim_flags);
    sim->add_flag("--desk", sim_flags->desk, "20x20 grid, K=16 (default: 50x50, K=64)");
    sim->callback([&action, sim_flags] { action = [sim_flags] { return run_simulate(*sim_flags); }; });

    auto pre_flags = std::make_shared<CommonFlags>();
    auto pre = std::make_shared<PreprocessFlags>();
    auto* pp = app.add_subcommand("preprocess", "Detrend daily series, fit GEV to monthly maxima, transform margins");
    add_common(*pp, *pre_flags);
    pp->add_option("--data", pre->daily, "Daily series, wide CSV (time_index,site_<id>,...)")->required();
    pp->add_option("--sites", pre->sites, "Site coordinates CSV (site_id,lon,lat)")->required();
    pp->add_option("--condition", pre->condition, "Raw monthly condition index (time_index,c)");
    pp->callback([&action, pre_flags, pre] { action = [pre_flags, pre] { return run_preprocess(*pre_flags, *pre); }; });
}

}  // namespace cxvae::cli
