#include <iostream>

#include "commands.hpp"
#include "cxvae/emulation.hpp"
#include "cxvae/error.hpp"
#include "cxvae/io.hpp"
#include "cxvae/training.hpp"
#include "dataset.hpp"

namespace cxvae::cli {

namespace {

struct TrainFlags {
    std::string data;
    std::string grid;
    std::string resume;
    std::string condition_mode;
    bool fixed_w = false;
    std::optional<int> epochs;
};

std::string data_dir(const RunConfig& rc, const std::string& flag) {
    const auto d = flag.empty() ? rc.path("data") : flag;
    if (d.empty()) throw ConfigError("no dataset directory: pass --data or set paths.data");
    return d;
}

/// Hyperparameters implied by the dataset: site count, knot count and the simulated preset.
io::json dataset_hyper(const Dataset& ds, const std::string& dir) {
    io::json h{{"n_sites", ds.grid.size()}};
    if (ds.knots) h["K"] = ds.knots->size();
    const auto preset = join(dir, "preset.json");
    if (file_exists(preset)) {
        const auto p = io::read_json(preset);
        if (p.contains("M")) h["M"] = p.at("M");
        if (p.contains("alpha0")) h["alpha0"] = p.at("alpha0");
        if (p.contains("alpha")) h["alpha"] = p.at("alpha");
    }
    return h;
}

model::ModelInit dataset_init(const Dataset& ds, std::uint64_t seed) {
    model::ModelInit init;
    init.w_init = ds.basis;
    init.knots = ds.knots;
    init.seed = seed;
    return init;
}

void write_loss_csv(const std::string& path, const std::vector<double>& loss) {
    io::Table t;
    t.header = {"epoch", "loss"};
    for (std::size_t e = 0; e < loss.size(); ++e) t.rows.push_back({std::to_string(e + 1), io::fmt(loss[e])});
    io::write_table(path, t);
}

int run_train(const CommonFlags& f, const TrainFlags& tf) {
    const RunConfig rc = resolve(f);
    const auto dir = data_dir(rc, tf.data);
    const Dataset ds = load_dataset(dir);
    std::vector<std::string> inputs = ds.files;
    if (!f.config.empty()) inputs.push_back(f.config);

    train::TrainConfig cfg = rc.train_config(dataset_hyper(ds, dir));
    if (tf.epochs) cfg.epochs = *tf.epochs;
    if (tf.fixed_w) cfg.fixed_w = true;
    const std::string mode = tf.condition_mode.empty() ? "true" : tf.condition_mode;
    const auto c = condition_for_mode(ds.c, mode, cfg.seed);
    const auto init = dataset_init(ds, cfg.seed);
    const DataTensor& x = ds.fields.values;

    ensure_dir(f.out);
    const auto out = [&](const char* name) { return join(f.out, name); };
    if (cfg.checkpoint_every > 0 && cfg.checkpoint_path.empty()) cfg.checkpoint_path = out("checkpoint_periodic.json");
    std::vector<std::string> outputs;

    io::json extra{{"config", rc.to_json()}, {"condition_mode", mode}};
    train::TrainState state;
    if (!tf.grid.empty()) {
        require_file(tf.grid);
        inputs.push_back(tf.grid);
        const auto g = io::read_json(tf.grid);
        const io::json& list = g.is_object() && g.contains("candidates") ? g.at("candidates") : g;
        if (!list.is_array() || list.empty())
            throw ConfigError(tf.grid + ": expected a non-empty array of config deltas (or {\"candidates\": [...]})");
        const auto deltas = list.get<std::vector<io::json>>();
        const auto gr = train::grid_search(x, c, cfg, deltas, init);
        io::Table t;
        t.header = {"candidate", "delta", "score", "aborted", "message"};
        for (std::size_t i = 0; i < gr.candidates.size(); ++i) {
            const auto& cand = gr.candidates[i];
            auto delta = cand.delta.dump();
            for (auto& ch : delta)
                if (ch == ',') ch = ';';
            auto msg = cand.message;
            for (auto& ch : msg)
                if (ch == ',' || ch == '\n') ch = ' ';
            t.rows.push_back({std::to_string(i), delta, io::fmt(cand.score), cand.aborted ? "1" : "0", msg});
            std::cout << "grid candidate " << i << ": score " << cand.score << (cand.aborted ? " (aborted)" : "") << '\n';
        }
        io::write_table(out("grid_scores.csv"), t);
        outputs.push_back(out("grid_scores.csv"));
        extra["grid_best"] = gr.best;
        std::cout << "grid search: best candidate " << gr.best << '\n';
        const auto keep_path = cfg.checkpoint_path;
        cfg = gr.candidates[gr.best].config;
        if (tf.epochs) cfg.epochs = *tf.epochs;
        cfg.checkpoint_path = keep_path;
        state = train::initial_state(cfg, init);
    } else if (!tf.resume.empty()) {
        require_file(tf.resume);
        inputs.push_back(tf.resume);
        auto ck = train::checkpoint_load(tf.resume);
        const int epochs = tf.epochs ? *tf.epochs : cfg.epochs;
        const auto keep_path = cfg.checkpoint_path;
        cfg = ck.config;
        cfg.epochs = epochs;
        cfg.checkpoint_path = keep_path;
        if (tf.fixed_w) cfg.fixed_w = true;
        if (ck.state.model.hyper.n_sites != static_cast<int>(ds.grid.size()))
            throw ConfigError(tf.resume + ": checkpoint was trained on " + std::to_string(ck.state.model.hyper.n_sites) +
                              " sites, dataset has " + std::to_string(ds.grid.size()));
        state = std::move(ck.state);
    } else {
        state = train::initial_state(cfg, init);
    }

    const auto result = train::train(x, c, cfg, std::move(state));
    const auto& rep = result.report;
    train::checkpoint_save(out("checkpoint.json"), cfg, result.state, rep.final_loss);
    write_loss_csv(out("train_report.csv"), result.state.loss_history);
    io::write_condition(out("condition_used.csv"), c);
    io::json report{{"epochs", result.state.epoch},
                    {"seconds", rep.seconds},
                    {"converged", rep.converged},
                    {"final_loss", rep.final_loss},
                    {"n_params", rep.n_params},
                    {"condition_mode", mode},
                    {"fixed_w", cfg.fixed_w},
                    {"config", train::config_to_json(cfg)}};
    io::write_json(out("report.json"), report);
    for (const char* n : {"checkpoint.json", "train_report.csv", "condition_used.csv", "report.json"}) outputs.push_back(out(n));
    std::cout << "train: " << result.state.epoch << " epochs, " << rep.n_params << " parameters, " << rep.seconds
              << " s, loss " << (rep.loss.empty() ? rep.final_loss : rep.loss.front()) << " -> "
              << (rep.loss.empty() ? rep.final_loss : rep.loss.back()) << ", evaluation loss " << rep.final_loss
              << (rep.converged ? " (plateau)" : "") << '\n';
    io::write_manifest(out("manifest.json"), "train", cfg.seed, inputs, outputs, extra);
    return 0;
}

struct EmulateFlags {
    std::string data;
    std::string checkpoint;
    std::optional<int> samples;
    std::string times;
    std::string sites;
    std::string condition_mode;
    bool flip = false;
    std::string format;
    std::string cf_condition;
};

std::vector<Eigen::Index> to_indices(const std::vector<long>& v, Eigen::Index bound, const char* what) {
    std::vector<Eigen::Index> out;
    for (long i : v) {
        if (i < 0 || i >= bound) throw ConfigError(std::string(what) + " index " + std::to_string(i) + " out of range [0, " +
                                                   std::to_string(bound) + ")");
        out.push_back(static_cast<Eigen::Index>(i));
    }
    return out;
}

int run_emulate(const CommonFlags& f, const EmulateFlags& ef, bool counterfactual) {
    const RunConfig rc = resolve(f);
    const auto dir = data_dir(rc, ef.data);
    const auto ck_path = ef.checkpoint.empty() ? rc.path("checkpoint") : ef.checkpoint;
    if (ck_path.empty()) throw ConfigError("no checkpoint: pass --checkpoint or set paths.checkpoint");
    require_file(ck_path);
    const Dataset ds = load_dataset(dir);
    const auto ck = train::checkpoint_load(ck_path);
    const auto& m = ck.state.model;
    if (m.hyper.n_sites != static_cast<int>(ds.grid.size()))
        throw ConfigError(ck_path + ": model has " + std::to_string(m.hyper.n_sites) + " sites, dataset has " +
                          std::to_string(ds.grid.size()));
    std::vector<std::string> inputs = ds.files;
    inputs.push_back(ck_path);
    if (!f.config.empty()) inputs.push_back(f.config);

    const auto& e = rc.emulate;
    const std::string mode = ef.condition_mode.empty() ? e.condition_mode : ef.condition_mode;
    const std::string format = ef.format.empty() ? e.format : ef.format;
    if (format != "csv" && format != "binary") throw ConfigError("format must be csv or binary, got '" + format + "'");
    const bool flip = counterfactual || ef.flip || e.flip;
    // The ablations replay the training run's seeded condition.
    const auto c = condition_for_mode(ds.c, mode, ck.config.seed);

    emu::EmulationOptions opt;
    opt.n_samples = ef.samples ? *ef.samples : e.n_samples;
    opt.seed = rc.seed;
    opt.freeze_latent_noise = e.freeze_latent_noise;
    opt.freeze_data_noise = e.freeze_data_noise;
    opt.prior_only = e.prior_only;
    const auto n_t = ds.fields.values.rows(), n_s = static_cast<Eigen::Index>(ds.grid.size());
    opt.times = to_indices(ef.times.empty() ? e.times : parse_index_list(ef.times), n_t, "time");
    opt.sites = to_indices(ef.sites.empty() ? e.sites : parse_index_list(ef.sites), n_s, "site");

    std::vector<double> c_run = c;
    emu::Scenario scenario = emu::Scenario::Factual;
    if (mode == "white-noise") scenario = emu::Scenario::WhiteNoise;
    if (ck.config.fixed_w) scenario = emu::Scenario::FixedW;
    if (flip) {
        scenario = emu::Scenario::Counterfactual;
        if (!ef.cf_condition.empty()) {
            require_file(ef.cf_condition);
            inputs.push_back(ef.cf_condition);
            c_run = io::read_condition(ef.cf_condition);
            if (c_run.size() != c.size())
                throw IoError(ef.cf_condition + ": " + std::to_string(c_run.size()) + " values for " + std::to_string(c.size()) +
                              " times");
        } else {
            c_run = emu::flip_condition(c);
        }
    }

    ensure_dir(f.out);
    const auto name = emu::scenario_name(scenario);
    const auto ens_path = join(f.out, "ensemble_" + name + (format == "csv" ? ".csv" : ".bin"));
    const auto theta_path = join(f.out, "theta_hat_" + name + ".csv");
    std::vector<long> kept;
    if (opt.sites.empty())
        kept = ds.grid.ids;
    else
        for (auto j : opt.sites) kept.push_back(ds.grid.ids[static_cast<std::size_t>(j)]);

    emu::EnsembleWriter writer(ens_path, format == "csv" ? emu::EnsembleFormat::Csv : emu::EnsembleFormat::Binary, name, kept,
                               opt.seed, ck_path);
    io::Table theta;
    theta.header.push_back("time_index");
    for (int k = 0; k < m.hyper.K; ++k) theta.header.push_back("theta_" + std::to_string(k));
    // The emulator encodes the factual x; only the condition pathway sees c_run.
    emu::emulate_stream(m, ds.fields.values, c_run, opt, [&](std::size_t, Eigen::Index t, const Matrix& samples, const Matrix& th) {
        writer.add(t, samples);
        std::vector<std::string> row{std::to_string(t)};
        const Vector mean = th.colwise().mean();
        for (Eigen::Index k = 0; k < mean.size(); ++k) row.push_back(io::fmt(mean(k)));
        theta.rows.push_back(std::move(row));
    });
    writer.close();
    io::write_table(theta_path, theta);
    io::write_condition(join(f.out, "condition_" + name + ".csv"), c_run);

    std::vector<std::string> outputs{ens_path, theta_path, join(f.out, "condition_" + name + ".csv")};
    if (format == "binary") outputs.push_back(ens_path + ".json");
    std::cout << (counterfactual ? "counterfactual" : "emulate") << ": scenario " << name << ", " << opt.n_samples
              << " samples x " << theta.rows.size() << " times x " << kept.size() << " sites -> " << ens_path << '\n';
    io::write_manifest(join(f.out, "manifest.json"), counterfactual ? "counterfactual" : "emulate", rc.seed, inputs, outputs,
                       {{"config", rc.to_json()}, {"scenario", name}, {"condition_mode", mode}});
    return 0;
}

void add_emulate_options(CLI::App& sub, EmulateFlags& ef) {
    sub.add_option("--data", ef.data, "Dataset directory (fields.csv, sites.csv, condition.csv)");
    sub.add_option("--checkpoint", ef.checkpoint, "Trained checkpoint (JSON)");
    sub.add_option("--samples", ef.samples, "Samples per time step (default 2000)");
    sub.add_option("--times", ef.times, "Time indices, e.g. 0,5,10-20 (default all)");
    sub.add_option("--sites", ef.sites, "Site column indices (default all)");
    sub.add_option("--condition-mode", ef.condition_mode, "true | white-noise | fixed")
        ->check(CLI::IsMember({"true", "white-noise", "fixed"}));
    sub.add_option("--format", ef.format, "csv | binary")->check(CLI::IsMember({"csv", "binary"}));
}

}  // namespace

void add_model_commands(CLI::App& app, Action& action) {
    auto tc = std::make_shared<CommonFlags>();
    auto tf = std::make_shared<TrainFlags>();
    auto* tr = app.add_subcommand("train", "Fit the model by Adam on the penalized ELBO");
    add_common(*tr, *tc);
    tr->add_option("--data", tf->data, "Dataset directory");
    tr->add_option("--epochs", tf->epochs, "Epochs (overrides the config)");
    tr->add_option("--grid", tf->grid, "Grid search: JSON array of config deltas; writes grid_scores.csv");
    tr->add_option("--checkpoint", tf->resume, "Resume from this checkpoint");
    tr->add_option("--condition-mode", tf->condition_mode, "true | white-noise | fixed")
        ->check(CLI::IsMember({"true", "white-noise", "fixed"}));
    tr->add_flag("--fixed-W", tf->fixed_w, "Freeze the basis weights at the Wendland initialization");
    tr->callback([&action, tc, tf] { action = [tc, tf] { return run_train(*tc, *tf); }; });

    auto ec = std::make_shared<CommonFlags>();
    auto ef = std::make_shared<EmulateFlags>();
    auto* em = app.add_subcommand("emulate", "Sample the emulator given the observed fields and condition");
    add_common(*em, *ec);
    add_emulate_options(*em, *ef);
    em->add_flag("--flip", ef->flip, "Counterfactual c -> 1 - c");
    em->callback([&action, ec, ef] { action = [ec, ef] { return run_emulate(*ec, *ef, false); }; });

    auto cc = std::make_shared<CommonFlags>();
    auto cf = std::make_shared<EmulateFlags>();
    auto* co = app.add_subcommand("counterfactual", "Emulate under an intervened condition (default c -> 1 - c)");
    add_common(*co, *cc);
    add_emulate_options(*co, *cf);
    co->add_flag("--flip", cf->flip, "Accepted for symmetry; the flip is the default intervention");
    co->add_option("--cf-condition", cf->cf_condition, "Counterfactual condition series (time_index,c) instead of 1 - c");
    co->callback([&action, cc, cf] { action = [cc, cf] { return run_emulate(*cc, *cf, true); }; });
}

}  // namespace cxvae::cli
