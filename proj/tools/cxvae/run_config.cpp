#include "run_config.hpp"

#include <charconv>
#include <set>

#include "cxvae/error.hpp"
#include "cxvae/io.hpp"

namespace cxvae::cli {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

const std::set<std::string> kPresetKeys{"grid_side", "domain",   "knots_per_side", "wendland_radius", "xi_basis_per_side",
                                        "n_t",       "alpha",    "alpha0",         "gamma",           "b",
                                        "tau"};

}  // namespace

sim::Preset RunConfig::preset() const {
    sim::Preset p;
    if (data.preset == "full")
        p = sim::full_preset();
    else if (data.preset == "desk")
        p = sim::desk_preset();
    else
        throw ConfigError("data.preset must be 'full' or 'desk', got '" + data.preset + "'");
    const std::string where = "data.overrides";
    read_opt(data.overrides, "grid_side", p.grid_side, where);
    read_opt(data.overrides, "domain", p.domain, where);
    read_opt(data.overrides, "knots_per_side", p.knots_per_side, where);
    read_opt(data.overrides, "wendland_radius", p.wendland_radius, where);
    read_opt(data.overrides, "xi_basis_per_side", p.xi_basis_per_side, where);
    read_opt(data.overrides, "n_t", p.n_t, where);
    read_opt(data.overrides, "alpha", p.alpha, where);
    read_opt(data.overrides, "alpha0", p.alpha0, where);
    read_opt(data.overrides, "gamma", p.kernel.gamma, where);
    read_opt(data.overrides, "b", p.kernel.b, where);
    read_opt(data.overrides, "tau", p.kernel.tau, where);
    if (p.grid_side <= 0 || p.knots_per_side <= 0 || p.xi_basis_per_side <= 0 || p.n_t < 3 || p.domain <= 0.0)
        throw ConfigError("data.overrides: sizes must be positive and n_t >= 3");
    return p;
}

train::TrainConfig RunConfig::train_config(const json& base_hyper) const {
    train::TrainConfig defaults;
    json doc = train::config_to_json(defaults);
    doc["hyper"].merge_patch(base_hyper);
    if (train.contains("hyper")) throw ConfigError("train.hyper: hyperparameters belong in the top-level 'hyper' section");
    doc.merge_patch(train);
    doc["hyper"].merge_patch(hyper);
    doc["seed"] = seed;
    try {
        return train::config_from_json(doc);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train/hyper section: ") + e.what());
    }
}

std::string RunConfig::path(const std::string& key, const std::string& fallback) const {
    if (!paths.contains(key)) return fallback;
    if (!paths.at(key).is_string()) throw ConfigError("paths." + key + " must be a string");
    return paths.at(key).get<std::string>();
}

json RunConfig::to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["seed"] = seed;
    j["data"] = {{"preset", data.preset}, {"overrides", data.overrides}, {"condition_window", data.condition_window},
                 {"edges", data.edges}};
    j["hyper"] = hyper;
    j["train"] = train;
    j["emulate"] = {{"n_samples", emulate.n_samples},
                    {"condition_mode", emulate.condition_mode},
                    {"flip", emulate.flip},
                    {"times", emulate.times},
                    {"sites", emulate.sites},
                    {"format", emulate.format},
                    {"freeze_latent_noise", emulate.freeze_latent_noise},
                    {"freeze_data_noise", emulate.freeze_data_noise},
                    {"prior_only", emulate.prior_only}};
    j["metrics"] = {{"u_chi", metrics.u_chi},
                    {"u_are", metrics.u_are},
                    {"distances", metrics.distances},
                    {"tolerance", metrics.tolerance},
                    {"n_boot", metrics.n_boot},
                    {"max_pairs", metrics.max_pairs},
                    {"holdout_fraction", metrics.holdout_fraction},
                    {"qq", metrics.qq}};
    j["preprocess"] = {{"radius_km", preprocess.radius_km},
                       {"n_bins", preprocess.n_bins},
                       {"start", preprocess.start},
                       {"doubled", preprocess.doubled}};
    j["paths"] = paths;
    return j;
}

RunConfig parse_run_config(const json& j) {
    reject_unknown(j, {"schema_version", "seed", "data", "hyper", "train", "emulate", "metrics", "preprocess", "paths"},
                   "config");
    RunConfig rc;
    read_opt(j, "schema_version", rc.schema_version, "config");
    if (rc.schema_version != kSchemaVersion)
        throw ConfigError("config schema_version " + std::to_string(rc.schema_version) + " is not supported (expected " +
                          std::to_string(kSchemaVersion) + ")");
    read_opt(j, "seed", rc.seed, "config");

    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, {"preset", "overrides", "condition_window", "edges"}, "data");
        read_opt(d, "preset", rc.data.preset, "data");
        read_opt(d, "condition_window", rc.data.condition_window, "data");
        read_opt(d, "edges", rc.data.edges, "data");
        if (d.contains("overrides")) {
            reject_unknown(d.at("overrides"), kPresetKeys, "data.overrides");
            rc.data.overrides = d.at("overrides");
        }
        if (rc.data.edges != "shrink" && rc.data.edges != "drop") throw ConfigError("data.edges must be 'shrink' or 'drop'");
        if (rc.data.condition_window < 1) throw ConfigError("data.condition_window must be >= 1");
    }
    if (j.contains("hyper")) {
        if (!j.at("hyper").is_object()) throw ConfigError("hyper must be a JSON object");
        rc.hyper = j.at("hyper");
    }
    if (j.contains("train")) {
        if (!j.at("train").is_object()) throw ConfigError("train must be a JSON object");
        rc.train = j.at("train");
        if (rc.train.contains("seed")) throw ConfigError("train.seed: use the top-level seed");
    }
    if (j.contains("emulate")) {
        const auto& e = j.at("emulate");
        reject_unknown(e,
                       {"n_samples", "condition_mode", "flip", "times", "sites", "format", "freeze_latent_noise",
                        "freeze_data_noise", "prior_only"},
                       "emulate");
        read_opt(e, "n_samples", rc.emulate.n_samples, "emulate");
        read_opt(e, "condition_mode", rc.emulate.condition_mode, "emulate");
        read_opt(e, "flip", rc.emulate.flip, "emulate");
        read_opt(e, "times", rc.emulate.times, "emulate");
        read_opt(e, "sites", rc.emulate.sites, "emulate");
        read_opt(e, "format", rc.emulate.format, "emulate");
        read_opt(e, "freeze_latent_noise", rc.emulate.freeze_latent_noise, "emulate");
        read_opt(e, "freeze_data_noise", rc.emulate.freeze_data_noise, "emulate");
        read_opt(e, "prior_only", rc.emulate.prior_only, "emulate");
    }
    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        reject_unknown(m, {"u_chi", "u_are", "distances", "tolerance", "n_boot", "max_pairs", "holdout_fraction", "qq"},
                       "metrics");
        read_opt(m, "u_chi", rc.metrics.u_chi, "metrics");
        read_opt(m, "u_are", rc.metrics.u_are, "metrics");
        read_opt(m, "distances", rc.metrics.distances, "metrics");
        read_opt(m, "tolerance", rc.metrics.tolerance, "metrics");
        read_opt(m, "n_boot", rc.metrics.n_boot, "metrics");
        read_opt(m, "max_pairs", rc.metrics.max_pairs, "metrics");
        read_opt(m, "holdout_fraction", rc.metrics.holdout_fraction, "metrics");
        read_opt(m, "qq", rc.metrics.qq, "metrics");
        if (rc.metrics.holdout_fraction <= 0.0 || rc.metrics.holdout_fraction > 1.0)
            throw ConfigError("metrics.holdout_fraction must be in (0, 1]");
    }
    if (j.contains("preprocess")) {
        const auto& p = j.at("preprocess");
        reject_unknown(p, {"radius_km", "n_bins", "start", "doubled"}, "preprocess");
        read_opt(p, "radius_km", rc.preprocess.radius_km, "preprocess");
        read_opt(p, "n_bins", rc.preprocess.n_bins, "preprocess");
        read_opt(p, "start", rc.preprocess.start, "preprocess");
        read_opt(p, "doubled", rc.preprocess.doubled, "preprocess");
    }
    if (j.contains("paths")) {
        if (!j.at("paths").is_object()) throw ConfigError("paths must be a JSON object");
        for (const auto& [k, v] : j.at("paths").items())
            if (!v.is_string()) throw ConfigError("paths." + k + " must be a string");
        rc.paths = j.at("paths");
    }
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return parse_run_config(io::read_json(path));
}

std::vector<long> parse_index_list(const std::string& text) {
    std::vector<long> out;
    std::size_t pos = 0;
    auto number = [&](const std::string& s) {
        long v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || v < 0) throw ConfigError("bad index list '" + text + "'");
        return v;
    };
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (item.empty()) throw ConfigError("bad index list '" + text + "'");
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
            out.push_back(number(item));
        } else {
            const long a = number(item.substr(0, dash)), b = number(item.substr(dash + 1));
            if (b < a) throw ConfigError("bad index range '" + item + "'");
            for (long v = a; v <= b; ++v) out.push_back(v);
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace cxvae::cli
