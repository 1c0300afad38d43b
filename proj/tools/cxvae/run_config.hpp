#pragma once

// Run configuration shared by every subcommand. One JSON document with the sections
// data, hyper, train, emulate, metrics, preprocess, paths and a top-level seed.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cxvae/fieldsim.hpp"
#include "cxvae/training.hpp"

namespace cxvae::cli {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct DataSection {
    std::string preset = "full";
    json overrides = json::object();  ///< preset fields set explicitly
    int condition_window = 5;
    std::string edges = "shrink";
};

struct EmulateSection {
    int n_samples = 2000;
    std::string condition_mode = "true";  ///< true | white-noise | fixed
    bool flip = false;
    std::vector<long> times;
    std::vector<long> sites;
    std::string format = "csv";  ///< csv | binary
    bool freeze_latent_noise = false;
    bool freeze_data_noise = false;
    bool prior_only = false;
};

struct MetricsSection {
    std::vector<double> u_chi{0.9, 0.95, 0.99};
    std::vector<double> u_are{0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
    /// Distances of the chi bins; empty = one grid cell.
    std::vector<double> distances;
    double tolerance = -1.0;  ///< < 0: half a grid cell
    int n_boot = 200;
    int max_pairs = 200;
    double holdout_fraction = 0.1;
    std::vector<double> qq{0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99};
};

struct PreprocessSection {
    double radius_km = 60.0;
    int n_bins = 10;
    std::string start = "2014-05-01";
    bool doubled = false;
};

struct RunConfig {
    int schema_version = kSchemaVersion;
    std::uint64_t seed = 1;
    DataSection data;
    json hyper = json::object();
    json train = json::object();
    EmulateSection emulate;
    MetricsSection metrics;
    PreprocessSection preprocess;
    json paths = json::object();

    /// Preset after the named preset and the explicit overrides are applied.
    [[nodiscard]] sim::Preset preset() const;
    /// Training config: defaults, then `hyper`/`train` sections; `base_hyper` fills what they leave unset.
    [[nodiscard]] train::TrainConfig train_config(const json& base_hyper) const;
    [[nodiscard]] std::string path(const std::string& key, const std::string& fallback = "") const;
    [[nodiscard]] json to_json() const;
};

/// Empty path = all defaults. Unknown keys and schema mismatches raise ConfigError.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const json& j);

/// "1,2,5-8" -> {1, 2, 5, 6, 7, 8}
std::vector<long> parse_index_list(const std::string& text);

}  // namespace cxvae::cli
