#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace cxvae::cli {

/// Set by the chosen subcommand's parse callback; main runs it after parsing.
using Action = std::function<int()>;

/// Flags every command accepts.
struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool desk = false;
    std::string out = ".";
};

void add_common(CLI::App& sub, CommonFlags& f);
/// Loads --config, then applies --desk and --seed on top.
RunConfig resolve(const CommonFlags& f);
void ensure_dir(const std::string& dir);

/// true | white-noise | fixed; the ablations are seeded so train and emulate agree.
std::vector<double> condition_for_mode(const std::vector<double>& c, const std::string& mode, std::uint64_t seed);

void add_data_commands(CLI::App& app, Action& action);
void add_model_commands(CLI::App& app, Action& action);
void add_check_commands(CLI::App& app, Action& action);

}  // namespace cxvae::cli
