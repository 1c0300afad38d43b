#include <filesystem>

#include "commands.hpp"
#include "cxvae/emulation.hpp"
#include "cxvae/error.hpp"

namespace cxvae::cli {

void add_common(CLI::App& sub, CommonFlags& f) {
    sub.add_option("--config", f.config, "Run configuration (JSON)");
    sub.add_option("--seed", f.seed, "Seed; overrides the config");
    sub.add_option("--out", f.out, "Output directory")->capture_default_str();
}

RunConfig resolve(const CommonFlags& f) {
    RunConfig rc = load_run_config(f.config);
    if (f.desk) rc.data.preset = "desk";
    if (f.seed) rc.seed = *f.seed;
    return rc;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

std::vector<double> condition_for_mode(const std::vector<double>& c, const std::string& mode, std::uint64_t seed) {
    if (mode == "true") return c;
    if (mode == "white-noise") return emu::ablate_condition(c, emu::AblationMode::WhiteNoise, seed);
    if (mode == "fixed") return emu::ablate_condition(c, emu::AblationMode::Fixed, seed);
    throw ConfigError("condition mode must be true, white-noise or fixed, got '" + mode + "'");
}

}  // namespace cxvae::cli
