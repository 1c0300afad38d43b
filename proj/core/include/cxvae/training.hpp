#pragma once

// Adam on the negative penalized ELBO, grid search, checkpoints.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cxvae/model.hpp"

namespace cxvae::train {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    model::HyperParams hyper;
    /// Time steps per batch; 0 = all of them when n_t <= 512, else 128.
    int batch_size = 0;
    int epochs = 1000;
    AdamConfig adam;
    std::uint64_t seed = 1;
    /// Write a checkpoint every this many epochs (0 = never) to checkpoint_path.
    int checkpoint_every = 0;
    std::string checkpoint_path;
    /// Freeze the basis weights (the fixed-W ablation).
    bool fixed_w = false;
    int plateau_window = 50;
    double plateau_tol = 1e-4;

    void validate() const;
    [[nodiscard]] int effective_batch(std::size_t n_t) const;
};

struct AdamState {
    Vector m;
    Vector v;
    long step = 0;
};

struct TrainState {
    model::Model model;
    AdamState adam;
    int epoch = 0;  ///< epochs already completed
    std::vector<double> loss_history;
};

struct TrainReport {
    std::vector<double> loss;  ///< mean negative penalized ELBO per epoch
    double seconds = 0.0;
    bool converged = false;
    /// Objective at the final parameters with the evaluation noise stream.
    double final_loss = 0.0;
    std::size_t n_params = 0;
};

struct TrainResult {
    TrainState state;
    TrainReport report;
};

TrainState initial_state(const TrainConfig& cfg, const model::ModelInit& init);

/// Runs epochs state.epoch+1 .. cfg.epochs. Resuming from a saved state reproduces an
/// uninterrupted run bit-for-bit.
TrainResult train(const DataTensor& x, const std::vector<double>& c, const TrainConfig& cfg, TrainState state);

/// Mean negative penalized ELBO over all times with noise from Rng(seed).substream({evaluation}).
double evaluation_loss(const model::Model& m, const DataTensor& x, const std::vector<double>& c, std::uint64_t seed);

/// Plateau rule: relative change over the last `window` epochs below tol.
bool plateaued(const std::vector<double>& loss, int window, double tol);

// --- grid search ------------------------------------------------------------------

struct GridCandidate {
    nlohmann::json delta;
    TrainConfig config;
    double score = 0.0;  ///< final evaluation loss; +inf when aborted
    bool aborted = false;
    std::string message;
};

struct GridResult {
    std::size_t best = 0;
    std::vector<GridCandidate> candidates;
};

/// Applies each JSON delta to `base` (merge patch over the config document), trains, scores
/// by final negative ELBO, returns the argmin (first wins ties).
GridResult grid_search(const DataTensor& x, const std::vector<double>& c, const TrainConfig& base,
                       const std::vector<nlohmann::json>& deltas, const model::ModelInit& init,
                       std::optional<int> epochs_override = std::nullopt);

// --- serialization --------------------------------------------------------------------

nlohmann::json hyper_to_json(const model::HyperParams& h);
model::HyperParams hyper_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& cfg);
/// Unknown keys are rejected with ConfigError.
TrainConfig config_from_json(const nlohmann::json& j);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    TrainState state;
    double final_loss = 0.0;
};

void checkpoint_save(const std::string& path, const TrainConfig& cfg, const TrainState& state, double final_loss);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace cxvae::train
