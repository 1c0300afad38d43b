#pragma once

// Factual, counterfactual and ablation ensembles from a trained model.

#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cxvae/model.hpp"

namespace cxvae::emu {

enum class Scenario { Factual, Counterfactual, WhiteNoise, FixedW };

std::string scenario_name(Scenario s);

struct EmulationOptions {
    int n_samples = 2000;
    std::uint64_t seed = 1;
    /// Use eps = 0 for the encoder draw (latent at the log-normal median).
    bool freeze_latent_noise = false;
    /// Use unit data-level noise (x_hat = y).
    bool freeze_data_noise = false;
    /// Draw z from the expPS prior under theta_hat instead of the encoder posterior.
    bool prior_only = false;
    /// Times to emulate; empty = all.
    std::vector<Eigen::Index> times;
    /// Site columns to keep; empty = all.
    std::vector<Eigen::Index> sites;
    /// Keep every per-sample theta_hat (n_samples x K per time), not just the mean.
    bool keep_theta_samples = false;
};

struct EmulationEnsemble {
    Scenario scenario = Scenario::Factual;
    std::uint64_t seed = 0;
    std::string source;
    std::vector<Eigen::Index> times;
    std::vector<Eigen::Index> sites;
    std::vector<Matrix> samples;      ///< per time: n_samples x |sites|
    Matrix theta_mean;                ///< |times| x K
    std::vector<Matrix> theta;        ///< per time: n_samples x K (if kept)
};

/// Called once per emulated time with the sample matrix (n_samples x |sites|) and theta_hat
/// (n_samples x K). Lets callers stream output without holding the whole ensemble.
using TimeSink = std::function<void(std::size_t time_pos, Eigen::Index t, const Matrix& samples, const Matrix& theta)>;

/// Per time t and sample s: encode x_t, draw eps, z = exp(log mu + g(c_t) + sigma eps),
/// theta_hat from the fused window (t-1, t, t+1) of the same sample, y = W z, x_hat = eps_data * y.
/// `c` enters both g(c) and the fusion slots; x only enters the encoder.
void emulate_stream(const model::Model& m, const DataTensor& x, const std::vector<double>& c,
                    const EmulationOptions& opt, const TimeSink& sink);

EmulationEnsemble emulate(const model::Model& m, const DataTensor& x, const std::vector<double>& c,
                          const EmulationOptions& opt, Scenario tag = Scenario::Factual);

/// emulate with c_cf in place of the factual condition; x (hence mu, sigma) unchanged.
EmulationEnsemble counterfactual(const model::Model& m, const DataTensor& x, const std::vector<double>& c_factual,
                                 const std::vector<double>& c_cf, const EmulationOptions& opt);

enum class AblationMode { WhiteNoise, Fixed };

/// White noise: iid Uniform[min c, max c]; fixed: constant mean(c).
std::vector<double> ablate_condition(const std::vector<double>& c, AblationMode mode, std::uint64_t seed);

/// c -> 1 - c.
std::vector<double> flip_condition(const std::vector<double>& c);

/// Long CSV: time_index,site_id,sample_index,value,scenario.
void write_ensemble_csv(const std::string& path, const EmulationEnsemble& e, const std::vector<long>& site_ids);
/// Little-endian f64 dump (time-major, then sample, then site) with a JSON sidecar `<path>.json`.
void write_ensemble_binary(const std::string& path, const EmulationEnsemble& e, const std::vector<long>& site_ids);
enum class EnsembleFormat { Csv, Binary };

/// Streams an ensemble to disk one time step at a time in either writer's format, so a
/// full-scale run never holds every sample in memory. `site_ids` are the ids of the kept columns.
class EnsembleWriter {
public:
    EnsembleWriter(std::string path, EnsembleFormat format, std::string scenario, std::vector<long> site_ids,
                   std::uint64_t seed = 0, std::string source = "");
    EnsembleWriter(const EnsembleWriter&) = delete;
    EnsembleWriter& operator=(const EnsembleWriter&) = delete;
    ~EnsembleWriter();

    /// samples: n_samples x |site_ids|; every call must use the same n_samples.
    void add(Eigen::Index t, const Matrix& samples);
    /// Flushes and, for the binary format, writes the JSON sidecar.
    void close();

private:
    std::string path_;
    EnsembleFormat format_;
    std::string scenario_;
    std::vector<long> site_ids_;
    std::uint64_t seed_;
    std::string source_;
    std::vector<Eigen::Index> times_;
    Eigen::Index n_samples_ = -1;
    std::unique_ptr<std::ofstream> out_;
};

void write_theta_csv(const std::string& path, const EmulationEnsemble& e);

struct StoredEnsemble {
    std::string scenario;
    std::vector<Eigen::Index> times;
    std::vector<long> site_ids;
    std::vector<Matrix> samples;  ///< per time: n_samples x |site_ids|
};

/// Reads an ensemble written by either writer; binary when `<path>.json` exists.
StoredEnsemble read_ensemble(const std::string& path);

}  // namespace cxvae::emu
