#include "cxvae/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "cxvae/io.hpp"

namespace cxvae::train {

using nlohmann::json;

namespace {

constexpr std::uint64_t kNoiseStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kEvalStream = 3;

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

}  // namespace

void TrainConfig::validate() const {
    hyper.validate();
    if (batch_size < 0) throw ConfigError("batch_size must be >= 1 (or 0 for automatic)");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(adam.learning_rate > 0.0) || !(adam.eps > 0.0)) throw ConfigError("Adam learning rate and eps must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (checkpoint_every > 0 && checkpoint_path.empty()) throw ConfigError("checkpoint_every needs checkpoint_path");
    if (plateau_window < 1) throw ConfigError("plateau_window must be >= 1");
}

int TrainConfig::effective_batch(std::size_t n_t) const {
    if (batch_size > 0) return std::min<int>(batch_size, static_cast<int>(n_t));
    return n_t <= 512 ? static_cast<int>(n_t) : 128;
}

TrainState initial_state(const TrainConfig& cfg, const model::ModelInit& init) {
    cfg.validate();
    TrainState s;
    s.model = model::make_model(cfg.hyper, init);
    const auto n = s.model.params.values.size();
    s.adam.m = Vector::Zero(n);
    s.adam.v = Vector::Zero(n);
    return s;
}

bool plateaued(const std::vector<double>& loss, int window, double tol) {
    if (static_cast<int>(loss.size()) <= window) return false;
    const double now = loss.back();
    const double then = loss[loss.size() - 1 - static_cast<std::size_t>(window)];
    return std::abs(now - then) <= tol * std::max(std::abs(then), 1e-12);
}

double evaluation_loss(const model::Model& m, const DataTensor& x, const std::vector<double>& c, std::uint64_t seed) {
    model::ElboInputs in;
    in.x = &x;
    in.c = &c;
    in.batch.resize(static_cast<std::size_t>(x.rows()));
    std::iota(in.batch.begin(), in.batch.end(), Eigen::Index{0});
    in.noise = Rng(seed).substream({kEvalStream});
    return -model::evaluate_elbo(m, in).total / static_cast<double>(x.rows());
}

TrainResult train(const DataTensor& x, const std::vector<double>& c, const TrainConfig& cfg, TrainState state) {
    cfg.validate();
    const auto n_t = static_cast<std::size_t>(x.rows());
    if (n_t == 0) throw DomainError("no time steps to train on");
    if (x.cols() != cfg.hyper.n_sites) throw DomainError("data columns differ from n_sites");
    if (c.size() != n_t) throw DomainError("condition length differs from the number of time steps");
    if (!(x.minCoeff() > 0.0) || !x.allFinite()) throw DomainError("training data must be finite and > 0");
    auto& params = state.model.params;
    if (state.adam.m.size() != params.values.size()) {
        state.adam.m = Vector::Zero(params.values.size());
        state.adam.v = Vector::Zero(params.values.size());
    }

    const auto t0 = std::chrono::steady_clock::now();
    const int batch = cfg.effective_batch(n_t);
    const auto& v_entry = params.layout.at("basis.V");
    const Rng root(cfg.seed);

    for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<Eigen::Index> order(n_t);
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        if (batch < static_cast<int>(n_t)) {
            Rng sh = root.substream({kShuffleStream, static_cast<std::uint64_t>(epoch)});
            shuffle(std::span<Eigen::Index>(order), sh);
        }
        const Rng noise = root.substream({kNoiseStream, static_cast<std::uint64_t>(epoch)});
        double epoch_sum = 0.0;
        std::size_t b_index = 0;
        for (std::size_t start = 0; start < n_t; start += static_cast<std::size_t>(batch), ++b_index) {
            const std::size_t stop = std::min(n_t, start + static_cast<std::size_t>(batch));
            model::ElboInputs in;
            in.x = &x;
            in.c = &c;
            in.batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(stop));
            std::sort(in.batch.begin(), in.batch.end());
            in.noise = noise;
            const double bs = static_cast<double>(in.batch.size());
            const model::Model& m = state.model;
            ad::Loss loss = [&m, &in, bs](ad::Tape& tape, const ad::Var& p) {
                return ad::scale(model::penalized_elbo(tape, p, m, in), -1.0 / bs);
            };
            ad::Evaluation ev;
            try {
                ev = ad::evaluate(loss, params.values, true);
            } catch (const std::exception& e) {
                throw NumericalError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b_index) + ": " + e.what());
            }
            if (!std::isfinite(ev.value) || !ev.gradient.allFinite())
                throw NumericalError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b_index) + ": non-finite loss or gradient");
            epoch_sum += ev.value * bs;
            Vector g = std::move(ev.gradient);
            if (cfg.fixed_w) g.segment(static_cast<Eigen::Index>(v_entry.offset), static_cast<Eigen::Index>(v_entry.size())).setZero();

            auto& a = state.adam;
            ++a.step;
            const double b1 = cfg.adam.beta1, b2 = cfg.adam.beta2;
            a.m = b1 * a.m + (1.0 - b1) * g;
            a.v = b2 * a.v + (1.0 - b2) * g.cwiseProduct(g);
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(a.step));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(a.step));
            for (Eigen::Index i = 0; i < params.values.size(); ++i) {
                const double mh = a.m(i) / c1;
                const double vh = a.v(i) / c2;
                params.values(i) -= cfg.adam.learning_rate * mh / (std::sqrt(vh) + cfg.adam.eps);
            }
            if (!params.values.allFinite())
                throw NumericalError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b_index) + ": parameters became non-finite");
        }
        state.loss_history.push_back(epoch_sum / static_cast<double>(n_t));
        state.epoch = epoch;
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
            checkpoint_save(cfg.checkpoint_path, cfg, state, evaluation_loss(state.model, x, c, cfg.seed));
    }

    TrainResult r;
    r.report.loss = state.loss_history;
    r.report.converged = plateaued(state.loss_history, cfg.plateau_window, cfg.plateau_tol);
    r.report.final_loss = evaluation_loss(state.model, x, c, cfg.seed);
    r.report.n_params = static_cast<std::size_t>(params.values.size());
    r.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.state = std::move(state);
    return r;
}

// --- grid search ------------------------------------------------------------------------

GridResult grid_search(const DataTensor& x, const std::vector<double>& c, const TrainConfig& base,
                       const std::vector<json>& deltas, const model::ModelInit& init, std::optional<int> epochs_override) {
    if (deltas.empty()) throw ConfigError("grid search needs at least one candidate");
    GridResult out;
    const json base_doc = config_to_json(base);
    bool any = false;
    for (const auto& d : deltas) {
        GridCandidate cand;
        cand.delta = d;
        json doc = base_doc;
        doc.merge_patch(d);
        cand.config = config_from_json(doc);
        if (epochs_override) cand.config.epochs = *epochs_override;
        cand.config.checkpoint_every = 0;
        try {
            auto r = train(x, c, cand.config, initial_state(cand.config, init));
            cand.score = r.report.final_loss;
            if (!std::isfinite(cand.score)) throw NumericalError("non-finite final loss");
            any = true;
        } catch (const NumericalError& e) {
            cand.aborted = true;
            cand.score = std::numeric_limits<double>::infinity();
            cand.message = e.what();
        } catch (const DomainError& e) {
            cand.aborted = true;
            cand.score = std::numeric_limits<double>::infinity();
            cand.message = e.what();
        }
        out.candidates.push_back(std::move(cand));
    }
    if (!any) throw NumericalError("every grid-search candidate aborted");
    for (std::size_t i = 1; i < out.candidates.size(); ++i)
        if (out.candidates[i].score < out.candidates[out.best].score) out.best = i;
    return out;
}

// --- serialization ------------------------------------------------------------------------

json hyper_to_json(const model::HyperParams& h) {
    return json{{"n_sites", h.n_sites},
                {"K", h.K},
                {"M", h.M},
                {"alpha0", h.alpha0},
                {"alpha", h.alpha},
                {"rho0", h.rho0},
                {"L", h.L},
                {"encoder_hidden", h.encoder_hidden},
                {"channels", h.channels},
                {"kernel_width", h.kernel_width},
                {"pool", h.pool},
                {"penalty", h.penalty == model::PenaltyMode::Signed ? "signed" : "absolute"},
                {"fuse_condition", h.fuse_condition}};
}

model::HyperParams hyper_from_json(const json& j) {
    const std::string where = "hyper";
    reject_unknown(j,
                   {"n_sites", "K", "M", "alpha0", "alpha", "rho0", "L", "encoder_hidden", "channels", "kernel_width",
                    "pool", "penalty", "fuse_condition"},
                   where);
    model::HyperParams h;
    read_opt(j, "n_sites", h.n_sites, where);
    read_opt(j, "K", h.K, where);
    read_opt(j, "M", h.M, where);
    read_opt(j, "alpha0", h.alpha0, where);
    read_opt(j, "alpha", h.alpha, where);
    read_opt(j, "rho0", h.rho0, where);
    read_opt(j, "L", h.L, where);
    read_opt(j, "encoder_hidden", h.encoder_hidden, where);
    read_opt(j, "channels", h.channels, where);
    read_opt(j, "kernel_width", h.kernel_width, where);
    read_opt(j, "pool", h.pool, where);
    read_opt(j, "fuse_condition", h.fuse_condition, where);
    if (j.contains("penalty")) {
        const auto s = j.at("penalty").get<std::string>();
        if (s == "signed")
            h.penalty = model::PenaltyMode::Signed;
        else if (s == "absolute")
            h.penalty = model::PenaltyMode::Absolute;
        else
            throw ConfigError("hyper.penalty must be 'signed' or 'absolute'");
    }
    return h;
}

json config_to_json(const TrainConfig& cfg) {
    return json{{"hyper", hyper_to_json(cfg.hyper)},
                {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},
                {"learning_rate", cfg.adam.learning_rate},
                {"beta1", cfg.adam.beta1},
                {"beta2", cfg.adam.beta2},
                {"adam_eps", cfg.adam.eps},
                {"seed", cfg.seed},
                {"checkpoint_every", cfg.checkpoint_every},
                {"checkpoint_path", cfg.checkpoint_path},
                {"fixed_w", cfg.fixed_w},
                {"plateau_window", cfg.plateau_window},
                {"plateau_tol", cfg.plateau_tol}};
}

TrainConfig config_from_json(const json& j) {
    const std::string where = "train";
    reject_unknown(j,
                   {"hyper", "batch_size", "epochs", "learning_rate", "beta1", "beta2", "adam_eps", "seed",
                    "checkpoint_every", "checkpoint_path", "fixed_w", "plateau_window", "plateau_tol"},
                   where);
    TrainConfig cfg;
    if (j.contains("hyper")) cfg.hyper = hyper_from_json(j.at("hyper"));
    read_opt(j, "batch_size", cfg.batch_size, where);
    read_opt(j, "epochs", cfg.epochs, where);
    read_opt(j, "learning_rate", cfg.adam.learning_rate, where);
    read_opt(j, "beta1", cfg.adam.beta1, where);
    read_opt(j, "beta2", cfg.adam.beta2, where);
    read_opt(j, "adam_eps", cfg.adam.eps, where);
    read_opt(j, "seed", cfg.seed, where);
    read_opt(j, "checkpoint_every", cfg.checkpoint_every, where);
    read_opt(j, "checkpoint_path", cfg.checkpoint_path, where);
    read_opt(j, "fixed_w", cfg.fixed_w, where);
    read_opt(j, "plateau_window", cfg.plateau_window, where);
    read_opt(j, "plateau_tol", cfg.plateau_tol, where);
    return cfg;
}

namespace {

json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", io::encode_doubles({m.data(), static_cast<std::size_t>(m.size())})}};
}

Matrix matrix_from_json(const json& j) {
    const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
    const auto d = io::decode_doubles(j.at("data").get<std::string>());
    if (static_cast<Eigen::Index>(d.size()) != r * c) throw IoError("checkpoint matrix has the wrong size");
    return Eigen::Map<const Matrix>(d.data(), r, c);
}

Vector vector_from_b64(const std::string& s, Eigen::Index n, const char* what) {
    const auto d = io::decode_doubles(s);
    if (static_cast<Eigen::Index>(d.size()) != n) throw IoError(std::string("checkpoint ") + what + " has the wrong length");
    return Eigen::Map<const Vector>(d.data(), n);
}

}  // namespace

void checkpoint_save(const std::string& path, const TrainConfig& cfg, const TrainState& state, double final_loss) {
    const auto& p = state.model.params;
    json layout = json::array();
    for (const auto& e : p.layout.entries())
        layout.push_back({{"name", e.name}, {"offset", e.offset}, {"rows", e.rows}, {"cols", e.cols}});
    json hyper = hyper_to_json(state.model.hyper);
    hyper["phi"] = matrix_to_json(state.model.phi);
    const auto span_of = [](const Vector& v) { return std::span<const double>(v.data(), static_cast<std::size_t>(v.size())); };
    const double fl[1] = {final_loss};
    json j{{"format_version", kCheckpointVersion},
           {"hyperparams", hyper},
           {"param_layout", layout},
           {"params", io::encode_doubles(span_of(p.values))},
           {"adam_state", {{"step", state.adam.step}, {"m", io::encode_doubles(span_of(state.adam.m))}, {"v", io::encode_doubles(span_of(state.adam.v))}}},
           {"rng_state", {{"seed", cfg.seed}, {"epoch", state.epoch}}},
           {"training_meta",
            {{"config", config_to_json(cfg)},
             {"epochs_completed", state.epoch},
             {"loss_history", io::encode_doubles(state.loss_history)},
             {"final_loss", io::encode_doubles(fl)},
             {"n_params", p.values.size()}}}};
    io::write_json(path, j);
}

Checkpoint checkpoint_load(const std::string& path) {
    const json j = io::read_json(path);
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kCheckpointVersion)
            throw IoError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
        Checkpoint ck;
        json hyper = j.at("hyperparams");
        const Matrix phi = matrix_from_json(hyper.at("phi"));
        hyper.erase("phi");
        const auto& meta = j.at("training_meta");
        ck.config = config_from_json(meta.at("config"));
        ck.config.hyper = hyper_from_json(hyper);
        ck.config.seed = j.at("rng_state").at("seed").get<std::uint64_t>();

        auto& m = ck.state.model;
        m.hyper = ck.config.hyper;
        m.phi = phi;
        m.params.layout = model::make_layout(m.hyper);
        ad::ParamLayout stored;
        for (const auto& e : j.at("param_layout"))
            stored.add(e.at("name").get<std::string>(), e.at("rows").get<Eigen::Index>(), e.at("cols").get<Eigen::Index>());
        if (!(stored == m.params.layout)) throw IoError("checkpoint parameter layout does not match its hyperparameters");
        if (phi.rows() != m.hyper.K || phi.cols() != m.hyper.M) throw IoError("checkpoint Phi has the wrong shape");
        const auto n = static_cast<Eigen::Index>(m.params.layout.size());
        m.params.values = vector_from_b64(j.at("params").get<std::string>(), n, "params");
        const auto& a = j.at("adam_state");
        ck.state.adam.step = a.at("step").get<long>();
        ck.state.adam.m = vector_from_b64(a.at("m").get<std::string>(), n, "adam m");
        ck.state.adam.v = vector_from_b64(a.at("v").get<std::string>(), n, "adam v");
        ck.state.epoch = j.at("rng_state").at("epoch").get<int>();
        ck.state.loss_history = io::decode_doubles(meta.at("loss_history").get<std::string>());
        const auto fl = io::decode_doubles(meta.at("final_loss").get<std::string>());
        if (fl.size() != 1) throw IoError("checkpoint final_loss is malformed");
        ck.final_loss = fl[0];
        return ck;
    } catch (const json::exception& e) {
        throw IoError("'" + path + "' is not a valid checkpoint: " + e.what());
    } catch (const ConfigError& e) {
        throw IoError("'" + path + "' is not a valid checkpoint: " + e.what());
    }
}

}  // namespace cxvae::train
