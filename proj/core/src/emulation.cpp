#include "cxvae/emulation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "cxvae/distributions.hpp"
#include "cxvae/io.hpp"

namespace cxvae::emu {

std::string scenario_name(Scenario s) {
    switch (s) {
        case Scenario::Factual: return "factual";
        case Scenario::Counterfactual: return "counterfactual";
        case Scenario::WhiteNoise: return "white-noise";
        case Scenario::FixedW: return "fixed-W";
    }
    return "unknown";
}

namespace {

constexpr std::uint64_t kLatentStream = 0;
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kPriorStream = 2;

}  // namespace

void emulate_stream(const model::Model& m, const DataTensor& x, const std::vector<double>& c,
                    const EmulationOptions& opt, const TimeSink& sink) {
    const auto& h = m.hyper;
    const Eigen::Index n_t = x.rows();
    const Eigen::Index K = h.K;
    if (n_t == 0) throw DomainError("emulation needs at least one time step");
    if (x.cols() != h.n_sites) throw DomainError("data columns differ from the model's n_sites");
    if (static_cast<Eigen::Index>(c.size()) != n_t) throw DomainError("condition length differs from n_t");
    if (opt.n_samples < 1) throw DomainError("n_samples must be >= 1");
    for (double v : c)
        if (!std::isfinite(v)) throw DomainError("condition values must be finite");

    std::vector<Eigen::Index> times = opt.times;
    if (times.empty()) {
        times.resize(static_cast<std::size_t>(n_t));
        std::iota(times.begin(), times.end(), Eigen::Index{0});
    }
    std::vector<Eigen::Index> sites = opt.sites;
    if (sites.empty()) {
        sites.resize(static_cast<std::size_t>(h.n_sites));
        std::iota(sites.begin(), sites.end(), Eigen::Index{0});
    }
    for (auto t : times)
        if (t < 0 || t >= n_t) throw DomainError("emulation time index out of range");
    for (auto j : sites)
        if (j < 0 || j >= h.n_sites) throw DomainError("emulation site index out of range");

    auto clamp_t = [n_t](Eigen::Index t) { return std::clamp<Eigen::Index>(t, 0, n_t - 1); };
    std::vector<Eigen::Index> needed;
    for (auto t : times)
        for (auto d : {-1, 0, 1}) needed.push_back(clamp_t(t + d));
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    std::map<Eigen::Index, Eigen::Index> row_of;
    for (std::size_t i = 0; i < needed.size(); ++i) row_of[needed[i]] = static_cast<Eigen::Index>(i);

    const model::ForwardPass fp = model::encode_times(m, x, c, needed);
    const Matrix w = m.basis_weights();
    Matrix w_sel(static_cast<Eigen::Index>(sites.size()), K);
    for (std::size_t i = 0; i < sites.size(); ++i) w_sel.row(static_cast<Eigen::Index>(i)) = w.row(sites[i]);
    const Rng root(opt.seed);
    const dist::LogLaplaceParams noise{h.alpha0};
    const Eigen::Index S = opt.n_samples;

    // Latent draws of every sample at time tau; identical whichever window asks for them.
    auto latent = [&](Eigen::Index tau) {
        const Eigen::Index r = row_of.at(tau);
        Matrix z(S, K);
        for (Eigen::Index s = 0; s < S; ++s) {
            Rng rs = root.substream({static_cast<std::uint64_t>(tau), static_cast<std::uint64_t>(s), kLatentStream});
            for (Eigen::Index k = 0; k < K; ++k) {
                const double eps = opt.freeze_latent_noise ? 0.0 : rs.normal();
                const double lz = std::log(fp.mu(r, k)) + fp.g(r, k) + fp.sigma(r, k) * eps;
                z(s, k) = std::exp(lz);
                if (!std::isfinite(z(s, k)) || !(z(s, k) > 0.0))
                    throw NumericalError("latent draw overflowed at time " + std::to_string(tau) + ", coordinate " +
                                         std::to_string(k));
            }
        }
        return z;
    };

    for (std::size_t pos = 0; pos < times.size(); ++pos) {
        const Eigen::Index t = times[pos];
        const Eigen::Index tp = clamp_t(t - 1), tn = clamp_t(t + 1);
        const Matrix z_cur = latent(t);
        const Matrix z_prev = tp == t ? z_cur : latent(tp);
        const Matrix z_next = tn == t ? z_cur : latent(tn);
        Matrix windows(S, 6 * K);
        auto fill = [&](const Matrix& z, Eigen::Index tau, Eigen::Index block) {
            const double cv = h.fuse_condition ? c[static_cast<std::size_t>(tau)] : 0.0;
            for (Eigen::Index s = 0; s < S; ++s)
                for (Eigen::Index k = 0; k < K; ++k) {
                    windows(s, block * 2 * K + 2 * k) = z(s, k);
                    windows(s, block * 2 * K + 2 * k + 1) = cv;
                }
        };
        fill(z_prev, tp, 0);
        fill(z_cur, t, 1);
        fill(z_next, tn, 2);
        const Matrix xi = model::decode_xi_batch(m, windows);
        const Matrix theta = xi * m.phi.transpose();

        Matrix z_use = z_cur;
        if (opt.prior_only) {
            for (Eigen::Index s = 0; s < S; ++s) {
                Rng rp = root.substream({static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(s), kPriorStream});
                for (Eigen::Index k = 0; k < K; ++k) z_use(s, k) = dist::expps_draw(rp, theta(s, k));
            }
        }
        Matrix out = z_use * w_sel.transpose();
        if (!opt.freeze_data_noise) {
            for (Eigen::Index s = 0; s < S; ++s) {
                Rng rd = root.substream({static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(s), kDataStream});
                for (std::size_t i = 0; i < sites.size(); ++i) {
                    rd.set_counter(static_cast<std::uint64_t>(sites[i]));
                    out(s, static_cast<Eigen::Index>(i)) *= dist::loglaplace_draw(rd, noise);
                }
            }
        }
        sink(pos, t, out, theta);
    }
}

EmulationEnsemble emulate(const model::Model& m, const DataTensor& x, const std::vector<double>& c,
                          const EmulationOptions& opt, Scenario tag) {
    EmulationEnsemble e;
    e.scenario = tag;
    e.seed = opt.seed;
    e.times = opt.times;
    if (e.times.empty()) {
        e.times.resize(static_cast<std::size_t>(x.rows()));
        std::iota(e.times.begin(), e.times.end(), Eigen::Index{0});
    }
    e.sites = opt.sites;
    if (e.sites.empty()) {
        e.sites.resize(static_cast<std::size_t>(m.hyper.n_sites));
        std::iota(e.sites.begin(), e.sites.end(), Eigen::Index{0});
    }
    e.samples.resize(e.times.size());
    e.theta_mean.resize(static_cast<Eigen::Index>(e.times.size()), m.hyper.K);
    if (opt.keep_theta_samples) e.theta.resize(e.times.size());
    emulate_stream(m, x, c, opt, [&](std::size_t pos, Eigen::Index, const Matrix& s, const Matrix& th) {
        e.samples[pos] = s;
        e.theta_mean.row(static_cast<Eigen::Index>(pos)) = th.colwise().mean();
        if (opt.keep_theta_samples) e.theta[pos] = th;
    });
    return e;
}

EmulationEnsemble counterfactual(const model::Model& m, const DataTensor& x, const std::vector<double>& c_factual,
                                 const std::vector<double>& c_cf, const EmulationOptions& opt) {
    if (c_cf.size() != c_factual.size()) throw DomainError("counterfactual condition length differs from the factual one");
    return emulate(m, x, c_cf, opt, Scenario::Counterfactual);
}

std::vector<double> ablate_condition(const std::vector<double>& c, AblationMode mode, std::uint64_t seed) {
    if (c.empty()) return {};
    const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
    std::vector<double> out(c.size());
    if (mode == AblationMode::Fixed) {
        const double mean = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
        std::fill(out.begin(), out.end(), mean);
        return out;
    }
    Rng rng(seed);
    for (auto& v : out) v = *lo + (*hi - *lo) * rng.uniform();
    return out;
}

std::vector<double> flip_condition(const std::vector<double>& c) {
    std::vector<double> out(c.size());
    std::transform(c.begin(), c.end(), out.begin(), [](double v) { return 1.0 - v; });
    return out;
}

namespace {

std::vector<long> kept_ids(const EmulationEnsemble& e, const std::vector<long>& site_ids) {
    std::vector<long> ids;
    for (auto j : e.sites) ids.push_back(site_ids.at(static_cast<std::size_t>(j)));
    return ids;
}

void write_all(const std::string& path, EnsembleFormat f, const EmulationEnsemble& e, const std::vector<long>& site_ids) {
    EnsembleWriter w(path, f, scenario_name(e.scenario), kept_ids(e, site_ids), e.seed, e.source);
    for (std::size_t p = 0; p < e.times.size(); ++p) w.add(e.times[p], e.samples[p]);
    w.close();
}

}  // namespace

EnsembleWriter::EnsembleWriter(std::string path, EnsembleFormat format, std::string scenario, std::vector<long> site_ids,
                               std::uint64_t seed, std::string source)
    : path_(std::move(path)),
      format_(format),
      scenario_(std::move(scenario)),
      site_ids_(std::move(site_ids)),
      seed_(seed),
      source_(std::move(source)) {
    const auto mode = format_ == EnsembleFormat::Binary ? std::ios::binary | std::ios::trunc : std::ios::trunc;
    out_ = std::make_unique<std::ofstream>(path_, mode);
    if (!*out_) throw IoError("cannot open '" + path_ + "' for writing");
    if (format_ == EnsembleFormat::Csv) *out_ << "time_index,site_id,sample_index,value,scenario\n";
}

EnsembleWriter::~EnsembleWriter() {
    try {
        close();
    } catch (...) {
    }
}

void EnsembleWriter::add(Eigen::Index t, const Matrix& s) {
    if (!out_) throw IoError("'" + path_ + "' is already closed");
    if (s.cols() != static_cast<Eigen::Index>(site_ids_.size()))
        throw DomainError("ensemble writer: sample matrix has " + std::to_string(s.cols()) + " columns, expected " +
                          std::to_string(site_ids_.size()));
    if (n_samples_ < 0) n_samples_ = s.rows();
    if (s.rows() != n_samples_) throw DomainError("ensemble writer: sample count changed between time steps");
    times_.push_back(t);
    auto& out = *out_;
    if (format_ == EnsembleFormat::Csv) {
        for (Eigen::Index i = 0; i < s.cols(); ++i)
            for (Eigen::Index r = 0; r < s.rows(); ++r)
                out << t << ',' << site_ids_[static_cast<std::size_t>(i)] << ',' << r << ',' << io::fmt(s(r, i)) << ','
                    << scenario_ << '\n';
    } else {
        std::vector<char> buf(static_cast<std::size_t>(s.size()) * 8);
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < s.rows(); ++r)
            for (Eigen::Index i = 0; i < s.cols(); ++i) {
                const auto bits = std::bit_cast<std::uint64_t>(s(r, i));
                for (int b = 0; b < 8; ++b) buf[k++] = static_cast<char>(bits >> (8 * b));
            }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw IoError("write failed for '" + path_ + "'");
}

void EnsembleWriter::close() {
    if (!out_) return;
    out_->close();
    const bool ok = !out_->fail();
    out_.reset();
    if (!ok) throw IoError("write failed for '" + path_ + "'");
    if (format_ == EnsembleFormat::Binary) {
        io::json side{{"layout", "time-major, then sample, then site"},
                      {"dtype", "float64-le"},
                      {"scenario", scenario_},
                      {"seed", seed_},
                      {"source", source_},
                      {"times", times_},
                      {"site_ids", site_ids_},
                      {"n_samples", std::max<Eigen::Index>(n_samples_, 0)}};
        io::write_json(path_ + ".json", side);
    }
}

void write_ensemble_csv(const std::string& path, const EmulationEnsemble& e, const std::vector<long>& site_ids) {
    write_all(path, EnsembleFormat::Csv, e, site_ids);
}

void write_ensemble_binary(const std::string& path, const EmulationEnsemble& e, const std::vector<long>& site_ids) {
    write_all(path, EnsembleFormat::Binary, e, site_ids);
}

void write_theta_csv(const std::string& path, const EmulationEnsemble& e) {
    io::Table t;
    t.header.push_back("time_index");
    for (Eigen::Index k = 0; k < e.theta_mean.cols(); ++k) t.header.push_back("theta_" + std::to_string(k));
    for (std::size_t p = 0; p < e.times.size(); ++p) {
        std::vector<std::string> row{std::to_string(e.times[p])};
        for (Eigen::Index k = 0; k < e.theta_mean.cols(); ++k) row.push_back(io::fmt(e.theta_mean(static_cast<Eigen::Index>(p), k)));
        t.rows.push_back(std::move(row));
    }
    io::write_table(path, t);
}

StoredEnsemble read_ensemble(const std::string& path) {
    StoredEnsemble e;
    if (std::filesystem::exists(path + ".json")) {
        const auto side = io::read_json(path + ".json");
        try {
            e.scenario = side.at("scenario").get<std::string>();
            e.times = side.at("times").get<std::vector<Eigen::Index>>();
            e.site_ids = side.at("site_ids").get<std::vector<long>>();
        } catch (const std::exception& ex) {
            throw IoError("'" + path + ".json' is not an ensemble sidecar: " + ex.what());
        }
        const auto n_samples = side.value("n_samples", Eigen::Index{0});
        const auto n_sites = static_cast<Eigen::Index>(e.site_ids.size());
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path + "'");
        for (std::size_t p = 0; p < e.times.size(); ++p) {
            Matrix m(n_samples, n_sites);
            for (Eigen::Index r = 0; r < n_samples; ++r)
                for (Eigen::Index i = 0; i < n_sites; ++i) {
                    unsigned char buf[8];
                    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw IoError("'" + path + "' is truncated");
                    std::uint64_t bits = 0;
                    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
                    m(r, i) = std::bit_cast<double>(bits);
                }
            e.samples.push_back(std::move(m));
        }
        return e;
    }

    const auto t = io::read_table(path);
    const std::size_t ct = t.column("time_index"), cs = t.column("site_id"), cr = t.column("sample_index"),
                      cv = t.column("value"), cn = t.column("scenario");
    std::map<Eigen::Index, std::size_t> time_pos;
    std::map<long, Eigen::Index> site_pos;
    Eigen::Index n_samples = 0;
    for (const auto& row : t.rows) {
        const auto tt = static_cast<Eigen::Index>(io::parse_long(row.at(ct), path + ": time_index"));
        const long id = io::parse_long(row.at(cs), path + ": site_id");
        const auto r = static_cast<Eigen::Index>(io::parse_long(row.at(cr), path + ": sample_index"));
        if (r < 0) throw IoError(path + ": negative sample_index");
        if (!time_pos.contains(tt)) {
            time_pos[tt] = e.times.size();
            e.times.push_back(tt);
        }
        if (!site_pos.contains(id)) {
            site_pos[id] = static_cast<Eigen::Index>(e.site_ids.size());
            e.site_ids.push_back(id);
        }
        n_samples = std::max(n_samples, r + 1);
        if (e.scenario.empty()) e.scenario = row.at(cn);
    }
    e.samples.assign(e.times.size(), Matrix::Constant(n_samples, static_cast<Eigen::Index>(e.site_ids.size()),
                                                      std::numeric_limits<double>::quiet_NaN()));
    for (const auto& row : t.rows) {
        const auto p = time_pos.at(static_cast<Eigen::Index>(io::parse_long(row.at(ct), "")));
        const auto i = site_pos.at(io::parse_long(row.at(cs), ""));
        const auto r = static_cast<Eigen::Index>(io::parse_long(row.at(cr), ""));
        e.samples[p](r, i) = io::parse_double(row.at(cv), path + ": value");
    }
    for (const auto& m : e.samples)
        if (m.hasNaN()) throw IoError("'" + path + "' does not hold a complete time x site x sample ensemble");
    return e;
}

}  // namespace cxvae::emu
