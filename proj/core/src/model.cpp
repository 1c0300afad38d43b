#include "cxvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "cxvae/distributions.hpp"

namespace cxvae::model {

using ad::Tape;
using ad::Var;

void HyperParams::validate() const {
    if (n_sites < 1) throw DomainError("n_sites must be >= 1");
    if (K < 1 || M < 1) throw DomainError("K and M must be >= 1");
    if (M > K) throw DomainError("M must not exceed K");
    if (!(alpha0 > 0.0)) throw DomainError("alpha0 must be positive");
    if (alpha != 0.5) throw DomainError("alpha is fixed at 1/2");
    if (!(rho0 >= 0.0)) throw DomainError("rho0 must be >= 0");
    if (L < 1) throw DomainError("L must be >= 1");
    for (int w : encoder_hidden)
        if (w < 1) throw DomainError("encoder hidden widths must be >= 1");
    if (channels < 1 || kernel_width < 1 || kernel_width % 2 == 0)
        throw DomainError("CNN needs >= 1 channel and an odd kernel width");
    if (pool < 1 || pool > 2 * K) throw DomainError("pool length must lie in [1, 2K]");
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw DomainError("softplus inverse requires y > 0");
    // log(exp(y) - 1) = y + log(1 - exp(-y))
    return y + std::log(-std::expm1(-y));
}

Matrix Model::basis_weights() const { return block("basis.V").unaryExpr(&softplus); }

ad::ParamLayout make_layout(const HyperParams& h) {
    h.validate();
    ad::ParamLayout layout;
    Eigen::Index in = h.n_sites;
    for (std::size_t i = 0; i < h.encoder_hidden.size(); ++i) {
        layout.add("enc.w" + std::to_string(i), in, h.encoder_hidden[i]);
        layout.add("enc.b" + std::to_string(i), 1, h.encoder_hidden[i]);
        in = h.encoder_hidden[i];
    }
    layout.add("enc.w_out", in, 2 * h.K);
    layout.add("enc.b_out", 1, 2 * h.K);
    layout.add("cond.A", h.K, 1);
    layout.add("xi.conv_w", h.channels, 3 * h.kernel_width);
    layout.add("xi.conv_b", 1, h.channels);
    layout.add("xi.dense_w", static_cast<Eigen::Index>(h.channels) * ((2 * h.K) / h.pool), h.M);
    layout.add("xi.dense_b", 1, h.M);
    layout.add("basis.V", h.n_sites, h.K);
    return layout;
}

Matrix xi_basis(int K, int M, const KnotGrid* knots) {
    if (M < 1 || M > K) throw DomainError("xi basis needs 1 <= M <= K");
    Matrix phi(K, M);
    if (knots != nullptr && static_cast<int>(knots->size()) == K) {
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(M))));
        if (side * side != M) throw DomainError("with a knot lattice M must be a perfect square");
        double xmin = knots->knots[0].x, xmax = xmin, ymin = knots->knots[0].y, ymax = ymin;
        for (const auto& p : knots->knots) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
        const double h = knots->spacing > 0.0 ? knots->spacing : std::max(xmax - xmin, 1.0);
        auto lin = [side](double lo, double hi, int i) {
            return side == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (side - 1);
        };
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c) {
                const Point ctr{lin(xmin, xmax, c), lin(ymin, ymax, r)};
                for (int k = 0; k < K; ++k) {
                    const double d = distance(knots->knots[k], ctr);
                    phi(k, r * side + c) = std::exp(-0.5 * d * d / (h * h));
                }
            }
        return phi;
    }
    for (int m = 0; m < M; ++m) {
        const double ctr = M == 1 ? 0.5 * (K - 1) : static_cast<double>(K - 1) * m / (M - 1);
        for (int k = 0; k < K; ++k) {
            const double d = k - ctr;
            phi(k, m) = std::exp(-0.5 * d * d);
        }
    }
    return phi;
}

Model make_model(const HyperParams& h, const ModelInit& init) {
    Model m;
    m.hyper = h;
    m.params.layout = make_layout(h);
    m.params.values = Vector::Zero(static_cast<Eigen::Index>(m.params.layout.size()));
    m.phi = xi_basis(h.K, h.M, init.knots ? &*init.knots : nullptr);

    Rng rng = Rng(init.seed).substream({0x1417});
    auto uniform_fill = [&rng](Eigen::Map<Matrix> blk, double bound) {
        for (Eigen::Index j = 0; j < blk.cols(); ++j)
            for (Eigen::Index i = 0; i < blk.rows(); ++i) blk(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    };
    Eigen::Index fan_in = h.n_sites;
    for (std::size_t i = 0; i < h.encoder_hidden.size(); ++i) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        uniform_fill(m.params.block("enc.w" + std::to_string(i)), bound);
        uniform_fill(m.params.block("enc.b" + std::to_string(i)), bound);
        fan_in = h.encoder_hidden[i];
    }
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        uniform_fill(m.params.block("enc.w_out"), bound);
        uniform_fill(m.params.block("enc.b_out"), bound);
    }
    {
        const double bound = 1.0 / std::sqrt(3.0 * h.kernel_width);
        uniform_fill(m.params.block("xi.conv_w"), bound);
        uniform_fill(m.params.block("xi.conv_b"), bound);
    }
    {
        const auto& e = m.params.layout.at("xi.dense_w");
        const double bound = 1.0 / std::sqrt(static_cast<double>(e.rows));
        uniform_fill(m.params.block("xi.dense_w"), bound);
        uniform_fill(m.params.block("xi.dense_b"), bound);
    }
    // cond.A stays zero.
    auto v = m.params.block("basis.V");
    if (init.w_init) {
        if (init.w_init->rows() != h.n_sites || init.w_init->cols() != h.K)
            throw DomainError("initial W must be n_sites x K");
        for (Eigen::Index j = 0; j < v.cols(); ++j)
            for (Eigen::Index i = 0; i < v.rows(); ++i)
                v(i, j) = softplus_inverse(std::max((*init.w_init)(i, j), kWendlandInitFloor));
    } else {
        v.setConstant(softplus_inverse(0.1));
    }
    return m;
}

// --- graph pieces --------------------------------------------------------------------

namespace {

struct Blocks {
    std::vector<Var> enc_w;
    std::vector<Var> enc_b;
    Var w_out, b_out, A, conv_w, conv_b, dense_w, dense_b, V;
};

Var block_of(const Var& p, const ad::ParamLayout& layout, const std::string& name) {
    const auto& e = layout.at(name);
    return ad::slice(p, e.offset, e.rows, e.cols);
}

Blocks slice_blocks(const Var& p, const ad::ParamLayout& layout, const HyperParams& h) {
    Blocks b;
    for (std::size_t i = 0; i < h.encoder_hidden.size(); ++i) {
        b.enc_w.push_back(block_of(p, layout, "enc.w" + std::to_string(i)));
        b.enc_b.push_back(block_of(p, layout, "enc.b" + std::to_string(i)));
    }
    b.w_out = block_of(p, layout, "enc.w_out");
    b.b_out = block_of(p, layout, "enc.b_out");
    b.A = block_of(p, layout, "cond.A");
    b.conv_w = block_of(p, layout, "xi.conv_w");
    b.conv_b = block_of(p, layout, "xi.conv_b");
    b.dense_w = block_of(p, layout, "xi.dense_w");
    b.dense_b = block_of(p, layout, "xi.dense_b");
    b.V = block_of(p, layout, "basis.V");
    return b;
}

Var encoder_graph(const Blocks& b, const Var& log_x) {
    Var a = log_x;
    for (std::size_t i = 0; i < b.enc_w.size(); ++i) a = ad::softplus(ad::add_row(ad::matmul(a, b.enc_w[i]), b.enc_b[i]));
    return ad::softplus(ad::add_row(ad::matmul(a, b.w_out), b.b_out));
}

Var xi_graph(const Blocks& b, const Var& windows, const HyperParams& h) {
    const Eigen::Index len = 2 * h.K;
    Var conv = ad::conv1d_same(windows, b.conv_w, b.conv_b, 3, len, h.kernel_width);
    Var pooled = ad::maxpool1d(conv, h.channels, len, h.pool);
    return ad::softplus(ad::add_row(ad::matmul(pooled, b.dense_w), b.dense_b));
}

Matrix log_rows(const DataTensor& x, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    if (!(out.minCoeff() > 0.0)) throw DomainError("data must be strictly positive");
    return out.array().log().matrix();
}

Vector to_vector(const Matrix& row) { return Eigen::Map<const Vector>(row.data(), row.size()); }

Matrix row_matrix(const Vector& v) { return Eigen::Map<const Matrix>(v.data(), 1, v.size()); }

double guarded_denominator(double dc) {
    const double mag = std::max(std::abs(dc), kPenaltyDenominatorFloor);
    return dc < 0.0 ? -mag : mag;
}

}  // namespace

// --- single-step operations ------------------------------------------------------------

ForwardPass encode_times(const Model& m, const DataTensor& x, const std::vector<double>& c,
                         const std::vector<Eigen::Index>& times) {
    const auto& h = m.hyper;
    if (x.cols() != h.n_sites) throw DomainError("data has the wrong number of sites");
    Tape tape;
    Var p = tape.constant(m.params.values);
    Blocks b = slice_blocks(p, m.params.layout, h);
    Var enc = encoder_graph(b, tape.constant(log_rows(x, times)));
    Matrix cc(static_cast<Eigen::Index>(times.size()), 1);
    for (std::size_t i = 0; i < times.size(); ++i) cc(static_cast<Eigen::Index>(i), 0) = c.at(times[i]);
    ForwardPass f;
    f.mu = enc.value().leftCols(h.K);
    f.sigma = enc.value().rightCols(h.K);
    f.g = cc * m.block("cond.A").transpose();
    return f;
}

Matrix decode_xi_batch(const Model& m, const Matrix& windows) {
    const auto& h = m.hyper;
    if (windows.cols() != 6 * h.K) throw DomainError("xi decoder input must have 3 x 2K columns");
    Tape tape;
    Var p = tape.constant(m.params.values);
    Blocks b = slice_blocks(p, m.params.layout, h);
    return xi_graph(b, tape.constant(windows), h).value();
}

Encoded encode(const Vector& x_t, const Model& m) {
    if (!x_t.allFinite()) throw DomainError("encoder input must be finite");
    const DataTensor x = row_matrix(x_t);
    const auto f = encode_times(m, x, {0.0}, {0});
    return {to_vector(f.mu), to_vector(f.sigma)};
}

LatentSample reparam_sample(const Vector& mu, const Vector& sigma, const Vector& g_c, const Vector& eps) {
    const auto k = mu.size();
    if (sigma.size() != k || g_c.size() != k || eps.size() != k) throw DomainError("reparam_sample: length mismatch");
    if (!(mu.minCoeff() > 0.0)) throw DomainError("reparam_sample requires mu > 0");
    if (!(sigma.minCoeff() >= 0.0)) throw DomainError("reparam_sample requires sigma >= 0");
    LatentSample s{Vector(k), eps, mu, sigma, g_c};
    for (Eigen::Index i = 0; i < k; ++i) {
        s.z(i) = std::exp(std::log(mu(i)) + g_c(i) + sigma(i) * eps(i));
        if (!std::isfinite(s.z(i)) || !(s.z(i) > 0.0)) {
            std::ostringstream os;
            os << "latent draw overflowed at coordinate " << i;
            throw NumericalError(os.str());
        }
    }
    return s;
}

Vector condition_map(double c, const Model& m) { return to_vector(m.block("cond.A") * c); }

Vector fuse(const Vector& z, double c) {
    Vector out(2 * z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) {
        out(2 * k) = z(k);
        out(2 * k + 1) = c;
    }
    return out;
}

Vector decode_xi(const Vector& fused_prev, const Vector& fused_curr, const Vector& fused_next, const Model& m) {
    const auto n = fused_curr.size();
    if (fused_prev.size() != n || fused_next.size() != n) throw DomainError("decode_xi: window lengths differ");
    Matrix w(1, 3 * n);
    w << fused_prev.transpose(), fused_curr.transpose(), fused_next.transpose();
    return to_vector(decode_xi_batch(m, w));
}

Vector theta_from_xi(const Vector& xi, const Matrix& phi) {
    if (phi.cols() != xi.size()) throw DomainError("theta_from_xi: Phi has the wrong number of columns");
    if (!(phi.minCoeff() >= 0.0) || !(xi.minCoeff() >= 0.0)) throw DomainError("theta_from_xi requires Phi, xi >= 0");
    return phi * xi;
}

Vector decode_y(const Vector& z, const Matrix& w) {
    if (w.cols() != z.size()) throw DomainError("decode_y: W has the wrong number of columns");
    return w * z;
}

double loglik(const Vector& x_t, const Vector& y_t, double alpha0) {
    if (x_t.size() != y_t.size()) throw DomainError("loglik: length mismatch");
    if (!(alpha0 > 0.0)) throw DomainError("alpha0 must be positive");
    if (!(x_t.minCoeff() > 0.0) || !(y_t.minCoeff() > 0.0)) throw DomainError("loglik requires positive x and y");
    double s = 0.0;
    for (Eigen::Index j = 0; j < x_t.size(); ++j) {
        const double lx = std::log(x_t(j));
        s += std::log(alpha0) - std::numbers::ln2 - lx - alpha0 * std::abs(lx - std::log(y_t(j)));
    }
    return s;
}

double log_prior(const Vector& z, const Vector& theta) {
    if (z.size() != theta.size()) throw DomainError("log_prior: length mismatch");
    double s = 0.0;
    for (Eigen::Index k = 0; k < z.size(); ++k) s += dist::expps_logdensity_half(z(k), theta(k));
    return s;
}

double log_q(const LatentSample& s) {
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double acc = 0.0;
    for (Eigen::Index k = 0; k < s.z.size(); ++k) {
        if (!(s.sigma(k) > 0.0)) throw DomainError("log_q requires sigma > 0");
        if (!(s.z(k) > 0.0)) throw DomainError("log_q requires z > 0");
        const double lz = std::log(s.z(k));
        const double m = std::log(s.mu(k)) + s.g_c(k);
        const double d = lz - m;
        acc -= lz + std::log(s.sigma(k)) + half_log_2pi + d * d / (2.0 * s.sigma(k) * s.sigma(k));
    }
    return acc;
}

double penalty(const Vector& xi_t, const Vector& xi_prev, double c_t, double c_prev, double rho0, PenaltyMode mode) {
    if (xi_t.size() != xi_prev.size()) throw DomainError("penalty: length mismatch");
    const double d = guarded_denominator(c_t - c_prev);
    double s = 0.0;
    for (Eigen::Index i = 0; i < xi_t.size(); ++i) {
        const double diff = xi_t(i) - xi_prev(i);
        s += mode == PenaltyMode::Signed ? diff / d : std::abs(diff) / std::abs(d);
    }
    return rho0 * s;
}

// --- batched objective -----------------------------------------------------------------

Var penalized_elbo(Tape& tape, const Var& params, const Model& m, const ElboInputs& in, ElboTerms* terms) {
    const auto& h = m.hyper;
    if (in.x == nullptr || in.c == nullptr) throw DomainError("penalized_elbo: missing data");
    const DataTensor& x = *in.x;
    const auto& c = *in.c;
    const Eigen::Index n_t = x.rows();
    if (x.cols() != h.n_sites) throw DomainError("data has the wrong number of sites");
    if (static_cast<Eigen::Index>(c.size()) != n_t) throw DomainError("condition length differs from n_t");
    if (in.batch.empty()) throw DomainError("empty batch");
    if (params.rows() != static_cast<Eigen::Index>(m.params.layout.size())) throw DomainError("parameter size mismatch");

    auto clamp_t = [n_t](Eigen::Index t) { return std::clamp<Eigen::Index>(t, 0, n_t - 1); };

    std::set<Eigen::Index> s_set;
    for (auto t : in.batch) {
        if (t < 0 || t >= n_t) throw DomainError("batch time index out of range");
        s_set.insert(t);
        if (t >= 1) s_set.insert(t - 1);
    }
    std::set<Eigen::Index> e_set;
    for (auto s : s_set) {
        e_set.insert(clamp_t(s - 1));
        e_set.insert(s);
        e_set.insert(clamp_t(s + 1));
    }
    const std::vector<Eigen::Index> S(s_set.begin(), s_set.end());
    const std::vector<Eigen::Index> E(e_set.begin(), e_set.end());
    std::vector<Eigen::Index> pos_e(static_cast<std::size_t>(n_t), -1), pos_s(static_cast<std::size_t>(n_t), -1);
    for (std::size_t i = 0; i < E.size(); ++i) pos_e[E[i]] = static_cast<Eigen::Index>(i);
    for (std::size_t i = 0; i < S.size(); ++i) pos_s[S[i]] = static_cast<Eigen::Index>(i);

    std::vector<Eigen::Index> prev_idx, cur_idx, next_idx;
    for (auto s : S) {
        prev_idx.push_back(pos_e[clamp_t(s - 1)]);
        cur_idx.push_back(pos_e[s]);
        next_idx.push_back(pos_e[clamp_t(s + 1)]);
    }
    std::vector<Eigen::Index> batch_e, batch_s;
    for (auto t : in.batch) {
        batch_e.push_back(pos_e[t]);
        batch_s.push_back(pos_s[t]);
    }
    std::vector<Eigen::Index> pen_cur, pen_prev;
    std::vector<double> pen_inv;
    for (auto t : in.batch) {
        if (t < 1) continue;
        pen_cur.push_back(pos_s[t]);
        pen_prev.push_back(pos_s[t - 1]);
        pen_inv.push_back(1.0 / guarded_denominator(c[t] - c[t - 1]));
    }

    Matrix c_e(static_cast<Eigen::Index>(E.size()), 1);
    for (std::size_t i = 0; i < E.size(); ++i) c_e(static_cast<Eigen::Index>(i), 0) = c[E[i]];
    const Matrix fuse_c = h.fuse_condition ? c_e : Matrix::Zero(c_e.rows(), 1);
    Matrix x_b(static_cast<Eigen::Index>(in.batch.size()), x.cols());
    for (std::size_t i = 0; i < in.batch.size(); ++i) x_b.row(static_cast<Eigen::Index>(i)) = x.row(in.batch[i]);

    Blocks b = slice_blocks(params, m.params.layout, h);
    Var enc = encoder_graph(b, tape.constant(log_rows(x, E)));
    Var mu = ad::cols(enc, 0, h.K);
    Var sigma = ad::cols(enc, h.K, h.K);
    Var g = ad::matmul_nt(tape.constant(c_e), b.A);
    Var m_log = ad::add(ad::log(mu), g);
    Var w = ad::softplus(b.V);
    Var phi = tape.constant(m.phi);
    Var m_b = ad::gather_rows(m_log, batch_e);
    Var sigma_b = ad::gather_rows(sigma, batch_e);

    Matrix pen_weight;
    if (!pen_cur.empty()) {
        pen_weight.resize(static_cast<Eigen::Index>(pen_cur.size()), h.M);
        for (std::size_t i = 0; i < pen_inv.size(); ++i)
            pen_weight.row(static_cast<Eigen::Index>(i)).setConstant(
                h.penalty == PenaltyMode::Signed ? pen_inv[i] : std::abs(pen_inv[i]));
    }
    const bool with_penalty = h.rho0 > 0.0 && !pen_cur.empty();

    ElboTerms acc;
    std::optional<Var> elbo_sum;
    std::optional<Var> pen_sum;
    for (int l = 0; l < h.L; ++l) {
        Matrix eps = Matrix::Zero(static_cast<Eigen::Index>(E.size()), h.K);
        if (!in.zero_noise) {
            for (std::size_t i = 0; i < E.size(); ++i) {
                Rng r = in.noise.substream({static_cast<std::uint64_t>(l), static_cast<std::uint64_t>(E[i])});
                for (Eigen::Index k = 0; k < h.K; ++k) eps(static_cast<Eigen::Index>(i), k) = r.normal();
            }
        }
        Var log_z = ad::add(m_log, ad::mul(sigma, tape.constant(eps)));
        Var z = ad::exp(log_z);
        Var fused = ad::interleave_condition(z, fuse_c);
        Var windows = ad::hcat({ad::gather_rows(fused, prev_idx), ad::gather_rows(fused, cur_idx),
                                ad::gather_rows(fused, next_idx)});
        Var xi = xi_graph(b, windows, h);
        Var theta = ad::matmul_nt(xi, phi);

        Var z_b = ad::gather_rows(z, batch_e);
        Var log_z_b = ad::gather_rows(log_z, batch_e);
        Var y = ad::matmul_nt(z_b, w);
        Var ll = ad::loglaplace_loglik(x_b, y, h.alpha0);
        Var lp = ad::expps_logprior(z_b, ad::gather_rows(theta, batch_s));
        Var lq = ad::lognormal_logq(log_z_b, m_b, sigma_b);
        Var elbo_l = ad::sub(ad::add(ll, lp), lq);
        acc.loglik += ll.scalar();
        acc.log_prior += lp.scalar();
        acc.log_q += lq.scalar();
        elbo_sum = elbo_sum ? ad::add(*elbo_sum, elbo_l) : elbo_l;

        if (!pen_cur.empty()) {
            Var diff = ad::sub(ad::gather_rows(xi, pen_cur), ad::gather_rows(xi, pen_prev));
            if (h.penalty == PenaltyMode::Absolute) diff = ad::abs(diff);
            Var pen_l = ad::sum(ad::mul(diff, tape.constant(pen_weight)));
            acc.penalty += h.rho0 * pen_l.scalar();
            if (with_penalty) pen_sum = pen_sum ? ad::add(*pen_sum, pen_l) : pen_l;
        }
    }
    const double inv_l = 1.0 / h.L;
    Var total = ad::scale(*elbo_sum, inv_l);
    if (pen_sum) total = ad::sub(total, ad::scale(*pen_sum, h.rho0 * inv_l));
    if (terms != nullptr) {
        terms->loglik = acc.loglik * inv_l;
        terms->log_prior = acc.log_prior * inv_l;
        terms->log_q = acc.log_q * inv_l;
        terms->penalty = acc.penalty * inv_l;
        terms->total = total.scalar();
    }
    return total;
}

ElboTerms evaluate_elbo(const Model& m, const ElboInputs& in) {
    Tape tape;
    Var p = tape.constant(m.params.values);
    ElboTerms terms;
    penalized_elbo(tape, p, m, in, &terms);
    return terms;
}

}  // namespace cxvae::model
