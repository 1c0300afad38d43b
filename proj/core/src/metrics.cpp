#include "cxvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "cxvae/io.hpp"
#include "cxvae/rng.hpp"

namespace cxvae::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Matrix resample_rows(const Matrix& m, Rng& rng) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.row(r) = m.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.rows()))));
    return out;
}

// Percentile bands over the defined bootstrap replicates, widened to contain the estimate.
template <typename Estimator>
void bootstrap_bands(Curve& c, const Matrix& fields, const BootstrapOptions& boot, Estimator est) {
    const std::size_t nu = c.u.size();
    c.lo95.assign(nu, kNaN);
    c.hi95.assign(nu, kNaN);
    std::vector<std::vector<double>> reps(nu);
    const Rng root(boot.seed);
    for (int b = 0; b < boot.n_boot; ++b) {
        Rng rng = root.substream({static_cast<std::uint64_t>(b)});
        const Matrix rs = resample_rows(fields, rng);
        std::vector<bool> def;
        const auto v = est(rank_transform(rs), &def);
        for (std::size_t i = 0; i < nu; ++i)
            if (def[i]) reps[i].push_back(v[i]);
    }
    for (std::size_t i = 0; i < nu; ++i) {
        if (!c.defined[i]) continue;
        auto& r = reps[i];
        if (r.empty()) {
            c.lo95[i] = c.hi95[i] = c.estimate[i];
            continue;
        }
        std::sort(r.begin(), r.end());
        c.lo95[i] = std::min(quantile7(r, 0.025), c.estimate[i]);
        c.hi95[i] = std::max(quantile7(r, 0.975), c.estimate[i]);
    }
}

void check_u(const std::vector<double>& u) {
    for (double v : u)
        if (!(v >= 0.0 && v < 1.0)) throw DomainError("threshold u must lie in [0, 1)");
}

}  // namespace

Matrix rank_transform(const Matrix& fields) {
    const Eigen::Index n = fields.rows();
    Matrix u(n, fields.cols());
    std::vector<double> col(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < fields.cols(); ++j) {
        for (Eigen::Index r = 0; r < n; ++r) col[static_cast<std::size_t>(r)] = fields(r, j);
        std::vector<double> sorted = col;
        std::sort(sorted.begin(), sorted.end());
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto le = std::upper_bound(sorted.begin(), sorted.end(), col[static_cast<std::size_t>(r)]) - sorted.begin();
            u(r, j) = static_cast<double>(le) / static_cast<double>(n);
        }
    }
    return u;
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs_at_distance(const SpatialGrid& grid, double d, double tol,
                                                                     std::size_t max_pairs, std::uint64_t seed) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
    const auto n = static_cast<Eigen::Index>(grid.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(d) <= tol) out.emplace_back(i, i);
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double dij = distance(grid.sites[static_cast<std::size_t>(i)], grid.sites[static_cast<std::size_t>(j)]);
            if (std::abs(dij - d) <= tol) out.emplace_back(i, j);
        }
    }
    if (out.empty()) throw DomainError("no site pairs in the distance bin");
    if (max_pairs > 0 && out.size() > max_pairs) {
        Rng rng(seed);
        shuffle(std::span(out), rng);
        out.resize(max_pairs);
        std::sort(out.begin(), out.end());
    }
    return out;
}

std::vector<double> chi_estimate(const Matrix& uf, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& pairs,
                                 const std::vector<double>& u, std::vector<bool>* defined) {
    check_u(u);
    std::vector<double> out(u.size(), kNaN);
    if (defined) defined->assign(u.size(), false);
    for (std::size_t k = 0; k < u.size(); ++k) {
        double acc = 0.0;
        int used = 0;
        for (const auto& [a, b] : pairs) {
            long cond = 0, both = 0;
            for (Eigen::Index r = 0; r < uf.rows(); ++r) {
                if (uf(r, a) > u[k]) {
                    ++cond;
                    if (uf(r, b) > u[k]) ++both;
                }
            }
            if (cond > 0) {
                acc += static_cast<double>(both) / static_cast<double>(cond);
                ++used;
            }
        }
        if (used > 0) {
            out[k] = acc / used;
            if (defined) (*defined)[k] = true;
        }
    }
    return out;
}

ChiCurve chi_curve(const Matrix& fields, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& pairs,
                   const std::vector<double>& u, const BootstrapOptions& boot) {
    if (fields.rows() < 2) throw DomainError("chi needs at least two replicates");
    if (pairs.empty()) throw DomainError("no site pairs in the distance bin");
    ChiCurve c;
    c.u = u;
    c.n_pairs = pairs.size();
    c.estimate = chi_estimate(rank_transform(fields), pairs, u, &c.defined);
    bootstrap_bands(c, fields, boot, [&](const Matrix& uf, std::vector<bool>* def) { return chi_estimate(uf, pairs, u, def); });
    return c;
}

ChiCurve chi_curve(const Matrix& fields, const SpatialGrid& grid, double d, const std::vector<double>& u,
                   const BootstrapOptions& boot, double tol, std::size_t max_pairs) {
    if (tol < 0.0) tol = grid.regular ? grid.regular->side / 2.0 : 0.5;
    ChiCurve c = chi_curve(fields, pairs_at_distance(grid, d, tol, max_pairs, boot.seed ^ 0x9e37U), u, boot);
    c.distance = d;
    c.tolerance = tol;
    return c;
}

std::vector<double> are_estimate(const Matrix& uf, Eigen::Index ref, double psi, const std::vector<double>& u,
                                 std::vector<bool>* defined) {
    check_u(u);
    std::vector<double> out(u.size(), kNaN);
    if (defined) defined->assign(u.size(), false);
    for (std::size_t k = 0; k < u.size(); ++k) {
        long ref_count = 0, joint = 0;
        for (Eigen::Index r = 0; r < uf.rows(); ++r) {
            if (!(uf(r, ref) > u[k])) continue;
            ++ref_count;
            for (Eigen::Index i = 0; i < uf.cols(); ++i)
                if (uf(r, i) > u[k]) ++joint;
        }
        if (ref_count > 0) {
            out[k] = std::sqrt(psi * psi * static_cast<double>(joint) / (std::numbers::pi * static_cast<double>(ref_count)));
            if (defined) (*defined)[k] = true;
        }
    }
    return out;
}

AreCurve are_curve(const Matrix& fields, const SpatialGrid& grid, Eigen::Index ref, const std::vector<double>& u,
                   const BootstrapOptions& boot) {
    if (!grid.regular) throw DomainError("ARE requires a regular grid");
    if (fields.cols() != static_cast<Eigen::Index>(grid.size())) throw DomainError("field columns differ from grid size");
    if (ref < 0 || ref >= fields.cols()) throw DomainError("ARE reference site out of range");
    AreCurve c;
    c.u = u;
    c.psi = grid.regular->side;
    c.reference_id = grid.ids[static_cast<std::size_t>(ref)];
    c.estimate = are_estimate(rank_transform(fields), ref, c.psi, u, &c.defined);
    bootstrap_bands(c, fields, boot, [&](const Matrix& uf, std::vector<bool>* def) { return are_estimate(uf, ref, c.psi, u, def); });
    return c;
}

Eigen::Index center_site(const SpatialGrid& grid) {
    if (grid.regular) {
        const int r = grid.regular->rows / 2, c = grid.regular->cols / 2;
        return static_cast<Eigen::Index>(r) * grid.regular->cols + c;
    }
    double mx = 0.0, my = 0.0;
    for (const auto& p : grid.sites) {
        mx += p.x;
        my += p.y;
    }
    const Point ctr{mx / static_cast<double>(grid.size()), my / static_cast<double>(grid.size())};
    Eigen::Index best = 0;
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (distance(grid.sites[i], ctr) < distance(grid.sites[static_cast<std::size_t>(best)], ctr)) best = static_cast<Eigen::Index>(i);
    return best;
}

double nearest_rank_quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw DomainError("quantile of an empty sample");
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-12));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

double quantile7(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw DomainError("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double crps_above(std::span<const double> ensemble, double obs, double threshold) {
    if (ensemble.empty()) throw DomainError("CRPS needs a nonempty ensemble");
    std::vector<double> sorted(ensemble.begin(), ensemble.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> bps = sorted;
    bps.push_back(obs);
    if (std::isfinite(threshold)) bps.push_back(threshold);
    std::sort(bps.begin(), bps.end());
    const auto n = static_cast<double>(sorted.size());
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < bps.size(); ++i) {
        const double lo = std::max(bps[i], threshold);
        const double hi = bps[i + 1];
        if (!(hi > lo)) continue;
        const double f = static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), lo) - sorted.begin()) / n;
        const double ind = lo >= obs ? 1.0 : 0.0;
        acc += (hi - lo) * (f - ind) * (f - ind);
    }
    return acc;
}

double twcrps(std::span<const double> ensemble, double obs) {
    std::vector<double> sorted(ensemble.begin(), ensemble.end());
    std::sort(sorted.begin(), sorted.end());
    return crps_above(sorted, obs, nearest_rank_quantile(sorted, 0.9));
}

double crps(std::span<const double> ensemble, double obs) {
    return crps_above(ensemble, obs, -std::numeric_limits<double>::infinity());
}

QQ qq_data(std::span<const double> obs, std::span<const double> ens, const std::vector<double>& q) {
    if (obs.empty() || ens.empty()) throw DomainError("Q-Q data needs nonempty samples");
    std::vector<double> a(obs.begin(), obs.end()), b(ens.begin(), ens.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    QQ out;
    out.q = q;
    for (double p : q) {
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("Q-Q probabilities must lie in [0, 1]");
        out.obs.push_back(quantile7(a, p));
        out.ens.push_back(quantile7(b, p));
    }
    return out;
}

double energy_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() == 0 || b.rows() == 0 || a.cols() != b.cols()) throw DomainError("energy distance needs two nonempty samples of equal dimension");
    auto mean_dist = [](const Matrix& p, const Matrix& q) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < q.rows(); ++j) s += (p.row(i) - q.row(j)).norm();
        return s / (static_cast<double>(p.rows()) * static_cast<double>(q.rows()));
    };
    return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

double median(std::vector<double> v) {
    if (v.empty()) throw DomainError("median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_curve(const std::string& path, const Curve& c, const std::string& meta_json) {
    io::Table t;
    t.header = {"u", "estimate", "lo95", "hi95"};
    for (std::size_t i = 0; i < c.u.size(); ++i)
        t.rows.push_back({io::fmt(c.u[i]), io::fmt(c.estimate[i]), io::fmt(c.lo95[i]), io::fmt(c.hi95[i])});
    io::write_table(path, t);
    io::write_text(path + ".json", meta_json + "\n");
}

}  // namespace cxvae::metrics
