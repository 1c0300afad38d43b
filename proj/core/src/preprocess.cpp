#include "cxvae/preprocess.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "cxvae/optimize.hpp"
#include "cxvae/rng.hpp"

namespace cxvae::prep {

double cubic_bspline(double x) {
    if (x < 0.0 || x >= 4.0) return 0.0;
    if (x < 1.0) return x * x * x / 6.0;
    if (x < 2.0) return (-3.0 * x * x * x + 12.0 * x * x - 12.0 * x + 4.0) / 6.0;
    if (x < 3.0) return (3.0 * x * x * x - 24.0 * x * x + 60.0 * x - 44.0) / 6.0;
    const double r = 4.0 - x;
    return r * r * r / 6.0;
}

Vector periodic_basis(double phase) {
    const double h = kPeriod / kSplineBasis;
    Vector b(kSplineBasis);
    for (int i = 0; i < kSplineBasis; ++i) {
        double x = std::fmod(phase / h - i, static_cast<double>(kSplineBasis));
        if (x < 0.0) x += kSplineBasis;
        b(i) = cubic_bspline(x);
    }
    return b;
}

std::vector<Date> calendar(Date start, std::size_t n_days) {
    if (!start.ok()) throw DomainError("invalid start date");
    std::vector<Date> out;
    out.reserve(n_days);
    const std::chrono::sys_days d0{start};
    for (std::size_t i = 0; i < n_days; ++i) out.emplace_back(d0 + std::chrono::days(static_cast<long>(i)));
    return out;
}

SeasonalDesign build_design(std::size_t n_days, Date start) {
    if (n_days < 366) throw DomainError("seasonal design needs at least 366 days");
    if (!start.ok()) throw DomainError("invalid start date");
    const std::chrono::sys_days d0{start};
    const std::chrono::sys_days jan1{start.year() / std::chrono::January / 1};
    const double doy0 = static_cast<double>((d0 - jan1).count());

    SeasonalDesign d;
    // The periodic B-splines sum to one, so one column duplicates the intercept.
    d.dropped_spline = kSplineBasis - 1;
    const int cols = 2 + kSplineBasis - 1;
    d.m.resize(static_cast<Eigen::Index>(n_days), cols);
    d.phase.resize(n_days);
    for (std::size_t i = 0; i < n_days; ++i) {
        const double phase = std::fmod(doy0 + static_cast<double>(i), kPeriod);
        d.phase[i] = phase;
        const Vector b = periodic_basis(phase);
        const auto r = static_cast<Eigen::Index>(i);
        d.m(r, 0) = 1.0;
        d.m(r, 1) = static_cast<double>(i) / 365.25;
        for (int k = 0, c = 2; k < kSplineBasis; ++k)
            if (k != d.dropped_spline) d.m(r, c++) = b(k);
    }
    d.rank = static_cast<int>(Eigen::ColPivHouseholderQR<Matrix>(d.m).rank());
    return d;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    constexpr double deg = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * deg, dlon = (b.lon - a.lon) * deg;
    const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * deg) * std::cos(b.lat * deg) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

std::vector<std::vector<std::size_t>> neighborhood(const std::vector<GeoPoint>& sites, double r_km) {
    if (!(r_km > 0.0)) throw DomainError("neighbourhood radius must be > 0");
    std::vector<std::vector<std::size_t>> out(sites.size());
    for (std::size_t j = 0; j < sites.size(); ++j)
        for (std::size_t i = 0; i < sites.size(); ++i)
            if (i == j || haversine_km(sites[i], sites[j]) < r_km) out[j].push_back(i);
    return out;
}

SeasonalFit fit_seasonal(const Matrix& design, const std::vector<Vector>& responses) {
    if (responses.empty()) throw DomainError("seasonal fit needs at least one response series");
    const Eigen::Index n = design.rows();
    Matrix stacked_x(n * static_cast<Eigen::Index>(responses.size()), design.cols());
    Vector stacked_y(stacked_x.rows());
    for (std::size_t i = 0; i < responses.size(); ++i) {
        if (responses[i].size() != n) throw DomainError("response length differs from the design");
        if (!responses[i].allFinite()) throw DomainError("responses must be finite");
        stacked_x.middleRows(static_cast<Eigen::Index>(i) * n, n) = design;
        stacked_y.segment(static_cast<Eigen::Index>(i) * n, n) = responses[i];
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(stacked_x);
    if (qr.rank() < design.cols()) throw DomainError("seasonal design is rank deficient");
    SeasonalFit f;
    f.beta = qr.solve(stacked_y);
    f.fitted = design * f.beta;
    return f;
}

Matrix variance_design(std::size_t n) {
    Matrix t(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
        t(static_cast<Eigen::Index>(i), 0) = 1.0;
        t(static_cast<Eigen::Index>(i), 1) = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    }
    return t;
}

VarianceModel fit_variance(const Vector& r, const Matrix& timecols) {
    if (!r.allFinite()) throw DomainError("residuals must be finite");
    if (timecols.rows() != r.size() || timecols.cols() != 2) throw DomainError("time columns must be N x 2");
    if (r.size() < 3) throw DomainError("variance model needs at least 3 residuals");
    const Vector r2 = r.cwiseProduct(r);
    const double sd = std::sqrt(r2.mean() - r.mean() * r.mean());
    if (!(sd > 0.0)) throw DomainError("residuals have zero spread");

    // Negative log-likelihood (constant dropped) and its gradient.
    opt::Objective nll = [&](const std::vector<double>& b, double& value, std::vector<double>& grad) {
        value = 0.0;
        grad.assign(2, 0.0);
        for (Eigen::Index i = 0; i < r.size(); ++i) {
            const double eta = timecols(i, 0) * b[0] + timecols(i, 1) * b[1];
            const double w = r2(i) * std::exp(-2.0 * eta);
            if (!std::isfinite(w)) return false;
            value += eta + 0.5 * w;
            const double d = 1.0 - w;
            grad[0] += d * timecols(i, 0);
            grad[1] += d * timecols(i, 1);
        }
        return std::isfinite(value);
    };
    const auto res = opt::minimize_bfgs(nll, {std::log(sd), 0.0});
    if (!res.converged) {
        // Accept a tiny gradient even if the solver stopped on another criterion.
        double v = 0.0;
        std::vector<double> g;
        if (!nll(res.x, v, g) || std::hypot(g[0], g[1]) > 1e-6 * static_cast<double>(r.size()))
            throw NumericalError("variance model did not converge: " + res.message);
    }
    VarianceModel vm;
    vm.beta1 = res.x[0];
    vm.beta2 = res.x[1];
    vm.sd = (timecols * Eigen::Vector2d(vm.beta1, vm.beta2)).array().exp().matrix();
    return vm;
}

Vector detrend(const Vector& x, const Vector& fitted, const Vector& sd) {
    if (x.size() != fitted.size() || x.size() != sd.size()) throw DomainError("detrend: length mismatch");
    if (!(sd.minCoeff() > 0.0)) throw DomainError("detrend requires sd > 0");
    return ((x - fitted).array() / sd.array()).matrix();
}

Vector retrend(const Vector& z, const Vector& fitted, const Vector& sd) {
    if (z.size() != fitted.size() || z.size() != sd.size()) throw DomainError("retrend: length mismatch");
    return (z.array() * sd.array() + fitted.array()).matrix();
}

std::vector<MonthlyMax> monthly_maxima(std::span<const double> series, const std::vector<Date>& dates) {
    if (dates.size() != series.size()) throw DomainError("calendar length differs from the series");
    std::map<std::pair<int, unsigned>, double> best;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (!dates[i].ok()) throw DomainError("invalid calendar date");
        const std::pair<int, unsigned> key{static_cast<int>(dates[i].year()), static_cast<unsigned>(dates[i].month())};
        auto it = best.find(key);
        if (it == best.end())
            best.emplace(key, series[i]);
        else
            it->second = std::max(it->second, series[i]);
    }
    std::vector<MonthlyMax> out;
    for (const auto& [k, v] : best) out.push_back({k.first, k.second, v});
    return out;
}

double chi2_survival(double x, int df) {
    if (df < 1) throw DomainError("chi-square df must be >= 1");
    if (x <= 0.0) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), x));
}

GofResult chi2_gof(std::span<const double> data, const std::function<double(double)>& cdf, const GofOptions& opt) {
    if (data.empty()) throw DomainError("GOF needs data");
    if (opt.n_bins < 2) throw DomainError("GOF needs at least 2 bins");
    if (opt.n_bins <= opt.n_params + 1) throw DomainError("GOF needs more bins than n_params + 1");
    const auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) throw DomainError("GOF data have zero range");
    const auto n = static_cast<double>(data.size());
    const int nb = opt.n_bins;

    std::vector<double> inner(static_cast<std::size_t>(nb - 1));
    for (int i = 1; i < nb; ++i) inner[static_cast<std::size_t>(i - 1)] = lo + (hi - lo) * i / nb;
    std::vector<double> obs(static_cast<std::size_t>(nb), 0.0), exp(static_cast<std::size_t>(nb), 0.0);
    for (double x : data) {
        const auto b = std::upper_bound(inner.begin(), inner.end(), x) - inner.begin();
        obs[static_cast<std::size_t>(b)] += 1.0;
    }
    double prev = 0.0;
    for (int i = 0; i < nb; ++i) {
        const double f = i + 1 < nb ? cdf(inner[static_cast<std::size_t>(i)]) : 1.0;
        exp[static_cast<std::size_t>(i)] = n * (f - prev);
        prev = f;
    }
    std::vector<double> edges{-std::numeric_limits<double>::infinity()};
    edges.insert(edges.end(), inner.begin(), inner.end());
    edges.push_back(std::numeric_limits<double>::infinity());

    // Merge the smallest expected bin into its smaller neighbour until every E >= 1.
    while (exp.size() > 1) {
        const auto it = std::min_element(exp.begin(), exp.end());
        if (*it >= 1.0) break;
        const auto i = static_cast<std::size_t>(it - exp.begin());
        std::size_t j;
        if (i == 0)
            j = 1;
        else if (i + 1 == exp.size())
            j = i - 1;
        else
            j = exp[i - 1] <= exp[i + 1] ? i - 1 : i + 1;
        const std::size_t a = std::min(i, j), b = std::max(i, j);
        exp[a] += exp[b];
        obs[a] += obs[b];
        exp.erase(exp.begin() + static_cast<std::ptrdiff_t>(b));
        obs.erase(obs.begin() + static_cast<std::ptrdiff_t>(b));
        edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(b));
    }
    for (double e : exp)
        if (!(e > 0.0)) throw DomainError("an expected bin count is zero; use fewer bins");
    const int used = static_cast<int>(exp.size());
    if (used <= opt.n_params + 1)
        throw DomainError("only " + std::to_string(used) + " bins remain after merging; use fewer bins or more data");

    GofResult g;
    for (std::size_t i = 0; i < exp.size(); ++i)
        if (obs[i] > 0.0) g.statistic += obs[i] * std::log(obs[i] / exp[i]);
    if (opt.doubled) g.statistic *= 2.0;
    g.statistic = std::max(g.statistic, 0.0);
    g.df = used - 1 - opt.n_params;
    g.p_value = chi2_survival(g.statistic, g.df);
    g.observed = std::move(obs);
    g.expected = std::move(exp);
    g.edges = std::move(edges);
    return g;
}

double marginal_transform(double m, const dist::GevParams& g, const std::string& context) {
    g.validate();
    const double beta = g.mu - g.sigma / g.xi;
    const std::string where = context.empty() ? "" : " (" + context + ")";
    if (g.xi > 0.0) {
        if (!(m > beta)) throw DomainError("maximum lies below the GEV lower endpoint" + where);
        return std::pow((m - beta) * g.xi / g.sigma, 1.0 / g.xi);
    }
    if (!(m < beta)) throw DomainError("maximum lies above the GEV upper endpoint" + where);
    return std::pow(g.sigma / ((beta - m) * std::abs(g.xi)), 1.0 / std::abs(g.xi));
}

std::vector<double> marginal_transform(std::span<const double> m, const dist::GevParams& g, const std::string& context) {
    std::vector<double> out(m.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        out[i] = marginal_transform(m[i], g, context.empty() ? "index " + std::to_string(i) : context + ", index " + std::to_string(i));
    return out;
}

Vector synthetic_daily(const std::vector<Date>& dates, const SyntheticDaily& p, std::uint64_t seed) {
    if (dates.empty()) return {};
    const std::chrono::sys_days d0{dates.front()};
    Rng rng(seed);
    const auto n = dates.size();
    Vector x(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const std::chrono::sys_days di{dates[i]};
        const std::chrono::sys_days jan1{dates[i].year() / std::chrono::January / 1};
        const double doy = static_cast<double>((di - jan1).count());
        const double years = static_cast<double>((di - d0).count()) / 365.25;
        const double frac = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        const double mean = p.intercept + p.trend * years + p.amplitude * std::sin(2.0 * std::numbers::pi * doy / 365.0) +
                            0.5 * p.amplitude * std::cos(4.0 * std::numbers::pi * doy / 365.0);
        const double sd = std::exp(p.log_sd0 + p.log_sd_slope * frac);
        x(static_cast<Eigen::Index>(i)) = mean + sd * rng.normal();
    }
    return x;
}

}  // namespace cxvae::prep
