#include "cxvae/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cxvae/optimize.hpp"

namespace cxvae::dist {

namespace {

void require_positive_finite(double x, const char* what) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        std::ostringstream os;
        os << what << " must be positive and finite, got " << x;
        throw DomainError(os.str());
    }
}

void require_unit_open(double u, const char* what) {
    if (!(u > 0.0 && u < 1.0)) {
        std::ostringstream os;
        os << what << " must lie in (0, 1), got " << u;
        throw DomainError(os.str());
    }
}

}  // namespace

void LogLaplaceParams::validate() const { require_positive_finite(alpha0, "alpha0"); }

void ExpPSParams::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("expPS alpha must lie in (0, 1)");
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw DomainError("expPS theta must be >= 0");
}

void FrechetParams::validate() const {
    require_positive_finite(tau, "Frechet tau");
    require_positive_finite(alpha0, "Frechet alpha0");
}

void GevParams::validate() const {
    require_positive_finite(sigma, "GEV sigma");
    if (!std::isfinite(mu) || !std::isfinite(xi)) throw DomainError("GEV parameters must be finite");
    if (xi == 0.0) throw DomainError("GEV shape xi = 0 (Gumbel) is not supported");
}

// --- log-Laplace -----------------------------------------------------------

double loglaplace_cdf(double x, const LogLaplaceParams& p) {
    p.validate();
    require_positive_finite(x, "log-Laplace argument");
    if (x <= 1.0) return 0.5 * std::exp(p.alpha0 * std::log(x));
    return 1.0 - 0.5 * std::exp(-p.alpha0 * std::log(x));
}

double loglaplace_logpdf(double x, const LogLaplaceParams& p) {
    p.validate();
    require_positive_finite(x, "log-Laplace argument");
    const double lx = std::log(x);
    return std::log(p.alpha0) - std::numbers::ln2 - lx - p.alpha0 * std::abs(lx);
}

double loglaplace_quantile(double u, const LogLaplaceParams& p) {
    p.validate();
    require_unit_open(u, "log-Laplace probability");
    const double lap = u < 0.5 ? std::log(2.0 * u) / p.alpha0 : -std::log(2.0 * (1.0 - u)) / p.alpha0;
    return std::exp(lap);
}

double loglaplace_draw(Rng& rng, const LogLaplaceParams& p) {
    const double u = rng.uniform();
    const double lap = u < 0.5 ? std::log(2.0 * u) / p.alpha0 : -std::log(2.0 * (1.0 - u)) / p.alpha0;
    return std::exp(lap);
}

std::vector<double> loglaplace_sample(const LogLaplaceParams& p, std::size_t n, std::uint64_t seed) {
    p.validate();
    if (n == 0) throw DomainError("sample size must be >= 1");
    Rng rng(seed);
    std::vector<double> out(n);
    for (auto& v : out) v = loglaplace_draw(rng, p);
    return out;
}

// --- expPS -----------------------------------------------------------------

double expps_logdensity_half(double z, double theta) {
    if (!(z > 0.0) || !std::isfinite(z)) throw DomainError("expPS density requires z > 0");
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw DomainError("expPS density requires theta >= 0");
    constexpr double log_const = -std::numbers::ln2 - 0.5723649429247001;  // log(1/2) - log(pi)/2
    return log_const + std::sqrt(theta) - 1.5 * std::log(z) - theta * z - 0.25 / z;
}

double expps_draw(Rng& rng, double theta, std::uint64_t* proposals, std::uint64_t cap) {
    for (std::uint64_t tries = 1; tries <= cap; ++tries) {
        const double g = rng.normal();
        const double x = 0.5 / (g * g);
        if (proposals != nullptr) ++*proposals;
        if (theta == 0.0) return x;
        if (rng.uniform() < std::exp(-theta * x)) return x;
    }
    std::ostringstream os;
    os << "expPS rejection sampler exceeded " << cap << " proposals at theta=" << theta;
    throw NumericalError(os.str());
}

ExpPSDraws expps_sample(const ExpPSParams& p, std::size_t n, std::uint64_t seed, std::uint64_t cap) {
    p.validate();
    if (p.alpha != 0.5) throw DomainError("expPS sampler supports alpha = 1/2 only");
    Rng rng(seed);
    ExpPSDraws out;
    out.values.resize(n);
    for (auto& v : out.values) v = expps_draw(rng, p.theta, &out.proposals, cap);
    return out;
}

// --- Frechet ---------------------------------------------------------------

double frechet_cdf(double x, const FrechetParams& p) {
    p.validate();
    require_positive_finite(x, "Frechet argument");
    return std::exp(-std::pow(x / p.tau, -p.alpha0));
}

double frechet_survival(double x, const FrechetParams& p) {
    p.validate();
    require_positive_finite(x, "Frechet argument");
    return -std::expm1(-std::pow(x / p.tau, -p.alpha0));
}

double frechet_quantile(double u, const FrechetParams& p) {
    p.validate();
    require_unit_open(u, "Frechet probability");
    return p.tau * std::pow(-std::log(u), -1.0 / p.alpha0);
}

std::vector<double> frechet_sample(const FrechetParams& p, std::size_t n, std::uint64_t seed) {
    p.validate();
    Rng rng(seed);
    std::vector<double> out(n);
    for (auto& v : out) v = p.tau * std::pow(-std::log(rng.uniform()), -1.0 / p.alpha0);
    return out;
}

// --- GEV -------------------------------------------------------------------

GevCdfResult gev_cdf_checked(double x, const GevParams& g) {
    g.validate();
    const double s = 1.0 + g.xi * (x - g.mu) / g.sigma;
    if (!(s > 0.0)) return {g.xi > 0.0 ? 0.0 : 1.0, true};
    return {std::exp(-std::pow(s, -1.0 / g.xi)), false};
}

double gev_cdf(double x, const GevParams& g) { return gev_cdf_checked(x, g).value; }

double gev_logpdf(double x, const GevParams& g) {
    g.validate();
    const double s = 1.0 + g.xi * (x - g.mu) / g.sigma;
    if (!(s > 0.0)) return -std::numeric_limits<double>::infinity();
    const double ls = std::log(s);
    return -std::log(g.sigma) - (1.0 + 1.0 / g.xi) * ls - std::exp(-ls / g.xi);
}

double gev_quantile(double u, const GevParams& g) {
    g.validate();
    require_unit_open(u, "GEV probability");
    return g.mu + g.sigma / g.xi * (std::pow(-std::log(u), -g.xi) - 1.0);
}

std::vector<double> gev_sample(const GevParams& g, std::size_t n, std::uint64_t seed) {
    g.validate();
    Rng rng(seed);
    std::vector<double> out(n);
    for (auto& v : out) v = g.mu + g.sigma / g.xi * (std::pow(-std::log(rng.uniform()), -g.xi) - 1.0);
    return out;
}

namespace {

// Negative log-likelihood in (mu, log sigma, xi) with analytic gradient.
bool gev_nll(std::span<const double> data, const std::vector<double>& p, double& value,
             std::vector<double>& grad) {
    const double mu = p[0];
    const double sigma = std::exp(p[1]);
    const double xi = p[2];
    if (!std::isfinite(sigma) || std::abs(xi) < kMinAbsXi) return false;
    double ll = 0.0;
    double g_mu = 0.0;
    double g_ls = 0.0;
    double g_xi = 0.0;
    for (double x : data) {
        const double y = (x - mu) / sigma;
        const double s = 1.0 + xi * y;
        if (!(s > 0.0)) return false;
        const double ls = std::log(s);
        const double t = std::exp(-ls / xi);
        ll += -p[1] - (1.0 + 1.0 / xi) * ls - t;
        const double dl_ds = (-(1.0 + 1.0 / xi) + t / xi) / s;
        g_mu += dl_ds * (-xi / sigma);
        g_ls += -1.0 + dl_ds * (-xi * y);
        g_xi += (1.0 - t) * ls / (xi * xi) + dl_ds * y;
    }
    value = -ll;
    grad = {-g_mu, -g_ls, -g_xi};
    return std::isfinite(value);
}

}  // namespace

GevFit gev_fit(std::span<const double> data) {
    if (data.size() < 30) throw DomainError("gev_fit requires at least 30 observations");
    const double n = static_cast<double>(data.size());
    const double mean = std::accumulate(data.begin(), data.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : data) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0)) throw DomainError("gev_fit requires non-constant data");
    const auto [lo, hi] = std::minmax_element(data.begin(), data.end());

    const opt::Objective objective = [&](const std::vector<double>& p, double& v, std::vector<double>& g) {
        return gev_nll(data, p, v, g);
    };

    bool have = false;
    GevFit best{};
    GevParams best_any{};
    double best_any_nll = std::numeric_limits<double>::infinity();
    for (double xi0 : {0.1, -0.1}) {
        double sigma0 = sd * std::sqrt(6.0) / std::numbers::pi;
        const double mu0 = mean - 0.5772156649015329 * sigma0;
        // Widen the starting scale until every observation is inside the support.
        for (int i = 0; i < 60; ++i) {
            const double s_lo = 1.0 + xi0 * (*lo - mu0) / sigma0;
            const double s_hi = 1.0 + xi0 * (*hi - mu0) / sigma0;
            if (s_lo > 0.0 && s_hi > 0.0) break;
            sigma0 *= 1.5;
        }
        const auto r = opt::minimize_bfgs(objective, {mu0, std::log(sigma0), xi0});
        const GevParams params{r.x[0], std::exp(r.x[1]), r.x[2]};
        if (r.value < best_any_nll) {
            best_any_nll = r.value;
            best_any = params;
        }
        if (r.converged && (!have || -r.value > best.loglik)) {
            best = {params, -r.value};
            have = true;
        }
    }
    if (!have) throw GevFitError("GEV maximum likelihood did not converge", best_any);
    return best;
}

TailCheckResult tail_equivalence(const TailCheckOptions& opt) {
    const std::size_t n_s = opt.w.size();
    const std::size_t K = opt.theta.size();
    if (n_s < 2 || K == 0) throw DomainError("tail check needs at least two sites and one knot");
    for (const auto& row : opt.w)
        if (row.size() != K) throw DomainError("tail check weights must be site x K");
    if (opt.n == 0 || !(opt.level > 0.0 && opt.level < 1.0)) throw DomainError("tail check needs n > 0 and level in (0, 1)");
    const LogLaplaceParams lp{opt.alpha0};
    const FrechetParams fp{opt.tau, opt.alpha0};
    lp.validate();
    fp.validate();

    const Rng root(opt.seed);
    Rng rz = root.substream({0}), rl = root.substream({1}), rf = root.substream({2});
    std::vector<double> y(opt.n * n_s), xl(opt.n * n_s), xf(opt.n * n_s), z(K);
    for (std::size_t i = 0; i < opt.n; ++i) {
        for (std::size_t k = 0; k < K; ++k) z[k] = expps_draw(rz, opt.theta[k]);
        for (std::size_t j = 0; j < n_s; ++j) {
            double v = 0.0;
            for (std::size_t k = 0; k < K; ++k) v += opt.w[j][k] * z[k];
            const std::size_t a = i * n_s + j;
            y[a] = v;
            xl[a] = v * loglaplace_draw(rl, lp);
            xf[a] = v * frechet_quantile(rf.uniform(), fp);
        }
    }
    std::vector<double> pooled = xl;
    const auto q = static_cast<std::size_t>(opt.level * static_cast<double>(pooled.size()));
    std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(q), pooled.end());

    TailCheckResult r;
    r.x = pooled[q];
    r.target = 2.0 * std::pow(opt.tau, opt.alpha0);
    double ml = 0.0, mf = 0.0, jl = 0.0, jf = 0.0;
    for (std::size_t i = 0; i < opt.n; ++i) {
        double s0l = 0, s1l = 0, s0f = 0, s1f = 0;
        for (std::size_t j = 0; j < n_s; ++j) {
            const std::size_t a = i * n_s + j;
            const double sl = 1.0 - loglaplace_cdf(r.x / y[a], lp);
            const double sf = frechet_survival(r.x / y[a], fp);
            ml += sl;
            mf += sf;
            r.raw_marginal_l += xl[a] > r.x;
            r.raw_marginal_f += xf[a] > r.x;
            if (j == 0) s0l = sl, s0f = sf;
            if (j == 1) s1l = sl, s1f = sf;
        }
        jl += s0l * s1l;
        jf += s0f * s1f;
        r.raw_joint_l += xl[i * n_s] > r.x && xl[i * n_s + 1] > r.x;
        r.raw_joint_f += xf[i * n_s] > r.x && xf[i * n_s + 1] > r.x;
    }
    r.marginal = mf / ml;
    r.joint = jf / jl;
    return r;
}

}  // namespace cxvae::dist
