#pragma once

// Densities, distribution functions and samplers for every law the model touches.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cxvae/error.hpp"
#include "cxvae/rng.hpp"

namespace cxvae::dist {

/// Log-Laplace(0, 1/alpha0): eps = exp(U), U ~ Laplace(0, 1/alpha0).
struct LogLaplaceParams {
    double alpha0 = 30.0;
    void validate() const;
};

/// Exponentially tilted positive-stable law with Laplace transform exp(theta^a - (theta+s)^a).
struct ExpPSParams {
    double alpha = 0.5;
    double theta = 0.0;
    void validate() const;
};

/// Frechet with CDF exp{-(x/tau)^(-alpha0)}.
struct FrechetParams {
    double tau = 1.0;
    double alpha0 = 1.0;
    void validate() const;
};

struct GevParams {
    double mu = 0.0;
    double sigma = 1.0;
    double xi = 0.1;
    void validate() const;
    /// Finite endpoint mu - sigma/xi (lower for xi > 0, upper for xi < 0).
    [[nodiscard]] double endpoint() const { return mu - sigma / xi; }
};

// --- log-Laplace -----------------------------------------------------------

double loglaplace_cdf(double x, const LogLaplaceParams& p);
double loglaplace_logpdf(double x, const LogLaplaceParams& p);
/// Inverse CDF; u in (0, 1).
double loglaplace_quantile(double u, const LogLaplaceParams& p);
double loglaplace_draw(Rng& rng, const LogLaplaceParams& p);
std::vector<double> loglaplace_sample(const LogLaplaceParams& p, std::size_t n, std::uint64_t seed);

// --- exponentially tilted positive-stable, alpha = 1/2 ---------------------

/// log of 1/2 pi^{-1/2} exp(sqrt(theta)) z^{-3/2} exp(-theta z - 1/(4z)).
double expps_logdensity_half(double z, double theta);

struct ExpPSDraws {
    std::vector<double> values;
    std::uint64_t proposals = 0;
};

/// Default bound on proposals for a single accepted draw.
inline constexpr std::uint64_t kExpPSProposalCap = 1'000'000;

/// Positive-stable(1/2) proposal 1/(2 G^2), G standard normal, accepted with probability
/// exp(-theta X). Throws NumericalError if a single draw exceeds `cap` proposals.
double expps_draw(Rng& rng, double theta, std::uint64_t* proposals = nullptr,
                  std::uint64_t cap = kExpPSProposalCap);
ExpPSDraws expps_sample(const ExpPSParams& p, std::size_t n, std::uint64_t seed,
                        std::uint64_t cap = kExpPSProposalCap);

// --- Frechet ---------------------------------------------------------------

double frechet_cdf(double x, const FrechetParams& p);
double frechet_survival(double x, const FrechetParams& p);
double frechet_quantile(double u, const FrechetParams& p);
std::vector<double> frechet_sample(const FrechetParams& p, std::size_t n, std::uint64_t seed);

// --- GEV (xi != 0) -----------------------------------------------------------

struct GevCdfResult {
    double value;
    bool clamped;  ///< x was outside the support and the CDF was clamped to 0 or 1.
};

GevCdfResult gev_cdf_checked(double x, const GevParams& g);
double gev_cdf(double x, const GevParams& g);
double gev_logpdf(double x, const GevParams& g);
double gev_quantile(double u, const GevParams& g);
std::vector<double> gev_sample(const GevParams& g, std::size_t n, std::uint64_t seed);

/// Smallest |xi| the fitter will visit.
inline constexpr double kMinAbsXi = 1e-3;

class GevFitError : public NumericalError {
public:
    GevFitError(const std::string& what, GevParams best) : NumericalError(what), best_(best) {}
    [[nodiscard]] const GevParams& best() const { return best_; }

private:
    GevParams best_;
};

struct GevFit {
    GevParams params;
    double loglik;
};

/// Maximum likelihood by BFGS from moment-based starting values on both sides of xi = 0.
GevFit gev_fit(std::span<const double> data);

// --- tail equivalence under noise replacement ---------------------------------------

struct TailCheckOptions {
    /// site x K weights; sites 0 and 1 form the joint pair.
    std::vector<std::vector<double>> w{{1.0, 0.2}, {0.7, 0.5}, {0.3, 0.8}, {0.1, 1.0}};
    std::vector<double> theta{1.0, 0.5};
    double tau = 1.0;
    double alpha0 = 2.0;
    std::size_t n = 1000000;
    /// Level x is this quantile of the pooled log-Laplace sample.
    double level = 0.999;
    std::uint64_t seed = 2024;
};

struct TailCheckResult {
    double x = 0.0;
    double target = 0.0;   ///< 2 tau^alpha0
    double marginal = 0.0; ///< P(X_F > x) / P(X_L > x), pooled over sites
    double joint = 0.0;    ///< same for the pair (0, 1)
    long raw_marginal_f = 0, raw_marginal_l = 0, raw_joint_f = 0, raw_joint_l = 0;
};

/// Monte-Carlo tail ratios with a common Y = W Z. Probabilities are averaged conditionally on
/// each Y draw (exact noise survival functions); the raw exceedance counts are reported too.
TailCheckResult tail_equivalence(const TailCheckOptions& opt = {});

}  // namespace cxvae::dist
