#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cxvae/distributions.hpp"
#include "oracles.hpp"

using namespace cxvae;
using namespace cxvae::dist;

// --- log-Laplace -------------------------------------------------------------------

TEST(LogLaplace, CdfBranchesMeetAtOne) { EXPECT_DOUBLE_EQ(loglaplace_cdf(1.0, {30.0}), 0.5); }

TEST(LogLaplace, CdfAtOnePointOne) {
    const double want = 1.0 - 0.5 * std::pow(1.1, -30.0);  // hand evaluation
    EXPECT_NEAR(loglaplace_cdf(1.1, {30.0}), want, 1e-15);
    EXPECT_NEAR(loglaplace_cdf(1.1, {30.0}), 0.971346, 1e-6);
}

TEST(LogLaplace, CdfLimits) {
    EXPECT_NEAR(loglaplace_cdf(1e30, {30.0}), 1.0, 1e-15);
    EXPECT_NEAR(loglaplace_cdf(1e-30, {2.0}), 0.0, 1e-15);
}

TEST(LogLaplace, CdfMonotone) {
    double prev = 0.0;
    for (double x = 0.01; x < 10.0; x *= 1.07) {
        const double f = loglaplace_cdf(x, {3.0});
        ASSERT_GE(f, prev);
        prev = f;
    }
}

TEST(LogLaplace, DomainErrors) {
    EXPECT_THROW(loglaplace_cdf(0.0, {30.0}), DomainError);
    EXPECT_THROW(loglaplace_cdf(-1.0, {30.0}), DomainError);
    EXPECT_THROW(loglaplace_cdf(std::nan(""), {30.0}), DomainError);
    EXPECT_THROW(loglaplace_cdf(1.0, {0.0}), DomainError);
    EXPECT_THROW(loglaplace_sample({2.0}, 0, 1), DomainError);
}

TEST(LogLaplace, SamplesPassKs) {
    const LogLaplaceParams p{4.0};
    const auto x = loglaplace_sample(p, 100000, 11);
    EXPECT_LT(oracle::ks_distance(x, [&](double v) { return loglaplace_cdf(v, p); }), oracle::ks_critical_1pct(x.size()));
}

TEST(LogLaplace, LogOfSamplesIsLaplace) {
    const LogLaplaceParams p{5.0};
    auto x = loglaplace_sample(p, 50000, 12);
    for (auto& v : x) v = std::log(v);
    // Laplace(0, b) CDF, b = 1/alpha0, written out independently.
    const double b = 1.0 / p.alpha0;
    auto lap = [b](double u) { return u < 0 ? 0.5 * std::exp(u / b) : 1.0 - 0.5 * std::exp(-u / b); };
    EXPECT_LT(oracle::ks_distance(x, lap), oracle::ks_critical_1pct(x.size()));
}

TEST(LogLaplace, TailAtTwo) {
    const auto x = loglaplace_sample({2.0}, 200000, 13);
    double hits = 0;
    for (double v : x) hits += v > 2.0;
    const double p = hits / x.size();
    const double se = std::sqrt(0.125 * 0.875 / x.size());
    EXPECT_NEAR(p, 0.125, 3 * se);
}

TEST(LogLaplace, MedianIsOne) {
    auto x = loglaplace_sample({30.0}, 100001, 14);
    std::nth_element(x.begin(), x.begin() + 50000, x.end());
    EXPECT_NEAR(x[50000], 1.0, 0.005);
}

TEST(LogLaplace, DensityReciprocalSymmetry) {
    const LogLaplaceParams p{3.0};
    for (double x : {0.2, 0.7, 1.3, 4.0}) {
        const double lhs = std::exp(loglaplace_logpdf(x, p));
        const double rhs = std::exp(loglaplace_logpdf(1.0 / x, p)) * std::pow(x, -2.0);
        EXPECT_NEAR(lhs, rhs, 1e-12 * lhs);
    }
}

TEST(LogLaplace, QuantileInvertsCdf) {
    const LogLaplaceParams p{7.0};
    for (double u : {0.01, 0.3, 0.5, 0.8, 0.999}) EXPECT_NEAR(loglaplace_cdf(loglaplace_quantile(u, p), p), u, 1e-13);
}

TEST(LogLaplace, SamplerBitReproducible) {
    EXPECT_EQ(loglaplace_sample({3.0}, 100, 99), loglaplace_sample({3.0}, 100, 99));
}

// --- expPS -------------------------------------------------------------------------

TEST(ExpPS, LogDensityThetaZero) {
    const double v = expps_logdensity_half(1.0, 0.0);
    EXPECT_NEAR(v, std::log(0.5 / std::sqrt(std::numbers::pi) * std::exp(-0.25)), 1e-14);
    EXPECT_NEAR(v, -1.5155, 1e-4);
    EXPECT_NEAR(std::exp(v), 0.21970, 1e-5);
}

TEST(ExpPS, LogDensityThetaTwo) {
    EXPECT_NEAR(std::exp(expps_logdensity_half(1.0, 2.0)), 0.21970 * std::exp(std::sqrt(2.0) - 2.0), 1e-5);
    EXPECT_NEAR(std::exp(expps_logdensity_half(1.0, 2.0)), 0.12230, 1e-5);
}

TEST(ExpPS, ThetaZeroIsLevy) {
    // Levy(0, c) density sqrt(c / 2 pi) z^{-3/2} exp(-c / 2z) with c = 1/2.
    for (double z : {0.05, 0.3, 1.0, 7.0}) {
        const double levy = std::sqrt(0.5 / (2 * std::numbers::pi)) * std::pow(z, -1.5) * std::exp(-0.25 / z);
        EXPECT_NEAR(expps_logdensity_half(z, 0.0), std::log(levy), 1e-13);
    }
}

class ExpPSQuadrature : public ::testing::TestWithParam<double> {};

TEST_P(ExpPSQuadrature, IntegratesToOne) {
    const double theta = GetParam();
    // theta = 0 has a z^{-1/2} tail; integrate to a large bound and add the analytic remainder.
    const double hi = 60.0;
    double mass = oracle::integrate_positive([&](double z) { return std::exp(expps_logdensity_half(z, theta)); }, -12.0, hi, 400000);
    if (theta == 0.0) mass += std::erf(0.5 / std::sqrt(std::exp(hi)));  // P(Z > e^hi) for Levy(0, 1/2)
    EXPECT_NEAR(mass, 1.0, 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Theta, ExpPSQuadrature, ::testing::Values(0.0, 0.5, 2.0));

TEST(ExpPS, ThetaZeroAlwaysAccepts) {
    const auto d = expps_sample({0.5, 0.0}, 1000, 3);
    EXPECT_EQ(d.proposals, 1000u);
}

TEST(ExpPS, AcceptanceRateThetaTwo) {
    const auto d = expps_sample({0.5, 2.0}, 30000, 4);
    const double rate = 30000.0 / d.proposals;
    const double p = std::exp(-std::sqrt(2.0));
    EXPECT_NEAR(p, 0.2431, 1e-4);
    EXPECT_NEAR(rate, p, 3 * std::sqrt(p * (1 - p) / d.proposals));
}

TEST(ExpPS, LaplaceTransformThetaZero) {
    const auto d = expps_sample({0.5, 0.0}, 100000, 5);
    std::vector<double> e;
    for (double z : d.values) e.push_back(std::exp(-z));
    EXPECT_NEAR(oracle::mean(e), std::exp(-1.0), 3 * oracle::sd(e) / std::sqrt(e.size()));
}

TEST(ExpPS, SamplerMatchesDensityByKs) {
    // CDF of the tilted law by quadrature of the closed-form density.
    const double theta = 1.0;
    const auto d = expps_sample({0.5, theta}, 5000, 6);
    auto cdf = [&](double x) {
        return oracle::simpson([&](double u) { return std::exp(expps_logdensity_half(std::exp(u), theta) + u); }, -12.0, std::log(x), 2000);
    };
    EXPECT_LT(oracle::ks_distance(d.values, cdf), oracle::ks_critical_1pct(d.values.size()));
}

TEST(ExpPS, Errors) {
    EXPECT_THROW(expps_logdensity_half(0.0, 1.0), DomainError);
    EXPECT_THROW(expps_logdensity_half(1.0, -1.0), DomainError);
    EXPECT_THROW(expps_sample({0.3, 1.0}, 10, 1), DomainError);
    Rng rng(1);
    EXPECT_THROW(expps_draw(rng, 1e6, nullptr, 10), NumericalError);
}

TEST(ExpPS, SamplerBitReproducible) {
    EXPECT_EQ(expps_sample({0.5, 1.0}, 200, 8).values, expps_sample({0.5, 1.0}, 200, 8).values);
}

// --- Frechet -----------------------------------------------------------------------

TEST(Frechet, CdfAtTau) { EXPECT_NEAR(frechet_cdf(2.5, {2.5, 3.0}), std::exp(-1.0), 1e-15); }

TEST(Frechet, TailConstant) {
    const FrechetParams p{1.5, 2.0};
    const double x = 100 * p.tau;
    const double r = frechet_survival(x, p) * std::pow(x, p.alpha0);
    EXPECT_NEAR(r / std::pow(p.tau, p.alpha0), 1.0, 0.01);
}

TEST(Frechet, SampleMedian) {
    const FrechetParams p{2.0, 3.0};
    auto x = frechet_sample(p, 100001, 21);
    std::nth_element(x.begin(), x.begin() + 50000, x.end());
    const double want = p.tau * std::pow(std::log(2.0), -1.0 / p.alpha0);
    EXPECT_NEAR(x[50000], want, 0.01 * want);
}

TEST(Frechet, QuantileRoundTrip) {
    const FrechetParams p{1.0, 2.0};
    for (double u : {0.1, 0.5, 0.9}) EXPECT_NEAR(frechet_cdf(frechet_quantile(u, p), p), u, 1e-13);
}

TEST(Frechet, Errors) {
    EXPECT_THROW(frechet_cdf(-1.0, {1.0, 1.0}), DomainError);
    EXPECT_THROW(frechet_cdf(1.0, {0.0, 1.0}), DomainError);
}

// --- GEV ---------------------------------------------------------------------------

TEST(Gev, CdfAtMu) { EXPECT_NEAR(gev_cdf(0.0, {0.0, 1.0, 0.2}), std::exp(-1.0), 1e-15); }

TEST(Gev, QuantileRoundTrip) {
    const GevParams g{1.0, 2.0, -0.3};
    for (double x : {-2.0, 0.0, 1.0, 5.0}) EXPECT_NEAR(gev_quantile(gev_cdf(x, g), g), x, 1e-10);
}

TEST(Gev, OutsideSupportClamped) {
    const GevParams g{0.0, 1.0, 0.5};  // lower endpoint -2
    const auto r = gev_cdf_checked(-3.0, g);
    EXPECT_TRUE(r.clamped);
    EXPECT_EQ(r.value, 0.0);
    const GevParams h{0.0, 1.0, -0.5};  // upper endpoint 2
    const auto s = gev_cdf_checked(3.0, h);
    EXPECT_TRUE(s.clamped);
    EXPECT_EQ(s.value, 1.0);
    EXPECT_FALSE(gev_cdf_checked(0.0, h).clamped);
}

TEST(Gev, RejectsZeroShape) {
    EXPECT_THROW(gev_cdf(0.0, {0.0, 1.0, 0.0}), DomainError);
    EXPECT_THROW(gev_cdf(0.0, {0.0, -1.0, 0.1}), DomainError);
}

TEST(Gev, FitRecoversTruth) {
    const GevParams truth{0.0, 1.0, 0.3};
    const auto x = gev_sample(truth, 10000, 31);
    const auto fit = gev_fit(x);
    EXPECT_NEAR(fit.params.mu, truth.mu, 0.1);
    EXPECT_NEAR(fit.params.sigma, truth.sigma, 0.1);
    EXPECT_NEAR(fit.params.xi, truth.xi, 0.1);
    for (double v : x) EXPECT_GT(1.0 + fit.params.xi * (v - fit.params.mu) / fit.params.sigma, 0.0);
}

TEST(Gev, FitNegativeShape) {
    const GevParams truth{2.0, 0.5, -0.2};
    const auto x = gev_sample(truth, 5000, 32);
    const auto fit = gev_fit(x);
    EXPECT_NEAR(fit.params.xi, truth.xi, 0.1);
    EXPECT_LT(fit.params.xi, 0.0);
}

TEST(Gev, FitNeedsThirtyPoints) {
    const auto x = gev_sample({0, 1, 0.1}, 29, 1);
    EXPECT_THROW(gev_fit(x), DomainError);
}

TEST(Gev, LogPdfIntegratesToOne) {
    const GevParams g{0.5, 1.3, 0.25};
    const double lo = g.endpoint() + 1e-9;
    const double mass = oracle::simpson([&](double x) { return std::exp(gev_logpdf(x, g)); }, lo, lo + 4000.0, 2000000);
    EXPECT_NEAR(mass, 1.0, 2e-3);  // polynomial tail beyond the bound is about 1e-3
}
