#pragma once

// Daily-series preprocessing: seasonal spline regression pooled over a 60 km neighbourhood,
// log-linear variance model, detrending, monthly maxima, chi-square GOF and the GEV-to-Pareto
// marginal transform.

#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cxvae/distributions.hpp"
#include "cxvae/fieldsim.hpp"

namespace cxvae::prep {

using Date = std::chrono::year_month_day;

inline constexpr int kSplineBasis = 12;
inline constexpr double kPeriod = 365.0;

/// Cubic B-spline with unit knot spacing, support [0, 4).
double cubic_bspline(double x);
/// Periodic cubic B-spline basis (12 functions) at a day-of-year phase in [0, 365).
Vector periodic_basis(double phase);

struct SeasonalDesign {
    Matrix m;                 ///< N x (2 + kept spline columns): intercept, time (years), splines
    std::vector<double> phase;
    /// Index of the spline column removed for collinearity with the intercept (-1 = none).
    int dropped_spline = -1;
    int rank = 0;
};

/// Calendar days starting at `start`.
std::vector<Date> calendar(Date start, std::size_t n_days);

SeasonalDesign build_design(std::size_t n_days, Date start);

struct GeoPoint {
    double lon = 0.0;
    double lat = 0.0;
};

inline constexpr double kEarthRadiusKm = 6371.0;
double haversine_km(const GeoPoint& a, const GeoPoint& b);

/// S_j = {i : dist(s_i, s_j) < r_km}; always contains j.
std::vector<std::vector<std::size_t>> neighborhood(const std::vector<GeoPoint>& sites, double r_km = 60.0);

struct SeasonalFit {
    Vector beta;
    Vector fitted;
};

/// OLS of the stacked neighbour responses on the stacked design.
SeasonalFit fit_seasonal(const Matrix& design, const std::vector<Vector>& responses);

struct VarianceModel {
    double beta1 = 0.0;
    double beta2 = 0.0;
    Vector sd;
};

/// Columns (1, t) with t rescaled to [0, 1].
Matrix variance_design(std::size_t n);

/// Maximizes -1/2 sum [log eps_i^2 + r_i^2 / eps_i^2], log eps = T (b1, b2)'.
VarianceModel fit_variance(const Vector& residuals, const Matrix& timecols);

Vector detrend(const Vector& x, const Vector& fitted, const Vector& sd);
Vector retrend(const Vector& z, const Vector& fitted, const Vector& sd);

struct MonthlyMax {
    int year = 0;
    unsigned month = 0;
    double value = 0.0;
};

std::vector<MonthlyMax> monthly_maxima(std::span<const double> series, const std::vector<Date>& dates);

struct GofResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    std::vector<double> observed;
    std::vector<double> expected;
    std::vector<double> edges;  ///< bin boundaries; outer bins extend to the support ends
};

struct GofOptions {
    int n_bins = 10;
    int n_params = 3;
    /// Classical 2 sum O log(O/E) instead of the statistic as printed.
    bool doubled = false;
};

/// Equal-width bins over the data range; adjacent bins merged until every E_i >= 1.
GofResult chi2_gof(std::span<const double> maxima, const std::function<double(double)>& cdf, const GofOptions& opt = {});

/// chi-square survival function.
double chi2_survival(double x, int df);

/// GEV monthly maximum to the Pareto-type scale through beta = mu - sigma/xi.
double marginal_transform(double m, const dist::GevParams& g, const std::string& context = "");
std::vector<double> marginal_transform(std::span<const double> m, const dist::GevParams& g, const std::string& context = "");

struct SyntheticDaily {
    double intercept = 10.0;
    double trend = 0.5;          ///< per year
    double amplitude = 4.0;      ///< seasonal cycle
    double log_sd0 = 0.0;        ///< log sd at t = 0
    double log_sd_slope = 0.3;   ///< change of log sd over the record
};

/// Seasonal + trend + heteroskedastic Gaussian noise series on the given calendar.
Vector synthetic_daily(const std::vector<Date>& dates, const SyntheticDaily& p, std::uint64_t seed);

}  // namespace cxvae::prep
