#pragma once

// Extremal-dependence and forecast diagnostics: chi(u), ARE(u), twCRPS, Q-Q data.
// Rows of a field matrix are replicates (times or emulated samples), columns are sites.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cxvae/fieldsim.hpp"

namespace cxvae::metrics {

/// Per-column empirical CDF values #{x_r' <= x_r} / n (ties share the upper rank).
Matrix rank_transform(const Matrix& fields);

struct Curve {
    std::vector<double> u;
    std::vector<double> estimate;
    std::vector<double> lo95;
    std::vector<double> hi95;
    /// false where the estimate is undefined (no conditioning exceedance); values are NaN there.
    std::vector<bool> defined;
};

struct ChiCurve : Curve {
    double distance = 0.0;
    double tolerance = 0.0;
    std::size_t n_pairs = 0;
};

struct AreCurve : Curve {
    double psi = 1.0;
    long reference_id = 0;
};

struct BootstrapOptions {
    int n_boot = 200;
    std::uint64_t seed = 1;
};

/// Site pairs whose distance lies in [d - tol, d + tol]; subsampled (seeded) to at most max_pairs.
std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs_at_distance(const SpatialGrid& grid, double d, double tol,
                                                                     std::size_t max_pairs, std::uint64_t seed);

/// chi_hat(u) = #{both > u} / #{first > u}, averaged over the pairs.
std::vector<double> chi_estimate(const Matrix& u_fields, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& pairs,
                                 const std::vector<double>& u, std::vector<bool>* defined = nullptr);

ChiCurve chi_curve(const Matrix& fields, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& pairs,
                   const std::vector<double>& u, const BootstrapOptions& boot);

/// Convenience: pairs at distance d +/- tol (default tol = psi / 2).
ChiCurve chi_curve(const Matrix& fields, const SpatialGrid& grid, double d, const std::vector<double>& u,
                   const BootstrapOptions& boot, double tol = -1.0, std::size_t max_pairs = 200);

/// ARE(u) = sqrt(psi^2 sum_r sum_i 1(U_ir > u, U_0r > u) / (pi sum_r 1(U_0r > u))).
std::vector<double> are_estimate(const Matrix& u_fields, Eigen::Index ref, double psi, const std::vector<double>& u,
                                 std::vector<bool>* defined = nullptr);

AreCurve are_curve(const Matrix& fields, const SpatialGrid& grid, Eigen::Index ref, const std::vector<double>& u,
                   const BootstrapOptions& boot);

/// Index of the grid-centre cell.
Eigen::Index center_site(const SpatialGrid& grid);

/// Nearest-rank empirical quantile: the ceil(p n)-th order statistic.
double nearest_rank_quantile(std::span<const double> sorted, double p);
/// Type-7 (linear interpolation) empirical quantile.
double quantile7(std::span<const double> sorted, double p);

/// Integral over [threshold, inf) of (F_hat(z) - 1(z >= obs))^2, exact for the empirical CDF.
double crps_above(std::span<const double> ensemble, double obs, double threshold);
/// twCRPS with threshold = nearest-rank 90th percentile of the ensemble.
double twcrps(std::span<const double> ensemble, double obs);
/// Unweighted CRPS (threshold -inf).
double crps(std::span<const double> ensemble, double obs);

struct QQ {
    std::vector<double> q;
    std::vector<double> obs;
    std::vector<double> ens;
};
QQ qq_data(std::span<const double> obs, std::span<const double> ens, const std::vector<double>& q);

/// Energy distance 2 E|A - B| - E|A - A'| - E|B - B'| between two samples (rows are points).
double energy_distance(const Matrix& a, const Matrix& b);

double median(std::vector<double> v);

/// Writes u,estimate,lo95,hi95 and a JSON sidecar with `meta`.
void write_curve(const std::string& path, const Curve& c, const std::string& meta_json);

}  // namespace cxvae::metrics
