#pragma once

// Spatial grids, basis systems, condition-indexed tilting fields and synthetic datasets.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "cxvae/error.hpp"

namespace cxvae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Point {
    double x = 0.0;
    double y = 0.0;
};

double distance(const Point& a, const Point& b);

struct RegularGridInfo {
    int rows = 0;
    int cols = 0;
    double side = 1.0;  ///< cell side length (psi)
};

struct SpatialGrid {
    std::vector<Point> sites;
    std::vector<long> ids;
    std::optional<RegularGridInfo> regular;

    [[nodiscard]] std::size_t size() const { return sites.size(); }
    void validate() const;
};

struct KnotGrid {
    std::vector<Point> knots;
    /// Lattice spacing when the knots form a square lattice, else 0.
    double spacing = 0.0;

    [[nodiscard]] std::size_t size() const { return knots.size(); }
    void validate() const;
};

/// time x site matrix of strictly positive values.
using DataTensor = Matrix;
/// time x knot matrix of nonnegative tilting parameters.
using DependenceField = Matrix;
/// site x knot nonnegative weights with positive row sums.
using BasisMatrix = Matrix;

struct ConditionSeries {
    std::vector<double> values;

    [[nodiscard]] std::size_t size() const { return values.size(); }
    [[nodiscard]] double min() const;
    [[nodiscard]] double max() const;
    [[nodiscard]] double mean() const;
};

namespace sim {

/// rows x cols cell-centred grid covering [x0, x0 + cols*side] x [y0, y0 + rows*side].
/// Site ids are row-major indices.
SpatialGrid regular_grid(int rows, int cols, double side, double x0 = 0.0, double y0 = 0.0);

/// per_side x per_side knots at cell centres of a square domain [lo, hi]^2.
KnotGrid knot_lattice(int per_side, double lo, double hi);

/// Wendland C2 kernel (1 - d/r)_+^4 (4 d/r + 1).
double wendland(double d, double radius);

/// Throws DomainError if some site is farther than `radius` from every knot.
BasisMatrix wendland_basis(const SpatialGrid& grid, const KnotGrid& knots, double radius);

struct ThetaKernel {
    double gamma = 2.0;
    double b = 2.0;
    double tau = 15.0;
    Point anchor_high{0.0, 20.0};  ///< centre when c = 1
    Point anchor_low{20.0, 0.0};   ///< centre when c = 0
};

/// Centre of the tilting bump at condition value c.
Point theta_center(double c, const ThetaKernel& k);

/// theta_kt = gamma exp{-(|g_k - l_t| / tau)^b}, l_t = c_t a_high + (1 - c_t) a_low.
DependenceField simulate_theta(const ConditionSeries& c, const KnotGrid& knots, const ThetaKernel& k = {});

struct SimulatedData {
    DataTensor x;  ///< time x site observations
    Matrix z;      ///< time x knot latent expPS draws
    Matrix y;      ///< time x site noise-free field W z
};

/// Per time t: Z_kt ~ expPS(alpha, theta_kt), Y = W Z, X = eps * Y with log-Laplace(0, 1/alpha0) noise.
SimulatedData simulate_dataset(const DependenceField& theta, const BasisMatrix& w, double alpha,
                               double alpha0, std::uint64_t seed);

enum class EdgeMode { Shrink, Drop };

/// Centred moving average (shrinking window at the edges, or edges dropped), then min-max scaled.
ConditionSeries smooth_condition(const std::vector<double>& raw, int window = 5,
                                 EdgeMode edges = EdgeMode::Shrink);

/// Centred moving average only, before normalization.
std::vector<double> moving_average(const std::vector<double>& raw, int window, EdgeMode edges);

/// Raw ENSO-like oscillation: two incommensurate sinusoids plus white noise.
std::vector<double> enso_like_raw(std::size_t n_t, std::uint64_t seed);

struct Preset {
    int grid_side = 50;
    double domain = 20.0;
    int knots_per_side = 8;
    double wendland_radius = 3.0;
    int xi_basis_per_side = 4;
    std::size_t n_t = 528;
    double alpha = 0.5;
    double alpha0 = 30.0;
    ThetaKernel kernel{};

    [[nodiscard]] int n_knots() const { return knots_per_side * knots_per_side; }
    [[nodiscard]] int n_xi_basis() const { return xi_basis_per_side * xi_basis_per_side; }
    [[nodiscard]] double cell_side() const { return domain / grid_side; }
    [[nodiscard]] double knot_spacing() const { return domain / knots_per_side; }
};

/// 50x50 grid on [0,20]^2, K = 64, radius 3, n_t = 528.
Preset full_preset();
/// 20x20 grid on [0,20]^2, K = 16, M = 9, n_t = 200; the radius keeps the full preset's
/// radius-to-knot-spacing ratio so every site stays covered.
Preset desk_preset();

}  // namespace sim
}  // namespace cxvae
