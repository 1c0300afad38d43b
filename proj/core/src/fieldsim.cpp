#include "cxvae/fieldsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "cxvae/distributions.hpp"
#include "cxvae/rng.hpp"

namespace cxvae {

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void SpatialGrid::validate() const {
    if (ids.size() != sites.size()) throw DomainError("grid ids and sites differ in length");
    std::set<long> seen;
    for (std::size_t i = 0; i < sites.size(); ++i) {
        if (!std::isfinite(sites[i].x) || !std::isfinite(sites[i].y))
            throw DomainError("grid coordinates must be finite");
        if (!seen.insert(ids[i]).second) throw DomainError("duplicate site id " + std::to_string(ids[i]));
    }
    if (regular && static_cast<std::size_t>(regular->rows) * regular->cols != sites.size())
        throw DomainError("regular grid rows*cols does not match site count");
}

void KnotGrid::validate() const {
    if (knots.empty()) throw DomainError("knot grid needs at least one knot");
    for (std::size_t i = 0; i < knots.size(); ++i)
        for (std::size_t j = i + 1; j < knots.size(); ++j)
            if (distance(knots[i], knots[j]) == 0.0) throw DomainError("knots must be distinct");
}

double ConditionSeries::min() const { return *std::min_element(values.begin(), values.end()); }
double ConditionSeries::max() const { return *std::max_element(values.begin(), values.end()); }
double ConditionSeries::mean() const {
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

namespace sim {

SpatialGrid regular_grid(int rows, int cols, double side, double x0, double y0) {
    if (rows < 1 || cols < 1 || !(side > 0.0)) throw DomainError("invalid regular grid geometry");
    SpatialGrid g;
    g.regular = RegularGridInfo{rows, cols, side};
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            g.sites.push_back({x0 + (c + 0.5) * side, y0 + (r + 0.5) * side});
            g.ids.push_back(static_cast<long>(r) * cols + c);
        }
    }
    return g;
}

KnotGrid knot_lattice(int per_side, double lo, double hi) {
    if (per_side < 1 || !(hi > lo)) throw DomainError("invalid knot lattice");
    KnotGrid k;
    k.spacing = (hi - lo) / per_side;
    for (int r = 0; r < per_side; ++r)
        for (int c = 0; c < per_side; ++c)
            k.knots.push_back({lo + (c + 0.5) * k.spacing, lo + (r + 0.5) * k.spacing});
    return k;
}

double wendland(double d, double radius) {
    if (!(radius > 0.0)) throw DomainError("Wendland radius must be positive");
    const double q = d / radius;
    if (q >= 1.0) return 0.0;
    const double a = 1.0 - q;
    return a * a * a * a * (4.0 * q + 1.0);
}

BasisMatrix wendland_basis(const SpatialGrid& grid, const KnotGrid& knots, double radius) {
    if (!(radius > 0.0)) throw DomainError("Wendland radius must be positive");
    BasisMatrix w(grid.size(), knots.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        for (std::size_t k = 0; k < knots.size(); ++k)
            w(j, k) = wendland(distance(grid.sites[j], knots.knots[k]), radius);
        if (!(w.row(j).maxCoeff() > 0.0)) {
            std::ostringstream os;
            os << "site " << j << " at (" << grid.sites[j].x << ", " << grid.sites[j].y
               << ") is farther than radius " << radius << " from every knot";
            throw DomainError(os.str());
        }
    }
    return w;
}

Point theta_center(double c, const ThetaKernel& k) {
    return {c * k.anchor_high.x + (1.0 - c) * k.anchor_low.x, c * k.anchor_high.y + (1.0 - c) * k.anchor_low.y};
}

DependenceField simulate_theta(const ConditionSeries& c, const KnotGrid& knots, const ThetaKernel& k) {
    DependenceField theta(c.size(), knots.size());
    for (std::size_t t = 0; t < c.size(); ++t) {
        const double ct = c.values[t];
        if (!(ct >= 0.0 && ct <= 1.0)) throw DomainError("condition values must lie in [0, 1]");
        const Point l = theta_center(ct, k);
        for (std::size_t j = 0; j < knots.size(); ++j)
            theta(t, j) = k.gamma * std::exp(-std::pow(distance(knots.knots[j], l) / k.tau, k.b));
    }
    return theta;
}

SimulatedData simulate_dataset(const DependenceField& theta, const BasisMatrix& w, double alpha,
                               double alpha0, std::uint64_t seed) {
    if (alpha != 0.5) throw DomainError("simulation supports alpha = 1/2 only");
    if (theta.cols() != w.cols()) throw DomainError("theta and W disagree on the number of knots");
    for (Eigen::Index j = 0; j < w.rows(); ++j)
        if (!(w.row(j).maxCoeff() > 0.0)) throw DomainError("W must have a positive entry in every row");
    const dist::LogLaplaceParams noise{alpha0};
    noise.validate();

    const auto n_t = theta.rows();
    const auto n_s = w.rows();
    const auto n_k = w.cols();
    SimulatedData out{DataTensor(n_t, n_s), Matrix(n_t, n_k), Matrix(n_t, n_s)};
    const Rng root(seed);
    for (Eigen::Index t = 0; t < n_t; ++t) {
        Rng latent = root.substream({static_cast<std::uint64_t>(t), 0});
        for (Eigen::Index k = 0; k < n_k; ++k) out.z(t, k) = dist::expps_draw(latent, theta(t, k));
        Rng eps = root.substream({static_cast<std::uint64_t>(t), 1});
        out.y.row(t) = (w * out.z.row(t).transpose()).transpose();
        for (Eigen::Index j = 0; j < n_s; ++j) out.x(t, j) = dist::loglaplace_draw(eps, noise) * out.y(t, j);
    }
    return out;
}

std::vector<double> moving_average(const std::vector<double>& raw, int window, EdgeMode edges) {
    if (window < 1) throw DomainError("window must be >= 1");
    if (raw.size() < static_cast<std::size_t>(window)) throw DomainError("series shorter than window");
    const int n = static_cast<int>(raw.size());
    const int half = window / 2;
    std::vector<double> out;
    out.reserve(raw.size());
    for (int t = 0; t < n; ++t) {
        const int lo = t - half;
        const int hi = t - half + window - 1;
        if (edges == EdgeMode::Drop && (lo < 0 || hi >= n)) continue;
        const int a = std::max(lo, 0);
        const int b = std::min(hi, n - 1);
        double s = 0.0;
        for (int i = a; i <= b; ++i) s += raw[i];
        out.push_back(s / (b - a + 1));
    }
    return out;
}

ConditionSeries smooth_condition(const std::vector<double>& raw, int window, EdgeMode edges) {
    auto smoothed = moving_average(raw, window, edges);
    const auto [lo, hi] = std::minmax_element(smoothed.begin(), smoothed.end());
    const double a = *lo;
    const double range = *hi - *lo;
    if (!(range > 0.0)) throw DomainError("cannot normalize a constant condition series");
    ConditionSeries c;
    c.values.reserve(smoothed.size());
    for (double v : smoothed) c.values.push_back((v - a) / range);
    return c;
}

std::vector<double> enso_like_raw(std::size_t n_t, std::uint64_t seed) {
    Rng rng = Rng(seed).substream({0xE750});
    std::vector<double> raw(n_t);
    for (std::size_t t = 0; t < n_t; ++t) {
        const double tt = static_cast<double>(t);
        raw[t] = std::sin(2.0 * std::numbers::pi * tt / 43.0) +
                 0.45 * std::sin(2.0 * std::numbers::pi * tt / 17.0 + 1.0) + 0.25 * rng.normal();
    }
    return raw;
}

Preset full_preset() { return Preset{}; }

Preset desk_preset() {
    Preset p;
    p.grid_side = 20;
    p.knots_per_side = 4;
    p.xi_basis_per_side = 3;
    p.n_t = 200;
    // Full preset: radius 3 over knot spacing 2.5. Same ratio at spacing 5.
    p.wendland_radius = 6.0;
    return p;
}

}  // namespace sim
}  // namespace cxvae
