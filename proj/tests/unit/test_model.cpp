#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cxvae/distributions.hpp"
#include "cxvae/model.hpp"
#include "oracles.hpp"

using namespace cxvae;
using namespace cxvae::model;

namespace {

HyperParams tiny_hyper(int n_sites = 9) {
    HyperParams h;
    h.n_sites = n_sites;
    h.K = 4;
    h.M = 4;
    h.channels = 4;
    h.encoder_hidden = {6};
    h.rho0 = 0.05;
    return h;
}

struct Tiny {
    HyperParams h = tiny_hyper();
    Model m;
    DataTensor x;
    std::vector<double> c;
    Tiny() {
        const auto grid = sim::regular_grid(3, 3, 1.0);
        const auto knots = sim::knot_lattice(2, 0.0, 3.0);
        ModelInit init;
        init.w_init = sim::wendland_basis(grid, knots, 3.0);
        init.knots = knots;
        init.seed = 5;
        m = make_model(h, init);
        Rng rng(17);
        for (Eigen::Index i = 0; i < m.params.values.size(); ++i) m.params.values[i] += 0.3 * rng.normal();
        x.resize(6, 9);
        for (Eigen::Index t = 0; t < 6; ++t)
            for (Eigen::Index j = 0; j < 9; ++j) x(t, j) = std::exp(rng.normal());
        c = {0.1, 0.4, 0.4, 0.9, 0.7, 0.0};
    }
};

}  // namespace

TEST(Hyper, Validation) {
    auto h = tiny_hyper();
    EXPECT_NO_THROW(h.validate());
    h.alpha = 0.6;
    EXPECT_THROW(h.validate(), DomainError);
    h = tiny_hyper();
    h.M = 5;
    EXPECT_THROW(h.validate(), DomainError);
    h = tiny_hyper();
    h.kernel_width = 2;
    EXPECT_THROW(h.validate(), DomainError);
}

TEST(Softplus, InverseRoundTrip) {
    for (double y : {1e-6, 0.1, 1.0, 30.0, 800.0}) EXPECT_NEAR(softplus(softplus_inverse(y)), y, 1e-12 * std::max(1.0, y));
    EXPECT_DOUBLE_EQ(softplus(0.0), std::log(2.0));
}

TEST(Encoder, ZeroWeightsGiveLogTwo) {
    auto h = tiny_hyper();
    Model m = make_model(h, {});
    m.params.values.setZero();
    Vector x = Vector::Constant(9, 3.0);
    const auto e = encode(x, m);
    ASSERT_EQ(e.mu.size(), 4);
    ASSERT_EQ(e.sigma.size(), 4);
    for (int k = 0; k < 4; ++k) {
        EXPECT_NEAR(e.mu[k], 0.693147, 1e-6);
        EXPECT_NEAR(e.sigma[k], 0.693147, 1e-6);
    }
}

TEST(Encoder, DisconnectedInputIgnoresScale) {
    Tiny s;
    s.m.params.block("enc.w0").setZero();
    const Vector x = s.x.row(0).transpose();
    const auto a = encode(x, s.m), b = encode(2.0 * x, s.m);
    EXPECT_EQ(a.mu, b.mu);
    EXPECT_EQ(a.sigma, b.sigma);
}

TEST(Reparam, HandValues) {
    Vector mu(1), sigma(1), g(1), eps(1);
    mu << 2.0;
    sigma << 1.0;
    g << 0.5;
    eps << 1.0;
    EXPECT_NEAR(reparam_sample(mu, sigma, g, eps).z[0], std::exp(2.193147), 1e-4);
    EXPECT_NEAR(reparam_sample(mu, sigma, g, eps).z[0], 2.0 * std::exp(1.5), 1e-13);
    EXPECT_NEAR(reparam_sample(mu, sigma, g, eps).z[0], 8.9635, 2e-4);  // printed to 4 decimals
    sigma << 0.0;
    g << 0.0;
    EXPECT_DOUBLE_EQ(reparam_sample(mu, sigma, g, eps).z[0], 2.0);
    sigma << 0.7;
    g << -0.3;
    eps << 0.0;
    EXPECT_NEAR(reparam_sample(mu, sigma, g, eps).z[0], 2.0 * std::exp(-0.3), 1e-15);
}

TEST(Fuse, Interleaves) {
    Vector z(2);
    z << 3.0, 4.0;
    const Vector f = fuse(z, 0.25);
    ASSERT_EQ(f.size(), 4);
    EXPECT_EQ(f[0], 3.0);
    EXPECT_EQ(f[1], 0.25);
    EXPECT_EQ(f[2], 4.0);
    EXPECT_EQ(f[3], 0.25);
    const Vector g = fuse(z, 0.0);
    EXPECT_EQ(g[1], 0.0);
    EXPECT_EQ(g[3], 0.0);
}

TEST(XiDecoder, ZeroKernelsGiveSoftplusBias) {
    Tiny s;
    s.m.params.block("xi.conv_w").setZero();
    s.m.params.block("xi.conv_b").setZero();
    s.m.params.block("xi.dense_w").setZero();
    auto b = s.m.params.block("xi.dense_b");
    b << -1.0, 0.0, 0.5, 2.0;
    const Vector f = Vector::Constant(8, 1.3);
    const Vector xi = decode_xi(f, f, f, s.m);
    ASSERT_EQ(xi.size(), 4);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(xi[i], std::log1p(std::exp(b(0, i))), 1e-15);
}

TEST(XiDecoder, OrderSensitive) {
    Tiny s;
    Rng rng(3);
    Vector a(8), b(8), c(8);
    for (int i = 0; i < 8; ++i) {
        a[i] = rng.uniform();
        b[i] = rng.uniform();
        c[i] = rng.uniform();
    }
    EXPECT_GT((decode_xi(a, b, c, s.m) - decode_xi(c, b, a, s.m)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Theta, FromXi) {
    Matrix phi(3, 2);
    phi << 1, 2, 3, 4, 5, 6;
    Vector e1(2);
    e1 << 0, 1;
    EXPECT_EQ(theta_from_xi(e1, phi), phi.col(1));
    Matrix ones = Matrix::Ones(3, 1);
    EXPECT_EQ(theta_from_xi(Vector::Constant(1, 2.0), ones), Vector::Constant(3, 2.0));
    Vector xi(2);
    xi << 0.3, 0.9;
    Vector want(3);
    for (int k = 0; k < 3; ++k) want[k] = phi(k, 0) * 0.3 + phi(k, 1) * 0.9;
    EXPECT_LT((theta_from_xi(xi, phi) - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(XiBasis, PositiveAndShaped) {
    const auto knots = sim::knot_lattice(4, 0, 20);
    const Matrix phi = xi_basis(16, 9, &knots);
    EXPECT_EQ(phi.rows(), 16);
    EXPECT_EQ(phi.cols(), 9);
    EXPECT_GT(phi.minCoeff(), 0.0);
    EXPECT_LE(phi.maxCoeff(), 1.0);
}

TEST(DecodeY, NearIdentityAndLinear) {
    Matrix w = Matrix::Constant(3, 3, softplus(softplus_inverse(1e-12)));
    w.diagonal().setConstant(softplus(softplus_inverse(1.0)));
    Vector z(3);
    z << 1.0, 2.0, 3.0;
    EXPECT_LT((decode_y(z, w) - z).cwiseAbs().maxCoeff(), 1e-9);
    Matrix r = Matrix::Random(4, 3).cwiseAbs();
    EXPECT_LT((decode_y(2 * z, r) - 2 * decode_y(z, r)).cwiseAbs().maxCoeff(), 1e-14);
    Vector want = Vector::Zero(4);
    for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 3; ++k) want[j] += r(j, k) * z[k];
    EXPECT_LT((decode_y(z, r) - want).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Loglik, HandValues) {
    const Vector one = Vector::Ones(1);
    EXPECT_NEAR(loglik(one, one, 30.0), 2.70805, 1e-5);
    EXPECT_NEAR(loglik(Vector::Constant(1, std::numbers::e), one, 30.0), -28.29195, 1e-5);
}

TEST(Loglik, SwapSymmetry) {
    Vector x(3), y(3);
    x << 0.5, 2.0, 1.1;
    y << 0.7, 1.5, 1.1;
    const double lhs = loglik(x, y, 30.0) + x.array().log().sum();
    const double rhs = loglik(y, x, 30.0) + y.array().log().sum();
    EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(LogPrior, HandValueAndAdditivity) {
    EXPECT_NEAR(log_prior(Vector::Ones(1), Vector::Zero(1)), -1.5155, 1e-4);
    Vector z(2), th(2);
    z << 0.4, 3.0;
    th << 1.0, 0.2;
    EXPECT_NEAR(log_prior(z, th), log_prior(z.head(1), th.head(1)) + log_prior(z.tail(1), th.tail(1)), 1e-14);
}

TEST(LogPrior, MatchesQuadratureNormalizedDensity) {
    for (double theta : {0.3, 1.7}) {
        const double norm = oracle::integrate_positive(
            [&](double z) { return std::pow(z, -1.5) * std::exp(-1.0 / (4 * z) - theta * z); }, -12, 8, 200000);
        for (double z : {0.2, 1.0, 5.0}) {
            const double want = -1.5 * std::log(z) - 1.0 / (4 * z) - theta * z - std::log(norm);
            EXPECT_NEAR(log_prior(Vector::Constant(1, z), Vector::Constant(1, theta)), want, 1e-7);
        }
    }
}

TEST(LogQ, HandValueModeAndNormalization) {
    LatentSample s;
    s.z = Vector::Ones(1);
    s.mu = Vector::Ones(1);
    s.sigma = Vector::Ones(1);
    s.g_c = Vector::Zero(1);
    EXPECT_NEAR(log_q(s), -0.918939, 1e-6);

    const double m = 0.3, sg = 0.7;
    auto q = [&](double z) {
        LatentSample t;
        t.z = Vector::Constant(1, z);
        t.mu = Vector::Constant(1, std::exp(m));
        t.sigma = Vector::Constant(1, sg);
        t.g_c = Vector::Zero(1);
        return log_q(t);
    };
    EXPECT_NEAR(oracle::integrate_positive([&](double z) { return std::exp(q(z)); }, -10, 10, 20000), 1.0, 1e-9);
    const double mode = std::exp(m - sg * sg);
    EXPECT_GT(q(mode), q(mode * 1.01));
    EXPECT_GT(q(mode), q(mode * 0.99));
}

TEST(Penalty, HandValues) {
    const Vector a = Vector::Constant(1, 1.0), b = Vector::Constant(1, 2.0);
    EXPECT_EQ(penalty(a, a, 0.6, 0.1, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(penalty(b, a, 0.6, 0.1, 1.0), 2.0);
    EXPECT_DOUBLE_EQ(penalty(b, a, 0.3, 0.3, 1.0), 1e3);
    EXPECT_DOUBLE_EQ(penalty(b, a, 0.1, 0.6, 1.0), -2.0);
    EXPECT_DOUBLE_EQ(penalty(a, b, 0.1, 0.6, 1.0, PenaltyMode::Absolute), 2.0);
}

// Composes the single-step operations time by time as an independent oracle.
TEST(Elbo, MatchesComposedSingleStepOps) {
    Tiny s;
    const Matrix w = s.m.basis_weights();
    const Eigen::Index n_t = s.x.rows();
    std::vector<LatentSample> lat;
    std::vector<Vector> fused;
    for (Eigen::Index t = 0; t < n_t; ++t) {
        const auto e = encode(s.x.row(t).transpose(), s.m);
        lat.push_back(reparam_sample(e.mu, e.sigma, condition_map(s.c[t], s.m), Vector::Zero(4)));
        fused.push_back(fuse(lat.back().z, s.c[t]));
    }
    std::vector<Vector> xi;
    for (Eigen::Index t = 0; t < n_t; ++t)
        xi.push_back(decode_xi(fused[std::max<Eigen::Index>(t - 1, 0)], fused[t],
                               fused[std::min<Eigen::Index>(t + 1, n_t - 1)], s.m));
    const std::vector<Eigen::Index> batch{0, 2, 3, 5};
    double want = 0.0, pen = 0.0;
    for (auto t : batch) {
        const auto& l = lat[t];
        want += loglik(s.x.row(t).transpose(), decode_y(l.z, w), s.h.alpha0) +
                log_prior(l.z, theta_from_xi(xi[t], s.m.phi)) - log_q(l);
        if (t >= 1) pen += penalty(xi[t], xi[t - 1], s.c[t], s.c[t - 1], s.h.rho0);
    }
    ElboInputs in{&s.x, &s.c, batch};
    in.zero_noise = true;
    const auto terms = evaluate_elbo(s.m, in);
    EXPECT_NEAR(terms.penalty, pen, 1e-10 * std::max(1.0, std::abs(pen)));
    EXPECT_NEAR(terms.total, want - pen, 1e-9 * std::abs(want));
}

TEST(Elbo, PenaltyIsAdditive) {
    Tiny s;
    ElboInputs in{&s.x, &s.c, {1, 2, 4}};
    in.noise = Rng(4);
    const auto with = evaluate_elbo(s.m, in);
    s.m.hyper.rho0 = 0.0;
    const auto without = evaluate_elbo(s.m, in);
    EXPECT_NEAR(without.total - with.total, with.penalty, 1e-10 * std::abs(with.total));
    EXPECT_NE(with.penalty, 0.0);
}

TEST(Elbo, DeterministicGivenNoiseStream) {
    Tiny s;
    ElboInputs in{&s.x, &s.c, {0, 1, 2, 3, 4, 5}};
    in.noise = Rng(9);
    EXPECT_EQ(evaluate_elbo(s.m, in).total, evaluate_elbo(s.m, in).total);
    ElboInputs other = in;
    other.noise = Rng(10);
    EXPECT_NE(evaluate_elbo(s.m, in).total, evaluate_elbo(s.m, other).total);
}

TEST(Elbo, GradientMatchesFiniteDifferences) {
    Tiny s;
    ElboInputs in{&s.x, &s.c, {0, 1, 2, 3, 4, 5}};
    in.noise = Rng(21);
    ad::Loss f = [&](ad::Tape& t, const ad::Var& p) { return penalized_elbo(t, p, s.m, in); };
    const auto r = ad::fd_check(f, s.m.params.values);
    EXPECT_LE(r.max_rel_error, 1e-4) << s.m.params.layout.owner(r.argmax).name;
    EXPECT_GT(r.checked, r.analytic.size() / 2);
}

TEST(Elbo, AbsolutePenaltyGradient) {
    Tiny s;
    s.m.hyper.penalty = PenaltyMode::Absolute;
    ElboInputs in{&s.x, &s.c, {2, 3, 4}};
    in.noise = Rng(22);
    ad::Loss f = [&](ad::Tape& t, const ad::Var& p) { return penalized_elbo(t, p, s.m, in); };
    EXPECT_LE(ad::fd_check(f, s.m.params.values).max_rel_error, 1e-4);
    EXPECT_GE(evaluate_elbo(s.m, in).penalty, 0.0);
}

TEST(Elbo, Errors) {
    Tiny s;
    ElboInputs in{&s.x, &s.c, {}};
    EXPECT_THROW(evaluate_elbo(s.m, in), DomainError);
    in.batch = {6};
    EXPECT_THROW(evaluate_elbo(s.m, in), DomainError);
    std::vector<double> short_c(3, 0.5);
    ElboInputs bad{&s.x, &short_c, {0}};
    EXPECT_THROW(evaluate_elbo(s.m, bad), DomainError);
}

TEST(MakeModel, DeterministicInit) {
    const auto h = tiny_hyper();
    const auto a = make_model(h, {});
    const auto b = make_model(h, {});
    EXPECT_EQ(a.params.values, b.params.values);
    EXPECT_TRUE(a.block("cond.A").isZero());
    EXPECT_NEAR(a.basis_weights()(0, 0), 0.1, 1e-12);
}
