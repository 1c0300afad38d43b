#pragma once

// The conditional XVAE: encoder, condition map, fusion, xi-decoder (CNN), tilting-field
// expansion, linear W-decoder, ELBO terms, temporal penalty and the penalized objective.

#include <cstdint>
#include <optional>
#include <vector>

#include "cxvae/autodiff.hpp"
#include "cxvae/fieldsim.hpp"
#include "cxvae/rng.hpp"

namespace cxvae::model {

enum class PenaltyMode { Signed, Absolute };

struct HyperParams {
    int n_sites = 0;
    int K = 16;
    int M = 9;
    double alpha0 = 30.0;
    double alpha = 0.5;
    double rho0 = 1e-3;
    int L = 1;
    std::vector<int> encoder_hidden{64};
    int channels = 40;
    int kernel_width = 3;
    int pool = 2;
    PenaltyMode penalty = PenaltyMode::Signed;
    /// When false the condition slots of the fused latent vector are zero.
    bool fuse_condition = true;

    void validate() const;
};

/// Smallest |c_t - c_{t-1}| used as the penalty denominator.
inline constexpr double kPenaltyDenominatorFloor = 1e-3;

struct Model {
    HyperParams hyper;
    Matrix phi;  ///< K x M fixed latent-space basis, entries > 0
    ad::ParamVector params;

    [[nodiscard]] Eigen::Map<const Matrix> block(const std::string& name) const { return params.block(name); }
    /// W = softplus(V), n_s x K.
    [[nodiscard]] Matrix basis_weights() const;
};

/// Parameter layout implied by the hyperparameters (independent of n_t).
ad::ParamLayout make_layout(const HyperParams& h);

/// Gaussian bumps exp(-d^2 / (2 h^2)) centred on an evenly spaced sub-lattice of the knots,
/// bandwidth h = knot spacing. Without a knot layout the knots are taken as 0..K-1 on a line.
Matrix xi_basis(int K, int M, const KnotGrid* knots);

struct ModelInit {
    /// Wendland matrix used to initialize W (softplus inverse, floored); nullopt = softplus^-1(0.1).
    std::optional<BasisMatrix> w_init;
    std::optional<KnotGrid> knots;
    std::uint64_t seed = 1;
};

/// Floor applied before inverting softplus on a basis matrix with exact zeros.
inline constexpr double kWendlandInitFloor = 1e-3;

double softplus(double x);
double softplus_inverse(double y);

Model make_model(const HyperParams& h, const ModelInit& init);

// --- single-step operations (plain values) -------------------------------------

struct Encoded {
    Vector mu;
    Vector sigma;
};

/// Encoder MLP on log x_t: softplus hidden layers, two softplus heads.
Encoded encode(const Vector& x_t, const Model& m);

struct LatentSample {
    Vector z;
    Vector eps;
    Vector mu;
    Vector sigma;
    Vector g_c;
};

LatentSample reparam_sample(const Vector& mu, const Vector& sigma, const Vector& g_c, const Vector& eps);
/// g(c) = A c.
Vector condition_map(double c, const Model& m);
Vector fuse(const Vector& z, double c);
Vector decode_xi(const Vector& fused_prev, const Vector& fused_curr, const Vector& fused_next, const Model& m);
Vector theta_from_xi(const Vector& xi, const Matrix& phi);
Vector decode_y(const Vector& z, const Matrix& w);
double loglik(const Vector& x_t, const Vector& y_t, double alpha0);
double log_prior(const Vector& z, const Vector& theta);
double log_q(const LatentSample& s);
double penalty(const Vector& xi_t, const Vector& xi_prev, double c_t, double c_prev, double rho0,
               PenaltyMode mode = PenaltyMode::Signed);

// --- batched objective -----------------------------------------------------------

struct ElboTerms {
    double loglik = 0.0;
    double log_prior = 0.0;
    double log_q = 0.0;
    double penalty = 0.0;
    double total = 0.0;
};

struct ElboInputs {
    const DataTensor* x = nullptr;           ///< n_t x n_s
    const std::vector<double>* c = nullptr;  ///< length n_t
    std::vector<Eigen::Index> batch;         ///< time indices whose terms are summed
    /// Auxiliary normal draws for (draw l, time t) come from noise.substream({l, t}).
    Rng noise{0};
    /// Replace every auxiliary draw by 0 (deterministic latent at the log-normal median).
    bool zero_noise = false;
};

/// Builds (1/L) sum_l [loglik + log_prior - log_q] - sum_t rho_t over the batch on `tape`.
/// `params` is the flat parameter vector node. Window edges replicate the boundary step.
ad::Var penalized_elbo(ad::Tape& tape, const ad::Var& params, const Model& m, const ElboInputs& in,
                       ElboTerms* terms = nullptr);

/// Scalar convenience: evaluates the objective at the model's current parameters.
ElboTerms evaluate_elbo(const Model& m, const ElboInputs& in);

/// Forward pass of every stage for a set of times (used by emulation and diagnostics).
struct ForwardPass {
    Matrix mu;     ///< n x K
    Matrix sigma;  ///< n x K
    Matrix g;      ///< n x K
};

ForwardPass encode_times(const Model& m, const DataTensor& x, const std::vector<double>& c,
                         const std::vector<Eigen::Index>& times);

/// xi for each row of `windows` (rows of [fused_prev | fused_curr | fused_next]).
Matrix decode_xi_batch(const Model& m, const Matrix& windows);

}  // namespace cxvae::model
