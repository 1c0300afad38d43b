#pragma once

// Reverse-mode differentiation over matrix-valued nodes.
//
// A Tape records one evaluation of a scalar loss. Each node holds its value and, after
// backward(), the adjoint of the root with respect to it. Tapes are cheap to build and
// are never shared between evaluations.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cxvae/error.hpp"

namespace cxvae::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// --- parameter store ---------------------------------------------------------

struct LayoutEntry {
    std::string name;
    std::size_t offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;

    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

/// Named, column-major blocks of a flat parameter vector.
class ParamLayout {
public:
    const LayoutEntry& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    [[nodiscard]] const LayoutEntry& at(const std::string& name) const;
    [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }
    [[nodiscard]] const std::vector<LayoutEntry>& entries() const { return entries_; }
    [[nodiscard]] std::size_t size() const { return size_; }
    /// Name of the block that owns flat coordinate `i`.
    [[nodiscard]] const LayoutEntry& owner(std::size_t i) const;

    bool operator==(const ParamLayout& other) const;

private:
    std::vector<LayoutEntry> entries_;
    std::map<std::string, std::size_t> index_;
    std::size_t size_ = 0;
};

struct ParamVector {
    ParamLayout layout;
    Vector values;

    [[nodiscard]] Eigen::Map<Matrix> block(const std::string& name);
    [[nodiscard]] Eigen::Map<const Matrix> block(const std::string& name) const;
};

// --- tape ----------------------------------------------------------------------

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] double scalar() const;
    [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
    [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] std::size_t id() const { return id_; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Var constant(Matrix value);
    Var variable(Matrix value);

    /// Appends a node; `requires_grad` is true if any input requires a gradient.
    Var push(Matrix value, bool requires_grad, Backward backward, const char* op);

    [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    [[nodiscard]] bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }
    /// Adjoint of the last backward() root; zero-filled if the node was not reached.
    [[nodiscard]] Matrix grad(std::size_t id) const;
    [[nodiscard]] const Matrix& grad_ref(std::size_t id) const { return nodes_[id].grad; }

    template <typename Derived>
    void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
        auto& n = nodes_[id];
        if (!n.requires_grad) return;
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }

    void backward(const Var& root);

    /// Signs of every |log(x/y)| argument recorded so far (0 where |log(x/y)| < kink_tol).
    [[nodiscard]] const std::vector<signed char>& kink_signature() const { return kinks_; }
    void record_kinks(const Matrix& log_ratio);
    /// Appends a discrete branch code (e.g. a max-pool winner) to the signature.
    void record_branch(signed char code) { kinks_.push_back(code); }

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    static constexpr double kink_tol = 1e-8;

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
    };
    std::deque<Node> nodes_;
    std::vector<signed char> kinks_;
};

// --- primitives ------------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a (r x c) + row (1 x c) broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
/// Elementwise |a| with derivative sign(a), 0 at the kink; records kinks.
Var abs(const Var& a);
Var sum(const Var& a);
/// Column-major reshaping view of a flat (n x 1) vector segment.
Var slice(const Var& flat, std::size_t offset, Eigen::Index rows, Eigen::Index cols);
Var cols(const Var& a, Eigen::Index start, Eigen::Index n);
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& rows);
Var hcat(const std::vector<Var>& parts);
/// (z_1, c, z_2, c, ..., z_K, c) per row; c is an (r x 1) constant column.
Var interleave_condition(const Var& z, const Matrix& c);
/// Same-padded 1-D convolution with stride 1.
/// input: r x (c_in * len), channel-major; kernel: c_out x (c_in * width); bias: 1 x c_out.
Var conv1d_same(const Var& input, const Var& kernel, const Var& bias, Eigen::Index c_in, Eigen::Index len,
                Eigen::Index width);
/// Non-overlapping max-pool of length `pool` per channel; trailing remainder is dropped.
Var maxpool1d(const Var& input, Eigen::Index channels, Eigen::Index len, Eigen::Index pool);
/// Elementwise |log(x / y)|; derivative uses sign(log(x/y)) with 0 at the kink.
Var abs_log_ratio(const Var& x, const Var& y);

/// sum_j { log a0 - log 2 - log x_j - a0 |log(x_j / y_j)| } over all entries.
Var loglaplace_loglik(const Matrix& x, const Var& y, double alpha0);
/// sum_k log h(z_k; 1/2, theta_k) for the alpha = 1/2 tilted positive-stable density.
Var expps_logprior(const Var& z, const Var& theta);
/// sum_k log Lognormal(z_k; m_k, sigma_k^2), with z given on the log scale.
Var lognormal_logq(const Var& log_z, const Var& m, const Var& sigma);

// --- gradients and finite-difference checks ------------------------------------

using Loss = std::function<Var(Tape&, const Var& params)>;

struct Evaluation {
    double value = 0.0;
    Vector gradient;
    std::vector<signed char> kinks;
};

Evaluation evaluate(const Loss& loss, const Vector& params, bool with_gradient = true);
Vector gradient(const Loss& loss, const Vector& params);

struct FdOptions {
    double step = 1e-3;
    /// Relative error denominator is max(|analytic|, |fd|, floor).
    double floor = 1e-6;
    /// 2: (f(p+h) - f(p-h)) / 2h. 4: five-point stencil, error O(h^4).
    int order = 4;
    /// Coordinates to check; empty = all.
    std::vector<std::size_t> coordinates;
};

struct GradientReport {
    Vector analytic;
    Vector fd;
    Vector rel_error;  ///< NaN for skipped coordinates
    std::vector<std::size_t> skipped;
    double max_rel_error = 0.0;
    std::size_t argmax = 0;
    std::size_t checked = 0;
};

/// Central differences with h_i = step * max(1, |p_i|). A coordinate is skipped when
/// any perturbed evaluation changes the kink signature of the base point.
GradientReport fd_check(const Loss& loss, const Vector& params, const FdOptions& options = {});

}  // namespace cxvae::ad
