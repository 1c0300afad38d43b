#include "cxvae/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace cxvae::ad {

// --- layout ------------------------------------------------------------------

const LayoutEntry& ParamLayout::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.contains(name)) throw DomainError("duplicate parameter block " + name);
    if (rows < 0 || cols < 0) throw DomainError("negative parameter block shape for " + name);
    entries_.push_back({name, size_, rows, cols});
    index_[name] = entries_.size() - 1;
    size_ += static_cast<std::size_t>(rows * cols);
    return entries_.back();
}

const LayoutEntry& ParamLayout::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("unknown parameter block " + name);
    return entries_[it->second];
}

const LayoutEntry& ParamLayout::owner(std::size_t i) const {
    for (const auto& e : entries_)
        if (i >= e.offset && i < e.offset + e.size()) return e;
    throw DomainError("parameter index out of range");
}

bool ParamLayout::operator==(const ParamLayout& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
}

Eigen::Map<Matrix> ParamVector::block(const std::string& name) {
    const auto& e = layout.at(name);
    return {values.data() + e.offset, e.rows, e.cols};
}

Eigen::Map<const Matrix> ParamVector::block(const std::string& name) const {
    const auto& e = layout.at(name);
    return {values.data() + e.offset, e.rows, e.cols};
}

// --- tape --------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
    const auto& v = value();
    if (v.size() != 1) throw DomainError("scalar() on a non-scalar node");
    return v(0, 0);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr, "constant"); }

Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr, "variable"); }

Var Tape::push(Matrix value, bool requires_grad, Backward backward, const char* op) {
    if (!value.allFinite()) {
        std::ostringstream os;
        os << "non-finite value produced by primitive '" << op << "'";
        throw NumericalError(os.str());
    }
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, false, std::move(backward)});
    return {this, nodes_.size() - 1};
}

Matrix Tape::grad(std::size_t id) const {
    const auto& n = nodes_[id];
    if (n.has_grad) return n.grad;
    return Matrix::Zero(n.value.rows(), n.value.cols());
}

void Tape::backward(const Var& root) {
    if (root.value().size() != 1) throw DomainError("backward() requires a scalar root");
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
    }
    accumulate(root.id(), Matrix::Ones(1, 1));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.has_grad && n.backward) {
            n.backward(*this, i);
            if (!n.grad.allFinite()) throw NumericalError("non-finite adjoint at tape node " + std::to_string(i));
        }
    }
}

void Tape::record_kinks(const Matrix& log_ratio) {
    kinks_.reserve(kinks_.size() + static_cast<std::size_t>(log_ratio.size()));
    for (Eigen::Index i = 0; i < log_ratio.size(); ++i) {
        const double v = log_ratio.data()[i];
        kinks_.push_back(std::abs(v) < kink_tol ? 0 : (v > 0 ? 1 : -1));
    }
}

// --- primitives --------------------------------------------------------------

namespace {

bool any_grad(std::initializer_list<const Var*> vars) {
    for (const Var* v : vars)
        if (v->tape().requires_grad(v->id())) return true;
    return false;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        std::ostringstream os;
        os << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols();
        throw DomainError(os.str());
    }
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tape& t = a.tape();
    const auto ia = a.id(), ib = b.id();
    return t.push(a.value() + b.value(), any_grad({&a, &b}),
                  [ia, ib](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, tp.grad_ref(self));
                      tp.accumulate(ib, tp.grad_ref(self));
                  },
                  "add");
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tape& t = a.tape();
    const auto ia = a.id(), ib = b.id();
    return t.push(a.value() - b.value(), any_grad({&a, &b}),
                  [ia, ib](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, tp.grad_ref(self));
                      tp.accumulate(ib, -tp.grad_ref(self));
                  },
                  "sub");
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tape& t = a.tape();
    const auto ia = a.id(), ib = b.id();
    return t.push(a.value().cwiseProduct(b.value()), any_grad({&a, &b}),
                  [ia, ib](Tape& tp, std::size_t self) {
                      const Matrix& g = tp.grad_ref(self);
                      if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                      if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                  },
                  "mul");
}

Var scale(const Var& a, double s) {
    Tape& t = a.tape();
    const auto ia = a.id();
    return t.push(a.value() * s, any_grad({&a}),
                  [ia, s](Tape& tp, std::size_t self) { tp.accumulate(ia, tp.grad_ref(self) * s); }, "scale");
}

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw DomainError("add_row: row must be 1 x cols(a)");
    Tape& t = a.tape();
    const auto ia = a.id(), ir = row.id();
    Matrix v = a.value().rowwise() + row.value().row(0);
    return t.push(std::move(v), any_grad({&a, &row}),
                  [ia, ir](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, tp.grad_ref(self));
                      if (tp.requires_grad(ir)) tp.accumulate(ir, tp.grad_ref(self).colwise().sum());
                  },
                  "add_row");
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw DomainError("matmul: inner dimensions differ");
    Tape& t = a.tape();
    const auto ia = a.id(), ib = b.id();
    Matrix v = a.value() * b.value();
    return t.push(std::move(v), any_grad({&a, &b}),
                  [ia, ib](Tape& tp, std::size_t self) {
                      const Matrix& g = tp.grad_ref(self);
                      if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
                      if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
                  },
                  "matmul");
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw DomainError("matmul_nt: inner dimensions differ");
    Tape& t = a.tape();
    const auto ia = a.id(), ib = b.id();
    Matrix v = a.value() * b.value().transpose();
    return t.push(std::move(v), any_grad({&a, &b}),
                  [ia, ib](Tape& tp, std::size_t self) {
                      const Matrix& g = tp.grad_ref(self);
                      if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
                      if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
                  },
                  "matmul_nt");
}

Var softplus(const Var& a) {
    Tape& t = a.tape();
    const auto ia = a.id();
    Matrix v = a.value().unaryExpr(&softplus_scalar);
    return t.push(std::move(v), any_grad({&a}),
                  [ia](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, tp.grad_ref(self).cwiseProduct(tp.value(ia).unaryExpr(&sigmoid_scalar)));
                  },
                  "softplus");
}

Var exp(const Var& a) {
    Tape& t = a.tape();
    const auto ia = a.id();
    return t.push(a.value().array().exp().matrix(), any_grad({&a}),
                  [ia](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, tp.grad_ref(self).cwiseProduct(tp.value(self)));
                  },
                  "exp");
}

Var log(const Var& a) {
    if (!(a.value().minCoeff() > 0.0)) throw DomainError("log of a nonpositive value");
    Tape& t = a.tape();
    const auto ia = a.id();
    return t.push(a.value().array().log().matrix(), any_grad({&a}),
                  [ia](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, tp.grad_ref(self).cwiseQuotient(tp.value(ia)));
                  },
                  "log");
}

Var square(const Var& a) {
    Tape& t = a.tape();
    const auto ia = a.id();
    return t.push(a.value().array().square().matrix(), any_grad({&a}),
                  [ia](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, 2.0 * tp.grad_ref(self).cwiseProduct(tp.value(ia)));
                  },
                  "square");
}

Var abs(const Var& a) {
    Tape& t = a.tape();
    t.record_kinks(a.value());
    const auto ia = a.id();
    return t.push(a.value().cwiseAbs(), any_grad({&a}),
                  [ia](Tape& tp, std::size_t self) {
                      const Matrix sgn = tp.value(ia).unaryExpr([](double v) {
                          return std::abs(v) < Tape::kink_tol ? 0.0 : (v > 0 ? 1.0 : -1.0);
                      });
                      tp.accumulate(ia, tp.grad_ref(self).cwiseProduct(sgn));
                  },
                  "abs");
}

Var sum(const Var& a) {
    Tape& t = a.tape();
    const auto ia = a.id();
    Matrix v(1, 1);
    v(0, 0) = a.value().sum();
    return t.push(std::move(v), any_grad({&a}),
                  [ia](Tape& tp, std::size_t self) {
                      const auto& av = tp.value(ia);
                      tp.accumulate(ia, Matrix::Constant(av.rows(), av.cols(), tp.grad_ref(self)(0, 0)));
                  },
                  "sum");
}

Var slice(const Var& flat, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
    const auto& fv = flat.value();
    if (fv.cols() != 1) throw DomainError("slice: source must be a column vector");
    if (offset + static_cast<std::size_t>(rows * cols) > static_cast<std::size_t>(fv.rows()))
        throw DomainError("slice: out of range");
    Tape& t = flat.tape();
    const auto iflat = flat.id();
    Matrix v = Eigen::Map<const Matrix>(fv.data() + offset, rows, cols);
    return t.push(std::move(v), any_grad({&flat}),
                  [iflat, offset, rows, cols](Tape& tp, std::size_t self) {
                      Matrix g = Matrix::Zero(tp.value(iflat).rows(), 1);
                      g.middleRows(static_cast<Eigen::Index>(offset), rows * cols) =
                          Eigen::Map<const Vector>(tp.grad_ref(self).data(), rows * cols);
                      tp.accumulate(iflat, g);
                  },
                  "slice");
}

Var cols(const Var& a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || start + n > a.cols()) throw DomainError("cols: out of range");
    Tape& t = a.tape();
    const auto ia = a.id();
    Matrix v = a.value().middleCols(start, n);
    return t.push(std::move(v), any_grad({&a}),
                  [ia, start, n](Tape& tp, std::size_t self) {
                      const auto& av = tp.value(ia);
                      Matrix g = Matrix::Zero(av.rows(), av.cols());
                      g.middleCols(start, n) = tp.grad_ref(self);
                      tp.accumulate(ia, g);
                  },
                  "cols");
}

Var gather_rows(const Var& a, const std::vector<Eigen::Index>& rows) {
    const auto& av = a.value();
    Matrix v(static_cast<Eigen::Index>(rows.size()), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.rows()) throw DomainError("gather_rows: index out of range");
        v.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
    }
    Tape& t = a.tape();
    const auto ia = a.id();
    return t.push(std::move(v), any_grad({&a}),
                  [ia, rows](Tape& tp, std::size_t self) {
                      const auto& src = tp.value(ia);
                      const Matrix& g = tp.grad_ref(self);
                      Matrix acc = Matrix::Zero(src.rows(), src.cols());
                      for (std::size_t i = 0; i < rows.size(); ++i) acc.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                      tp.accumulate(ia, acc);
                  },
                  "gather_rows");
}

Var hcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw DomainError("hcat: no inputs");
    const Eigen::Index r = parts.front().rows();
    Eigen::Index total = 0;
    bool grad = false;
    for (const auto& p : parts) {
        if (p.rows() != r) throw DomainError("hcat: row counts differ");
        total += p.cols();
        grad = grad || p.tape().requires_grad(p.id());
    }
    Matrix v(r, total);
    std::vector<std::pair<std::size_t, Eigen::Index>> pieces;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        v.middleCols(at, p.cols()) = p.value();
        pieces.emplace_back(p.id(), p.cols());
        at += p.cols();
    }
    Tape& t = parts.front().tape();
    return t.push(std::move(v), grad,
                  [pieces](Tape& tp, std::size_t self) {
                      Eigen::Index off = 0;
                      for (const auto& [id, n] : pieces) {
                          if (tp.requires_grad(id)) tp.accumulate(id, tp.grad_ref(self).middleCols(off, n));
                          off += n;
                      }
                  },
                  "hcat");
}

Var interleave_condition(const Var& z, const Matrix& c) {
    const auto& zv = z.value();
    if (c.rows() != zv.rows() || c.cols() != 1) throw DomainError("interleave_condition: c must be rows(z) x 1");
    const Eigen::Index k = zv.cols();
    Matrix v(zv.rows(), 2 * k);
    for (Eigen::Index j = 0; j < k; ++j) {
        v.col(2 * j) = zv.col(j);
        v.col(2 * j + 1) = c.col(0);
    }
    Tape& t = z.tape();
    const auto iz = z.id();
    return t.push(std::move(v), any_grad({&z}),
                  [iz, k](Tape& tp, std::size_t self) {
                      const Matrix& g = tp.grad_ref(self);
                      Matrix gz(g.rows(), k);
                      for (Eigen::Index j = 0; j < k; ++j) gz.col(j) = g.col(2 * j);
                      tp.accumulate(iz, gz);
                  },
                  "interleave_condition");
}

Var conv1d_same(const Var& input, const Var& kernel, const Var& bias, Eigen::Index c_in, Eigen::Index len,
                Eigen::Index width) {
    const auto& x = input.value();
    const auto& w = kernel.value();
    const auto& b = bias.value();
    const Eigen::Index c_out = w.rows();
    if (x.cols() != c_in * len) throw DomainError("conv1d_same: input width != c_in * len");
    if (w.cols() != c_in * width) throw DomainError("conv1d_same: kernel width != c_in * width");
    if (b.rows() != 1 || b.cols() != c_out) throw DomainError("conv1d_same: bias must be 1 x c_out");
    const Eigen::Index half = width / 2;
    const Eigen::Index n = x.rows();

    Matrix y(n, c_out * len);
    for (Eigen::Index o = 0; o < c_out; ++o) {
        y.middleCols(o * len, len).setConstant(b(0, o));
        for (Eigen::Index i = 0; i < c_in; ++i) {
            for (Eigen::Index k = 0; k < width; ++k) {
                const double wk = w(o, i * width + k);
                const Eigen::Index shift = k - half;
                // y[:, o, p] += wk * x[:, i, p + shift]
                const Eigen::Index p0 = std::max<Eigen::Index>(0, -shift);
                const Eigen::Index p1 = std::min<Eigen::Index>(len, len - shift);
                if (p1 > p0)
                    y.middleCols(o * len + p0, p1 - p0) += wk * x.middleCols(i * len + p0 + shift, p1 - p0);
            }
        }
    }

    Tape& t = input.tape();
    const auto ix = input.id(), iw = kernel.id(), ib = bias.id();
    return t.push(std::move(y), any_grad({&input, &kernel, &bias}),
                  [ix, iw, ib, c_in, len, width, half, c_out](Tape& tp, std::size_t self) {
                      const Matrix& g = tp.grad_ref(self);
                      const auto& xv = tp.value(ix);
                      const auto& wv = tp.value(iw);
                      if (tp.requires_grad(ib)) {
                          Matrix gb(1, c_out);
                          for (Eigen::Index o = 0; o < c_out; ++o) gb(0, o) = g.middleCols(o * len, len).sum();
                          tp.accumulate(ib, gb);
                      }
                      const bool need_x = tp.requires_grad(ix);
                      const bool need_w = tp.requires_grad(iw);
                      Matrix gx = need_x ? Matrix::Zero(xv.rows(), xv.cols()) : Matrix();
                      Matrix gw = need_w ? Matrix::Zero(wv.rows(), wv.cols()) : Matrix();
                      for (Eigen::Index o = 0; o < c_out; ++o) {
                          for (Eigen::Index i = 0; i < c_in; ++i) {
                              for (Eigen::Index k = 0; k < width; ++k) {
                                  const Eigen::Index shift = k - half;
                                  const Eigen::Index p0 = std::max<Eigen::Index>(0, -shift);
                                  const Eigen::Index p1 = std::min<Eigen::Index>(len, len - shift);
                                  if (p1 <= p0) continue;
                                  auto gblk = g.middleCols(o * len + p0, p1 - p0);
                                  auto xblk = xv.middleCols(i * len + p0 + shift, p1 - p0);
                                  if (need_w) gw(o, i * width + k) += gblk.cwiseProduct(xblk).sum();
                                  if (need_x) gx.middleCols(i * len + p0 + shift, p1 - p0) += wv(o, i * width + k) * gblk;
                              }
                          }
                      }
                      if (need_x) tp.accumulate(ix, gx);
                      if (need_w) tp.accumulate(iw, gw);
                  },
                  "conv1d_same");
}

Var maxpool1d(const Var& input, Eigen::Index channels, Eigen::Index len, Eigen::Index pool) {
    const auto& x = input.value();
    if (x.cols() != channels * len) throw DomainError("maxpool1d: width != channels * len");
    if (pool < 1 || pool > len) throw DomainError("maxpool1d: invalid pool length");
    const Eigen::Index out_len = len / pool;
    const Eigen::Index n = x.rows();
    Matrix y(n, channels * out_len);
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(n * channels * out_len));
    for (Eigen::Index c = 0; c < channels; ++c) {
        for (Eigen::Index q = 0; q < out_len; ++q) {
            const Eigen::Index col_out = c * out_len + q;
            for (Eigen::Index r = 0; r < n; ++r) {
                Eigen::Index best = c * len + q * pool;
                for (Eigen::Index w = 1; w < pool; ++w) {
                    const Eigen::Index col = c * len + q * pool + w;
                    if (x(r, col) > x(r, best)) best = col;
                }
                y(r, col_out) = x(r, best);
                arg[static_cast<std::size_t>(col_out * n + r)] = best;
                input.tape().record_branch(static_cast<signed char>((best - c * len - q * pool) % 127));
            }
        }
    }
    Tape& t = input.tape();
    const auto ix = input.id();
    return t.push(std::move(y), any_grad({&input}),
                  [ix, arg = std::move(arg), n](Tape& tp, std::size_t self) {
                      const Matrix& g = tp.grad_ref(self);
                      const auto& xv = tp.value(ix);
                      Matrix gx = Matrix::Zero(xv.rows(), xv.cols());
                      for (Eigen::Index col = 0; col < g.cols(); ++col)
                          for (Eigen::Index r = 0; r < n; ++r)
                              gx(r, arg[static_cast<std::size_t>(col * n + r)]) += g(r, col);
                      tp.accumulate(ix, gx);
                  },
                  "maxpool1d");
}

Var abs_log_ratio(const Var& x, const Var& y) {
    require_same_shape(x, y, "abs_log_ratio");
    if (!(x.value().minCoeff() > 0.0) || !(y.value().minCoeff() > 0.0))
        throw DomainError("abs_log_ratio requires positive arguments");
    Matrix lr = (x.value().array().log() - y.value().array().log()).matrix();
    Tape& t = x.tape();
    t.record_kinks(lr);
    const auto ixx = x.id(), iy = y.id();
    Matrix v = lr.cwiseAbs();
    return t.push(std::move(v), any_grad({&x, &y}),
                  [ixx, iy, lr = std::move(lr)](Tape& tp, std::size_t self) {
                      const Matrix sgn = lr.unaryExpr([](double v) {
                          return std::abs(v) < Tape::kink_tol ? 0.0 : (v > 0 ? 1.0 : -1.0);
                      });
                      const Matrix& g = tp.grad_ref(self);
                      if (tp.requires_grad(ixx)) tp.accumulate(ixx, g.cwiseProduct(sgn).cwiseQuotient(tp.value(ixx)));
                      if (tp.requires_grad(iy)) tp.accumulate(iy, -g.cwiseProduct(sgn).cwiseQuotient(tp.value(iy)));
                  },
                  "abs_log_ratio");
}

Var loglaplace_loglik(const Matrix& x, const Var& y, double alpha0) {
    const auto& yv = y.value();
    if (x.rows() != yv.rows() || x.cols() != yv.cols()) throw DomainError("loglaplace_loglik: shape mismatch");
    if (!(alpha0 > 0.0)) throw DomainError("alpha0 must be positive");
    if (!(x.minCoeff() > 0.0)) throw DomainError("loglik requires x > 0");
    if (!(yv.minCoeff() > 0.0)) throw DomainError("loglik requires y > 0");
    const Matrix logx = x.array().log().matrix();
    Matrix lr = logx - yv.array().log().matrix();
    Tape& t = y.tape();
    t.record_kinks(lr);
    Matrix v(1, 1);
    v(0, 0) = static_cast<double>(x.size()) * (std::log(alpha0) - std::numbers::ln2) - logx.sum() -
              alpha0 * lr.cwiseAbs().sum();
    const auto iy = y.id();
    return t.push(std::move(v), any_grad({&y}),
                  [iy, alpha0, lr = std::move(lr)](Tape& tp, std::size_t self) {
                      const double g = tp.grad_ref(self)(0, 0);
                      const Matrix sgn = lr.unaryExpr([](double v) {
                          return std::abs(v) < Tape::kink_tol ? 0.0 : (v > 0 ? 1.0 : -1.0);
                      });
                      tp.accumulate(iy, (g * alpha0) * sgn.cwiseQuotient(tp.value(iy)));
                  },
                  "loglaplace_loglik");
}

Var expps_logprior(const Var& z, const Var& theta) {
    require_same_shape(z, theta, "expps_logprior");
    const auto& zv = z.value();
    const auto& th = theta.value();
    if (!(zv.minCoeff() > 0.0)) throw DomainError("expPS log-density requires z > 0");
    if (!(th.minCoeff() >= 0.0)) throw DomainError("expPS log-density requires theta >= 0");
    constexpr double log_const = -std::numbers::ln2 - 0.5723649429247001;
    Matrix v(1, 1);
    v(0, 0) = static_cast<double>(zv.size()) * log_const +
              (th.array().sqrt() - 1.5 * zv.array().log() - th.array() * zv.array() - 0.25 / zv.array()).sum();
    Tape& t = z.tape();
    const auto iz = z.id(), it = theta.id();
    return t.push(std::move(v), any_grad({&z, &theta}),
                  [iz, it](Tape& tp, std::size_t self) {
                      const double g = tp.grad_ref(self)(0, 0);
                      const auto zv = tp.value(iz).array();
                      const auto thv = tp.value(it).array();
                      if (tp.requires_grad(iz))
                          tp.accumulate(iz, (g * (-1.5 / zv - thv + 0.25 / zv.square())).matrix());
                      if (tp.requires_grad(it)) {
                          if (!(thv.minCoeff() > 0.0))
                              throw NumericalError("expps_logprior: derivative in theta is infinite at theta = 0");
                          tp.accumulate(it, (g * (0.5 / thv.sqrt() - zv)).matrix());
                      }
                  },
                  "expps_logprior");
}

Var lognormal_logq(const Var& log_z, const Var& m, const Var& sigma) {
    require_same_shape(log_z, m, "lognormal_logq");
    require_same_shape(log_z, sigma, "lognormal_logq");
    const auto& s = sigma.value();
    if (!(s.minCoeff() > 0.0)) throw DomainError("log-normal density requires sigma > 0");
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    const auto d = (log_z.value() - m.value()).array();
    Matrix v(1, 1);
    v(0, 0) = -(log_z.value().array() + s.array().log() + half_log_2pi + d.square() / (2.0 * s.array().square())).sum();
    Tape& t = log_z.tape();
    const auto il = log_z.id(), im = m.id(), is = sigma.id();
    return t.push(std::move(v), any_grad({&log_z, &m, &sigma}),
                  [il, im, is](Tape& tp, std::size_t self) {
                      const double g = tp.grad_ref(self)(0, 0);
                      const auto d = (tp.value(il) - tp.value(im)).array();
                      const auto s = tp.value(is).array();
                      const Eigen::ArrayXXd r = d / s.square();
                      if (tp.requires_grad(il)) tp.accumulate(il, (g * (-1.0 - r)).matrix());
                      if (tp.requires_grad(im)) tp.accumulate(im, (g * r).matrix());
                      if (tp.requires_grad(is)) tp.accumulate(is, (g * (-1.0 / s + d.square() / (s * s * s))).matrix());
                  },
                  "lognormal_logq");
}

// --- gradients -----------------------------------------------------------------

Evaluation evaluate(const Loss& loss, const Vector& params, bool with_gradient) {
    Tape tape;
    Var p = tape.variable(params);
    Var root = loss(tape, p);
    Evaluation e;
    e.value = root.scalar();
    e.kinks = tape.kink_signature();
    if (with_gradient) {
        tape.backward(root);
        e.gradient = Eigen::Map<const Vector>(tape.grad(p.id()).data(), params.size());
    }
    return e;
}

Vector gradient(const Loss& loss, const Vector& params) { return evaluate(loss, params, true).gradient; }

GradientReport fd_check(const Loss& loss, const Vector& params, const FdOptions& options) {
    if (!(options.step > 0.0)) throw DomainError("fd_check step must be positive");
    if (options.order != 2 && options.order != 4) throw DomainError("fd_check order must be 2 or 4");
    const auto base = evaluate(loss, params, true);
    GradientReport report;
    report.analytic = base.gradient;
    report.fd = Vector::Constant(params.size(), std::numeric_limits<double>::quiet_NaN());
    report.rel_error = Vector::Constant(params.size(), std::numeric_limits<double>::quiet_NaN());

    std::vector<std::size_t> coords = options.coordinates;
    if (coords.empty()) {
        coords.resize(static_cast<std::size_t>(params.size()));
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    }
    Vector p = params;
    for (std::size_t i : coords) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double h = options.step * std::max(1.0, std::abs(params(ii)));
        bool kinked = false;
        auto f = [&](double offset) {
            p(ii) = params(ii) + offset;
            const auto e = evaluate(loss, p, false);
            p(ii) = params(ii);
            if (e.kinks != base.kinks) kinked = true;
            return e.value;
        };
        double fd = 0.0;
        if (options.order == 4) {
            const double f1 = f(h), fm1 = f(-h), f2 = f(2.0 * h), fm2 = f(-2.0 * h);
            fd = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h);
        } else {
            fd = (f(h) - f(-h)) / (2.0 * h);
        }
        if (kinked) {
            report.skipped.push_back(i);
            continue;
        }
        const double a = base.gradient(ii);
        report.fd(ii) = fd;
        const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), options.floor});
        report.rel_error(ii) = err;
        ++report.checked;
        if (err >= report.max_rel_error) {
            report.max_rel_error = err;
            report.argmax = i;
        }
    }
    return report;
}

}  // namespace cxvae::ad
