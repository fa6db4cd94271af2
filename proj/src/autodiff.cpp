// Copyright 2026 The priorflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "priorflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace priorflow::ad {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
    }
}

void require_scalar(const Var& s, const char* op) {
    if (s.rows() != 1 || s.cols() != 1) {
        throw ShapeError(std::string(op) + ": expected 1x1, got " + shape_str(s.value()));
    }
}

Tape& tape_of(const Var& a) {
    if (!a.valid()) throw std::logic_error("operation on an unbound Var");
    return *a.tape();
}

}  // namespace

// ---- Var / Tape ---------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

double Var::scalar() const {
    require_scalar(*this, "scalar");
    return value()(0, 0);
}

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant_scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
}

Var Tape::leaf(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), grad_enabled_, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
    if (!grad_enabled_) return constant(p.value);
    Parameter* target = &p;
    nodes_.push_back(Node{p.value, Matrix(), true, [target](Tape& t, std::size_t self) {
                              const Matrix& g = t.grad(self);
                              if (target->grad.rows() != g.rows() || target->grad.cols() != g.cols()) {
                                  target->grad.setZero(g.rows(), g.cols());
                              }
                              target->grad += g;
                          }});
    return Var(this, nodes_.size() - 1);
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backward backward) {
    return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    if (grad_enabled_) {
        for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
    return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(const Var& root, double seed) {
    require_scalar(root, "backward");
    if (!grad_enabled_) throw std::logic_error("backward on a tape recorded without gradients");
    grad_ref(root.id())(0, 0) += seed;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
        n.backward(*this, i);
    }
}

// ---- elementwise ----------------------------------------------------------------

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tape& t = tape_of(a);
    const std::size_t ia = a.id(), ib = b.id();
    return t.push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad_ref(ia) += t.grad(self);
        if (t.requires_grad(ib)) t.grad_ref(ib) += t.grad(self);
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Tape& t = tape_of(a);
    const std::size_t ia = a.id(), ib = b.id();
    return t.push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad_ref(ia) += t.grad(self);
        if (t.requires_grad(ib)) t.grad_ref(ib) -= t.grad(self);
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tape& t = tape_of(a);
    const std::size_t ia = a.id(), ib = b.id();
    return t.push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad_ref(ia) += t.grad(self).cwiseProduct(t.value(ib));
        if (t.requires_grad(ib)) t.grad_ref(ib) += t.grad(self).cwiseProduct(t.value(ia));
    });
}

Var scale(Var a, double s) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    return t.push(a.value() * s, {a}, [ia, s](Tape& t, std::size_t self) { t.grad_ref(ia) += s * t.grad(self); });
}

Var add_const(Var a, double c) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    Matrix out = a.value().array() + c;
    return t.push(std::move(out), {a}, [ia](Tape& t, std::size_t self) { t.grad_ref(ia) += t.grad(self); });
}

Var mul_scalar(Var a, Var s) {
    require_scalar(s, "mul_scalar");
    Tape& t = tape_of(a);
    const std::size_t ia = a.id(), is = s.id();
    return t.push(a.value() * s.scalar(), {a, s}, [ia, is](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad_ref(ia) += t.value(is)(0, 0) * g;
        if (t.requires_grad(is)) t.grad_ref(is)(0, 0) += g.cwiseProduct(t.value(ia)).sum();
    });
}

Var add_rowvec(Var a, Var row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_rowvec: row " + shape_str(row.value()) + " vs " + shape_str(a.value()));
    }
    Tape& t = tape_of(a);
    const std::size_t ia = a.id(), ir = row.id();
    Matrix out = a.value();
    out.rowwise() += row.value().row(0);
    return t.push(std::move(out), {a, row}, [ia, ir](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad_ref(ia) += g;
        if (t.requires_grad(ir)) t.grad_ref(ir) += g.colwise().sum();
    });
}

Var reciprocal(Var a) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    Matrix out = a.value().cwiseInverse();
    return t.push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.grad_ref(ia) -= t.grad(self).cwiseProduct(y.cwiseProduct(y));
    });
}

Var relu(Var a) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    Matrix out = a.value().cwiseMax(0.0);
    return t.push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        t.grad_ref(ia) += (t.value(ia).array() > 0.0).select(t.grad(self), 0.0).matrix();
    });
}

Var sigmoid(Var a) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    return t.push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.grad_ref(ia) += t.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix());
    });
}

Var clamp(Var a, double lo, double hi) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
    return t.push(std::move(out), {a}, [ia, lo, hi](Tape& t, std::size_t self) {
        const auto& x = t.value(ia).array();
        t.grad_ref(ia) += ((x >= lo) && (x <= hi)).select(t.grad(self), 0.0).matrix();
    });
}

// ---- linear algebra ---------------------------------------------------------------

Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
    }
    Tape& t = tape_of(a);
    const std::size_t ia = a.id(), ib = b.id();
    Matrix out;
    out.noalias() = a.value() * b.value();
    return t.push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib).transpose();
        if (t.requires_grad(ib)) t.grad_ref(ib).noalias() += t.value(ia).transpose() * g;
    });
}

Var matmul_nt(Var a, Var b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: " + shape_str(a.value()) + " * T(" + shape_str(b.value()) + ")");
    }
    Tape& t = tape_of(a);
    const std::size_t ia = a.id(), ib = b.id();
    Matrix out;
    out.noalias() = a.value() * b.value().transpose();
    return t.push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib);
        if (t.requires_grad(ib)) t.grad_ref(ib).noalias() += g.transpose() * t.value(ia);
    });
}

// ---- structural -------------------------------------------------------------------

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const Eigen::Index rows = parts[0].rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<std::size_t> ids;
    std::vector<Eigen::Index> offsets;
    Eigen::Index c = 0;
    for (const Var& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        ids.push_back(p.id());
        offsets.push_back(c);
        c += p.cols();
    }
    return tape_of(parts[0]).push(std::move(out), parts, [ids, offsets](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!t.requires_grad(ids[i])) continue;
            t.grad_ref(ids[i]) += g.middleCols(offsets[i], t.value(ids[i]).cols());
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const Eigen::Index cols = parts[0].cols();
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<std::size_t> ids;
    std::vector<Eigen::Index> offsets;
    Eigen::Index r = 0;
    for (const Var& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        ids.push_back(p.id());
        offsets.push_back(r);
        r += p.rows();
    }
    return tape_of(parts[0]).push(std::move(out), parts, [ids, offsets](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!t.requires_grad(ids[i])) continue;
            t.grad_ref(ids[i]) += g.middleRows(offsets[i], t.value(ids[i]).rows());
        }
    });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    Matrix out = a.value().middleCols(start, count);
    return t.push(std::move(out), {a}, [ia, start, count](Tape& t, std::size_t self) {
        t.grad_ref(ia).middleCols(start, count) += t.grad(self);
    });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    Matrix out = a.value().middleRows(start, count);
    return t.push(std::move(out), {a}, [ia, start, count](Tape& t, std::size_t self) {
        t.grad_ref(ia).middleRows(start, count) += t.grad(self);
    });
}

Var gather_rows(Var table, std::span<const int> indices) {
    const Matrix& tv = table.value();
    Matrix out(static_cast<Eigen::Index>(indices.size()), tv.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= tv.rows()) throw ShapeError("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = tv.row(indices[i]);
    }
    Tape& t = tape_of(table);
    const std::size_t it = table.id();
    std::vector<int> idx(indices.begin(), indices.end());
    return t.push(std::move(out), {table}, [it, idx = std::move(idx)](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& gt = t.grad_ref(it);
        for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var mask_rows(Var a, std::span<const double> mask) {
    if (static_cast<Eigen::Index>(mask.size()) != a.rows()) throw ShapeError("mask_rows: mask length");
    Eigen::VectorXd m(static_cast<Eigen::Index>(mask.size()));
    for (std::size_t i = 0; i < mask.size(); ++i) m(static_cast<Eigen::Index>(i)) = mask[i];
    Matrix out = m.asDiagonal() * a.value();
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    return t.push(std::move(out), {a}, [ia, m](Tape& t, std::size_t self) {
        t.grad_ref(ia) += m.asDiagonal() * t.grad(self);
    });
}

Var shift_stack(Var a, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw ShapeError("shift_stack: kernel must be odd and positive");
    const Matrix& x = a.value();
    const Eigen::Index L = x.rows(), d = x.cols();
    const int half = kernel / 2;
    Matrix out = Matrix::Zero(L, d * kernel);
    for (int k = 0; k < kernel; ++k) {
        const Eigen::Index shift = k - half;  // output row l reads input row l + shift
        const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
        const Eigen::Index hi = std::min<Eigen::Index>(L, L - shift);
        if (hi > lo) out.block(lo, k * d, hi - lo, d) = x.middleRows(lo + shift, hi - lo);
    }
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    return t.push(std::move(out), {a}, [ia, kernel, half, L, d](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& ga = t.grad_ref(ia);
        for (int k = 0; k < kernel; ++k) {
            const Eigen::Index shift = k - half;
            const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
            const Eigen::Index hi = std::min<Eigen::Index>(L, L - shift);
            if (hi > lo) ga.middleRows(lo + shift, hi - lo) += g.block(lo, k * d, hi - lo, d);
        }
    });
}

Var mean_rows(Var a) {
    if (a.rows() == 0) throw ShapeError("mean_rows: empty input");
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    const double n = static_cast<double>(a.rows());
    Matrix out = a.value().colwise().sum() / n;
    return t.push(std::move(out), {a}, [ia, n](Tape& t, std::size_t self) {
        t.grad_ref(ia).rowwise() += t.grad(self).row(0) / n;
    });
}

// ---- reductions -------------------------------------------------------------------

Var sum(Var a) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        t.grad_ref(ia).array() += t.grad(self)(0, 0);
    });
}

Var sum_squares(Var a) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().squaredNorm();
    return t.push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        t.grad_ref(ia) += (2.0 * t.grad(self)(0, 0)) * t.value(ia);
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Eigen::Index L = x.rows(), d = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
        throw ShapeError("layer_norm: gain/bias shape");
    }
    const Matrix& xv = x.value();
    Matrix xhat(L, d);
    Eigen::VectorXd inv_std(L);
    for (Eigen::Index i = 0; i < L; ++i) {
        const double mu = xv.row(i).mean();
        const double var = (xv.row(i).array() - mu).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
    }
    Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
    out.rowwise() += beta.value().row(0);
    Tape& t = tape_of(x);
    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    return t.push(std::move(out), {x, gamma, beta},
                  [ix, ig, ib, xhat = std::move(xhat), inv_std](Tape& t, std::size_t self) {
                      const Matrix& g = t.grad(self);
                      if (t.requires_grad(ig)) t.grad_ref(ig) += g.cwiseProduct(xhat).colwise().sum();
                      if (t.requires_grad(ib)) t.grad_ref(ib) += g.colwise().sum();
                      if (!t.requires_grad(ix)) return;
                      const Matrix gh = g.array().rowwise() * t.value(ig).row(0).array();
                      Matrix& gx = t.grad_ref(ix);
                      const double n = static_cast<double>(xhat.cols());
                      for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                          const double mean_g = gh.row(i).sum() / n;
                          const double mean_gx = gh.row(i).dot(xhat.row(i)) / n;
                          gx.row(i).array() +=
                              inv_std(i) * (gh.row(i).array() - mean_g - xhat.row(i).array() * mean_gx);
                      }
                  });
}

Var attention(Var q, Var k, Var v, int heads, std::span<const char> key_valid) {
    require_same_shape(q, k, "attention(q,k)");
    require_same_shape(q, v, "attention(q,v)");
    const Eigen::Index L = q.rows(), d = q.cols();
    if (heads <= 0 || d % heads != 0) throw ShapeError("attention: d_model not divisible by heads");
    if (static_cast<Eigen::Index>(key_valid.size()) != L) throw ShapeError("attention: key mask length");
    const Eigen::Index dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<char> valid(key_valid.begin(), key_valid.end());
    const bool any_valid = std::any_of(valid.begin(), valid.end(), [](char c) { return c != 0; });

    std::vector<Matrix> probs(static_cast<std::size_t>(heads));
    Matrix out = Matrix::Zero(L, d);
    if (L > 0 && any_valid) {
        for (int h = 0; h < heads; ++h) {
            Matrix s;
            s.noalias() = q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose();
            s *= inv_sqrt;
            for (Eigen::Index j = 0; j < L; ++j) {
                if (!valid[static_cast<std::size_t>(j)]) s.col(j).setConstant(-std::numeric_limits<double>::infinity());
            }
            for (Eigen::Index i = 0; i < L; ++i) {
                const double m = s.row(i).maxCoeff();
                s.row(i) = (s.row(i).array() - m).exp();
                s.row(i) /= s.row(i).sum();
            }
            out.middleCols(h * dh, dh).noalias() = s * v.value().middleCols(h * dh, dh);
            probs[static_cast<std::size_t>(h)] = std::move(s);
        }
    }
    Tape& t = tape_of(q);
    const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
    return t.push(std::move(out), {q, k, v},
                  [iq, ik, iv, heads, dh, inv_sqrt, probs = std::move(probs)](Tape& t, std::size_t self) {
                      if (probs.empty() || probs[0].size() == 0) return;
                      const Matrix& g = t.grad(self);
                      const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
                      for (int h = 0; h < heads; ++h) {
                          const Matrix& p = probs[static_cast<std::size_t>(h)];
                          const auto go = g.middleCols(h * dh, dh);
                          if (gv) t.grad_ref(iv).middleCols(h * dh, dh).noalias() += p.transpose() * go;
                          if (!gq && !gk) continue;
                          Matrix dp;
                          dp.noalias() = go * t.value(iv).middleCols(h * dh, dh).transpose();
                          const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
                          Matrix ds = p.cwiseProduct((dp.colwise() - row_dot).matrix());
                          ds *= inv_sqrt;
                          if (gq) t.grad_ref(iq).middleCols(h * dh, dh).noalias() += ds * t.value(ik).middleCols(h * dh, dh);
                          if (gk) t.grad_ref(ik).middleCols(h * dh, dh).noalias() += ds.transpose() * t.value(iq).middleCols(h * dh, dh);
                      }
                  });
}

Var cross_entropy_sum(Var logits, std::span<const int> targets) {
    const Matrix& z = logits.value();
    if (static_cast<Eigen::Index>(targets.size()) != z.rows()) throw ShapeError("cross_entropy: target length");
    Matrix probs(z.rows(), z.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const int y = targets[static_cast<std::size_t>(i)];
        if (y < 0) {
            probs.row(i).setZero();
            continue;
        }
        if (y >= z.cols()) throw ShapeError("cross_entropy: target out of range");
        const double m = z.row(i).maxCoeff();
        probs.row(i) = (z.row(i).array() - m).exp();
        const double s = probs.row(i).sum();
        probs.row(i) /= s;
        total += (m + std::log(s)) - z(i, y);
    }
    Matrix out(1, 1);
    out(0, 0) = total;
    Tape& t = tape_of(logits);
    const std::size_t il = logits.id();
    std::vector<int> ys(targets.begin(), targets.end());
    return t.push(std::move(out), {logits},
                  [il, ys = std::move(ys), probs = std::move(probs)](Tape& t, std::size_t self) mutable {
                      const double g = t.grad(self)(0, 0);
                      Matrix& gl = t.grad_ref(il);
                      for (std::size_t i = 0; i < ys.size(); ++i) {
                          if (ys[i] < 0) continue;
                          const auto r = static_cast<Eigen::Index>(i);
                          gl.row(r) += g * probs.row(r);
                          gl(r, ys[i]) -= g;
                      }
                  });
}

Var dropout(Var a, double rate, std::uint64_t seed) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(1.0 - rate);
    Matrix mask(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
    Tape& t = tape_of(a);
    return mul(a, t.constant(std::move(mask)));
}

}  // namespace priorflow::ad
