// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/numkern/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace avloc::nk {

// ---------------------------------------------------------------- parameters

Parameter& ParameterSet::add(const std::string& name, Matrix value, bool decay) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = params_.size();
    return params_.emplace_back(name, std::move(value), decay);
}

Parameter* ParameterSet::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterSet::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

std::vector<Parameter*> ParameterSet::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Matrix init_normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = dist(rng);
    return m;
}

Matrix init_xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    double limit = std::sqrt(6.0 / double(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = dist(rng);
    return m;
}

// ---------------------------------------------------------------- tape

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::item() const {
    const Matrix& v = value();
    require_shape(v.rows() == 1 && v.cols() == 1, "Var::item on non-scalar");
    return v[0];
}

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
    return Var(this, int(nodes_.size()) - 1);
}

Var Tape::leaf(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, grad_enabled_, {}, nullptr});
    return Var(this, int(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var(this, it->second);
    nodes_.push_back(Node{p.value, {}, grad_enabled_, {}, &p});
    int id = int(nodes_.size()) - 1;
    param_nodes_[&p] = id;
    return Var(this, id);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_)
        for (const Var& v : inputs) needs = needs || requires_grad(v.id());
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}, nullptr});
    return Var(this, int(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_)
        for (const Var& v : inputs) needs = needs || requires_grad(v.id());
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}, nullptr});
    return Var(this, int(nodes_.size()) - 1);
}

Matrix& Tape::grad(int id) {
    Node& n = nodes_[std::size_t(id)];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(Var out) {
    require_shape(out.tape() == this, "backward: node from another tape");
    const Matrix& v = value(out.id());
    require_shape(v.rows() == 1 && v.cols() == 1, "backward: output must be 1x1");
    if (!requires_grad(out.id())) return;
    grad(out.id())[0] += 1.0;
    for (int id = out.id(); id >= 0; --id) {
        Node& n = nodes_[std::size_t(id)];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, id);
    }
    for (auto& n : nodes_)
        if (n.param && !n.grad.empty()) n.param->grad += n.grad;
}

// ---------------------------------------------------------------- helpers

namespace {

Tape& tape_of(Var a) {
    require_shape(a.valid(), "operation on an empty Var");
    return *a.tape();
}

Tape& tape_of(Var a, Var b) {
    require_shape(a.valid() && b.valid() && a.tape() == b.tape(), "operands on different tapes");
    return *a.tape();
}

/// Applies an elementwise map with derivative expressed from (x, y).
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    int ia = a.id();
    return t.record(std::move(y), {a}, [ia, dfdx](Tape& tp, int self) {
        if (!tp.requires_grad(ia)) return;
        const Matrix& x = tp.value(ia);
        const Matrix& y = tp.value(self);
        const Matrix& g = tp.grad(self);
        Matrix& gx = tp.grad(ia);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * dfdx(x[i], y[i]);
    });
}

double stable_sigmoid(double x) {
    if (x >= 0) {
        double z = std::exp(-x);
        return 1.0 / (1.0 + z);
    }
    double z = std::exp(x);
    return z / (1.0 + z);
}

}  // namespace

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Matrix y = nk::matmul(a.value(), b.value());
    int ia = a.id(), ib = b.id();
    return t.record(std::move(y), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) matmul_nt_acc(g, tp.value(ib), tp.grad(ia));
        if (tp.requires_grad(ib)) matmul_tn_acc(tp.value(ia), g, tp.grad(ib));
    });
}

Var matmul_nt(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Matrix y = nk::matmul_nt(a.value(), b.value());
    int ia = a.id(), ib = b.id();
    return t.record(std::move(y), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) matmul_acc(g, tp.value(ib), tp.grad(ia));
        if (tp.requires_grad(ib)) matmul_tn_acc(g, tp.value(ia), tp.grad(ib));
    });
}

Var transpose(Var a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    return t.record(a.value().transposed(), {a}, [ia](Tape& tp, int self) {
        tp.grad(ia) += tp.grad(self).transposed();
    });
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_shape(a.value().same_shape(b.value()), "add: shape mismatch");
    int ia = a.id(), ib = b.id();
    return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) tp.grad(ia) += g;
        if (tp.requires_grad(ib)) tp.grad(ib) += g;
    });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_shape(a.value().same_shape(b.value()), "sub: shape mismatch");
    int ia = a.id(), ib = b.id();
    return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) tp.grad(ia) += g;
        if (tp.requires_grad(ib)) tp.grad(ib) -= g;
    });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const Matrix& x = a.value();
    const Matrix& z = b.value();
    require_shape(x.same_shape(z), "mul: shape mismatch");
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
    int ia = a.id(), ib = b.id();
    return t.record(std::move(y), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            Matrix& ga = tp.grad(ia);
            const Matrix& vb = tp.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (tp.requires_grad(ib)) {
            Matrix& gb = tp.grad(ib);
            const Matrix& va = tp.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
    });
}

Var scale(Var a, double s) {
    Tape& t = tape_of(a);
    int ia = a.id();
    return t.record(a.value() * s, {a}, [ia, s](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var scale_by(Var a, Var s) {
    Tape& t = tape_of(a, s);
    require_shape(s.rows() == 1 && s.cols() == 1, "scale_by: factor must be 1x1");
    int ia = a.id(), is = s.id();
    return t.record(a.value() * s.value()[0], {a, s}, [ia, is](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        const double f = tp.value(is)[0];
        if (tp.requires_grad(ia)) {
            Matrix& ga = tp.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += f * g[i];
        }
        if (tp.requires_grad(is)) {
            const Matrix& x = tp.value(ia);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
            tp.grad(is)[0] += acc;
        }
    });
}

Var add_scalar(Var a, double s) {
    Tape& t = tape_of(a);
    Matrix y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s;
    int ia = a.id();
    return t.record(std::move(y), {a}, [ia](Tape& tp, int self) { tp.grad(ia) += tp.grad(self); });
}

Var add_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    const Matrix& x = a.value();
    const Matrix& r = row.value();
    require_shape(r.rows() == 1 && r.cols() == x.cols(), "add_row: row must be 1 x cols");
    Matrix y = x;
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += r[j];
    int ia = a.id(), ir = row.id();
    return t.record(std::move(y), {a, row}, [ia, ir](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) tp.grad(ia) += g;
        if (tp.requires_grad(ir)) {
            Matrix& gr = tp.grad(ir);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
        }
    });
}

Var mul_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    const Matrix& x = a.value();
    const Matrix& r = row.value();
    require_shape(r.rows() == 1 && r.cols() == x.cols(), "mul_row: row must be 1 x cols");
    Matrix y = x;
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) *= r[j];
    int ia = a.id(), ir = row.id();
    return t.record(std::move(y), {a, row}, [ia, ir](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        const Matrix& x = tp.value(ia);
        const Matrix& r = tp.value(ir);
        if (tp.requires_grad(ia)) {
            Matrix& ga = tp.grad(ia);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j) * r[j];
        }
        if (tp.requires_grad(ir)) {
            Matrix& gr = tp.grad(ir);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j) * x(i, j);
        }
    });
}

Var mul_col(Var a, Var col) {
    Tape& t = tape_of(a, col);
    const Matrix& x = a.value();
    const Matrix& c = col.value();
    require_shape(c.cols() == 1 && c.rows() == x.rows(), "mul_col: col must be rows x 1");
    Matrix y = x;
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) *= c[i];
    int ia = a.id(), ic = col.id();
    return t.record(std::move(y), {a, col}, [ia, ic](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        const Matrix& x = tp.value(ia);
        const Matrix& c = tp.value(ic);
        if (tp.requires_grad(ia)) {
            Matrix& ga = tp.grad(ia);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j) * c[i];
        }
        if (tp.requires_grad(ic)) {
            Matrix& gc = tp.grad(ic);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j) * x(i, j);
                gc[i] += s;
            }
        }
    });
}

Var sigmoid(Var a) {
    return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
    return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
    return unary(
        a, [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) { return stable_sigmoid(x); });
}

Var smooth_l1(Var a, double beta) {
    require_shape(beta > 0, "smooth_l1: beta must be positive");
    return unary(
        a,
        [beta](double x) {
            double ax = std::abs(x);
            return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
        },
        [beta](double x, double) {
            if (std::abs(x) < beta) return x / beta;
            return x > 0 ? 1.0 : -1.0;
        });
}

// ---------------------------------------------------------------- softmax family

Matrix masked_softmax(const Matrix& scores, const Matrix& mask) {
    require_shape(scores.same_shape(mask), "masked_softmax: mask shape mismatch");
    Matrix y(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < scores.cols(); ++j)
            if (mask(i, j) != 0.0) mx = std::max(mx, scores(i, j));
        if (!std::isfinite(mx)) throw std::invalid_argument("masked_softmax: row " + std::to_string(i) + " has an all-zero mask");
        double z = 0.0;
        for (std::size_t j = 0; j < scores.cols(); ++j) {
            double e = mask(i, j) != 0.0 ? mask(i, j) * std::exp(scores(i, j) - mx) : 0.0;
            y(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < scores.cols(); ++j) y(i, j) /= z;
    }
    return y;
}

namespace {

Var softmax_from(Var scores, Matrix y) {
    Tape& t = tape_of(scores);
    int is = scores.id();
    return t.record(std::move(y), {scores}, [is](Tape& tp, int self) {
        const Matrix& y = tp.value(self);
        const Matrix& g = tp.grad(self);
        Matrix& gs = tp.grad(is);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) gs(i, j) += y(i, j) * (g(i, j) - dot);
        }
    });
}

}  // namespace

Var masked_softmax(Var scores, MaskPtr mask) {
    require_shape(mask != nullptr, "masked_softmax: null mask");
    return softmax_from(scores, masked_softmax(scores.value(), *mask));
}

Var softmax_rows(Var scores) {
    const Matrix& s = scores.value();
    Matrix y(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < s.cols(); ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) z += (y(i, j) = std::exp(s(i, j) - mx));
        for (std::size_t j = 0; j < s.cols(); ++j) y(i, j) /= z;
    }
    return softmax_from(scores, std::move(y));
}

Var log_softmax_rows(Var scores) {
    Tape& t = tape_of(scores);
    const Matrix& s = scores.value();
    Matrix y(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < s.cols(); ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) z += std::exp(s(i, j) - mx);
        double lz = mx + std::log(z);
        for (std::size_t j = 0; j < s.cols(); ++j) y(i, j) = s(i, j) - lz;
    }
    int is = scores.id();
    return t.record(std::move(y), {scores}, [is](Tape& tp, int self) {
        const Matrix& y = tp.value(self);
        const Matrix& g = tp.grad(self);
        Matrix& gs = tp.grad(is);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) gsum += g(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) gs(i, j) += g(i, j) - std::exp(y(i, j)) * gsum;
        }
    });
}

// ---------------------------------------------------------------- structural

Var concat_cols(const std::vector<Var>& parts) {
    require_shape(!parts.empty(), "concat_cols: no inputs");
    Tape& t = tape_of(parts.front());
    std::size_t rows = parts.front().rows(), cols = 0;
    for (const Var& p : parts) {
        require_shape(p.tape() == &t && p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix y(rows, cols);
    std::vector<int> ids;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Matrix& v = p.value();
        for (std::size_t i = 0; i < rows; ++i)
            std::copy(v.row(i).begin(), v.row(i).end(), y.row(i).begin() + std::ptrdiff_t(off));
        off += v.cols();
        ids.push_back(p.id());
    }
    return t.record(std::move(y), parts, [ids](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        std::size_t off = 0;
        for (int id : ids) {
            std::size_t c = tp.value(id).cols();
            if (tp.requires_grad(id)) {
                Matrix& gp = tp.grad(id);
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < c; ++j) gp(i, j) += g(i, off + j);
            }
            off += c;
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require_shape(!parts.empty(), "concat_rows: no inputs");
    Tape& t = tape_of(parts.front());
    std::size_t cols = parts.front().cols(), rows = 0;
    for (const Var& p : parts) {
        require_shape(p.tape() == &t && p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    std::vector<int> ids;
    for (const Var& p : parts) {
        data.insert(data.end(), p.value().values().begin(), p.value().values().end());
        ids.push_back(p.id());
    }
    return t.record(Matrix(rows, cols, std::move(data)), parts, [ids](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        std::size_t off = 0;
        for (int id : ids) {
            std::size_t n = tp.value(id).size();
            if (tp.requires_grad(id)) {
                Matrix& gp = tp.grad(id);
                for (std::size_t k = 0; k < n; ++k) gp[k] += g[off + k];
            }
            off += n;
        }
    });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    require_shape(start + count <= x.rows(), "slice_rows: out of range");
    std::vector<double> data(x.data() + start * x.cols(), x.data() + (start + count) * x.cols());
    int ia = a.id();
    return t.record(Matrix(count, x.cols(), std::move(data)), {a}, [ia, start](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        std::size_t off = start * ga.cols();
        for (std::size_t k = 0; k < g.size(); ++k) ga[off + k] += g[k];
    });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    require_shape(start + count <= x.cols(), "slice_cols: out of range");
    Matrix y(x.rows(), count);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) y(i, j) = x(i, start + j);
    int ia = a.id();
    return t.record(std::move(y), {a}, [ia, start](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) ga(i, start + j) += g(i, j);
    });
}

Var gather_rows(Var a, std::vector<int> index) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    Matrix y(index.size(), x.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0) continue;
        require_shape(std::size_t(index[i]) < x.rows(), "gather_rows: index out of range");
        std::copy(x.row(std::size_t(index[i])).begin(), x.row(std::size_t(index[i])).end(), y.row(i).begin());
    }
    int ia = a.id();
    return t.record(std::move(y), {a}, [ia, idx = std::move(index)](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0) continue;
            auto src = g.row(i);
            auto dst = ga.row(std::size_t(idx[i]));
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
    });
}

// ---------------------------------------------------------------- reductions

Var sum_all(Var a) {
    Tape& t = tape_of(a);
    int ia = a.id();
    return t.record(Matrix(1, 1, a.value().sum()), {a}, [ia](Tape& tp, int self) {
        double g = tp.grad(self)[0];
        Matrix& ga = tp.grad(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

Var mean_all(Var a) {
    require_shape(a.value().size() > 0, "mean_all: empty input");
    return scale(sum_all(a), 1.0 / double(a.value().size()));
}

Var mean_rows(Var a) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    require_shape(x.rows() > 0, "mean_rows: empty input");
    Matrix y(1, x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) y[j] += x(i, j);
    y *= 1.0 / double(x.rows());
    int ia = a.id();
    return t.record(std::move(y), {a}, [ia](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        double inv = 1.0 / double(ga.rows());
        for (std::size_t i = 0; i < ga.rows(); ++i)
            for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[j] * inv;
    });
}

Var max_pool_rows2(Var a) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    std::size_t n = x.rows() / 2;
    require_shape(n >= 1, "max_pool_rows2: need at least 2 rows");
    Matrix y(n, x.cols());
    std::vector<std::size_t> arg(n * x.cols());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) {
            std::size_t r = x(2 * i + 1, j) > x(2 * i, j) ? 2 * i + 1 : 2 * i;
            y(i, j) = x(r, j);
            arg[i * x.cols() + j] = r;
        }
    int ia = a.id();
    return t.record(std::move(y), {a}, [ia, arg = std::move(arg)](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) ga(arg[i * g.cols() + j], j) += g(i, j);
    });
}

Var max_cols(Var a) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    require_shape(x.cols() >= 1, "max_cols: need at least one column");
    Matrix y(x.rows(), 1);
    std::vector<std::size_t> arg(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < x.cols(); ++j)
            if (x(i, j) > x(i, best)) best = j;
        y[i] = x(i, best);
        arg[i] = best;
    }
    int ia = a.id();
    return t.record(std::move(y), {a}, [ia, arg = std::move(arg)](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.rows(); ++i) ga(i, arg[i]) += g[i];
    });
}

Var normalize_rows(Var a, double eps) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    std::size_t n = x.cols();
    Matrix y(x.rows(), n);
    Matrix inv_std(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += x(i, j);
        mean /= double(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= double(n);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < n; ++j) y(i, j) = (x(i, j) - mean) * is;
    }
    int ia = a.id();
    return t.record(std::move(y), {a}, [ia, inv_std = std::move(inv_std)](Tape& tp, int self) {
        const Matrix& y = tp.value(self);
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        double n = double(y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double gm = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) {
                gm += g(i, j);
                gy += g(i, j) * y(i, j);
            }
            gm /= n;
            gy /= n;
            for (std::size_t j = 0; j < y.cols(); ++j)
                ga(i, j) += inv_std[i] * (g(i, j) - gm - y(i, j) * gy);
        }
    });
}

Var l2_normalize_rows(Var a, double eps) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    Matrix y(x.rows(), x.cols());
    Matrix inv_norm(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        for (double v : x.row(i)) s += v * v;
        double inv = 1.0 / std::max(std::sqrt(s), eps);
        inv_norm[i] = inv;
        for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = x(i, j) * inv;
    }
    int ia = a.id();
    return t.record(std::move(y), {a}, [ia, inv_norm = std::move(inv_norm)](Tape& tp, int self) {
        const Matrix& y = tp.value(self);
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += inv_norm[i] * (g(i, j) - y(i, j) * dot);
        }
    });
}

}  // namespace avloc::nk
