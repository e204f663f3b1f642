// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "avloc/numkern/matrix.hpp"

namespace avloc::nk {

/// A named trainable matrix together with its accumulated gradient.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    /// Whether decoupled weight decay applies to this parameter.
    bool decay = true;

    Parameter(std::string n, Matrix v, bool apply_decay = true)
        : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), decay(apply_decay) {}

    void zero_grad() { grad.set_zero(); }
};

/// Owns parameters with stable addresses; insertion order is the canonical order.
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(const ParameterSet&) = delete;
    ParameterSet& operator=(const ParameterSet&) = delete;

    Parameter& add(const std::string& name, Matrix value, bool decay = true);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();

private:
    std::deque<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Weight initializers (deterministic given the engine state).
Matrix init_normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng);
Matrix init_xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    int id() const { return id_; }
    Tape* tape() const { return tape_; }
    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    /// Value of a 1x1 node.
    double item() const;

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Define-by-run reverse-mode tape. One tape per computation graph; not thread-safe.
class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    /// Differentiable leaf not tied to a Parameter.
    Var leaf(Matrix value);
    /// Leaf bound to `p`; repeated calls return the same node.
    Var param(Parameter& p);

    /// Records a node. `inputs` decide whether it needs a gradient.
    Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
    Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

    const Matrix& value(int id) const { return nodes_[std::size_t(id)].value; }
    bool requires_grad(int id) const { return nodes_[std::size_t(id)].requires_grad; }
    /// Gradient buffer for node `id`, allocated (zeroed) on first access.
    Matrix& grad(int id);
    bool has_grad(int id) const { return !nodes_[std::size_t(id)].grad.empty() || value(id).empty(); }

    /// Seeds d(out)/d(out) = 1 and propagates, then accumulates into bound Parameters.
    void backward(Var out);

    std::size_t node_count() const { return nodes_.size(); }

    /// When false, nodes record no backward closures (inference only).
    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
    bool grad_enabled_ = true;
};

using MaskPtr = std::shared_ptr<const Matrix>;

// Primitive operations. All take and return nodes on the same tape.

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Multiplies every entry of a by the 1 x 1 node s.
Var scale_by(Var a, Var s);
Var add_scalar(Var a, double s);
/// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
/// Multiplies every row of a elementwise by a 1 x n row.
Var mul_row(Var a, Var row);
/// Multiplies row i of a by col(i, 0), col is n x 1.
Var mul_col(Var a, Var col);

Var sigmoid(Var a);
Var exp(Var a);
/// Natural log; inputs must be positive.
Var log(Var a);
Var relu(Var a);
/// log(1 + exp(x)), computed stably.
Var softplus(Var a);
/// Elementwise smooth L1 with threshold beta.
Var smooth_l1(Var a, double beta = 1.0);

/// Row softmax restricted to entries where mask is 1. Rows of the mask must not be all zero.
Var masked_softmax(Var scores, MaskPtr mask);
Var softmax_rows(Var scores);
Var log_softmax_rows(Var scores);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var slice_cols(Var a, std::size_t start, std::size_t count);
/// out.row(i) = a.row(index[i]), or zeros where index[i] < 0.
Var gather_rows(Var a, std::vector<int> index);

Var sum_all(Var a);
Var mean_all(Var a);
/// Column means, 1 x cols.
Var mean_rows(Var a);
/// Max over consecutive row pairs; output has floor(rows / 2) rows.
Var max_pool_rows2(Var a);
/// Row-wise max across columns, rows x 1.
Var max_cols(Var a);

/// Per-row standardization (x - mean) / sqrt(var + eps), no affine part.
Var normalize_rows(Var a, double eps = 1e-5);
/// Per-row division by the L2 norm (floored at eps).
Var l2_normalize_rows(Var a, double eps = 1e-12);

/// `scores` row-stochastic over mask support; eager (non-tape) version of masked_softmax.
Matrix masked_softmax(const Matrix& scores, const Matrix& mask);

}  // namespace avloc::nk
