// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/layers.hpp"

#include <cmath>

namespace avloc::nn {

using nk::Matrix;

Linear Linear::create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                      std::mt19937_64& rng, bool with_bias) {
    Linear l;
    l.weight = &ps.add(name + ".w", nk::init_xavier(in, out, rng));
    if (with_bias) l.bias = &ps.add(name + ".b", Matrix(1, out), false);
    return l;
}

Var Linear::operator()(Tape& t, Var x) const {
    Var y = nk::matmul(x, t.param(*weight));
    return bias ? nk::add_row(y, t.param(*bias)) : y;
}

void Linear::zero() {
    weight->value.set_zero();
    if (bias) bias->value.set_zero();
}

LayerNorm LayerNorm::create(ParameterSet& ps, const std::string& name, std::size_t width) {
    LayerNorm ln;
    ln.gain = &ps.add(name + ".gain", Matrix::ones(1, width), false);
    ln.shift = &ps.add(name + ".shift", Matrix(1, width), false);
    return ln;
}

Var LayerNorm::operator()(Tape& t, Var x) const {
    return nk::add_row(nk::mul_row(nk::normalize_rows(x), t.param(*gain)), t.param(*shift));
}

Var temporal_window3(Var x) {
    const int n = int(x.rows());
    std::vector<int> prev(static_cast<std::size_t>(n)), next(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        prev[std::size_t(i)] = i - 1;
        next[std::size_t(i)] = i + 1 < n ? i + 1 : -1;
    }
    return nk::concat_cols({nk::gather_rows(x, std::move(prev)), x, nk::gather_rows(x, std::move(next))});
}

TemporalLinear TemporalLinear::create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                                      std::mt19937_64& rng) {
    return {Linear::create(ps, name, 3 * in, out, rng)};
}

Var TemporalLinear::operator()(Tape& t, Var x) const { return proj(t, temporal_window3(x)); }

MultiHeadAttention MultiHeadAttention::create(ParameterSet& ps, const std::string& name, std::size_t width,
                                              int heads, std::mt19937_64& rng) {
    if (heads < 1 || width % std::size_t(heads) != 0)
        throw std::invalid_argument(name + ": width must be divisible by the head count");
    MultiHeadAttention m;
    m.heads = heads;
    m.query = Linear::create(ps, name + ".q", width, width, rng, false);
    m.key = Linear::create(ps, name + ".k", width, width, rng, false);
    m.value = Linear::create(ps, name + ".v", width, width, rng, false);
    m.out = Linear::create(ps, name + ".o", width, width, rng, true);
    return m;
}

Var MultiHeadAttention::operator()(Tape& t, Var queries, Var keys_values) const {
    Var q = query(t, queries);
    Var k = key(t, keys_values);
    Var v = value(t, keys_values);
    const std::size_t dh = q.cols() / std::size_t(heads);
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    std::vector<Var> outs;
    for (int h = 0; h < heads; ++h) {
        const std::size_t off = std::size_t(h) * dh;
        Var qh = nk::slice_cols(q, off, dh);
        Var kh = nk::slice_cols(k, off, dh);
        Var vh = nk::slice_cols(v, off, dh);
        Var p = nk::softmax_rows(nk::scale(nk::matmul_nt(qh, kh), inv_sqrt));
        outs.push_back(nk::matmul(p, vh));
    }
    return out(t, heads == 1 ? outs.front() : nk::concat_cols(outs));
}

Var upsample_rows(Var x, std::size_t target) {
    const std::size_t n = x.rows();
    std::vector<int> idx(target);
    for (std::size_t i = 0; i < target; ++i) idx[i] = int(std::min(n - 1, i * n / target));
    return nk::gather_rows(x, std::move(idx));
}

Var segment_mean_rows(Var x, std::size_t segments) {
    if (segments < 1) throw std::invalid_argument("segment_mean_rows: need at least one segment");
    const std::size_t n = x.rows();
    Matrix avg(segments, n);
    for (std::size_t k = 0; k < segments; ++k) {
        const std::size_t lo = k * n / segments;
        const std::size_t hi = ((k + 1) * n + segments - 1) / segments;
        for (std::size_t r = lo; r < hi; ++r) avg(k, r) = 1.0 / double(hi - lo);
    }
    return nk::matmul(x.tape()->constant(std::move(avg)), x);
}

}  // namespace avloc::nn
