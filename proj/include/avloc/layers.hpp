// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <random>
#include <string>

#include "avloc/numkern/tape.hpp"

namespace avloc::nn {

using nk::Parameter;
using nk::ParameterSet;
using nk::Tape;
using nk::Var;

/// y = x W + b
struct Linear {
    Parameter* weight = nullptr;  ///< in x out
    Parameter* bias = nullptr;    ///< 1 x out, optional

    static Linear create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                         std::mt19937_64& rng, bool with_bias = true);
    Var operator()(Tape& t, Var x) const;
    void zero();
};

/// Per-row layer normalization with learned gain and shift.
struct LayerNorm {
    Parameter* gain = nullptr;
    Parameter* shift = nullptr;

    static LayerNorm create(ParameterSet& ps, const std::string& name, std::size_t width);
    Var operator()(Tape& t, Var x) const;
};

/// Linear layer over a width-3 temporal window [x_{t-1} | x_t | x_{t+1}], zero padded.
struct TemporalLinear {
    Linear proj;

    static TemporalLinear create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                                 std::mt19937_64& rng);
    Var operator()(Tape& t, Var x) const;
};

/// [x_{t-1} | x_t | x_{t+1}] with zero rows beyond the ends.
Var temporal_window3(Var x);

/// Standard multi-head attention: softmax(Q K^T / sqrt(d_head)) V per head, then an output projection.
struct MultiHeadAttention {
    Linear query, key, value, out;
    int heads = 1;

    static MultiHeadAttention create(ParameterSet& ps, const std::string& name, std::size_t width, int heads,
                                     std::mt19937_64& rng);
    Var operator()(Tape& t, Var queries, Var keys_values) const;
};

/// Nearest upsampling of rows: out row i = x row floor(i * rows / target).
Var upsample_rows(Var x, std::size_t target);

/// Averages rows into `segments` adaptive bins: bin k covers
/// [floor(k n / N), ceil((k + 1) n / N)).
Var segment_mean_rows(Var x, std::size_t segments);

}  // namespace avloc::nn
