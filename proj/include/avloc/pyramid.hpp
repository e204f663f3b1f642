// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <random>
#include <vector>

#include "avloc/layers.hpp"

namespace avloc::pyramid {

using nk::Tape;
using nk::Var;

struct PyramidConfig {
    int levels = 6;
    int pool_tokens = 16;
    int heads = 4;

    void validate() const;
};

struct PyramidLevel {
    int level = 1;           ///< 1-based
    std::size_t stride = 1;  ///< 2^(level - 1)
    Var video;               ///< floor(T / stride) x d
    Var audio;
};

/// floor(T / 2^(level - 1)).
std::size_t level_length(std::size_t T, int level);
/// Throws std::invalid_argument unless T >= 2^(levels - 1).
void check_length(std::size_t T, int levels);

/// Row i of `target` scaled by sigmoid(max_j target_i . guide_j).
Var max_sigmoid_adapter(Var target, Var guide);

/// Multi-scale path aggregation with modality-guided adapters and the adaptive
/// pooling module. Parameters live under "pan.".
class PathAggregation {
public:
    PathAggregation() = default;
    PathAggregation(nk::ParameterSet& ps, const PyramidConfig& cfg, std::size_t width, std::mt19937_64& rng);

    /// Downsampling, top-down and bottom-up fusion, each output layer-normalized.
    /// Level 1 is the input when levels == 1.
    std::vector<PyramidLevel> build(Tape& t, Var video, Var audio) const;
    /// V' = V + MHA(V, pooled audio), A' = A + MHA(A, pooled video), per level.
    std::vector<PyramidLevel> refine(Tape& t, const std::vector<PyramidLevel>& levels) const;
    std::vector<PyramidLevel> operator()(Tape& t, Var video, Var audio) const { return refine(t, build(t, video, audio)); }

    /// Zeroes every parameter through which one modality reaches the other.
    void zero_cross_modal();
    /// Zeroes the adaptive pooling output projections only (refine becomes the identity).
    void zero_pooling_output();

    const PyramidConfig& config() const { return cfg_; }

private:
    struct Stream {
        std::vector<nn::TemporalLinear> down;  ///< index l - 2 produces level l
        std::vector<nn::LayerNorm> down_norm;
        std::vector<nn::Linear> td_fuse, td_gate, td_stage;  ///< index l - 1, levels 1..L-1
        std::vector<nn::LayerNorm> td_norm;
        std::vector<nn::Linear> bu_fuse, bu_gate, bu_stage;  ///< index l - 2, levels 2..L
        std::vector<nn::LayerNorm> bu_norm;
        nn::MultiHeadAttention apm;
    };
    static Stream make_stream(nk::ParameterSet& ps, const std::string& name, const PyramidConfig& cfg,
                              std::size_t width, std::mt19937_64& rng);

    PyramidConfig cfg_;
    Stream video_, audio_;
};

}  // namespace avloc::pyramid
