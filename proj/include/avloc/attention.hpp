// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <memory>
#include <random>
#include <vector>

#include "avloc/layers.hpp"

namespace avloc::attention {

using nk::Matrix;
using nk::Var;

/// Binary mask over the token sequence [CLS_V | V_0..V_{Lv-1} | CLS_A | A_0..A_{La-1}].
///
/// Intra-modal blocks (each CLS included) are all ones, CLS_V and CLS_A see each
/// other, and a video/audio token pair is linked only when both map to the same
/// temporal segment. With unequal lengths audio index j maps to video index
/// round(j * Lv / La), halves rounded away from zero.
struct AttentionMask {
    std::size_t video_len = 0;
    std::size_t audio_len = 0;
    std::shared_ptr<const Matrix> bits;

    std::size_t size() const { return video_len + audio_len + 2; }
    std::size_t cls_video() const { return 0; }
    std::size_t video(std::size_t i) const { return 1 + i; }
    std::size_t cls_audio() const { return 1 + video_len; }
    std::size_t audio(std::size_t j) const { return 2 + video_len + j; }
    double operator()(std::size_t i, std::size_t j) const { return (*bits)(i, j); }
};

AttentionMask build_mask(std::size_t video_len, std::size_t audio_len);
/// The all-ones mask of the same layout (ablation: plain global attention).
AttentionMask full_mask(std::size_t video_len, std::size_t audio_len);
/// Video index that audio index j is aligned with.
std::size_t aligned_video_index(std::size_t j, std::size_t video_len, std::size_t audio_len);

/// Optional capture of intermediate attention matrices (one per head).
struct AttentionTrace {
    std::vector<Matrix> probabilities;
};

/// Per head: masked_softmax(Q_h K_h^T / sqrt(d_head), M) V_h, heads concatenated.
/// Q = X W_Q, K = X W_K, V = X W_V.
Var adaptive_attention(Var x, const AttentionMask& mask, Var w_q, Var w_k, Var w_v, int heads,
                       AttentionTrace* trace = nullptr);

struct AttentionConfig {
    int width = 64;
    int heads = 4;
    int blocks = 1;
    int ffn_hidden = 128;
    /// When false the cross-modal restriction is dropped (all-ones mask).
    bool adaptive_mask = true;
};

/// Pre-norm block: h = x + AAT(LN(x)) W_O;  y = h + FFN(LN(h)).
struct AttentionBlock {
    nn::LayerNorm norm1, norm2;
    nk::Parameter* w_q = nullptr;
    nk::Parameter* w_k = nullptr;
    nk::Parameter* w_v = nullptr;
    nn::Linear out;
    nn::Linear ffn_in, ffn_out;
    int heads = 1;

    static AttentionBlock create(nk::ParameterSet& ps, const std::string& name, const AttentionConfig& cfg,
                                 std::mt19937_64& rng);
    Var operator()(nk::Tape& t, Var x, const AttentionMask& mask, AttentionTrace* trace = nullptr) const;
};

struct AlignedFeatures {
    Var video;      ///< L_v x d
    Var audio;      ///< L_a x d
    Var cls_video;  ///< 1 x d
    Var cls_audio;  ///< 1 x d
};

/// Input projections, CLS embeddings and the stacked adaptive attention blocks.
class Aligner {
public:
    Aligner(nk::ParameterSet& ps, const AttentionConfig& cfg, std::size_t video_dim, std::size_t audio_dim,
            std::mt19937_64& rng);

    /// Raw features in, aligned per-modality outputs plus CLS summaries out.
    AlignedFeatures align(nk::Tape& t, Var video, Var audio, AttentionTrace* trace = nullptr) const;
    /// Same, starting from inputs already projected to the common width.
    AlignedFeatures align_projected(nk::Tape& t, Var video, Var audio, AttentionTrace* trace = nullptr) const;

    const AttentionConfig& config() const { return cfg_; }
    std::vector<AttentionBlock>& blocks() { return blocks_; }
    nn::Linear& video_projection() { return proj_v_; }
    nn::Linear& audio_projection() { return proj_a_; }

private:
    AttentionConfig cfg_;
    nn::Linear proj_v_, proj_a_;
    nk::Parameter* cls_v_ = nullptr;
    nk::Parameter* cls_a_ = nullptr;
    std::vector<AttentionBlock> blocks_;
};

}  // namespace avloc::attention
