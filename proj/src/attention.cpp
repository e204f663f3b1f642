// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/attention.hpp"

#include <cmath>

namespace avloc::attention {

std::size_t aligned_video_index(std::size_t j, std::size_t video_len, std::size_t audio_len) {
    const double pos = double(j) * double(video_len) / double(audio_len);
    return std::min<std::size_t>(video_len - 1, std::size_t(std::lround(pos)));
}

AttentionMask build_mask(std::size_t video_len, std::size_t audio_len) {
    if (video_len < 1 || audio_len < 1) throw std::invalid_argument("build_mask: lengths must be >= 1");
    AttentionMask m{video_len, audio_len, nullptr};
    Matrix bits(m.size(), m.size());
    // Intra-video block, CLS_V included.
    for (std::size_t i = 0; i <= video_len; ++i)
        for (std::size_t j = 0; j <= video_len; ++j) bits(i, j) = 1.0;
    // Intra-audio block, CLS_A included.
    for (std::size_t i = m.cls_audio(); i < m.size(); ++i)
        for (std::size_t j = m.cls_audio(); j < m.size(); ++j) bits(i, j) = 1.0;
    bits(m.cls_video(), m.cls_audio()) = bits(m.cls_audio(), m.cls_video()) = 1.0;
    for (std::size_t j = 0; j < audio_len; ++j) {
        const std::size_t i = aligned_video_index(j, video_len, audio_len);
        bits(m.video(i), m.audio(j)) = bits(m.audio(j), m.video(i)) = 1.0;
    }
    m.bits = std::make_shared<const Matrix>(std::move(bits));
    return m;
}

AttentionMask full_mask(std::size_t video_len, std::size_t audio_len) {
    AttentionMask m{video_len, audio_len, nullptr};
    m.bits = std::make_shared<const Matrix>(Matrix::ones(m.size(), m.size()));
    return m;
}

Var adaptive_attention(Var x, const AttentionMask& mask, Var w_q, Var w_k, Var w_v, int heads,
                       AttentionTrace* trace) {
    nk::require_shape(x.rows() == mask.size(), "adaptive_attention: token count does not match the mask");
    nk::require_shape(heads >= 1 && w_q.cols() % std::size_t(heads) == 0,
                      "adaptive_attention: width not divisible by heads");
    Var q = nk::matmul(x, w_q);
    Var k = nk::matmul(x, w_k);
    Var v = nk::matmul(x, w_v);
    const std::size_t dh = q.cols() / std::size_t(heads);
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    std::vector<Var> outs;
    outs.reserve(std::size_t(heads));
    for (int h = 0; h < heads; ++h) {
        const std::size_t off = std::size_t(h) * dh;
        Var scores = nk::scale(nk::matmul_nt(nk::slice_cols(q, off, dh), nk::slice_cols(k, off, dh)), inv_sqrt);
        Var aat = nk::masked_softmax(scores, mask.bits);
        if (trace) trace->probabilities.push_back(aat.value());
        outs.push_back(nk::matmul(aat, nk::slice_cols(v, off, dh)));
    }
    return heads == 1 ? outs.front() : nk::concat_cols(outs);
}

AttentionBlock AttentionBlock::create(nk::ParameterSet& ps, const std::string& name, const AttentionConfig& cfg,
                                      std::mt19937_64& rng) {
    const auto d = std::size_t(cfg.width);
    if (cfg.heads < 1 || d % std::size_t(cfg.heads) != 0)
        throw std::invalid_argument("attention width must be divisible by the head count");
    AttentionBlock b;
    b.heads = cfg.heads;
    b.norm1 = nn::LayerNorm::create(ps, name + ".ln1", d);
    b.w_q = &ps.add(name + ".w_q", nk::init_xavier(d, d, rng));
    b.w_k = &ps.add(name + ".w_k", nk::init_xavier(d, d, rng));
    b.w_v = &ps.add(name + ".w_v", nk::init_xavier(d, d, rng));
    b.out = nn::Linear::create(ps, name + ".w_o", d, d, rng);
    b.norm2 = nn::LayerNorm::create(ps, name + ".ln2", d);
    b.ffn_in = nn::Linear::create(ps, name + ".ffn1", d, std::size_t(cfg.ffn_hidden), rng);
    b.ffn_out = nn::Linear::create(ps, name + ".ffn2", std::size_t(cfg.ffn_hidden), d, rng);
    return b;
}

Var AttentionBlock::operator()(nk::Tape& t, Var x, const AttentionMask& mask, AttentionTrace* trace) const {
    Var a = adaptive_attention(norm1(t, x), mask, t.param(*w_q), t.param(*w_k), t.param(*w_v), heads, trace);
    Var h = nk::add(x, out(t, a));
    Var f = ffn_out(t, nk::relu(ffn_in(t, norm2(t, h))));
    return nk::add(h, f);
}

Aligner::Aligner(nk::ParameterSet& ps, const AttentionConfig& cfg, std::size_t video_dim, std::size_t audio_dim,
                 std::mt19937_64& rng)
    : cfg_(cfg) {
    if (cfg.blocks < 0 || cfg.blocks > 4) throw std::invalid_argument("attention blocks must be in [0, 4]");
    const auto d = std::size_t(cfg.width);
    proj_v_ = nn::Linear::create(ps, "align.proj_v", video_dim, d, rng);
    proj_a_ = nn::Linear::create(ps, "align.proj_a", audio_dim, d, rng);
    cls_v_ = &ps.add("align.cls_v", nk::init_normal(1, d, 0.02, rng), false);
    cls_a_ = &ps.add("align.cls_a", nk::init_normal(1, d, 0.02, rng), false);
    for (int b = 0; b < cfg.blocks; ++b)
        blocks_.push_back(AttentionBlock::create(ps, "align.block" + std::to_string(b), cfg, rng));
}

AlignedFeatures Aligner::align(nk::Tape& t, Var video, Var audio, AttentionTrace* trace) const {
    return align_projected(t, proj_v_(t, video), proj_a_(t, audio), trace);
}

AlignedFeatures Aligner::align_projected(nk::Tape& t, Var video, Var audio, AttentionTrace* trace) const {
    const std::size_t lv = video.rows(), la = audio.rows();
    const AttentionMask mask = cfg_.adaptive_mask ? build_mask(lv, la) : full_mask(lv, la);
    Var x = nk::concat_rows({t.param(*cls_v_), video, t.param(*cls_a_), audio});
    for (const auto& block : blocks_) x = block(t, x, mask, trace);
    return {nk::slice_rows(x, mask.video(0), lv), nk::slice_rows(x, mask.audio(0), la),
            nk::slice_rows(x, mask.cls_video(), 1), nk::slice_rows(x, mask.cls_audio(), 1)};
}

}  // namespace avloc::attention
