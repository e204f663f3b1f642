// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/pyramid.hpp"

#include <stdexcept>
#include <string>

namespace avloc::pyramid {

void PyramidConfig::validate() const {
    if (levels < 1 || levels > 16) throw std::invalid_argument("pyramid levels must be in [1, 16]");
    if (pool_tokens < 1) throw std::invalid_argument("pool_tokens must be >= 1");
    if (heads < 1) throw std::invalid_argument("pyramid heads must be >= 1");
}

std::size_t level_length(std::size_t T, int level) { return T >> (level - 1); }

void check_length(std::size_t T, int levels) {
    if (levels < 1 || T < (std::size_t(1) << (levels - 1)))
        throw std::invalid_argument("sequence of length " + std::to_string(T) + " is too short for " +
                                    std::to_string(levels) + " pyramid levels");
}

Var max_sigmoid_adapter(Var target, Var guide) {
    nk::require_shape(target.cols() == guide.cols(), "adapter: width mismatch");
    return nk::mul_col(target, nk::sigmoid(nk::max_cols(nk::matmul_nt(target, guide))));
}

PathAggregation::Stream PathAggregation::make_stream(nk::ParameterSet& ps, const std::string& name,
                                                     const PyramidConfig& cfg, std::size_t d, std::mt19937_64& rng) {
    Stream s;
    for (int l = 2; l <= cfg.levels; ++l) {
        s.down.push_back(nn::TemporalLinear::create(ps, name + ".down" + std::to_string(l), d, d, rng));
        s.down_norm.push_back(nn::LayerNorm::create(ps, name + ".down" + std::to_string(l) + ".norm", d));
    }
    for (int l = 1; l < cfg.levels; ++l) {
        const std::string p = name + ".td" + std::to_string(l);
        s.td_fuse.push_back(nn::Linear::create(ps, p + ".fuse", 2 * d, d, rng));
        s.td_norm.push_back(nn::LayerNorm::create(ps, p + ".norm", d));
        s.td_gate.push_back(nn::Linear::create(ps, p + ".gate", d, d, rng, false));
        s.td_stage.push_back(nn::Linear::create(ps, p + ".stage", d, d, rng));
    }
    for (int l = 2; l <= cfg.levels; ++l) {
        const std::string p = name + ".bu" + std::to_string(l);
        s.bu_fuse.push_back(nn::Linear::create(ps, p + ".fuse", 2 * d, d, rng));
        s.bu_norm.push_back(nn::LayerNorm::create(ps, p + ".norm", d));
        s.bu_gate.push_back(nn::Linear::create(ps, p + ".gate", d, d, rng, false));
        s.bu_stage.push_back(nn::Linear::create(ps, p + ".stage", d, d, rng));
    }
    s.apm = nn::MultiHeadAttention::create(ps, name + ".apm", d, cfg.heads, rng);
    return s;
}

PathAggregation::PathAggregation(nk::ParameterSet& ps, const PyramidConfig& cfg, std::size_t width,
                                 std::mt19937_64& rng)
    : cfg_(cfg) {
    cfg.validate();
    video_ = make_stream(ps, "pan.video", cfg, width, rng);
    audio_ = make_stream(ps, "pan.audio", cfg, width, rng);
}

std::vector<PyramidLevel> PathAggregation::build(Tape& t, Var video, Var audio) const {
    nk::require_shape(video.rows() == audio.rows(), "pyramid: streams must have equal length");
    const int L = cfg_.levels;
    check_length(video.rows(), L);

    std::vector<Var> bv{video}, ba{audio};
    for (int l = 2; l <= L; ++l) {
        const auto k = std::size_t(l - 2);
        bv.push_back(video_.down_norm[k](t, video_.down[k](t, nk::max_pool_rows2(bv.back()))));
        ba.push_back(audio_.down_norm[k](t, audio_.down[k](t, nk::max_pool_rows2(ba.back()))));
    }
    auto levels_of = [&](const std::vector<Var>& v, const std::vector<Var>& a) {
        std::vector<PyramidLevel> out;
        for (int l = 1; l <= L; ++l)
            out.push_back({l, std::size_t(1) << (l - 1), v[std::size_t(l - 1)], a[std::size_t(l - 1)]});
        return out;
    };
    if (L == 1) return levels_of(bv, ba);

    // Cross-stage output: gated features projected, plus the fused features themselves.
    auto adapt = [&](Var f, Var guide, const nn::Linear& gate, const nn::Linear& stage) {
        return nk::add(gate(t, max_sigmoid_adapter(f, guide)), stage(t, f));
    };

    std::vector<Var> pv(bv.size()), pa(ba.size());
    pv.back() = bv.back();
    pa.back() = ba.back();
    for (int l = L - 1; l >= 1; --l) {
        const auto i = std::size_t(l - 1);
        const std::size_t n = bv[i].rows();
        Var fv = video_.td_norm[i](t, video_.td_fuse[i](t, nk::concat_cols({bv[i], nn::upsample_rows(pv[i + 1], n)})));
        Var fa = audio_.td_norm[i](t, audio_.td_fuse[i](t, nk::concat_cols({ba[i], nn::upsample_rows(pa[i + 1], n)})));
        pv[i] = adapt(fv, fa, video_.td_gate[i], video_.td_stage[i]);
        pa[i] = adapt(fa, fv, audio_.td_gate[i], audio_.td_stage[i]);
    }

    std::vector<Var> nv(bv.size()), na(ba.size());
    nv[0] = pv[0];
    na[0] = pa[0];
    for (int l = 2; l <= L; ++l) {
        const auto i = std::size_t(l - 1), k = std::size_t(l - 2);
        Var fv = video_.bu_norm[k](t, video_.bu_fuse[k](t, nk::concat_cols({pv[i], nk::max_pool_rows2(nv[i - 1])})));
        Var fa = audio_.bu_norm[k](t, audio_.bu_fuse[k](t, nk::concat_cols({pa[i], nk::max_pool_rows2(na[i - 1])})));
        nv[i] = adapt(fv, fa, video_.bu_gate[k], video_.bu_stage[k]);
        na[i] = adapt(fa, fv, audio_.bu_gate[k], audio_.bu_stage[k]);
    }
    return levels_of(nv, na);
}

std::vector<PyramidLevel> PathAggregation::refine(Tape& t, const std::vector<PyramidLevel>& levels) const {
    std::vector<Var> vs, as;
    for (const auto& lv : levels) {
        vs.push_back(lv.video);
        as.push_back(lv.audio);
    }
    const auto n = std::size_t(cfg_.pool_tokens);
    Var pooled_v = nn::segment_mean_rows(vs.size() == 1 ? vs.front() : nk::concat_rows(vs), n);
    Var pooled_a = nn::segment_mean_rows(as.size() == 1 ? as.front() : nk::concat_rows(as), n);
    std::vector<PyramidLevel> out;
    for (const auto& lv : levels)
        out.push_back({lv.level, lv.stride, nk::add(lv.video, video_.apm(t, lv.video, pooled_a)),
                       nk::add(lv.audio, audio_.apm(t, lv.audio, pooled_v))});
    return out;
}

void PathAggregation::zero_pooling_output() {
    video_.apm.out.zero();
    audio_.apm.out.zero();
}

void PathAggregation::zero_cross_modal() {
    for (Stream* s : {&video_, &audio_}) {
        for (auto& g : s->td_gate) g.zero();
        for (auto& g : s->bu_gate) g.zero();
    }
    zero_pooling_output();
}

}  // namespace avloc::pyramid
