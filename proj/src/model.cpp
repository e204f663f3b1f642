// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/model.hpp"

#include <algorithm>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "avloc/rng.hpp"

namespace avloc::model {

std::string to_string(Modality m) {
    switch (m) {
        case Modality::AV: return "AV";
        case Modality::A: return "A";
        case Modality::V: return "V";
    }
    return "AV";
}

Modality modality_from_string(const std::string& s) {
    if (s == "AV" || s == "av") return Modality::AV;
    if (s == "A" || s == "a") return Modality::A;
    if (s == "V" || s == "v") return Modality::V;
    throw std::invalid_argument("unknown modality '" + s + "' (expected AV, A or V)");
}

void ModelConfig::validate() const {
    if (width < 1) throw std::invalid_argument("model width must be >= 1");
    if (heads < 1 || width % heads != 0) throw std::invalid_argument("model width must be divisible by heads");
    if (blocks < 0 || blocks > 4) throw std::invalid_argument("attention blocks must be in [0, 4]");
    if (ffn_hidden < 1) throw std::invalid_argument("ffn_hidden must be >= 1");
    pyramid().validate();
}

attention::AttentionConfig ModelConfig::attention() const {
    return {width, heads, blocks, ffn_hidden, adaptive_mask};
}

pyramid::PyramidConfig ModelConfig::pyramid() const { return {levels, pool_tokens, heads}; }

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"width", c.width},   {"heads", c.heads},   {"blocks", c.blocks},         {"ffn_hidden", c.ffn_hidden},
         {"adaptive_mask", c.adaptive_mask}, {"levels", c.levels}, {"pool_tokens", c.pool_tokens}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.width = j.value("width", d.width);
    c.heads = j.value("heads", d.heads);
    c.blocks = j.value("blocks", d.blocks);
    c.ffn_hidden = j.value("ffn_hidden", d.ffn_hidden);
    c.adaptive_mask = j.value("adaptive_mask", d.adaptive_mask);
    c.levels = j.value("levels", d.levels);
    c.pool_tokens = j.value("pool_tokens", d.pool_tokens);
}

namespace {

std::unique_ptr<attention::Aligner> make_aligner(nk::ParameterSet& ps, const ModelConfig& cfg, std::size_t dv,
                                                 std::size_t da, std::mt19937_64& rng) {
    cfg.validate();
    return std::make_unique<attention::Aligner>(ps, cfg.attention(), dv, da, rng);
}

}  // namespace

DelModel::DelModel(const ModelConfig& cfg, std::size_t video_dim, std::size_t audio_dim, int num_classes,
                   std::uint64_t seed, double temperature_init)
    : cfg_(cfg), video_dim_(video_dim), audio_dim_(audio_dim), num_classes_(num_classes) {
    if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
    if (!(temperature_init >= contrast::kTemperatureMin && temperature_init <= contrast::kTemperatureMax))
        throw std::invalid_argument("temperature_init must lie in [0.01, 1]");
    std::mt19937_64 rng(mix_seed(seed, 0x6d6f64656cull));
    aligner_ = make_aligner(ps_, cfg, video_dim, audio_dim, rng);
    const auto d = std::size_t(cfg.width);
    tokens_v_ = contrast::TokenHeads(ps_, "tokens.video", d, num_classes, rng);
    tokens_a_ = contrast::TokenHeads(ps_, "tokens.audio", d, num_classes, rng);
    pan_ = pyramid::PathAggregation(ps_, cfg.pyramid(), d, rng);
    heads_ = detect::DetectionHeads(ps_, d, num_classes, rng);
    tau_ = &ps_.add("contrast.tau", nk::Matrix(1, 1, temperature_init), false);
}

Forward DelModel::forward(Tape& t, const data::FeatureSequence& seq, Modality modality) const {
    if (seq.video.cols() != video_dim_ || seq.audio.cols() != audio_dim_)
        throw std::invalid_argument("video '" + seq.id + "': feature width does not match the model");
    Var v = modality == Modality::A ? t.constant(nk::Matrix(seq.video.rows(), seq.video.cols()))
                                    : t.constant(seq.video);
    Var a = modality == Modality::V ? t.constant(nk::Matrix(seq.audio.rows(), seq.audio.cols()))
                                    : t.constant(seq.audio);
    Forward f;
    f.aligned = aligner_->align(t, v, a);
    f.tokens_video = tokens_v_(t, f.aligned.video);
    f.tokens_audio = tokens_a_(t, f.aligned.audio);
    Var audio_for_pyramid = f.aligned.audio;
    if (audio_for_pyramid.rows() != f.aligned.video.rows())
        audio_for_pyramid = nn::upsample_rows(audio_for_pyramid, f.aligned.video.rows());
    f.levels = pan_(t, f.aligned.video, audio_for_pyramid);
    f.heads = heads_(t, f.levels);
    return f;
}

Var DelModel::temperature(Tape& t) const { return t.param(*tau_); }

void DelModel::clamp_temperature() {
    double& v = tau_->value(0, 0);
    v = std::clamp(v, contrast::kTemperatureMin, contrast::kTemperatureMax);
}

std::vector<LocalizedEvent> DelModel::predict(const data::FeatureSequence& seq, Modality modality,
                                              const detect::DetectConfig& dc) const {
    Tape t;
    t.set_grad_enabled(false);
    const Forward f = forward(t, seq, modality);
    std::vector<detect::LevelPrediction> preds;
    for (const auto& h : f.heads) preds.push_back(detect::to_prediction(h));
    auto events = detect::decode(preds, double(seq.video.rows()), dc.decode_threshold, dc.max_per_video);
    return detect::soft_nms(std::move(events), dc.nms_sigma, dc.nms_min_confidence);
}

BatchLoss batch_loss(Tape& t, const DelModel& m, const std::vector<const data::FeatureSequence*>& videos,
                     const std::vector<const data::VideoAnnotation*>& annotations, const contrast::LossWeights& w,
                     Modality modality, std::mt19937_64& rng) {
    if (videos.empty() || videos.size() != annotations.size())
        throw std::invalid_argument("batch_loss: need matching non-empty video and annotation lists");
    const int K = m.num_classes();
    const double inv_b = 1.0 / double(videos.size());
    Var tau = m.temperature(t);
    Var zero = t.constant(nk::Matrix(1, 1));
    Var intra = zero, score = zero, cls = zero, reg = zero;
    std::vector<Var> cls_v, cls_a;
    for (std::size_t b = 0; b < videos.size(); ++b) {
        const auto& seq = *videos[b];
        const auto& gts = annotations[b]->events;
        const Forward f = m.forward(t, seq, modality);
        cls_v.push_back(f.aligned.cls_video);
        cls_a.push_back(f.aligned.cls_audio);

        // Token targets follow the video timeline; audio tokens share them when lengths agree.
        const auto targets = contrast::token_targets(seq.video.rows(), gts, K);
        if (f.tokens_audio.score_logit.rows() == f.tokens_video.score_logit.rows()) {
            score = nk::add(score, contrast::score_loss(f.tokens_video, f.tokens_audio, targets));
            const auto pairs = contrast::select_pairs(contrast::token_scores(f.tokens_video),
                                                      contrast::token_scores(f.tokens_audio), gts, w.score_threshold,
                                                      w.max_anchors, &rng);
            intra = nk::add(intra, contrast::intra_sample_loss(t, pairs, f.aligned.video, f.aligned.audio, tau));
        }

        const auto shapes = detect::level_shapes(seq.video.rows(), m.config().levels);
        const auto level_targets = detect::assign_labels(shapes, gts, K);
        cls = nk::add(cls, detect::classification_loss(f.heads, level_targets, K));
        reg = nk::add(reg, detect::regression_loss(f.heads, level_targets, K));
    }
    BatchLoss out;
    out.parts.inter = videos.size() >= 2
                          ? contrast::inter_sample_loss(nk::concat_rows(cls_v), nk::concat_rows(cls_a), tau)
                          : zero;
    out.parts.intra = nk::scale(intra, inv_b);
    out.parts.score = nk::scale(score, inv_b);
    out.parts.cls = nk::scale(cls, inv_b);
    out.parts.reg = nk::scale(reg, inv_b);
    out.total = detect::total_loss(out.parts, w);
    return out;
}

}  // namespace avloc::model
