// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/contrast.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace avloc::contrast {

void LossWeights::validate() const {
    for (double l : {inter, intra, score, cls, reg})
        if (!(l >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
    if (!(temperature_init >= kTemperatureMin && temperature_init <= kTemperatureMax))
        throw std::invalid_argument("temperature must lie in [0.01, 1]");
    if (!(score_threshold > 0.0 && score_threshold < 1.0))
        throw std::invalid_argument("score threshold must lie in (0, 1)");
}

namespace {

Var inverse(Var tau) { return nk::exp(nk::scale(nk::log(tau), -1.0)); }

/// Row-wise log-sum-exp as a rows x 1 node.
Var logsumexp_rows(Var x) {
    return nk::sub(nk::slice_cols(x, 0, 1), nk::slice_cols(nk::log_softmax_rows(x), 0, 1));
}

Var diagonal_sum(Tape& t, Var square) {
    return nk::sum_all(nk::mul(square, t.constant(Matrix::identity(square.rows()))));
}

}  // namespace

Var pairwise_kernel(Var anchors, Var positives, Var negatives, Var tau) {
    if (negatives.rows() == 0) throw std::invalid_argument("contrastive kernel needs at least one negative");
    nk::require_shape(anchors.cols() == positives.cols() && anchors.cols() == negatives.cols(),
                      "contrastive kernel: width mismatch");
    Tape& t = *anchors.tape();
    Var inv = inverse(tau);
    Var a = nk::l2_normalize_rows(anchors);
    Var s_pos = nk::scale_by(nk::matmul_nt(a, nk::l2_normalize_rows(positives)), inv);
    Var s_neg = nk::scale_by(nk::matmul_nt(a, nk::l2_normalize_rows(negatives)), inv);
    Var lse = logsumexp_rows(s_neg);
    Var lse_b = nk::matmul(lse, t.constant(Matrix::ones(1, positives.rows())));
    return nk::softplus(nk::sub(lse_b, s_pos));
}

Var contrastive_kernel(Var z, Var z_pos, Var z_negs, Var tau) {
    nk::require_shape(z.rows() == 1 && z_pos.rows() == 1, "contrastive kernel: z and z+ must be single rows");
    return pairwise_kernel(z, z_pos, z_negs, tau);
}

Var inter_sample_loss(Var cls_video, Var cls_audio, Var tau) {
    const std::size_t b = cls_video.rows();
    if (b < 2) throw std::invalid_argument("inter-sample loss needs a batch of at least 2");
    nk::require_shape(cls_audio.rows() == b && cls_audio.cols() == cls_video.cols(),
                      "inter-sample loss: batch shape mismatch");
    Tape& t = *cls_video.tape();
    Var s = nk::scale_by(nk::matmul_nt(nk::l2_normalize_rows(cls_video), nk::l2_normalize_rows(cls_audio)),
                         inverse(tau));
    Var v2a = diagonal_sum(t, nk::log_softmax_rows(s));
    Var a2v = diagonal_sum(t, nk::log_softmax_rows(nk::transpose(s)));
    return nk::scale(nk::add(v2a, a2v), -1.0 / double(2 * b));
}

TokenScores token_scores(const TokenPrediction& p) {
    TokenScores s;
    const Matrix& logit = p.score_logit.value();
    s.score.resize(logit.rows());
    for (std::size_t i = 0; i < logit.rows(); ++i) s.score[i] = 1.0 / (1.0 + std::exp(-logit(i, 0)));
    s.class_logits = p.class_logits.value();
    return s;
}

TokenHeads::TokenHeads(nk::ParameterSet& ps, const std::string& name, std::size_t width, int num_classes,
                       std::mt19937_64& rng)
    : hidden_(nn::Linear::create(ps, name + ".hidden", width, width, rng)),
      out_(nn::Linear::create(ps, name + ".out", width, std::size_t(num_classes) + 2, rng)) {}

TokenPrediction TokenHeads::operator()(Tape& t, Var feats) const {
    Var y = out_(t, nk::relu(hidden_(t, feats)));
    return {nk::slice_cols(y, 0, 1), nk::slice_cols(y, 1, y.cols() - 1)};
}

bool segment_inside(std::size_t t, const data::EventAnnotation& e) {
    const double c = double(t) + 0.5;
    return c >= e.start && c <= e.end;
}

TokenTargets token_targets(std::size_t length, const std::vector<data::EventAnnotation>& gts, int num_classes) {
    TokenTargets tt{std::vector<double>(length, 0.0), std::vector<int>(length, num_classes)};
    for (std::size_t t = 0; t < length; ++t) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& e : gts) {
            if (!segment_inside(t, e)) continue;
            tt.score[t] = 1.0;
            if (e.duration() < best) {
                best = e.duration();
                tt.label[t] = e.label;
            }
        }
    }
    return tt;
}

Var bce_with_logits(Var logits, const Matrix& targets) {
    Tape& t = *logits.tape();
    return nk::sub(nk::softplus(logits), nk::mul(logits, t.constant(targets)));
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
    nk::require_shape(labels.size() == logits.rows(), "cross_entropy: label count mismatch");
    Tape& t = *logits.tape();
    Matrix onehot(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || std::size_t(labels[i]) >= logits.cols())
            throw std::invalid_argument("cross_entropy: label out of range");
        onehot(i, std::size_t(labels[i])) = 1.0;
    }
    return nk::scale(nk::sum_all(nk::mul(nk::log_softmax_rows(logits), t.constant(std::move(onehot)))),
                     -1.0 / double(labels.size()));
}

Var score_loss(const TokenPrediction& video, const TokenPrediction& audio, const TokenTargets& targets) {
    Matrix y(targets.score.size(), 1, targets.score);
    auto one = [&](const TokenPrediction& p) {
        nk::require_shape(p.score_logit.rows() == y.rows(), "score_loss: prediction length mismatch");
        return nk::add(nk::mean_all(bce_with_logits(p.score_logit, y)), cross_entropy(p.class_logits, targets.label));
    };
    return nk::scale(nk::add(one(video), one(audio)), 0.5);
}

namespace {

void select_modality(const TokenScores& p, const std::vector<data::EventAnnotation>& gts, double threshold,
                     std::vector<int>& pos, std::vector<int>& neg) {
    const std::size_t n = p.score.size();
    nk::require_shape(p.class_logits.rows() == n, "select_pairs: score and class lengths differ");
    for (std::size_t t = 0; t < n; ++t) {
        if (p.score[t] < threshold) continue;
        std::size_t arg = 0;
        for (std::size_t c = 1; c < p.class_logits.cols(); ++c)
            if (p.class_logits(t, c) > p.class_logits(t, arg)) arg = c;
        bool inside = false, matches = false;
        for (const auto& e : gts)
            if (segment_inside(t, e)) {
                inside = true;
                matches = matches || std::size_t(e.label) == arg;
            }
        (inside && matches ? pos : neg).push_back(int(t));
    }
}

void cap_list(std::vector<int>& v, int cap, std::mt19937_64* rng) {
    if (cap <= 0 || v.size() <= std::size_t(cap) || !rng) return;
    for (std::size_t i = 0; i < std::size_t(cap); ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
        std::swap(v[i], v[pick(*rng)]);
    }
    v.resize(std::size_t(cap));
    std::sort(v.begin(), v.end());
}

}  // namespace

ContrastivePairSet select_pairs(const TokenScores& video, const TokenScores& audio,
                                const std::vector<data::EventAnnotation>& gts, double threshold, int cap,
                                std::mt19937_64* rng) {
    ContrastivePairSet s;
    select_modality(video, gts, threshold, s.pos_video, s.hardneg_video);
    select_modality(audio, gts, threshold, s.pos_audio, s.hardneg_audio);
    for (auto* v : {&s.pos_video, &s.hardneg_video, &s.pos_audio, &s.hardneg_audio}) cap_list(*v, cap, rng);
    return s;
}

Var intra_sample_loss(Tape& t, const ContrastivePairSet& pairs, Var feats_video, Var feats_audio, Var tau) {
    std::vector<Var> terms;
    auto direction = [&](const std::vector<int>& anchors, Var anchor_feats, const std::vector<int>& positives,
                         const std::vector<int>& negatives, Var other_feats) {
        if (anchors.empty() || positives.empty() || negatives.empty()) return;
        terms.push_back(nk::mean_all(pairwise_kernel(nk::gather_rows(anchor_feats, anchors),
                                                     nk::gather_rows(other_feats, positives),
                                                     nk::gather_rows(other_feats, negatives), tau)));
    };
    direction(pairs.pos_video, feats_video, pairs.pos_audio, pairs.hardneg_audio, feats_audio);
    direction(pairs.pos_audio, feats_audio, pairs.pos_video, pairs.hardneg_video, feats_video);
    if (terms.empty()) return t.constant(Matrix(1, 1));
    if (terms.size() == 1) return terms.front();
    return nk::scale(nk::add(terms[0], terms[1]), 0.5);
}

}  // namespace avloc::contrast
