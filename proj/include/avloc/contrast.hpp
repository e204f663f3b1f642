// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <random>
#include <vector>

#include "avloc/datasim.hpp"
#include "avloc/layers.hpp"

namespace avloc::contrast {

using nk::Matrix;
using nk::Tape;
using nk::Var;

inline constexpr double kTemperatureMin = 0.01;
inline constexpr double kTemperatureMax = 1.0;

struct LossWeights {
    double inter = 0.3;  ///< lambda_1
    double intra = 0.3;  ///< lambda_2
    double score = 0.5;  ///< lambda_3
    double cls = 1.0;    ///< lambda_4
    double reg = 1.0;    ///< lambda_5
    double temperature_init = 0.07;
    double score_threshold = 0.5;
    /// Per modality and list, anchors beyond this count are subsampled.
    int max_anchors = 32;

    void validate() const;
};

/// -log(e^{z.z+/tau} / (e^{z.z+/tau} + sum_k e^{z.z-_k/tau})) for L2-normalized vectors.
/// z and z_pos are 1 x d, z_negs is k x d with k >= 1, tau is 1 x 1.
Var contrastive_kernel(Var z, Var z_pos, Var z_negs, Var tau);

/// Kernel for every (anchor i, positive m) pair sharing one negative set, as an
/// anchors x positives matrix of losses.
Var pairwise_kernel(Var anchors, Var positives, Var negatives, Var tau);

/// Mean over both directions and all B anchors; the negatives for anchor j are the
/// other B - 1 CLS tokens of the opposite modality. cls_* are B x d.
Var inter_sample_loss(Var cls_video, Var cls_audio, Var tau);

/// Token-level predictions of one modality.
struct TokenPrediction {
    Var score_logit;  ///< T x 1, score = sigmoid(score_logit)
    Var class_logits; ///< T x (K + 1), background last
};

/// Eager copy of a prediction used by pair selection.
struct TokenScores {
    std::vector<double> score;  ///< in [0, 1]
    Matrix class_logits;
};

TokenScores token_scores(const TokenPrediction& p);

/// Two-layer head shared over timesteps: d -> d (ReLU) -> [1 score | K + 1 classes].
class TokenHeads {
public:
    TokenHeads() = default;
    TokenHeads(nk::ParameterSet& ps, const std::string& name, std::size_t width, int num_classes,
               std::mt19937_64& rng);

    TokenPrediction operator()(Tape& t, Var feats) const;
    nn::Linear& hidden() { return hidden_; }
    nn::Linear& output() { return out_; }

private:
    nn::Linear hidden_, out_;
};

/// Timestep t (segment [t, t + 1)) belongs to an event when its center t + 0.5 lies in [start, end].
bool segment_inside(std::size_t t, const data::EventAnnotation& e);

/// Per-timestep targets: score 1 inside any event; class = label of the shortest
/// containing event, background (K) elsewhere.
struct TokenTargets {
    std::vector<double> score;
    std::vector<int> label;
};
TokenTargets token_targets(std::size_t length, const std::vector<data::EventAnnotation>& gts, int num_classes);

/// Mean over both modalities' timesteps of BCE(score) plus mean CE(class).
Var score_loss(const TokenPrediction& video, const TokenPrediction& audio, const TokenTargets& targets);

struct ContrastivePairSet {
    std::vector<int> pos_video, hardneg_video;
    std::vector<int> pos_audio, hardneg_audio;
};

/// Positive: score >= threshold, inside an event, argmax class equals a label active
/// there. Hard negative: score >= threshold and argmax not among the active labels
/// (every class is wrong on background). Lists longer than `cap` are subsampled
/// uniformly with `rng` (cap <= 0 disables capping). Lists are ascending.
ContrastivePairSet select_pairs(const TokenScores& video, const TokenScores& audio,
                                const std::vector<data::EventAnnotation>& gts, double threshold, int cap,
                                std::mt19937_64* rng);

/// Mean of the V->A term (anchors pos_video, positives pos_audio, negatives
/// hardneg_audio) and the mirrored A->V term. A direction with an empty list is
/// skipped; with both skipped the loss is 0.
Var intra_sample_loss(Tape& t, const ContrastivePairSet& pairs, Var feats_video, Var feats_audio, Var tau);

/// Binary cross entropy with logits, elementwise: softplus(x) - y x.
Var bce_with_logits(Var logits, const Matrix& targets);
/// Mean over rows of -log softmax(logits)[row, label[row]].
Var cross_entropy(Var logits, const std::vector<int>& labels);

}  // namespace avloc::contrast
