// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <random>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "avloc/contrast.hpp"
#include "avloc/datasim.hpp"
#include "avloc/events.hpp"
#include "avloc/pyramid.hpp"

namespace avloc::detect {

using nk::Matrix;
using nk::Tape;
using nk::Var;

struct DetectConfig {
    double decode_threshold = 0.1;
    int max_per_video = 100;
    double nms_sigma = 0.5;
    double nms_min_confidence = 0.001;

    void validate() const;
};

struct LevelShape {
    int level = 1;
    std::size_t stride = 1;
    std::size_t length = 0;
};

std::vector<LevelShape> level_shapes(std::size_t T, int levels);

/// Durations a level is responsible for: [2 stride, 8 stride], the first level
/// starting at 0 and the last one open-ended.
struct DurationBand {
    double low = 0.0;
    double high = 0.0;
};
DurationBand duration_band(const LevelShape& shape, int levels);

struct TimestepTarget {
    int cls = 0;  ///< class index, or num_classes for background
    double d_start = 0.0;
    double d_end = 0.0;
};

/// targets[l][t] for every level and timestep. Timestep t of a level has center t * stride.
using LevelTargets = std::vector<std::vector<TimestepTarget>>;

LevelTargets assign_labels(const std::vector<LevelShape>& shapes, const std::vector<data::EventAnnotation>& gts,
                           int num_classes);

inline bool is_positive(const TimestepTarget& t, int num_classes) { return t.cls != num_classes; }

struct LevelOutput {
    int level = 1;
    std::size_t stride = 1;
    Var logits;   ///< n x (K + 1)
    Var offsets;  ///< n x 2, non-negative
};

/// Heads shared across levels: layer norm and temporal tower on [V | A], then class logits and offsets.
class DetectionHeads {
public:
    DetectionHeads() = default;
    DetectionHeads(nk::ParameterSet& ps, std::size_t width, int num_classes, std::mt19937_64& rng);

    std::vector<LevelOutput> operator()(Tape& t, const std::vector<pyramid::PyramidLevel>& levels) const;
    void zero();

private:
    nn::LayerNorm norm_;
    nn::TemporalLinear tower_;
    nn::Linear cls_, reg_;
};

/// 0.5 x^2 / beta for |x| < beta, else |x| - 0.5 beta, with x = pred - target.
double smooth_l1(double pred, double target, double beta = 1.0);

/// Cross entropy averaged over every timestep of every level.
Var classification_loss(const std::vector<LevelOutput>& out, const LevelTargets& targets, int num_classes);
/// Smooth L1 summed over both offsets, averaged over positive timesteps (0 if none).
Var regression_loss(const std::vector<LevelOutput>& out, const LevelTargets& targets, int num_classes);

struct LossComponents {
    Var inter, intra, score, cls, reg;
};

Var total_loss(const LossComponents& c, const contrast::LossWeights& w);

/// Eager per-level outputs: class probabilities and offsets.
struct LevelPrediction {
    int level = 1;
    std::size_t stride = 1;
    Matrix probs;
    Matrix offsets;
};

LevelPrediction to_prediction(const LevelOutput& out);

/// Every timestep whose best foreground probability q reaches the threshold yields
/// (c - d_start stride, c + d_end stride, argmax, q), clamped to [0, T]; the top
/// max_per_video by confidence are kept.
std::vector<LocalizedEvent> decode(const std::vector<LevelPrediction>& levels, double T, double threshold,
                                   int max_per_video);

/// Per-class Gaussian decay by exp(-tiou^2 / sigma); events below min_confidence are dropped.
std::vector<LocalizedEvent> soft_nms(std::vector<LocalizedEvent> events, double sigma, double min_confidence);

/// {"id": str, "events": [{"start", "end", "label", "score"}]}
nlohmann::json prediction_to_json(const VideoPrediction& p);
VideoPrediction prediction_from_json(const nlohmann::json& j);

/// A predictions file is a JSON array of per-video objects.
void save_predictions(const std::string& path, const std::vector<VideoPrediction>& preds);
std::vector<VideoPrediction> load_predictions(const std::string& path);

}  // namespace avloc::detect
