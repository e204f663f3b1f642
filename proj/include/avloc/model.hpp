// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "avloc/attention.hpp"
#include "avloc/contrast.hpp"
#include "avloc/datasim.hpp"
#include "avloc/detect.hpp"
#include "avloc/pyramid.hpp"

namespace avloc::model {

using nk::Tape;
using nk::Var;

/// Which input streams reach the network; the other one is replaced by zeros.
enum class Modality { AV, A, V };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct ModelConfig {
    int width = 64;
    int heads = 4;
    int blocks = 1;
    int ffn_hidden = 128;
    bool adaptive_mask = true;
    int levels = 6;
    int pool_tokens = 16;

    void validate() const;
    attention::AttentionConfig attention() const;
    pyramid::PyramidConfig pyramid() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Everything one forward pass over a video records on the tape.
struct Forward {
    attention::AlignedFeatures aligned;
    contrast::TokenPrediction tokens_video, tokens_audio;
    std::vector<pyramid::PyramidLevel> levels;
    std::vector<detect::LevelOutput> heads;
};

/// Adaptive cross-modal attention, token heads, path aggregation and detection heads.
class DelModel {
public:
    DelModel(const ModelConfig& cfg, std::size_t video_dim, std::size_t audio_dim, int num_classes,
             std::uint64_t seed, double temperature_init = 0.07);
    DelModel(const DelModel&) = delete;
    DelModel& operator=(const DelModel&) = delete;

    /// Unequal stream lengths are reconciled for the pyramid by nearest resampling of audio.
    Forward forward(Tape& t, const data::FeatureSequence& seq, Modality modality) const;
    Var temperature(Tape& t) const;
    /// Projects the learnable temperature back into its admissible range.
    void clamp_temperature();

    /// Decoded, suppressed events of one video (no gradients recorded).
    std::vector<LocalizedEvent> predict(const data::FeatureSequence& seq, Modality modality,
                                        const detect::DetectConfig& dc) const;

    nk::ParameterSet& params() { return ps_; }
    const nk::ParameterSet& params() const { return ps_; }
    const ModelConfig& config() const { return cfg_; }
    int num_classes() const { return num_classes_; }
    std::size_t video_dim() const { return video_dim_; }
    std::size_t audio_dim() const { return audio_dim_; }

    attention::Aligner& aligner() { return *aligner_; }
    pyramid::PathAggregation& pyramid() { return pan_; }

private:
    ModelConfig cfg_;
    std::size_t video_dim_, audio_dim_;
    int num_classes_;
    nk::ParameterSet ps_;
    std::unique_ptr<attention::Aligner> aligner_;
    contrast::TokenHeads tokens_v_, tokens_a_;
    pyramid::PathAggregation pan_;
    detect::DetectionHeads heads_;
    nk::Parameter* tau_ = nullptr;
};

/// Loss components of a batch, per-video terms averaged over the batch.
struct BatchLoss {
    detect::LossComponents parts;
    Var total;
};

/// Forward and loss assembly for a batch on one tape. The inter-sample term needs at
/// least two videos and is 0 otherwise. `rng` drives anchor subsampling.
BatchLoss batch_loss(Tape& t, const DelModel& m, const std::vector<const data::FeatureSequence*>& videos,
                     const std::vector<const data::VideoAnnotation*>& annotations, const contrast::LossWeights& w,
                     Modality modality, std::mt19937_64& rng);

}  // namespace avloc::model
