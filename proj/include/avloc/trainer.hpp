// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avloc/contrast.hpp"
#include "avloc/datasim.hpp"
#include "avloc/detect.hpp"
#include "avloc/evalkit.hpp"
#include "avloc/model.hpp"

namespace avloc::train {

struct TrainConfig {
    int epochs = 60;
    int warmup_epochs = 5;
    double base_lr = 1e-3;
    double weight_decay = 1e-4;
    double clip_norm = 1.0;
    int batch_size = 2;
    std::uint64_t seed = 7;
    model::Modality modality = model::Modality::AV;
    /// Evaluate the eval split every this many epochs (0 disables; the last epoch is always evaluated).
    int eval_every = 1;
    contrast::LossWeights loss;
    model::ModelConfig model;
    detect::DetectConfig detect;

    void validate() const;
};

/// The whole configuration file: {"data", "model", "train", "loss", "detect"}.
struct RunConfig {
    data::SynthConfig data;
    TrainConfig train;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON when possible
/// and kept as a string otherwise. The path must name an existing key.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// The document of a default RunConfig.
nlohmann::json default_config_json();

/// Linear warmup over the first warmup_steps steps, then cosine decay to 0.
double learning_rate(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr);

/// Scales every gradient so the global L2 norm is at most max_norm; returns the norm before clipping.
double clip_global_norm(const std::vector<nk::Parameter*>& params, double max_norm);

/// Adaptive moment estimation with decoupled weight decay on parameters flagged for decay.
class Adam {
public:
    struct Slot {
        nk::Matrix m, v;
    };

    Adam(std::vector<nk::Parameter*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(double lr, double weight_decay);
    std::uint64_t steps() const { return t_; }
    void set_steps(std::uint64_t t) { t_ = t; }
    const std::vector<nk::Parameter*>& params() const { return params_; }
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    std::vector<nk::Parameter*> params_;
    std::vector<Slot> slots_;
    double b1_, b2_, eps_;
    std::uint64_t t_ = 0;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EpochMetrics {
    int epoch = 0;  ///< 1-based
    double lr = 0.0;
    double inter = 0, intra = 0, score = 0, cls = 0, reg = 0, total = 0;
    std::optional<eval::EvalReport> eval;
    double seconds = 0.0;
};

/// Header plus one row per epoch; mAP columns are empty for epochs without evaluation.
std::string metrics_csv(const std::vector<EpochMetrics>& rows);

/// Binary checkpoint: "DELC", version byte, the config document, progress counters and,
/// per parameter, its name, shape, value and both Adam moments as little-endian f64.
struct Checkpoint {
    nlohmann::json config;
    int epochs_done = 0;
    std::uint64_t steps = 0;
    struct Entry {
        nk::Matrix value, m, v;
    };
    std::map<std::string, Entry> params;
};

inline constexpr char kCheckpointMagic[4] = {'D', 'E', 'L', 'C'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
/// Throws data::ParseError on bad magic, version or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    std::vector<double> step_losses;
};

/// Owns the model and optimizer state for one run over a dataset.
class Trainer {
public:
    Trainer(const RunConfig& cfg, const data::Dataset& ds);

    /// Runs epochs epochs_done()+1 .. stop_after (default: all), appending to the result.
    /// `on_epoch` is called after each epoch.
    TrainResult fit(std::optional<int> stop_after = {}, const std::function<void(const EpochMetrics&)>& on_epoch = {});

    Checkpoint checkpoint() const;
    /// Restores parameters, moments and counters; throws data::ParseError on any name or shape mismatch.
    void restore(const Checkpoint& c);

    std::vector<VideoPrediction> predict(const std::vector<std::size_t>& videos, int threads = 1) const;
    eval::EvalReport evaluate(const std::vector<std::size_t>& videos, int threads = 1) const;

    /// Worker cap for the evaluation pass inside fit().
    void set_threads(int threads) { threads_ = threads < 1 ? 1 : threads; }
    int epochs_done() const { return epochs_done_; }
    model::DelModel& model() { return *model_; }
    const model::DelModel& model() const { return *model_; }
    const RunConfig& config() const { return cfg_; }

private:
    RunConfig cfg_;
    const data::Dataset& ds_;
    std::unique_ptr<model::DelModel> model_;
    std::unique_ptr<Adam> adam_;
    int epochs_done_ = 0;
    int threads_ = 1;
};

/// Rebuilds a model from a checkpoint's config and parameters.
std::unique_ptr<model::DelModel> model_from_checkpoint(const Checkpoint& c, std::size_t video_dim,
                                                       std::size_t audio_dim);

/// Decodes every listed video with up to `threads` workers; output order follows `videos`.
std::vector<VideoPrediction> predict_all(const model::DelModel& m, const std::vector<const data::FeatureSequence*>& videos,
                                         model::Modality modality, const detect::DetectConfig& dc, int threads = 1);

}  // namespace avloc::train
