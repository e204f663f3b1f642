// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "avloc/numkern/matrix.hpp"

namespace avloc::data {

/// Paired per-segment visual and audio features for one video.
struct FeatureSequence {
    std::string id;
    nk::Matrix video;  ///< L_v x d_v
    nk::Matrix audio;  ///< L_a x d_a
    /// Segments per second, when known; conversion from seconds is left to the caller.
    std::optional<double> frame_rate_hint;

    std::size_t video_length() const { return video.rows(); }
    std::size_t audio_length() const { return audio.rows(); }
};

/// Ground-truth event in segment-index units, [start, end).
struct EventAnnotation {
    double start = 0.0;
    double end = 0.0;
    int label = 0;

    double duration() const { return end - start; }
    bool operator==(const EventAnnotation&) const = default;
};

struct VideoAnnotation {
    std::string id;
    double duration = 0.0;
    std::vector<EventAnnotation> events;
};

enum class Coupling { AudioOnly, VisualOnly, Coupled };

std::string to_string(Coupling c);
Coupling coupling_from_string(const std::string& s);

struct SynthConfig {
    int num_videos = 250;
    /// Trailing fraction of videos assigned to the eval split.
    double eval_fraction = 0.2;
    int T = 64;
    int d_v = 32;
    int d_a = 32;
    int num_classes = 5;
    double events_mean = 2.8;
    int events_max = 5;
    double overlap_probability = 0.25;
    int min_duration = 3;
    int max_duration = 24;
    Coupling coupling = Coupling::Coupled;
    int misalignment_jitter = 0;
    /// Class-code amplitude relative to unit background noise.
    double snr = 3.0;
    /// Per-dimension std of the per-event secret share, in units of snr (coupled only).
    double nuisance_scale = 1.25;
    /// Dimension of the shared code space embedded into each stream.
    int code_dim = 8;
    std::uint64_t seed = 7;

    /// Throws std::invalid_argument on infeasible settings.
    void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct Dataset {
    SynthConfig config;
    std::vector<FeatureSequence> videos;
    std::vector<VideoAnnotation> annotations;  ///< parallel to videos
    std::vector<std::size_t> train;            ///< indices into videos
    std::vector<std::size_t> eval;

    int num_classes() const { return config.num_classes; }
};

/// Deterministic per seed. Feature values are rounded to float precision so that
/// DELF round trips are lossless.
Dataset generate_synthetic_dataset(const SynthConfig& cfg);

// ---------------------------------------------------------------- file formats

class ParseError : public std::runtime_error {
public:
    enum class Kind { Io, BadMagic, BadVersion, Truncated, TrailingData, ShapeMismatch, Json, Validation };
    ParseError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr char kFeatureMagic[4] = {'D', 'E', 'L', 'F'};
inline constexpr std::uint8_t kFeatureVersion = 1;

/// One DELF block: magic, version byte, u32 rows, u32 cols, rows*cols little-endian f32.
void write_delf_block(std::ostream& os, const nk::Matrix& m);
nk::Matrix read_delf_block(std::istream& is, const std::string& where);

struct FeatureDims {
    std::size_t d_v = 0;
    std::size_t d_a = 0;
};

/// A feature file holds two DELF blocks: video then audio.
void save_features(const std::filesystem::path& path, const FeatureSequence& seq);
/// The id is the file stem. When `expect` is given, column counts must match it.
FeatureSequence load_features(const std::filesystem::path& path, std::optional<FeatureDims> expect = {});

/// {"id": str, "duration": real, "events": [{"start": real, "end": real, "label": int}]}
void save_annotations(const std::filesystem::path& path, const VideoAnnotation& ann);
VideoAnnotation load_annotations(const std::filesystem::path& path, std::optional<int> num_classes = {});
VideoAnnotation annotations_from_json(const nlohmann::json& j, std::optional<int> num_classes = {});
nlohmann::json annotations_to_json(const VideoAnnotation& ann);

/// Writes features/, annotations/ and manifest.json under `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------- preprocessing

/// Zero-pads or crops both streams at the tail to exactly t_fixed rows.
FeatureSequence pad_or_crop(const FeatureSequence& seq, std::size_t t_fixed);
/// Clips events to [0, t_fixed]; events with nothing left inside are dropped.
VideoAnnotation clip_annotations(const VideoAnnotation& ann, std::size_t t_fixed);

}  // namespace avloc::data
