// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "avloc/datasim.hpp"
#include "avloc/rng.hpp"

namespace avloc::data {

std::string to_string(Coupling c) {
    switch (c) {
        case Coupling::AudioOnly: return "audio_only";
        case Coupling::VisualOnly: return "visual_only";
        case Coupling::Coupled: return "coupled";
    }
    return "coupled";
}

Coupling coupling_from_string(const std::string& s) {
    if (s == "audio_only") return Coupling::AudioOnly;
    if (s == "visual_only") return Coupling::VisualOnly;
    if (s == "coupled") return Coupling::Coupled;
    throw std::invalid_argument("unknown modality coupling: " + s);
}

void SynthConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("SynthConfig: " + m); };
    if (num_videos < 1) fail("num_videos must be >= 1");
    if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) fail("eval_fraction must be in [0, 1)");
    if (T < 1) fail("T must be >= 1");
    if (d_v < 1 || d_a < 1) fail("feature widths must be >= 1");
    if (num_classes < 1) fail("num_classes must be >= 1");
    if (!(events_mean >= 1.0)) fail("events_mean must be >= 1");
    if (events_max < 1) fail("events_max must be >= 1");
    if (!(overlap_probability >= 0.0 && overlap_probability <= 1.0)) fail("overlap_probability must be in [0, 1]");
    if (min_duration < 1 || min_duration > max_duration) fail("duration range must satisfy 1 <= min <= max");
    if (max_duration > T) fail("max_duration exceeds T");
    if (misalignment_jitter < 0) fail("misalignment_jitter must be >= 0");
    if (!(snr > 0.0)) fail("snr must be positive");
    if (!(nuisance_scale >= 0.0)) fail("nuisance_scale must be >= 0");
    if (code_dim < 1 || code_dim > std::min(d_v, d_a)) fail("code_dim must be in [1, min(d_v, d_a)]");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"num_videos", c.num_videos},
                       {"eval_fraction", c.eval_fraction},
                       {"T", c.T},
                       {"d_v", c.d_v},
                       {"d_a", c.d_a},
                       {"num_classes", c.num_classes},
                       {"events_mean", c.events_mean},
                       {"events_max", c.events_max},
                       {"overlap_probability", c.overlap_probability},
                       {"min_duration", c.min_duration},
                       {"max_duration", c.max_duration},
                       {"modality_coupling", to_string(c.coupling)},
                       {"misalignment_jitter", c.misalignment_jitter},
                       {"snr", c.snr},
                       {"nuisance_scale", c.nuisance_scale},
                       {"code_dim", c.code_dim},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
    SynthConfig d;
    c.num_videos = j.value("num_videos", d.num_videos);
    c.eval_fraction = j.value("eval_fraction", d.eval_fraction);
    c.T = j.value("T", d.T);
    c.d_v = j.value("d_v", d.d_v);
    c.d_a = j.value("d_a", d.d_a);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.events_mean = j.value("events_mean", d.events_mean);
    c.events_max = j.value("events_max", d.events_max);
    c.overlap_probability = j.value("overlap_probability", d.overlap_probability);
    c.min_duration = j.value("min_duration", d.min_duration);
    c.max_duration = j.value("max_duration", d.max_duration);
    c.coupling = coupling_from_string(j.value("modality_coupling", to_string(d.coupling)));
    c.misalignment_jitter = j.value("misalignment_jitter", d.misalignment_jitter);
    c.snr = j.value("snr", d.snr);
    c.nuisance_scale = j.value("nuisance_scale", d.nuisance_scale);
    c.code_dim = j.value("code_dim", d.code_dim);
    c.seed = j.value("seed", d.seed);
}

namespace {

/// d x m matrix with orthonormal columns (modified Gram-Schmidt on Gaussian draws).
nk::Matrix random_orthonormal(std::size_t d, std::size_t m, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    nk::Matrix q(d, m);
    for (std::size_t c = 0; c < m; ++c) {
        for (;;) {
            for (std::size_t r = 0; r < d; ++r) q(r, c) = n01(rng);
            for (std::size_t p = 0; p < c; ++p) {
                double dot = 0.0;
                for (std::size_t r = 0; r < d; ++r) dot += q(r, c) * q(r, p);
                for (std::size_t r = 0; r < d; ++r) q(r, c) -= dot * q(r, p);
            }
            double norm = 0.0;
            for (std::size_t r = 0; r < d; ++r) norm += q(r, c) * q(r, c);
            norm = std::sqrt(norm);
            if (norm < 1e-6) continue;
            for (std::size_t r = 0; r < d; ++r) q(r, c) /= norm;
            break;
        }
    }
    return q;
}

struct Signatures {
    nk::Matrix proj_v;  // d_v x m
    nk::Matrix proj_a;  // d_a x m
    nk::Matrix codes;   // K x m, each row has norm snr
};

Signatures make_signatures(const SynthConfig& cfg) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x5157));
    const auto m = std::size_t(cfg.code_dim);
    const auto k = std::size_t(cfg.num_classes);
    Signatures s;
    s.proj_v = random_orthonormal(std::size_t(cfg.d_v), m, rng);
    s.proj_a = random_orthonormal(std::size_t(cfg.d_a), m, rng);
    s.codes = nk::Matrix(k, m);
    if (k <= m) {
        // Mutually orthogonal codes.
        nk::Matrix basis = random_orthonormal(m, k, rng);
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t r = 0; r < m; ++r) s.codes(c, r) = cfg.snr * basis(r, c);
    } else {
        std::normal_distribution<double> n01;
        for (std::size_t c = 0; c < k; ++c) {
            double norm = 0.0;
            for (std::size_t r = 0; r < m; ++r) norm += (s.codes(c, r) = n01(rng)) * s.codes(c, r);
            norm = std::sqrt(norm);
            for (std::size_t r = 0; r < m; ++r) s.codes(c, r) *= cfg.snr / norm;
        }
    }
    return s;
}

bool intersects(const EventAnnotation& a, double s, double e) { return s < a.end && a.start < e; }

std::vector<EventAnnotation> place_events(const SynthConfig& cfg, std::mt19937_64& rng) {
    std::poisson_distribution<int> extra(cfg.events_mean - 1.0);
    std::uniform_int_distribution<int> label(0, cfg.num_classes - 1);
    std::uniform_int_distribution<int> dur(cfg.min_duration, cfg.max_duration);
    std::uniform_real_distribution<double> u01;
    const int n = std::min(cfg.events_max, 1 + extra(rng));

    std::vector<EventAnnotation> events;
    for (int i = 0; i < n; ++i) {
        const int d = dur(rng);
        const int lbl = label(rng);
        const bool overlap = !events.empty() && u01(rng) < cfg.overlap_probability;
        if (overlap) {
            std::uniform_int_distribution<std::size_t> pick(0, events.size() - 1);
            const EventAnnotation& host = events[pick(rng)];
            const int lo = std::max(0, int(host.start) - d + 1);
            const int hi = std::min(cfg.T - d, int(host.end) - 1);
            if (lo > hi) continue;
            const int s = std::uniform_int_distribution<int>(lo, hi)(rng);
            events.push_back({double(s), double(s + d), lbl});
            continue;
        }
        std::uniform_int_distribution<int> start(0, cfg.T - d);
        for (int attempt = 0; attempt < 64; ++attempt) {
            const int s = start(rng);
            bool clash = std::any_of(events.begin(), events.end(),
                                     [&](const EventAnnotation& e) { return intersects(e, s, s + d); });
            if (!clash) {
                events.push_back({double(s), double(s + d), lbl});
                break;
            }
        }
    }
    std::sort(events.begin(), events.end(), [](const EventAnnotation& a, const EventAnnotation& b) {
        return a.start != b.start ? a.start < b.start : (a.end != b.end ? a.end < b.end : a.label < b.label);
    });
    return events;
}

void inject(nk::Matrix& stream, const nk::Matrix& proj, const std::vector<double>& code, int start, int end) {
    const int rows = int(stream.rows());
    start = std::clamp(start, 0, rows);
    end = std::clamp(end, 0, rows);
    for (int t = start; t < end; ++t)
        for (std::size_t r = 0; r < proj.rows(); ++r) {
            double v = 0.0;
            for (std::size_t c = 0; c < proj.cols(); ++c) v += proj(r, c) * code[c];
            stream(std::size_t(t), r) += v;
        }
}

void round_to_float(nk::Matrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = double(float(m[i]));
}

}  // namespace

Dataset generate_synthetic_dataset(const SynthConfig& cfg) {
    cfg.validate();
    const Signatures sig = make_signatures(cfg);
    const auto m = std::size_t(cfg.code_dim);

    Dataset ds;
    ds.config = cfg;
    const int n_eval = int(std::lround(cfg.num_videos * cfg.eval_fraction));
    const int n_train = cfg.num_videos - n_eval;
    for (int v = 0; v < cfg.num_videos; ++v) {
        std::mt19937_64 rng(mix_seed(cfg.seed, 1000 + std::uint64_t(v)));
        std::normal_distribution<double> n01;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "syn_%05d", v);

        FeatureSequence seq;
        seq.id = idbuf;
        seq.video = nk::Matrix(std::size_t(cfg.T), std::size_t(cfg.d_v));
        seq.audio = nk::Matrix(std::size_t(cfg.T), std::size_t(cfg.d_a));
        for (std::size_t i = 0; i < seq.video.size(); ++i) seq.video[i] = n01(rng);
        for (std::size_t i = 0; i < seq.audio.size(); ++i) seq.audio[i] = n01(rng);

        VideoAnnotation ann;
        ann.id = seq.id;
        ann.duration = cfg.T;
        ann.events = place_events(cfg, rng);

        std::uniform_int_distribution<int> jitter(-cfg.misalignment_jitter, cfg.misalignment_jitter);
        std::normal_distribution<double> nuisance(0.0, cfg.nuisance_scale * cfg.snr);
        for (const EventAnnotation& e : ann.events) {
            std::vector<double> v_code(m, 0.0), a_code(m, 0.0);
            const auto k = std::size_t(e.label);
            switch (cfg.coupling) {
                case Coupling::AudioOnly:
                    for (std::size_t c = 0; c < m; ++c) a_code[c] = sig.codes(k, c);
                    break;
                case Coupling::VisualOnly:
                    for (std::size_t c = 0; c < m; ++c) v_code[c] = sig.codes(k, c);
                    break;
                case Coupling::Coupled:
                    // Additive secret sharing: either share alone is dominated by the
                    // per-event nuisance, their sum is the class code.
                    for (std::size_t c = 0; c < m; ++c) {
                        const double r = nuisance(rng);
                        v_code[c] = 0.5 * sig.codes(k, c) + r;
                        a_code[c] = 0.5 * sig.codes(k, c) - r;
                    }
                    break;
            }
            const int shift = cfg.misalignment_jitter > 0 ? jitter(rng) : 0;
            if (cfg.coupling != Coupling::AudioOnly) inject(seq.video, sig.proj_v, v_code, int(e.start), int(e.end));
            if (cfg.coupling != Coupling::VisualOnly)
                inject(seq.audio, sig.proj_a, a_code, int(e.start) + shift, int(e.end) + shift);
        }
        round_to_float(seq.video);
        round_to_float(seq.audio);

        ds.videos.push_back(std::move(seq));
        ds.annotations.push_back(std::move(ann));
        (v < n_train ? ds.train : ds.eval).push_back(std::size_t(v));
    }
    return ds;
}

}  // namespace avloc::data
