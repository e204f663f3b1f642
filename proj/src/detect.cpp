// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace avloc::detect {

void DetectConfig::validate() const {
    if (!(decode_threshold > 0.0 && decode_threshold < 1.0)) throw std::invalid_argument("decode threshold must lie in (0, 1)");
    if (max_per_video < 1) throw std::invalid_argument("max_per_video must be >= 1");
    if (!(nms_sigma > 0.0)) throw std::invalid_argument("nms sigma must be positive");
    if (!(nms_min_confidence >= 0.0 && nms_min_confidence < 1.0))
        throw std::invalid_argument("nms min confidence must lie in [0, 1)");
}

std::vector<LevelShape> level_shapes(std::size_t T, int levels) {
    pyramid::check_length(T, levels);
    std::vector<LevelShape> out;
    for (int l = 1; l <= levels; ++l) out.push_back({l, std::size_t(1) << (l - 1), pyramid::level_length(T, l)});
    return out;
}

DurationBand duration_band(const LevelShape& shape, int levels) {
    const double s = double(shape.stride);
    return {shape.level == 1 ? 0.0 : 2.0 * s,
            shape.level == levels ? std::numeric_limits<double>::infinity() : 8.0 * s};
}

LevelTargets assign_labels(const std::vector<LevelShape>& shapes, const std::vector<data::EventAnnotation>& gts,
                           int num_classes) {
    const int levels = int(shapes.size());
    LevelTargets out;
    for (const auto& sh : shapes) {
        const DurationBand band = duration_band(sh, levels);
        std::vector<TimestepTarget> row(sh.length, TimestepTarget{num_classes, 0.0, 0.0});
        for (std::size_t t = 0; t < sh.length; ++t) {
            const double c = double(t * sh.stride);
            double best = std::numeric_limits<double>::infinity();
            for (const auto& g : gts) {
                const double dur = g.duration();
                if (c < g.start || c > g.end || dur < band.low || dur > band.high || !(dur < best)) continue;
                best = dur;
                row[t] = {g.label, (c - g.start) / double(sh.stride), (g.end - c) / double(sh.stride)};
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

DetectionHeads::DetectionHeads(nk::ParameterSet& ps, std::size_t width, int num_classes, std::mt19937_64& rng)
    : norm_(nn::LayerNorm::create(ps, "head.norm", 2 * width)),
      tower_(nn::TemporalLinear::create(ps, "head.tower", 2 * width, width, rng)),
      cls_(nn::Linear::create(ps, "head.cls", width, std::size_t(num_classes) + 1, rng)),
      reg_(nn::Linear::create(ps, "head.reg", width, 2, rng)) {}

std::vector<LevelOutput> DetectionHeads::operator()(Tape& t, const std::vector<pyramid::PyramidLevel>& levels) const {
    std::vector<LevelOutput> out;
    for (const auto& lv : levels) {
        Var h = nk::relu(tower_(t, norm_(t, nk::concat_cols({lv.video, lv.audio}))));
        out.push_back({lv.level, lv.stride, cls_(t, h), nk::softplus(reg_(t, h))});
    }
    return out;
}

void DetectionHeads::zero() {
    tower_.proj.zero();
    cls_.zero();
    reg_.zero();
}

double smooth_l1(double pred, double target, double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be positive");
    const double x = std::fabs(pred - target);
    return x < beta ? 0.5 * x * x / beta : x - 0.5 * beta;
}

Var classification_loss(const std::vector<LevelOutput>& out, const LevelTargets& targets, int num_classes) {
    nk::require_shape(out.size() == targets.size(), "classification_loss: level count mismatch");
    Tape& t = *out.front().logits.tape();
    std::size_t total = 0;
    for (const auto& lt : targets) total += lt.size();
    Var acc = t.constant(Matrix(1, 1));
    for (std::size_t l = 0; l < out.size(); ++l) {
        std::vector<int> labels;
        for (const auto& tt : targets[l]) labels.push_back(tt.cls);
        if (labels.empty()) continue;
        nk::require_shape(out[l].logits.rows() == labels.size() && out[l].logits.cols() == std::size_t(num_classes) + 1,
                          "classification_loss: logits shape mismatch");
        acc = nk::add(acc, nk::scale(contrast::cross_entropy(out[l].logits, labels), double(labels.size()) / double(total)));
    }
    return acc;
}

Var regression_loss(const std::vector<LevelOutput>& out, const LevelTargets& targets, int num_classes) {
    nk::require_shape(out.size() == targets.size(), "regression_loss: level count mismatch");
    Tape& t = *out.front().offsets.tape();
    std::size_t positives = 0;
    for (const auto& lt : targets)
        for (const auto& tt : lt) positives += is_positive(tt, num_classes);
    if (positives == 0) return t.constant(Matrix(1, 1));
    Var acc = t.constant(Matrix(1, 1));
    for (std::size_t l = 0; l < out.size(); ++l) {
        std::vector<int> rows;
        std::vector<double> want;
        for (std::size_t i = 0; i < targets[l].size(); ++i)
            if (is_positive(targets[l][i], num_classes)) {
                rows.push_back(int(i));
                want.push_back(targets[l][i].d_start);
                want.push_back(targets[l][i].d_end);
            }
        if (rows.empty()) continue;
        Var pred = nk::gather_rows(out[l].offsets, rows);
        Var diff = nk::sub(pred, t.constant(Matrix(rows.size(), 2, std::move(want))));
        acc = nk::add(acc, nk::sum_all(nk::smooth_l1(diff, 1.0)));
    }
    return nk::scale(acc, 1.0 / double(positives));
}

Var total_loss(const LossComponents& c, const contrast::LossWeights& w) {
    Var s = nk::scale(c.inter, w.inter);
    s = nk::add(s, nk::scale(c.intra, w.intra));
    s = nk::add(s, nk::scale(c.score, w.score));
    s = nk::add(s, nk::scale(c.cls, w.cls));
    return nk::add(s, nk::scale(c.reg, w.reg));
}

LevelPrediction to_prediction(const LevelOutput& out) {
    Tape t;
    t.set_grad_enabled(false);
    return {out.level, out.stride, nk::softmax_rows(t.constant(out.logits.value())).value(), out.offsets.value()};
}

std::vector<LocalizedEvent> decode(const std::vector<LevelPrediction>& levels, double T, double threshold,
                                   int max_per_video) {
    std::vector<LocalizedEvent> events;
    for (const auto& lv : levels) {
        const std::size_t fg = lv.probs.cols() - 1;
        for (std::size_t t = 0; t < lv.probs.rows(); ++t) {
            std::size_t arg = 0;
            for (std::size_t c = 1; c < fg; ++c)
                if (lv.probs(t, c) > lv.probs(t, arg)) arg = c;
            const double q = lv.probs(t, arg);
            if (q < threshold) continue;
            const double c = double(t * lv.stride), s = double(lv.stride);
            const double start = std::clamp(c - lv.offsets(t, 0) * s, 0.0, T);
            const double end = std::clamp(c + lv.offsets(t, 1) * s, 0.0, T);
            if (!(end > start)) continue;
            events.push_back({start, end, int(arg), q});
        }
    }
    std::stable_sort(events.begin(), events.end(), confidence_order);
    if (events.size() > std::size_t(max_per_video)) events.resize(std::size_t(max_per_video));
    return events;
}

std::vector<LocalizedEvent> soft_nms(std::vector<LocalizedEvent> events, double sigma, double min_confidence) {
    std::vector<LocalizedEvent> kept;
    while (!events.empty()) {
        auto best = std::min_element(events.begin(), events.end(), confidence_order);
        const LocalizedEvent pick = *best;
        events.erase(best);
        kept.push_back(pick);
        std::vector<LocalizedEvent> rest;
        for (LocalizedEvent e : events) {
            if (e.label == pick.label) {
                const double iou = tiou(pick.start, pick.end, e.start, e.end);
                e.confidence *= std::exp(-iou * iou / sigma);
            }
            if (e.confidence >= min_confidence) rest.push_back(e);
        }
        events = std::move(rest);
    }
    return kept;
}

nlohmann::json prediction_to_json(const VideoPrediction& p) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : p.events)
        events.push_back({{"start", e.start}, {"end", e.end}, {"label", e.label}, {"score", e.confidence}});
    return {{"id", p.id}, {"events", events}};
}

VideoPrediction prediction_from_json(const nlohmann::json& j) {
    VideoPrediction p;
    p.id = j.at("id").get<std::string>();
    for (const auto& e : j.at("events"))
        p.events.push_back({e.at("start").get<double>(), e.at("end").get<double>(), e.at("label").get<int>(),
                            e.at("score").get<double>()});
    return p;
}

void save_predictions(const std::string& path, const std::vector<VideoPrediction>& preds) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : preds) arr.push_back(prediction_to_json(p));
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << arr.dump(2) << '\n';
}

std::vector<VideoPrediction> load_predictions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    nlohmann::json arr;
    is >> arr;
    std::vector<VideoPrediction> out;
    for (const auto& j : arr) out.push_back(prediction_from_json(j));
    return out;
}

}  // namespace avloc::detect
