// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace avloc::eval {

std::vector<double> default_thresholds() {
    std::vector<double> out;
    for (int i = 1; i <= 9; ++i) out.push_back(i / 10.0);
    return out;
}

double EvalReport::map_at(double threshold) const {
    for (const auto& t : thresholds)
        if (std::fabs(t.threshold - threshold) < 1e-9) return t.map;
    throw std::invalid_argument("threshold " + std::to_string(threshold) + " is not on the evaluation grid");
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& t : thresholds) {
        nlohmann::json classes = nlohmann::json::array();
        for (const auto& c : t.classes)
            classes.push_back({{"label", c.label}, {"num_gt", c.num_gt}, {"tp", c.tp}, {"fp", c.fp}, {"ap", c.ap}});
        per.push_back({{"threshold", t.threshold}, {"map", t.map}, {"classes", classes}});
    }
    return {{"average_map", average_map}, {"thresholds", per}};
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "threshold,label,num_gt,tp,fp,ap\n";
    for (const auto& t : thresholds) {
        int gt = 0, tp = 0, fp = 0;
        for (const auto& c : t.classes) {
            os << t.threshold << ',' << c.label << ',' << c.num_gt << ',' << c.tp << ',' << c.fp << ',' << c.ap << '\n';
            gt += c.num_gt;
            tp += c.tp;
            fp += c.fp;
        }
        os << t.threshold << ",mAP," << gt << ',' << tp << ',' << fp << ',' << t.map << '\n';
    }
    os << "all,average,,,," << average_map << '\n';
    return os.str();
}

RankedMatches match_class(const std::vector<VideoPrediction>& preds, const std::vector<data::VideoAnnotation>& gts,
                          int label, double threshold) {
    std::map<std::string, std::size_t> video_of;
    for (std::size_t v = 0; v < gts.size(); ++v) video_of.emplace(gts[v].id, v);

    struct Ranked {
        std::size_t video;
        LocalizedEvent event;
    };
    std::vector<Ranked> ranked;
    for (const auto& p : preds) {
        auto it = video_of.find(p.id);
        if (it == video_of.end()) throw std::invalid_argument("prediction for unknown video '" + p.id + "'");
        for (const auto& e : p.events)
            if (e.label == label) ranked.push_back({it->second, e});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (confidence_order(a.event, b.event)) return true;
        if (confidence_order(b.event, a.event)) return false;
        return a.video < b.video;
    });

    RankedMatches out;
    std::vector<std::vector<const data::EventAnnotation*>> pool(gts.size());
    for (std::size_t v = 0; v < gts.size(); ++v)
        for (const auto& g : gts[v].events)
            if (g.label == label) {
                pool[v].push_back(&g);
                ++out.num_gt;
            }
    std::vector<std::vector<bool>> used(gts.size());
    for (std::size_t v = 0; v < gts.size(); ++v) used[v].assign(pool[v].size(), false);

    for (const auto& r : ranked) {
        double best = -1.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < pool[r.video].size(); ++j) {
            if (used[r.video][j]) continue;
            const double iou = tiou(r.event.start, r.event.end, pool[r.video][j]->start, pool[r.video][j]->end);
            if (iou > best) {
                best = iou;
                best_j = j;
            }
        }
        const bool hit = best >= threshold && best > 0.0;
        if (hit) used[r.video][best_j] = true;
        out.is_tp.push_back(hit);
    }
    return out;
}

double ap_from_matches(const RankedMatches& m) {
    if (m.num_gt == 0) return 0.0;
    const std::size_t n = m.is_tp.size();
    std::vector<double> precision(n);
    int tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tp += m.is_tp[i];
        precision[i] = double(tp) / double(i + 1);
    }
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    // Recall steps by 1/num_gt exactly at each true positive.
    double area = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (m.is_tp[i]) area += precision[i];
    return area / double(m.num_gt);
}

double average_precision(const std::vector<VideoPrediction>& preds, const std::vector<data::VideoAnnotation>& gts,
                         int label, double threshold) {
    return ap_from_matches(match_class(preds, gts, label, threshold));
}

EvalReport mean_ap(const std::vector<VideoPrediction>& preds, const std::vector<data::VideoAnnotation>& gts,
                   const std::vector<double>& thresholds) {
    if (thresholds.empty()) throw std::invalid_argument("mean_ap: empty threshold grid");
    std::set<int> labels;
    for (const auto& v : gts)
        for (const auto& g : v.events) labels.insert(g.label);
    if (labels.empty()) throw std::invalid_argument("mean_ap: ground truth contains no events");

    EvalReport rep;
    for (double th : thresholds) {
        ThresholdResult tr;
        tr.threshold = th;
        double sum = 0.0;
        for (int label : labels) {
            const RankedMatches m = match_class(preds, gts, label, th);
            ClassResult c;
            c.label = label;
            c.num_gt = m.num_gt;
            c.tp = int(std::count(m.is_tp.begin(), m.is_tp.end(), true));
            c.fp = int(m.is_tp.size()) - c.tp;
            c.ap = ap_from_matches(m);
            sum += c.ap;
            tr.classes.push_back(c);
        }
        tr.map = sum / double(labels.size());
        rep.average_map += tr.map;
        rep.thresholds.push_back(std::move(tr));
    }
    rep.average_map /= double(thresholds.size());
    return rep;
}

}  // namespace avloc::eval
