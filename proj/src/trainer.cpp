// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "avloc/rng.hpp"

namespace avloc::train {

using data::ParseError;

// ---------------------------------------------------------------- configuration

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > epochs)
        throw std::invalid_argument("train.warmup_epochs must lie in [0, epochs]");
    if (!(base_lr > 0.0)) throw std::invalid_argument("train.base_lr must be positive");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train.weight_decay must be >= 0");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("train.clip_norm must be positive");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (eval_every < 0) throw std::invalid_argument("train.eval_every must be >= 0");
    loss.validate();
    model.validate();
    detect.validate();
}

void RunConfig::validate() const {
    data.validate();
    train.validate();
    if (data.T < (1 << (train.model.levels - 1)))
        throw std::invalid_argument("data.T is too short for model.levels pyramid levels");
}

nlohmann::json to_json(const RunConfig& c) {
    const auto& t = c.train;
    const auto& w = t.loss;
    return {{"data", c.data},
            {"model", t.model},
            {"train",
             {{"epochs", t.epochs},
              {"warmup_epochs", t.warmup_epochs},
              {"base_lr", t.base_lr},
              {"weight_decay", t.weight_decay},
              {"clip_norm", t.clip_norm},
              {"batch_size", t.batch_size},
              {"seed", t.seed},
              {"modality", model::to_string(t.modality)},
              {"eval_every", t.eval_every}}},
            {"loss",
             {{"inter", w.inter},
              {"intra", w.intra},
              {"score", w.score},
              {"cls", w.cls},
              {"reg", w.reg},
              {"temperature_init", w.temperature_init},
              {"score_threshold", w.score_threshold},
              {"max_anchors", w.max_anchors}}},
            {"detect",
             {{"threshold", t.detect.decode_threshold},
              {"max_per_video", t.detect.max_per_video},
              {"nms", {{"sigma", t.detect.nms_sigma}, {"min_confidence", t.detect.nms_min_confidence}}}}}};
}

nlohmann::json default_config_json() { return to_json(RunConfig{}); }

namespace {

void reject_unknown(const nlohmann::json& doc, const nlohmann::json& schema, const std::string& where) {
    if (!doc.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string path = where.empty() ? it.key() : where + "." + it.key();
        if (!schema.contains(it.key())) throw std::invalid_argument("config: unknown key '" + path + "'");
        if (schema[it.key()].is_object()) reject_unknown(it.value(), schema[it.key()], path);
    }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
    reject_unknown(j, default_config_json(), "");
    RunConfig c;
    try {
        if (j.contains("data")) c.data = j.at("data").get<data::SynthConfig>();
        if (j.contains("model")) c.train.model = j.at("model").get<model::ModelConfig>();
        const nlohmann::json empty = nlohmann::json::object();
        const auto& t = j.contains("train") ? j.at("train") : empty;
        auto& tc = c.train;
        read(t, "epochs", tc.epochs);
        read(t, "warmup_epochs", tc.warmup_epochs);
        read(t, "base_lr", tc.base_lr);
        read(t, "weight_decay", tc.weight_decay);
        read(t, "clip_norm", tc.clip_norm);
        read(t, "batch_size", tc.batch_size);
        read(t, "seed", tc.seed);
        read(t, "eval_every", tc.eval_every);
        if (t.contains("modality")) tc.modality = model::modality_from_string(t.at("modality").get<std::string>());
        const auto& l = j.contains("loss") ? j.at("loss") : empty;
        read(l, "inter", tc.loss.inter);
        read(l, "intra", tc.loss.intra);
        read(l, "score", tc.loss.score);
        read(l, "cls", tc.loss.cls);
        read(l, "reg", tc.loss.reg);
        read(l, "temperature_init", tc.loss.temperature_init);
        read(l, "score_threshold", tc.loss.score_threshold);
        read(l, "max_anchors", tc.loss.max_anchors);
        const auto& d = j.contains("detect") ? j.at("detect") : empty;
        read(d, "threshold", tc.detect.decode_threshold);
        read(d, "max_per_video", tc.detect.max_per_video);
        if (d.contains("nms")) {
            read(d.at("nms"), "sigma", tc.detect.nms_sigma);
            read(d.at("nms"), "min_confidence", tc.detect.nms_min_confidence);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    nlohmann::json* node = &doc;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!node->is_object() || !node->contains(parts[i]))
            throw std::invalid_argument("override: unknown key '" + path + "'");
        node = &(*node)[parts[i]];
    }
    if (node->is_object()) throw std::invalid_argument("override: '" + path + "' names a section, not a value");
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    *node = value;
}

// ---------------------------------------------------------------- optimization

double learning_rate(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr) {
    if (step < warmup_steps) return base_lr * double(step + 1) / double(warmup_steps);
    if (total_steps <= warmup_steps) return base_lr;
    const double progress = double(step - warmup_steps) / double(total_steps - warmup_steps);
    return 0.5 * base_lr * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

double clip_global_norm(const std::vector<nk::Parameter*>& params, double max_norm) {
    double sq = 0.0;
    for (const auto* p : params)
        for (std::size_t i = 0; i < p->grad.size(); ++i) sq += p->grad[i] * p->grad[i];
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double f = max_norm / norm;
        for (auto* p : params)
            for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= f;
    }
    return norm;
}

Adam::Adam(std::vector<nk::Parameter*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto* p : params_)
        slots_.push_back({nk::Matrix(p->value.rows(), p->value.cols()), nk::Matrix(p->value.rows(), p->value.cols())});
}

void Adam::step(double lr, double weight_decay) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_)), c2 = 1.0 - std::pow(b2_, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = *params_[k];
        auto& s = slots_[k];
        const double decay = p.decay ? lr * weight_decay : 0.0;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g;
            s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g * g;
            p.value[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_) + decay * p.value[i];
        }
    }
}

// ---------------------------------------------------------------- metrics

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
    const auto grid = eval::default_thresholds();
    std::ostringstream os;
    os << "epoch,lr,loss_inter,loss_intra,loss_score,loss_cls,loss_reg,loss_total";
    for (double th : grid) os << ",eval_map_" << th;
    os << ",eval_average_map\n";
    os.precision(17);
    for (const auto& r : rows) {
        os << r.epoch << ',' << r.lr << ',' << r.inter << ',' << r.intra << ',' << r.score << ',' << r.cls << ','
           << r.reg << ',' << r.total;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            os << ',';
            if (r.eval) os << r.eval->thresholds[i].map;
        }
        os << ',';
        if (r.eval) os << r.eval->average_map;
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------- checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_matrix(std::ostream& os, const nk::Matrix& m) {
    os.write(reinterpret_cast<const char*>(m.data()), std::streamsize(m.size() * sizeof(double)));
}

void get_bytes(std::istream& is, void* dst, std::size_t n, const std::string& where) {
    is.read(static_cast<char*>(dst), std::streamsize(n));
    if (std::size_t(is.gcount()) != n) throw ParseError(ParseError::Kind::Truncated, where + ": truncated checkpoint");
}

template <class T>
T get(std::istream& is, const std::string& where) {
    T v{};
    get_bytes(is, &v, sizeof(T), where);
    return v;
}

nk::Matrix get_matrix(std::istream& is, std::size_t rows, std::size_t cols, const std::string& where) {
    nk::Matrix m(rows, cols);
    get_bytes(is, m.data(), m.size() * sizeof(double), where);
    return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write(kCheckpointMagic, 4);
    put<std::uint8_t>(os, kCheckpointVersion);
    const std::string cfg = c.config.dump();
    put<std::uint32_t>(os, std::uint32_t(cfg.size()));
    os.write(cfg.data(), std::streamsize(cfg.size()));
    put<std::uint32_t>(os, std::uint32_t(c.epochs_done));
    put<std::uint64_t>(os, c.steps);
    put<std::uint32_t>(os, std::uint32_t(c.params.size()));
    for (const auto& [name, e] : c.params) {
        put<std::uint32_t>(os, std::uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        put<std::uint32_t>(os, std::uint32_t(e.value.rows()));
        put<std::uint32_t>(os, std::uint32_t(e.value.cols()));
        put_matrix(os, e.value);
        put_matrix(os, e.m);
        put_matrix(os, e.v);
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string where = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(ParseError::Kind::Io, "cannot open " + where);
    char magic[4];
    get_bytes(is, magic, 4, where);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw ParseError(ParseError::Kind::BadMagic, where + ": not a checkpoint");
    const auto version = get<std::uint8_t>(is, where);
    if (version != kCheckpointVersion)
        throw ParseError(ParseError::Kind::BadVersion, where + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    std::string cfg(get<std::uint32_t>(is, where), '\0');
    get_bytes(is, cfg.data(), cfg.size(), where);
    c.config = nlohmann::json::parse(cfg, nullptr, false);
    if (c.config.is_discarded()) throw ParseError(ParseError::Kind::Json, where + ": corrupt config section");
    c.epochs_done = int(get<std::uint32_t>(is, where));
    c.steps = get<std::uint64_t>(is, where);
    const auto n = get<std::uint32_t>(is, where);
    for (std::uint32_t k = 0; k < n; ++k) {
        std::string name(get<std::uint32_t>(is, where), '\0');
        get_bytes(is, name.data(), name.size(), where);
        const auto rows = get<std::uint32_t>(is, where), cols = get<std::uint32_t>(is, where);
        Checkpoint::Entry e;
        e.value = get_matrix(is, rows, cols, where);
        e.m = get_matrix(is, rows, cols, where);
        e.v = get_matrix(is, rows, cols, where);
        c.params.emplace(std::move(name), std::move(e));
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw ParseError(ParseError::Kind::TrailingData, where + ": trailing bytes after checkpoint");
    return c;
}

// ---------------------------------------------------------------- trainer

namespace {

constexpr std::uint64_t kInitSalt = 1;
constexpr std::uint64_t kShuffleSalt = 1000;
constexpr std::uint64_t kPairSalt = 1000000;

void restore_params(nk::ParameterSet& ps, const Checkpoint& c, Adam* adam) {
    if (c.params.size() != ps.size())
        throw ParseError(ParseError::Kind::ShapeMismatch, "checkpoint has " + std::to_string(c.params.size()) +
                                                              " parameters, model has " + std::to_string(ps.size()));
    auto all = ps.all();
    for (std::size_t k = 0; k < all.size(); ++k) {
        auto* p = all[k];
        auto it = c.params.find(p->name);
        if (it == c.params.end()) throw ParseError(ParseError::Kind::ShapeMismatch, "checkpoint lacks parameter " + p->name);
        const auto& e = it->second;
        if (e.value.rows() != p->value.rows() || e.value.cols() != p->value.cols())
            throw ParseError(ParseError::Kind::ShapeMismatch,
                             "parameter " + p->name + ": checkpoint shape " + std::to_string(e.value.rows()) + "x" +
                                 std::to_string(e.value.cols()) + " vs model " + std::to_string(p->value.rows()) + "x" +
                                 std::to_string(p->value.cols()));
        p->value = e.value;
        if (adam) {
            adam->slots()[k].m = e.m;
            adam->slots()[k].v = e.v;
        }
    }
}

}  // namespace

Trainer::Trainer(const RunConfig& cfg, const data::Dataset& ds) : cfg_(cfg), ds_(ds) {
    cfg_.validate();
    if (ds.videos.empty() || ds.train.empty()) throw std::invalid_argument("trainer: dataset has no training videos");
    const auto& v0 = ds.videos.front();
    model_ = std::make_unique<model::DelModel>(cfg_.train.model, v0.video.cols(), v0.audio.cols(), ds.num_classes(),
                                               mix_seed(cfg_.train.seed, kInitSalt), cfg_.train.loss.temperature_init);
    adam_ = std::make_unique<Adam>(model_->params().all());
}

TrainResult Trainer::fit(std::optional<int> stop_after, const std::function<void(const EpochMetrics&)>& on_epoch) {
    const auto& tc = cfg_.train;
    const int last = std::min(stop_after.value_or(tc.epochs), tc.epochs);
    const std::size_t n = ds_.train.size(), bs = std::size_t(tc.batch_size);
    const std::size_t steps_per_epoch = (n + bs - 1) / bs;
    const std::size_t total = steps_per_epoch * std::size_t(tc.epochs);
    const std::size_t warmup = steps_per_epoch * std::size_t(tc.warmup_epochs);
    auto params = model_->params().all();

    TrainResult res;
    for (int epoch = epochs_done_ + 1; epoch <= last; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order = ds_.train;
        std::mt19937_64 shuffle(mix_seed(tc.seed, kShuffleSalt + std::uint64_t(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle);

        EpochMetrics em;
        em.epoch = epoch;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            const std::uint64_t step = adam_->steps();
            std::vector<const data::FeatureSequence*> vids;
            std::vector<const data::VideoAnnotation*> anns;
            for (std::size_t k = s * bs; k < std::min(n, (s + 1) * bs); ++k) {
                vids.push_back(&ds_.videos[order[k]]);
                anns.push_back(&ds_.annotations[order[k]]);
            }
            std::mt19937_64 pair_rng(mix_seed(tc.seed, kPairSalt + step));
            model_->params().zero_grad();
            nk::Tape tape;
            const auto bl = model::batch_loss(tape, *model_, vids, anns, tc.loss, tc.modality, pair_rng);
            const double loss = bl.total.item();
            if (!std::isfinite(loss)) {
                std::string ids;
                for (const auto* v : vids) ids += (ids.empty() ? "" : ",") + v->id;
                throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                       std::to_string(step) + " (videos " + ids + ")");
            }
            tape.backward(bl.total);
            clip_global_norm(params, tc.clip_norm);
            em.lr = learning_rate(step, total, warmup, tc.base_lr);
            adam_->step(em.lr, tc.weight_decay);
            model_->clamp_temperature();

            res.step_losses.push_back(loss);
            em.inter += bl.parts.inter.item();
            em.intra += bl.parts.intra.item();
            em.score += bl.parts.score.item();
            em.cls += bl.parts.cls.item();
            em.reg += bl.parts.reg.item();
            em.total += loss;
        }
        for (double* x : {&em.inter, &em.intra, &em.score, &em.cls, &em.reg, &em.total}) *x /= double(steps_per_epoch);
        epochs_done_ = epoch;
        const bool do_eval = !ds_.eval.empty() &&
                             ((tc.eval_every > 0 && epoch % tc.eval_every == 0) || epoch == tc.epochs);
        if (do_eval) em.eval = evaluate(ds_.eval, threads_);
        em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.epochs.push_back(em);
        if (on_epoch) on_epoch(em);
    }
    return res;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config = to_json(cfg_);
    c.epochs_done = epochs_done_;
    c.steps = adam_->steps();
    const auto& ps = adam_->params();
    for (std::size_t k = 0; k < ps.size(); ++k)
        c.params.emplace(ps[k]->name, Checkpoint::Entry{ps[k]->value, adam_->slots()[k].m, adam_->slots()[k].v});
    return c;
}

void Trainer::restore(const Checkpoint& c) {
    restore_params(model_->params(), c, adam_.get());
    adam_->set_steps(c.steps);
    epochs_done_ = c.epochs_done;
}

std::vector<VideoPrediction> Trainer::predict(const std::vector<std::size_t>& videos, int threads) const {
    std::vector<const data::FeatureSequence*> seqs;
    for (auto i : videos) seqs.push_back(&ds_.videos.at(i));
    return predict_all(*model_, seqs, cfg_.train.modality, cfg_.train.detect, threads);
}

eval::EvalReport Trainer::evaluate(const std::vector<std::size_t>& videos, int threads) const {
    std::vector<data::VideoAnnotation> gts;
    for (auto i : videos) gts.push_back(ds_.annotations.at(i));
    return eval::mean_ap(predict(videos, threads), gts);
}

std::unique_ptr<model::DelModel> model_from_checkpoint(const Checkpoint& c, std::size_t video_dim,
                                                       std::size_t audio_dim) {
    const RunConfig cfg = run_config_from_json(c.config);
    auto m = std::make_unique<model::DelModel>(cfg.train.model, video_dim, audio_dim, cfg.data.num_classes,
                                               mix_seed(cfg.train.seed, kInitSalt), cfg.train.loss.temperature_init);
    restore_params(m->params(), c, nullptr);
    return m;
}

std::vector<VideoPrediction> predict_all(const model::DelModel& m, const std::vector<const data::FeatureSequence*>& videos,
                                         model::Modality modality, const detect::DetectConfig& dc, int threads) {
    std::vector<VideoPrediction> out(videos.size());
    std::vector<std::exception_ptr> errors(videos.size());
    auto work = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < videos.size(); i += stride) try {
                out[i] = {videos[i]->id, m.predict(*videos[i], modality, dc)};
            } catch (...) {
                errors[i] = std::current_exception();
            }
    };
    auto rethrow = [&] {
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    };
    const auto workers = std::size_t(std::clamp(threads, 1, int(std::max<std::size_t>(videos.size(), 1))));
    if (workers == 1) {
        work(0, 1);
        rethrow();
        return out;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& th : pool) th.join();
    rethrow();
    return out;
}

}  // namespace avloc::train
