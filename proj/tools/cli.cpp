// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "acceptance/criteria.hpp"
#include "avloc/detect.hpp"
#include "avloc/evalkit.hpp"
#include "avloc/trainer.hpp"
#include "svg.hpp"

namespace avloc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out;
    int threads = 1;
    std::string data;
    std::string checkpoint;
    std::string predictions;
    std::string split = "eval";
    std::string modality;
    std::string resume;
    int stop_after = 0;
};

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + path.string());
}

json read_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

// Config file < DEL_SEED < --set. A run manifest is accepted in place of a config file.
json resolve_config(const Options& o, json base = train::default_config_json()) {
    try {
        json doc = std::move(base);
        if (!o.config_path.empty()) {
            json file = read_json_file(o.config_path);
            if (file.is_object() && file.contains("command") && file.contains("config")) file = file["config"];
            doc = train::to_json(train::run_config_from_json(file));
        }
        if (const char* s = std::getenv("DEL_SEED"); s && *s) {
            std::size_t used = 0;
            unsigned long long seed = 0;
            try {
                seed = std::stoull(s, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != std::string(s).size()) throw ConfigError(std::string("DEL_SEED is not an integer: ") + s);
            doc["data"]["seed"] = seed;
            doc["train"]["seed"] = seed;
        }
        for (const auto& a : o.sets) train::apply_override(doc, a);
        const auto cfg = train::run_config_from_json(doc);
        cfg.validate();
        return train::to_json(cfg);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

data::Dataset load_data(const std::string& dir) {
    if (!fs::is_directory(dir)) throw InputError("dataset directory not found: " + dir);
    try {
        return data::load_dataset(dir);
    } catch (const data::ParseError& e) {
        throw InputError(e.what());
    }
}

data::Dataset dataset_for(const Options& o, const train::RunConfig& cfg) {
    if (!o.data.empty()) return load_data(o.data);
    return data::generate_synthetic_dataset(cfg.data);
}

train::Checkpoint load_ckpt(const std::string& path) {
    if (!fs::exists(path)) throw InputError("checkpoint not found: " + path);
    try {
        return train::load_checkpoint(path);
    } catch (const data::ParseError& e) {
        throw InputError(e.what());
    }
}

std::vector<std::size_t> split_indices(const data::Dataset& ds, const std::string& split) {
    if (split == "train") return ds.train;
    if (split == "eval") return ds.eval;
    std::vector<std::size_t> all(ds.videos.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
}

class Manifest {
public:
    Manifest(std::string command, const Options& o, int argc, const char* const* argv)
        : started_(std::chrono::steady_clock::now()) {
        doc_["command"] = std::move(command);
        doc_["argv"] = std::vector<std::string>(argv, argv + argc);
        doc_["config_path"] = o.config_path.empty() ? json(nullptr) : json(o.config_path);
        doc_["overrides"] = o.sets;
        doc_["threads"] = o.threads;
        doc_["started"] = utc_now();
        doc_["artifacts"] = json::object();
        doc_["inputs"] = json::object();
    }

    void config(const json& c) {
        doc_["config"] = c;
        doc_["seed"] = {{"data", c["data"]["seed"]}, {"train", c["train"]["seed"]}};
    }
    void input(const std::string& key, const std::string& path) { doc_["inputs"][key] = path; }
    void artifact(const std::string& key, const fs::path& path) { doc_["artifacts"][key] = path.string(); }
    json& extra() { return doc_; }

    void write(const fs::path& dir) {
        doc_["finished"] = utc_now();
        doc_["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
        write_text(dir / "run_manifest.json", doc_.dump(2) + "\n");
    }

private:
    json doc_;
    std::chrono::steady_clock::time_point started_;
};

Chart loss_chart(const std::vector<train::EpochMetrics>& rows) {
    Chart c{"Training loss", "epoch", "loss", {}};
    const std::pair<const char*, double train::EpochMetrics::*> parts[] = {
        {"total", &train::EpochMetrics::total}, {"inter", &train::EpochMetrics::inter},
        {"intra", &train::EpochMetrics::intra}, {"score", &train::EpochMetrics::score},
        {"cls", &train::EpochMetrics::cls},     {"reg", &train::EpochMetrics::reg}};
    for (const auto& [name, field] : parts) {
        Series s{name, {}};
        for (const auto& r : rows) s.points.emplace_back(double(r.epoch), r.*field);
        c.series.push_back(std::move(s));
    }
    return c;
}

Chart pr_chart(const std::vector<VideoPrediction>& preds, const std::vector<data::VideoAnnotation>& gts,
               double threshold) {
    std::ostringstream title;
    title << "Precision-recall at tIoU " << threshold;
    Chart c{title.str(), "recall", "precision", {}, 0, 1, 0, 1};
    std::set<int> labels;
    for (const auto& g : gts)
        for (const auto& e : g.events) labels.insert(e.label);
    for (int label : labels) {
        const auto m = eval::match_class(preds, gts, label, threshold);
        Series s{"class " + std::to_string(label), {}};
        int tp = 0;
        for (std::size_t k = 0; k < m.is_tp.size(); ++k) {
            tp += m.is_tp[k] ? 1 : 0;
            s.points.emplace_back(double(tp) / double(m.num_gt), double(tp) / double(k + 1));
        }
        c.series.push_back(std::move(s));
    }
    return c;
}

// ---------------------------------------------------------------- subcommands

int cmd_generate(const Options& o, Manifest& man, std::ostream& out) {
    const json doc = resolve_config(o);
    const auto cfg = train::run_config_from_json(doc);
    man.config(doc);
    const auto ds = data::generate_synthetic_dataset(cfg.data);
    data::save_dataset(o.out, ds);
    man.artifact("dataset_manifest", fs::path(o.out) / "manifest.json");
    man.artifact("features", fs::path(o.out) / "features");
    man.artifact("annotations", fs::path(o.out) / "annotations");
    out << "generated " << ds.videos.size() << " videos (" << ds.train.size() << " train, " << ds.eval.size()
        << " eval) in " << o.out << "\n";
    return kOk;
}

int cmd_train(const Options& o, Manifest& man, std::ostream& out) {
    std::optional<train::Checkpoint> resume;
    json doc;
    if (!o.resume.empty()) {
        if (!o.config_path.empty() || !o.sets.empty()) throw ConfigError("--resume takes its config from the checkpoint");
        resume = load_ckpt(o.resume);
        doc = resolve_config(o, resume->config);
        man.input("resume", o.resume);
    } else {
        doc = resolve_config(o);
    }
    const auto cfg = train::run_config_from_json(doc);
    man.config(doc);
    if (!o.data.empty()) man.input("data", o.data);
    const auto ds = dataset_for(o, cfg);

    train::Trainer trainer(cfg, ds);
    trainer.set_threads(o.threads);
    if (resume) {
        try {
            trainer.restore(*resume);
        } catch (const data::ParseError& e) {
            throw InputError(e.what());
        }
    }
    out << std::setprecision(6);
    const auto stop = o.stop_after > 0 ? std::optional<int>(o.stop_after) : std::nullopt;
    const auto res = trainer.fit(stop, [&](const train::EpochMetrics& e) {
        out << "epoch " << e.epoch << "/" << cfg.train.epochs << " lr " << e.lr << " loss " << e.total;
        if (e.eval) out << " eval_mAP@0.5 " << e.eval->map_at(0.5) << " eval_avg_mAP " << e.eval->average_map;
        out << " (" << std::fixed << std::setprecision(1) << e.seconds << " s)" << std::defaultfloat
            << std::setprecision(6) << std::endl;
    });

    const fs::path dir = o.out;
    train::save_checkpoint(dir / "checkpoint.delc", trainer.checkpoint());
    write_text(dir / "metrics.csv", train::metrics_csv(res.epochs));
    write_text(dir / "loss_curve.svg", render_svg(loss_chart(res.epochs)));
    man.artifact("checkpoint", dir / "checkpoint.delc");
    man.artifact("metrics", dir / "metrics.csv");
    man.artifact("loss_curve", dir / "loss_curve.svg");
    if (!res.epochs.empty() && res.epochs.back().eval) {
        const auto& rep = *res.epochs.back().eval;
        write_text(dir / "eval_report.json", rep.to_json().dump(2) + "\n");
        man.artifact("eval_report", dir / "eval_report.json");
        man.extra()["final_eval_average_map"] = rep.average_map;
    }
    return kOk;
}

int cmd_predict(const Options& o, Manifest& man, std::ostream& out) {
    const auto ck = load_ckpt(o.checkpoint);
    man.input("checkpoint", o.checkpoint);
    Options po = o;
    po.config_path.clear();
    if (!o.modality.empty()) po.sets.push_back("train.modality=\"" + o.modality + "\"");
    const json doc = resolve_config(po, ck.config);
    const auto cfg = train::run_config_from_json(doc);
    man.config(doc);
    if (!o.data.empty()) man.input("data", o.data);
    const auto ds = dataset_for(o, cfg);
    if (ds.videos.empty()) throw InputError("dataset has no videos");

    std::unique_ptr<model::DelModel> m;
    try {
        m = train::model_from_checkpoint(ck, ds.videos.front().video.cols(), ds.videos.front().audio.cols());
    } catch (const data::ParseError& e) {
        throw InputError(e.what());
    }
    if (m->num_classes() != ds.num_classes()) throw InputError("checkpoint and dataset disagree on the class count");
    std::vector<const data::FeatureSequence*> seqs;
    for (auto i : split_indices(ds, o.split)) seqs.push_back(&ds.videos[i]);
    const auto preds = train::predict_all(*m, seqs, cfg.train.modality, cfg.train.detect, o.threads);

    const fs::path path = fs::path(o.out) / "predictions.json";
    detect::save_predictions(path.string(), preds);
    man.artifact("predictions", path);
    man.extra()["split"] = o.split;
    std::size_t n = 0;
    for (const auto& p : preds) n += p.events.size();
    out << "wrote " << n << " events for " << preds.size() << " videos to " << path.string() << "\n";
    return kOk;
}

int cmd_eval(const Options& o, Manifest& man, std::ostream& out) {
    if (!fs::exists(o.predictions)) throw InputError("predictions not found: " + o.predictions);
    std::vector<VideoPrediction> preds;
    try {
        preds = detect::load_predictions(o.predictions);
    } catch (const std::exception& e) {
        throw InputError("predictions " + o.predictions + ": " + e.what());
    }
    man.input("predictions", o.predictions);
    const json doc = resolve_config(o);
    man.config(doc);
    if (!o.data.empty()) man.input("data", o.data);
    const auto ds = dataset_for(o, train::run_config_from_json(doc));

    std::set<std::string> known, in_split;
    for (const auto& a : ds.annotations) known.insert(a.id);
    std::vector<data::VideoAnnotation> gts;
    for (auto i : split_indices(ds, o.split)) {
        gts.push_back(ds.annotations[i]);
        in_split.insert(ds.annotations[i].id);
    }
    std::vector<VideoPrediction> kept;
    for (auto& p : preds) {
        if (!known.count(p.id)) throw InputError("prediction for unknown video '" + p.id + "'");
        if (in_split.count(p.id)) kept.push_back(std::move(p));
    }
    eval::EvalReport rep;
    try {
        rep = eval::mean_ap(kept, gts);
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }

    const fs::path dir = o.out;
    write_text(dir / "eval_report.json", rep.to_json().dump(2) + "\n");
    write_text(dir / "eval_report.csv", rep.to_csv());
    write_text(dir / "pr_curve.svg", render_svg(pr_chart(kept, gts, 0.5)));
    man.artifact("eval_report", dir / "eval_report.json");
    man.artifact("eval_report_csv", dir / "eval_report.csv");
    man.artifact("pr_curve", dir / "pr_curve.svg");
    man.extra()["split"] = o.split;
    man.extra()["average_map"] = rep.average_map;
    out << std::setprecision(6) << "mAP@0.5 " << rep.map_at(0.5) << " average mAP " << rep.average_map << "\n";
    return kOk;
}

int cmd_selftest(const Options& o, std::ostream& out) {
    acceptance::Options ao;
    ao.threads = o.threads;
    bool ok = true;
    for (const auto& c : acceptance::criteria()) {
        if (c.trains) continue;
        const auto t0 = std::chrono::steady_clock::now();
        acceptance::Outcome r;
        try {
            r = c.run(ao);
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out << acceptance::format_line(c, r, s) << std::endl;
        ok &= r.pass;
    }
    out << (ok ? "selftest passed" : "selftest FAILED") << "\n";
    return ok ? kOk : kSelftestFailed;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Audio-visual event localization toolkit"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", o.config_path, "JSON config file or run manifest");
        sub->add_option("--set", o.sets, "Override a config key, e.g. detect.nms.sigma=0.3");
        auto* opt = sub->add_option("--out", o.out, "Output directory");
        if (needs_out) opt->required();
        sub->add_option("--threads", o.threads, "Worker cap for parallel stages")->check(CLI::PositiveNumber);
    };
    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
    add_common(gen, true);
    auto* trn = app.add_subcommand("train", "Train a model and write a checkpoint");
    add_common(trn, true);
    trn->add_option("--data", o.data, "Dataset directory (default: generate from the config)");
    trn->add_option("--resume", o.resume, "Continue from a checkpoint");
    trn->add_option("--stop-after", o.stop_after, "Stop after this epoch (the schedule still spans all epochs)")
        ->check(CLI::PositiveNumber);
    auto* prd = app.add_subcommand("predict", "Decode events with a trained checkpoint");
    add_common(prd, true);
    prd->remove_option(prd->get_option("--config"));
    prd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    prd->add_option("--data", o.data, "Dataset directory (default: regenerate from the checkpoint config)");
    prd->add_option("--split", o.split, "train, eval or all")->check(CLI::IsMember({"train", "eval", "all"}));
    prd->add_option("--modality", o.modality, "AV, A or V")->check(CLI::IsMember({"AV", "A", "V"}));
    auto* evl = app.add_subcommand("eval", "Score predictions against ground truth");
    add_common(evl, true);
    evl->add_option("--predictions", o.predictions, "Predictions JSON")->required();
    evl->add_option("--data", o.data, "Dataset directory (default: generate from the config)");
    evl->add_option("--split", o.split, "train, eval or all")->check(CLI::IsMember({"train", "eval", "all"}));
    auto* slf = app.add_subcommand("selftest", "Run the gradient checks and oracle suites");
    slf->add_option("--threads", o.threads, "Worker cap")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream msg_out, msg_err;
        const int code = app.exit(e, msg_out, msg_err);
        out << msg_out.str();
        err << msg_err.str();
        return code == 0 ? kOk : kUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    try {
        if (command == "selftest") return cmd_selftest(o, out);
        fs::create_directories(o.out);
        Manifest man(command, o, argc, argv);
        int code = kOk;
        if (command == "generate") code = cmd_generate(o, man, out);
        else if (command == "train") code = cmd_train(o, man, out);
        else if (command == "predict") code = cmd_predict(o, man, out);
        else code = cmd_eval(o, man, out);
        man.write(o.out);
        return code;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const InputError& e) {
        err << "input error: " << e.what() << "\n";
        return kInput;
    } catch (const train::TrainingDiverged& e) {
        err << "training diverged: " << e.what() << "\n";
        return kRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
}

}  // namespace avloc::cli
