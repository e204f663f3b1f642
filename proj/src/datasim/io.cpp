// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avloc/datasim.hpp"

namespace avloc::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "DELF I/O assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

bool get_exact(std::istream& is, void* dst, std::size_t n) {
    is.read(static_cast<char*>(dst), std::streamsize(n));
    return std::size_t(is.gcount()) == n;
}

}  // namespace

void write_delf_block(std::ostream& os, const nk::Matrix& m) {
    os.write(kFeatureMagic, 4);
    os.put(char(kFeatureVersion));
    put_u32(os, std::uint32_t(m.rows()));
    put_u32(os, std::uint32_t(m.cols()));
    std::vector<float> buf(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) buf[i] = float(m[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
}

nk::Matrix read_delf_block(std::istream& is, const std::string& where) {
    char magic[4];
    if (!get_exact(is, magic, 4)) throw ParseError(ParseError::Kind::Truncated, where + ": truncated header");
    if (std::memcmp(magic, kFeatureMagic, 4) != 0) throw ParseError(ParseError::Kind::BadMagic, where + ": bad magic");
    std::uint8_t version = 0;
    if (!get_exact(is, &version, 1)) throw ParseError(ParseError::Kind::Truncated, where + ": truncated header");
    if (version != kFeatureVersion)
        throw ParseError(ParseError::Kind::BadVersion, where + ": unsupported version " + std::to_string(version));
    std::uint32_t rows = 0, cols = 0;
    if (!get_exact(is, &rows, 4) || !get_exact(is, &cols, 4))
        throw ParseError(ParseError::Kind::Truncated, where + ": truncated header");
    const std::size_t n = std::size_t(rows) * std::size_t(cols);
    std::vector<float> buf(n);
    if (!get_exact(is, buf.data(), n * sizeof(float)))
        throw ParseError(ParseError::Kind::Truncated, where + ": payload shorter than rows*cols = " + std::to_string(n));
    nk::Matrix m(rows, cols);
    for (std::size_t i = 0; i < n; ++i) m[i] = double(buf[i]);
    return m;
}

void save_features(const fs::path& path, const FeatureSequence& seq) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError(ParseError::Kind::Io, "cannot write " + path.string());
    write_delf_block(os, seq.video);
    write_delf_block(os, seq.audio);
    if (!os) throw ParseError(ParseError::Kind::Io, "write failed: " + path.string());
}

FeatureSequence load_features(const fs::path& path, std::optional<FeatureDims> expect) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string());
    FeatureSequence seq;
    seq.id = path.stem().string();
    seq.video = read_delf_block(is, path.string() + " [video]");
    seq.audio = read_delf_block(is, path.string() + " [audio]");
    if (is.peek() != std::char_traits<char>::eof())
        throw ParseError(ParseError::Kind::TrailingData, path.string() + ": payload longer than header declares");
    if (expect && (seq.video.cols() != expect->d_v || seq.audio.cols() != expect->d_a))
        throw ParseError(ParseError::Kind::ShapeMismatch,
                         path.string() + ": widths " + seq.video.shape_string() + "/" + seq.audio.shape_string() +
                             " do not match the manifest");
    if (seq.video.rows() == 0 || seq.audio.rows() == 0)
        throw ParseError(ParseError::Kind::ShapeMismatch, path.string() + ": empty stream");
    if (!seq.video.all_finite() || !seq.audio.all_finite())
        throw ParseError(ParseError::Kind::Validation, path.string() + ": non-finite feature values");
    return seq;
}

json annotations_to_json(const VideoAnnotation& ann) {
    json events = json::array();
    for (const auto& e : ann.events) events.push_back({{"start", e.start}, {"end", e.end}, {"label", e.label}});
    return {{"id", ann.id}, {"duration", ann.duration}, {"events", events}};
}

VideoAnnotation annotations_from_json(const json& j, std::optional<int> num_classes) {
    VideoAnnotation ann;
    try {
        ann.id = j.at("id").get<std::string>();
        ann.duration = j.at("duration").get<double>();
        for (const auto& e : j.at("events"))
            ann.events.push_back({e.at("start").get<double>(), e.at("end").get<double>(), e.at("label").get<int>()});
    } catch (const json::exception& ex) {
        throw ParseError(ParseError::Kind::Json, std::string("annotation schema: ") + ex.what());
    }
    for (const auto& e : ann.events) {
        const std::string where = ann.id + ": event [" + std::to_string(e.start) + ", " + std::to_string(e.end) + "]";
        if (!(e.end > e.start)) throw ParseError(ParseError::Kind::Validation, where + " has end <= start");
        if (e.start < 0.0 || e.end > ann.duration)
            throw ParseError(ParseError::Kind::Validation, where + " lies outside [0, duration]");
        if (e.label < 0 || (num_classes && e.label >= *num_classes))
            throw ParseError(ParseError::Kind::Validation, where + " has label out of range");
    }
    return ann;
}

void save_annotations(const fs::path& path, const VideoAnnotation& ann) {
    std::ofstream os(path);
    if (!os) throw ParseError(ParseError::Kind::Io, "cannot write " + path.string());
    os << annotations_to_json(ann).dump(2) << '\n';
}

VideoAnnotation load_annotations(const fs::path& path, std::optional<int> num_classes) {
    std::ifstream is(path);
    if (!is) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& ex) {
        throw ParseError(ParseError::Kind::Json, path.string() + ": " + ex.what());
    }
    return annotations_from_json(j, num_classes);
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
    fs::create_directories(dir / "features");
    fs::create_directories(dir / "annotations");
    json train = json::array(), eval = json::array();
    for (std::size_t i = 0; i < ds.videos.size(); ++i) {
        save_features(dir / "features" / (ds.videos[i].id + ".delf"), ds.videos[i]);
        save_annotations(dir / "annotations" / (ds.videos[i].id + ".json"), ds.annotations[i]);
    }
    for (std::size_t i : ds.train) train.push_back(ds.videos[i].id);
    for (std::size_t i : ds.eval) eval.push_back(ds.videos[i].id);
    json manifest = {{"format", "avloc-dataset"},
                     {"version", 1},
                     {"num_classes", ds.config.num_classes},
                     {"T", ds.config.T},
                     {"d_v", ds.config.d_v},
                     {"d_a", ds.config.d_a},
                     {"splits", {{"train", train}, {"eval", eval}}},
                     {"synth_config", ds.config}};
    std::ofstream os(dir / "manifest.json");
    if (!os) throw ParseError(ParseError::Kind::Io, "cannot write manifest in " + dir.string());
    os << manifest.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw ParseError(ParseError::Kind::Io, "no manifest.json in " + dir.string());
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& ex) {
        throw ParseError(ParseError::Kind::Json, "manifest.json: " + std::string(ex.what()));
    }
    Dataset ds;
    try {
        if (manifest.contains("synth_config")) ds.config = manifest.at("synth_config").get<SynthConfig>();
        ds.config.num_classes = manifest.at("num_classes").get<int>();
        ds.config.T = manifest.at("T").get<int>();
        ds.config.d_v = manifest.at("d_v").get<int>();
        ds.config.d_a = manifest.at("d_a").get<int>();
    } catch (const json::exception& ex) {
        throw ParseError(ParseError::Kind::Json, "manifest.json: " + std::string(ex.what()));
    }
    const FeatureDims dims{std::size_t(ds.config.d_v), std::size_t(ds.config.d_a)};
    auto load_split = [&](const char* name, std::vector<std::size_t>& out) {
        if (!manifest["splits"].contains(name)) return;
        for (const auto& id : manifest["splits"][name]) {
            const std::string s = id.get<std::string>();
            ds.videos.push_back(load_features(dir / "features" / (s + ".delf"), dims));
            ds.annotations.push_back(load_annotations(dir / "annotations" / (s + ".json"), ds.config.num_classes));
            out.push_back(ds.videos.size() - 1);
        }
    };
    load_split("train", ds.train);
    load_split("eval", ds.eval);
    ds.config.num_videos = int(ds.videos.size());
    return ds;
}

FeatureSequence pad_or_crop(const FeatureSequence& seq, std::size_t t_fixed) {
    if (t_fixed < 1) throw std::invalid_argument("pad_or_crop: t_fixed must be >= 1");
    auto fit = [t_fixed](const nk::Matrix& m) {
        nk::Matrix out(t_fixed, m.cols());
        const std::size_t keep = std::min(t_fixed, m.rows());
        std::copy(m.data(), m.data() + keep * m.cols(), out.data());
        return out;
    };
    FeatureSequence out;
    out.id = seq.id;
    out.frame_rate_hint = seq.frame_rate_hint;
    out.video = fit(seq.video);
    out.audio = fit(seq.audio);
    return out;
}

VideoAnnotation clip_annotations(const VideoAnnotation& ann, std::size_t t_fixed) {
    VideoAnnotation out;
    out.id = ann.id;
    out.duration = double(t_fixed);
    const double limit = double(t_fixed);
    for (const auto& e : ann.events) {
        const double s = std::clamp(e.start, 0.0, limit);
        const double en = std::clamp(e.end, 0.0, limit);
        if (en > s) out.events.push_back({s, en, e.label});
    }
    return out;
}

}  // namespace avloc::data
