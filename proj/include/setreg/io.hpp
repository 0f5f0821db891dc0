#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "setreg/core.hpp"
#include "setreg/pipeline.hpp"

namespace setreg::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Raw array: little-endian payload in `<stem>.<dtype>` plus a JSON sidecar
// `<stem>.json` = {"dtype": ..., "shape": [...], "order": "row-major"}.
struct ArrayHeader {
    std::string dtype;
    std::vector<std::size_t> shape;

    std::size_t count() const {
        std::size_t n = 1;
        for(auto s : shape) n *= s;
        return n;
    }
};

inline fs::path payload_path(const fs::path &stem, const std::string &dtype) {
    return fs::path(stem.string() + "." + dtype);
}

inline fs::path sidecar_path(const fs::path &stem) { return fs::path(stem.string() + ".json"); }

inline void write_text(const fs::path &p, const std::string &text) {
    std::ofstream f(p, std::ios::binary);
    if(!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
    f << text;
    if(!f) throw std::runtime_error("write failed: " + p.string());
}

inline std::string read_text(const fs::path &p) {
    std::ifstream f(p, std::ios::binary);
    if(!f) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_json(const fs::path &p, const json &j) { write_text(p, j.dump(2) + "\n"); }
inline json read_json(const fs::path &p) {
    try {
        return json::parse(read_text(p));
    } catch(const json::exception &e) {
        throw std::runtime_error("malformed JSON in " + p.string() + ": " + e.what());
    }
}

inline void write_header(const fs::path &stem, const ArrayHeader &h) {
    write_json(sidecar_path(stem), json{{"dtype", h.dtype}, {"shape", h.shape}, {"order", "row-major"}});
}

inline ArrayHeader read_header(const fs::path &stem) {
    const auto j = read_json(sidecar_path(stem));
    ArrayHeader h;
    try {
        h.dtype = j.at("dtype").get<std::string>();
        h.shape = j.at("shape").get<std::vector<std::size_t>>();
        if(j.at("order").get<std::string>() != "row-major") throw std::runtime_error("unsupported order");
    } catch(const json::exception &e) {
        throw std::runtime_error("bad sidecar " + sidecar_path(stem).string() + ": " + e.what());
    }
    return h;
}

inline void save_f32(const fs::path &stem, const std::vector<float> &data, const std::vector<std::size_t> &shape) {
    ArrayHeader h{"f32", shape};
    if(h.count() != data.size()) throw std::invalid_argument("save_f32: shape does not match data length");
    std::vector<char> bytes(data.size() * 4);
    for(std::size_t i = 0; i < data.size(); ++i){
        std::uint32_t u = std::bit_cast<std::uint32_t>(data[i]);
        for(int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((u >> (8 * b)) & 0xFFu);
    }
    write_text(payload_path(stem, "f32"), std::string(bytes.begin(), bytes.end()));
    write_header(stem, h);
}

inline std::vector<float> load_f32(const fs::path &stem, std::vector<std::size_t> *shape = nullptr) {
    const auto h = read_header(stem);
    if(h.dtype != "f32") throw std::runtime_error(stem.string() + ": expected dtype f32, found " + h.dtype);
    const auto raw = read_text(payload_path(stem, "f32"));
    if(raw.size() != h.count() * 4) throw std::runtime_error(stem.string() + ": payload size does not match shape");
    std::vector<float> out(h.count());
    for(std::size_t i = 0; i < out.size(); ++i){
        std::uint32_t u = 0;
        for(int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i * 4 + static_cast<std::size_t>(b)])) << (8 * b);
        out[i] = std::bit_cast<float>(u);
    }
    if(shape) *shape = h.shape;
    return out;
}

inline void save_u8(const fs::path &stem, const std::vector<std::uint8_t> &data, const std::vector<std::size_t> &shape) {
    ArrayHeader h{"u8", shape};
    if(h.count() != data.size()) throw std::invalid_argument("save_u8: shape does not match data length");
    write_text(payload_path(stem, "u8"), std::string(data.begin(), data.end()));
    write_header(stem, h);
}

inline std::vector<std::uint8_t> load_u8(const fs::path &stem, std::vector<std::size_t> *shape = nullptr) {
    const auto h = read_header(stem);
    if(h.dtype != "u8") throw std::runtime_error(stem.string() + ": expected dtype u8, found " + h.dtype);
    const auto raw = read_text(payload_path(stem, "u8"));
    if(raw.size() != h.count()) throw std::runtime_error(stem.string() + ": payload size does not match shape");
    if(shape) *shape = h.shape;
    return std::vector<std::uint8_t>(raw.begin(), raw.end());
}

inline void expect_rank(const std::vector<std::size_t> &shape, std::size_t rank, const fs::path &stem) {
    if(shape.size() != rank) throw std::runtime_error(stem.string() + ": expected a rank-" + std::to_string(rank) + " array");
}

// Frames as [L, H, W].
template <class T>
void save_frames(const fs::path &stem, const std::vector<Image<T>> &frames) {
    if(frames.empty()) throw std::invalid_argument("save_frames: no frames");
    std::vector<float> d;
    for(const auto &f : frames) for(auto v : f.data) d.push_back(static_cast<float>(v));
    save_f32(stem, d, {frames.size(), frames.front().height, frames.front().width});
}

inline std::vector<Image<float>> load_frames(const fs::path &stem) {
    std::vector<std::size_t> s;
    const auto d = load_f32(stem, &s);
    expect_rank(s, 3, stem);
    std::vector<Image<float>> out;
    const std::size_t N = s[1] * s[2];
    for(std::size_t i = 0; i < s[0]; ++i){
        out.emplace_back(s[1], s[2], std::vector<float>(d.begin() + static_cast<std::ptrdiff_t>(i * N),
                                                        d.begin() + static_cast<std::ptrdiff_t>((i + 1) * N)));
    }
    return out;
}

template <class T>
void save_image(const fs::path &stem, const Image<T> &img) {
    std::vector<float> d(img.data.begin(), img.data.end());
    save_f32(stem, d, {img.height, img.width});
}

inline Image<float> load_image(const fs::path &stem) {
    std::vector<std::size_t> s;
    auto d = load_f32(stem, &s);
    expect_rank(s, 2, stem);
    return Image<float>(s[0], s[1], std::move(d));
}

// Transforms as [L, 2, H, W]; component 0 = dx, 1 = dy.
template <class T>
void save_transforms(const fs::path &stem, const TransformSet<T> &t) {
    std::vector<float> d;
    d.reserve(t.length() * 2 * t.height() * t.width());
    for(const auto &f : t.fields){
        for(auto v : f.dx) d.push_back(static_cast<float>(v));
        for(auto v : f.dy) d.push_back(static_cast<float>(v));
    }
    save_f32(stem, d, {t.length(), 2, t.height(), t.width()});
}

inline TransformSet<float> load_transforms(const fs::path &stem) {
    std::vector<std::size_t> s;
    const auto d = load_f32(stem, &s);
    expect_rank(s, 4, stem);
    if(s[1] != 2) throw std::runtime_error(stem.string() + ": second dimension must be 2");
    const std::size_t N = s[2] * s[3];
    std::vector<DisplacementField<float>> fields;
    for(std::size_t i = 0; i < s[0]; ++i){
        DisplacementField<float> f(s[2], s[3]);
        std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(2 * i * N), N, f.dx.begin());
        std::copy_n(d.begin() + static_cast<std::ptrdiff_t>((2 * i + 1) * N), N, f.dy.begin());
        fields.push_back(std::move(f));
    }
    return TransformSet<float>(std::move(fields));
}

// Masks as [L, H, W] u8.
inline void save_masks(const fs::path &stem, const std::vector<LabelMask> &masks) {
    if(masks.empty()) throw std::invalid_argument("save_masks: no masks");
    std::vector<std::uint8_t> d;
    for(const auto &m : masks) d.insert(d.end(), m.labels.begin(), m.labels.end());
    save_u8(stem, d, {masks.size(), masks.front().height, masks.front().width});
}

inline std::vector<LabelMask> load_masks(const fs::path &stem) {
    std::vector<std::size_t> s;
    const auto d = load_u8(stem, &s);
    expect_rank(s, 3, stem);
    std::vector<LabelMask> out;
    const std::size_t N = s[1] * s[2];
    for(std::size_t i = 0; i < s[0]; ++i){
        LabelMask m(s[1], s[2]);
        std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(i * N), N, m.labels.begin());
        out.push_back(std::move(m));
    }
    return out;
}

inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const fs::path &p, const std::string &expected_header) {
    std::istringstream in(read_text(p));
    std::string line;
    if(!std::getline(in, line)) throw std::runtime_error(p.string() + ": empty CSV");
    if(!line.empty() && line.back() == '\r') line.pop_back();
    if(line != expected_header) throw std::runtime_error(p.string() + ": expected header '" + expected_header + "'");
    std::vector<std::vector<std::string>> rows;
    while(std::getline(in, line)){
        if(!line.empty() && line.back() == '\r') line.pop_back();
        if(line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while(std::getline(ss, c, ',')) cells.push_back(c);
        rows.push_back(std::move(cells));
    }
    return rows;
}

inline double parse_double(const std::string &s, const fs::path &p) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if(used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch(const std::exception &) {
        throw std::runtime_error(p.string() + ": cannot parse number '" + s + "'");
    }
}

} // namespace detail

inline void save_landmarks(const fs::path &p, const LandmarkSet &lm) {
    std::string out = "frame,x,y\n";
    for(const auto &q : lm.points) out += std::to_string(q.frame_index) + "," + format_g17(q.x) + "," + format_g17(q.y) + "\n";
    write_text(p, out);
}

inline LandmarkSet load_landmarks(const fs::path &p) {
    LandmarkSet lm;
    for(const auto &r : detail::read_csv(p, "frame,x,y")){
        if(r.size() != 3) throw std::runtime_error(p.string() + ": expected three columns");
        lm.points.push_back({static_cast<std::size_t>(detail::parse_double(r[0], p)), detail::parse_double(r[1], p),
                             detail::parse_double(r[2], p)});
    }
    return lm;
}

inline void save_times(const fs::path &p, const std::vector<double> &times) {
    std::string out = "frame,t_ms\n";
    for(std::size_t i = 0; i < times.size(); ++i) out += std::to_string(i) + "," + format_g17(times[i]) + "\n";
    write_text(p, out);
}

inline std::vector<double> load_times(const fs::path &p) {
    std::vector<double> t;
    for(const auto &r : detail::read_csv(p, "frame,t_ms")){
        if(r.size() != 2) throw std::runtime_error(p.string() + ": expected two columns");
        if(static_cast<std::size_t>(detail::parse_double(r[0], p)) != t.size()){
            throw std::runtime_error(p.string() + ": frames must be listed in order");
        }
        t.push_back(detail::parse_double(r[1], p));
    }
    return t;
}

// Pipeline parameters: one flat f32 payload; the sidecar lists each tensor's
// name, shape and offset together with the spec.
template <class T>
void save_params(const fs::path &stem, PipelineParams<T> params) {
    std::vector<float> flat;
    json tensors = json::array();
    params.for_each_tensor([&](const std::string &name, std::vector<T> &v, const std::vector<std::size_t> &shape){
        tensors.push_back({{"name", name}, {"shape", shape}, {"offset", flat.size()}});
        for(auto x : v) flat.push_back(static_cast<float>(x));
    });
    save_f32(stem, flat, {flat.size()});
    auto j = read_json(sidecar_path(stem));
    j["tensors"] = tensors;
    j["spec"] = {{"scales", params.spec.scales}, {"channels", params.spec.channels}, {"seed", params.spec.seed}};
    write_json(sidecar_path(stem), j);
}

template <class T>
PipelineParams<T> load_params(const fs::path &stem) {
    const auto flat = load_f32(stem);
    const auto j = read_json(sidecar_path(stem));
    PipelineSpec spec;
    try {
        spec.scales = j.at("spec").at("scales").get<std::size_t>();
        spec.channels = j.at("spec").at("channels").get<std::size_t>();
        spec.seed = j.at("spec").at("seed").get<std::uint64_t>();
    } catch(const json::exception &e) {
        throw std::runtime_error("bad parameter sidecar: " + std::string(e.what()));
    }
    auto params = init_params<T>(spec);
    std::size_t k = 0;
    const auto &tensors = j.at("tensors");
    params.for_each_tensor([&](const std::string &name, std::vector<T> &v, const std::vector<std::size_t> &shape){
        if(k >= tensors.size() || tensors[k].at("name").get<std::string>() != name ||
           tensors[k].at("shape").get<std::vector<std::size_t>>() != shape){
            throw std::runtime_error("parameter file does not match the pipeline layout at " + name);
        }
        const auto off = tensors[k].at("offset").get<std::size_t>();
        if(off + v.size() > flat.size()) throw std::runtime_error("parameter payload too short");
        for(std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(flat[off + i]);
        ++k;
    });
    return params;
}

} // namespace setreg::io
