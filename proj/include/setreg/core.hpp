#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace setreg {

// Grid convention: pixel centers sit at integer coordinates, x = column, y = row,
// origin top-left. Displacements are in pixels of the grid they live on.

template <class T>
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> data;

    Image() = default;
    Image(std::size_t h, std::size_t w, T fill = T(0)) : height(h), width(w), data(h * w, fill) {}
    Image(std::size_t h, std::size_t w, std::vector<T> values) : height(h), width(w), data(std::move(values)) {
        if(data.size() != h * w){
            throw std::invalid_argument("Image data length does not match height*width");
        }
    }

    std::size_t size() const { return data.size(); }
    T &at(std::size_t x, std::size_t y) { return data[y * width + x]; }
    const T &at(std::size_t x, std::size_t y) const { return data[y * width + x]; }

    bool same_grid(std::size_t h, std::size_t w) const { return height == h && width == w; }
    template <class U>
    bool same_grid(const Image<U> &o) const { return height == o.height && width == o.width; }

    template <class U>
    Image<U> cast() const {
        Image<U> out(height, width);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v){ return static_cast<U>(v); });
        return out;
    }

    bool operator==(const Image &) const = default;
};

struct FrameMeta {
    double acquisition_time_ms = 0.0;
    std::string label;

    bool operator==(const FrameMeta &) const = default;
};

// An unordered set of L >= 2 frames on one grid. The stored order is only a
// labelling; every algorithm in this library treats it as a set.
template <class T>
struct Sequence {
    std::vector<Image<T>> frames;
    std::vector<FrameMeta> meta; // empty, or exactly one entry per frame

    Sequence() = default;
    explicit Sequence(std::vector<Image<T>> f, std::vector<FrameMeta> m = {}) : frames(std::move(f)), meta(std::move(m)) {
        validate();
    }

    void validate() const {
        if(frames.size() < 2){
            throw std::invalid_argument("Sequence requires at least two frames");
        }
        for(const auto &f : frames){
            if(!f.same_grid(frames.front())){
                throw std::invalid_argument("Sequence frames do not share one grid");
            }
        }
        if(!meta.empty() && meta.size() != frames.size()){
            throw std::invalid_argument("Sequence metadata must have one entry per frame");
        }
    }

    std::size_t length() const { return frames.size(); }
    std::size_t height() const { return frames.empty() ? 0 : frames.front().height; }
    std::size_t width() const { return frames.empty() ? 0 : frames.front().width; }

    std::vector<double> times() const {
        std::vector<double> t;
        t.reserve(meta.size());
        for(const auto &m : meta) t.push_back(m.acquisition_time_ms);
        return t;
    }

    bool operator==(const Sequence &) const = default;
};

// phi(x) = x + u(x), components stored as two planes.
template <class T>
struct DisplacementField {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> dx;
    std::vector<T> dy;

    DisplacementField() = default;
    DisplacementField(std::size_t h, std::size_t w) : height(h), width(w), dx(h * w, T(0)), dy(h * w, T(0)) {}

    std::size_t size() const { return dx.size(); }
    bool same_grid(std::size_t h, std::size_t w) const { return height == h && width == w; }
    template <class U>
    bool same_grid(const Image<U> &o) const { return height == o.height && width == o.width; }
    template <class U>
    bool same_grid(const DisplacementField<U> &o) const { return height == o.height && width == o.width; }

    T max_magnitude() const {
        T m = 0;
        for(std::size_t i = 0; i < dx.size(); ++i){
            m = std::max(m, static_cast<T>(std::hypot(dx[i], dy[i])));
        }
        return m;
    }

    template <class U>
    DisplacementField<U> cast() const {
        DisplacementField<U> out(height, width);
        for(std::size_t i = 0; i < dx.size(); ++i){
            out.dx[i] = static_cast<U>(dx[i]);
            out.dy[i] = static_cast<U>(dy[i]);
        }
        return out;
    }

    bool operator==(const DisplacementField &) const = default;
};

template <class T>
struct TransformSet {
    std::vector<DisplacementField<T>> fields;

    TransformSet() = default;
    explicit TransformSet(std::vector<DisplacementField<T>> f) : fields(std::move(f)) {
        for(const auto &u : fields){
            if(!u.same_grid(fields.front())){
                throw std::invalid_argument("TransformSet fields do not share one grid");
            }
        }
    }
    static TransformSet zeros(std::size_t L, std::size_t h, std::size_t w) {
        return TransformSet(std::vector<DisplacementField<T>>(L, DisplacementField<T>(h, w)));
    }

    std::size_t length() const { return fields.size(); }
    std::size_t height() const { return fields.empty() ? 0 : fields.front().height; }
    std::size_t width() const { return fields.empty() ? 0 : fields.front().width; }

    template <class U>
    TransformSet<U> cast() const {
        TransformSet<U> out;
        for(const auto &f : fields) out.fields.push_back(f.template cast<U>());
        return out;
    }

    bool operator==(const TransformSet &) const = default;
};

// Zero-based bijection. Applying p to a list yields out[i] = in[p(i)].
class Permutation {
  public:
    Permutation() = default;
    explicit Permutation(std::vector<std::size_t> mapping) : map_(std::move(mapping)) {
        std::vector<bool> seen(map_.size(), false);
        for(auto j : map_){
            if(j >= map_.size() || seen[j]){
                throw std::invalid_argument("Permutation mapping is not a bijection");
            }
            seen[j] = true;
        }
    }

    static Permutation identity(std::size_t n) {
        std::vector<std::size_t> m(n);
        std::iota(m.begin(), m.end(), std::size_t{0});
        return Permutation(std::move(m));
    }

    std::size_t size() const { return map_.size(); }
    std::size_t operator()(std::size_t i) const { return map_.at(i); }
    const std::vector<std::size_t> &mapping() const { return map_; }

    Permutation inverse() const {
        std::vector<std::size_t> inv(map_.size());
        for(std::size_t i = 0; i < map_.size(); ++i) inv[map_[i]] = i;
        return Permutation(std::move(inv));
    }

    // Permutation equivalent to applying `first` and then `second`:
    // apply(apply(x, first), second) == apply(x, then(first, second)).
    static Permutation then(const Permutation &first, const Permutation &second) {
        if(first.size() != second.size()){
            throw std::invalid_argument("Cannot chain permutations of different lengths");
        }
        std::vector<std::size_t> m(first.size());
        for(std::size_t i = 0; i < m.size(); ++i) m[i] = first(second(i));
        return Permutation(std::move(m));
    }

    template <class V>
    std::vector<V> apply(const std::vector<V> &in) const {
        if(in.size() != map_.size()){
            throw std::invalid_argument("Permutation length does not match the permuted list");
        }
        std::vector<V> out;
        out.reserve(in.size());
        for(auto j : map_) out.push_back(in[j]);
        return out;
    }

    bool operator==(const Permutation &) const = default;

  private:
    std::vector<std::size_t> map_;
};

struct LabelMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> labels; // 0 = background

    LabelMask() = default;
    LabelMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

    std::uint8_t &at(std::size_t x, std::size_t y) { return labels[y * width + x]; }
    std::uint8_t at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
    std::size_t count(std::uint8_t label) const {
        return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
    }

    bool operator==(const LabelMask &) const = default;
};

struct Landmark {
    std::size_t frame_index = 0;
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Landmark &) const = default;
};

// Within a frame, the k-th listed point corresponds to the k-th point of every other frame.
struct LandmarkSet {
    std::vector<Landmark> points;

    std::vector<Landmark> for_frame(std::size_t frame) const {
        std::vector<Landmark> out;
        for(const auto &p : points) if(p.frame_index == frame) out.push_back(p);
        return out;
    }

    bool operator==(const LandmarkSet &) const = default;
};

template <class T>
Sequence<T> permute_sequence(const Sequence<T> &seq, const Permutation &p) {
    if(p.size() != seq.length()){
        throw std::invalid_argument("Permutation length does not match sequence length");
    }
    Sequence<T> out;
    out.frames = p.apply(seq.frames);
    if(!seq.meta.empty()) out.meta = p.apply(seq.meta);
    return out;
}

template <class T>
TransformSet<T> permute_transforms(const TransformSet<T> &t, const Permutation &p) {
    if(p.size() != t.length()){
        throw std::invalid_argument("Permutation length does not match transform count");
    }
    return TransformSet<T>(p.apply(t.fields));
}

// Per-frame min-max to [0,1]; a constant image maps to zeros.
template <class T>
Image<T> normalize_intensity(const Image<T> &img) {
    if(img.data.empty()){
        throw std::invalid_argument("Cannot normalize an empty image");
    }
    for(auto v : img.data){
        if(!std::isfinite(v)) throw std::invalid_argument("Image contains non-finite values");
    }
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    const T mn = *lo;
    const T range = *hi - *lo;
    Image<T> out(img.height, img.width);
    if(!(range > T(0))) return out;
    for(std::size_t i = 0; i < img.data.size(); ++i){
        out.data[i] = std::clamp((img.data[i] - mn) / range, T(0), T(1));
    }
    return out;
}

template <class T>
Sequence<T> normalize_sequence(const Sequence<T> &seq) {
    Sequence<T> out = seq;
    for(auto &f : out.frames) f = normalize_intensity(f);
    return out;
}

} // namespace setreg
