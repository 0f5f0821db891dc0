#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "setreg/core.hpp"

namespace setreg {

template <class T>
struct SampleGrad {
    T value;
    T ddx;
    T ddy;
};

namespace detail {

template <class T>
inline void bilinear_setup(T x, std::size_t n, std::size_t &i0, std::size_t &i1, T &f, bool &clamped) {
    const T hi = static_cast<T>(n - 1);
    clamped = false;
    if(!(x > T(0))){
        clamped = x < T(0);
        x = T(0);
    } else if(x >= hi){
        clamped = x > hi;
        x = hi;
    }
    const T fl = std::floor(x);
    i0 = static_cast<std::size_t>(fl);
    i1 = std::min(i0 + 1, n - 1);
    f = x - fl;
}

} // namespace detail

// Bilinear sample of a row-major plane with border clamping.
template <class T>
T sample_bilinear(const std::vector<T> &plane, std::size_t h, std::size_t w, T x, T y) {
    std::size_t x0, x1, y0, y1;
    T fx, fy;
    bool cx, cy;
    detail::bilinear_setup(x, w, x0, x1, fx, cx);
    detail::bilinear_setup(y, h, y0, y1, fy, cy);
    const T v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
    const T v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
    const T top = v00 * (T(1) - fx) + v01 * fx;
    const T bot = v10 * (T(1) - fx) + v11 * fx;
    return top * (T(1) - fy) + bot * fy;
}

// Value plus its derivative with respect to the sample position. The
// derivative is zero along an axis where the position was clamped.
template <class T>
SampleGrad<T> sample_bilinear_grad(const std::vector<T> &plane, std::size_t h, std::size_t w, T x, T y) {
    std::size_t x0, x1, y0, y1;
    T fx, fy;
    bool cx, cy;
    detail::bilinear_setup(x, w, x0, x1, fx, cx);
    detail::bilinear_setup(y, h, y0, y1, fy, cy);
    const T v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
    const T v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
    const T top = v00 * (T(1) - fx) + v01 * fx;
    const T bot = v10 * (T(1) - fx) + v11 * fx;
    SampleGrad<T> g;
    g.value = top * (T(1) - fy) + bot * fy;
    g.ddx = cx ? T(0) : ((v01 - v00) * (T(1) - fy) + (v11 - v10) * fy);
    g.ddy = cy ? T(0) : (bot - top);
    return g;
}

template <class T>
T sample_bilinear(const Image<T> &img, T x, T y) {
    return sample_bilinear(img.data, img.height, img.width, x, y);
}

// out(x) = img(x + u(x))
template <class T>
Image<T> warp_image(const Image<T> &img, const DisplacementField<T> &field) {
    if(!field.same_grid(img)){
        throw std::invalid_argument("warp_image: image and field grids differ");
    }
    Image<T> out(img.height, img.width);
    for(std::size_t y = 0; y < img.height; ++y){
        for(std::size_t x = 0; x < img.width; ++x){
            const std::size_t i = y * img.width + x;
            out.data[i] = sample_bilinear(img.data, img.height, img.width,
                                          static_cast<T>(x) + field.dx[i], static_cast<T>(y) + field.dy[i]);
        }
    }
    return out;
}

// Nearest-neighbour label resampling for masks; positions clamp to the border.
template <class T>
LabelMask warp_labels(const LabelMask &mask, const DisplacementField<T> &field) {
    if(!field.same_grid(mask.height, mask.width)){
        throw std::invalid_argument("warp_labels: mask and field grids differ");
    }
    LabelMask out(mask.height, mask.width);
    const double xmax = static_cast<double>(mask.width - 1);
    const double ymax = static_cast<double>(mask.height - 1);
    for(std::size_t y = 0; y < mask.height; ++y){
        for(std::size_t x = 0; x < mask.width; ++x){
            const std::size_t i = y * mask.width + x;
            const double sx = std::clamp(std::round(static_cast<double>(x) + field.dx[i]), 0.0, xmax);
            const double sy = std::clamp(std::round(static_cast<double>(y) + field.dy[i]), 0.0, ymax);
            out.labels[i] = mask.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy));
        }
    }
    return out;
}

// Returns the field of outer∘inner: u(x) = u_inner(x) + u_outer(x + u_inner(x)).
template <class T>
DisplacementField<T> compose(const DisplacementField<T> &outer, const DisplacementField<T> &inner) {
    if(!outer.same_grid(inner)){
        throw std::invalid_argument("compose: field grids differ");
    }
    DisplacementField<T> out(inner.height, inner.width);
    for(std::size_t y = 0; y < inner.height; ++y){
        for(std::size_t x = 0; x < inner.width; ++x){
            const std::size_t i = y * inner.width + x;
            const T sx = static_cast<T>(x) + inner.dx[i];
            const T sy = static_cast<T>(y) + inner.dy[i];
            out.dx[i] = inner.dx[i] + sample_bilinear(outer.dx, outer.height, outer.width, sx, sy);
            out.dy[i] = inner.dy[i] + sample_bilinear(outer.dy, outer.height, outer.width, sx, sy);
        }
    }
    return out;
}

// Output pixel centre j maps to input coordinate (j + 0.5)/factor - 0.5.
// Displacement values are multiplied by factor to stay in output-grid pixels.
template <class T>
DisplacementField<T> upsample_field(const DisplacementField<T> &field, std::size_t factor) {
    if(factor < 1){
        throw std::invalid_argument("upsample_field: factor must be >= 1");
    }
    if(factor == 1) return field;
    const std::size_t H = field.height * factor, W = field.width * factor;
    DisplacementField<T> out(H, W);
    const T f = static_cast<T>(factor);
    for(std::size_t y = 0; y < H; ++y){
        const T sy = (static_cast<T>(y) + T(0.5)) / f - T(0.5);
        for(std::size_t x = 0; x < W; ++x){
            const T sx = (static_cast<T>(x) + T(0.5)) / f - T(0.5);
            out.dx[y * W + x] = f * sample_bilinear(field.dx, field.height, field.width, sx, sy);
            out.dy[y * W + x] = f * sample_bilinear(field.dy, field.height, field.width, sx, sy);
        }
    }
    return out;
}

// Average pooling by an integer factor that divides both dimensions.
template <class T>
std::vector<T> pool_plane(const std::vector<T> &plane, std::size_t h, std::size_t w, std::size_t factor) {
    if(factor == 0 || h % factor != 0 || w % factor != 0){
        throw std::invalid_argument("pool: grid is not divisible by the pooling factor");
    }
    const std::size_t H = h / factor, W = w / factor;
    std::vector<T> out(H * W, T(0));
    const T norm = T(1) / static_cast<T>(factor * factor);
    for(std::size_t y = 0; y < H; ++y){
        for(std::size_t x = 0; x < W; ++x){
            T acc = 0;
            for(std::size_t dy = 0; dy < factor; ++dy){
                for(std::size_t dx = 0; dx < factor; ++dx){
                    acc += plane[(y * factor + dy) * w + (x * factor + dx)];
                }
            }
            out[y * W + x] = acc * norm;
        }
    }
    return out;
}

template <class T>
Image<T> downsample_image(const Image<T> &img, std::size_t factor) {
    if(factor == 1) return img;
    return Image<T>(img.height / factor, img.width / factor, pool_plane(img.data, img.height, img.width, factor));
}

template <class T>
DisplacementField<T> downsample_field(const DisplacementField<T> &field, std::size_t factor) {
    if(factor == 1) return field;
    DisplacementField<T> out;
    out.height = field.height / factor;
    out.width = field.width / factor;
    out.dx = pool_plane(field.dx, field.height, field.width, factor);
    out.dy = pool_plane(field.dy, field.height, field.width, factor);
    const T inv = T(1) / static_cast<T>(factor);
    for(auto &v : out.dx) v *= inv;
    for(auto &v : out.dy) v *= inv;
    return out;
}

// det(I + grad u); central differences inside, one-sided on the border ring.
template <class T>
Image<T> jacobian_det(const DisplacementField<T> &field) {
    const std::size_t h = field.height, w = field.width;
    if(h < 3 || w < 3){
        throw std::invalid_argument("jacobian_det: grid must be at least 3x3");
    }
    auto d_dx = [&](const std::vector<T> &p, std::size_t x, std::size_t y) -> T {
        if(x == 0) return p[y * w + 1] - p[y * w];
        if(x == w - 1) return p[y * w + x] - p[y * w + x - 1];
        return (p[y * w + x + 1] - p[y * w + x - 1]) * T(0.5);
    };
    auto d_dy = [&](const std::vector<T> &p, std::size_t x, std::size_t y) -> T {
        if(y == 0) return p[w + x] - p[x];
        if(y == h - 1) return p[y * w + x] - p[(y - 1) * w + x];
        return (p[(y + 1) * w + x] - p[(y - 1) * w + x]) * T(0.5);
    };
    Image<T> out(h, w);
    for(std::size_t y = 0; y < h; ++y){
        for(std::size_t x = 0; x < w; ++x){
            const T a = T(1) + d_dx(field.dx, x, y);
            const T b = d_dy(field.dx, x, y);
            const T c = d_dx(field.dy, x, y);
            const T d = T(1) + d_dy(field.dy, x, y);
            out.at(x, y) = a * d - b * c;
        }
    }
    return out;
}

template <class T>
Sequence<T> warp_sequence(const Sequence<T> &seq, const TransformSet<T> &t) {
    if(t.length() != seq.length()){
        throw std::invalid_argument("warp_sequence: transform count does not match sequence length");
    }
    Sequence<T> out;
    out.meta = seq.meta;
    for(std::size_t i = 0; i < seq.length(); ++i) out.frames.push_back(warp_image(seq.frames[i], t.fields[i]));
    return out;
}

} // namespace setreg
