#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "setreg/core.hpp"
#include "setreg/setagg.hpp"
#include "setreg/warp.hpp"

namespace setreg {

enum class FeatureKind { none, handcrafted };

inline constexpr std::size_t kHandcraftedChannels = 3;

struct FeatureExtractorSpec {
    FeatureKind kind = FeatureKind::handcrafted;
    std::size_t channels = kHandcraftedChannels; // leading channels of {gradient, local contrast, laplacian}
    std::size_t scale = 1;                       // output grid divisor: 1, 2 or 4

    void validate() const {
        if(channels < 1 || channels > kHandcraftedChannels){
            throw std::invalid_argument("FeatureExtractorSpec: channels must be in [1, 3]");
        }
        if(scale != 1 && scale != 2 && scale != 4){
            throw std::invalid_argument("FeatureExtractorSpec: scale must be 1, 2 or 4");
        }
    }
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double s = 0.0;
    for(int i = -r; i <= r; ++i){
        k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        s += k[static_cast<std::size_t>(i + r)];
    }
    for(double &v : k) v /= s;
    return k;
}

// Separable convolution with border clamping.
inline std::vector<double> convolve_separable(const std::vector<double> &p, std::size_t h, std::size_t w,
                                              const std::vector<double> &k) {
    const long r = static_cast<long>(k.size() / 2);
    std::vector<double> tmp(p.size()), out(p.size());
    const long W = static_cast<long>(w), H = static_cast<long>(h);
    for(long y = 0; y < H; ++y){
        for(long x = 0; x < W; ++x){
            double s = 0.0;
            for(long i = -r; i <= r; ++i){
                const long xx = std::clamp(x + i, 0L, W - 1);
                s += k[static_cast<std::size_t>(i + r)] * p[static_cast<std::size_t>(y * W + xx)];
            }
            tmp[static_cast<std::size_t>(y * W + x)] = s;
        }
    }
    for(long y = 0; y < H; ++y){
        for(long x = 0; x < W; ++x){
            double s = 0.0;
            for(long i = -r; i <= r; ++i){
                const long yy = std::clamp(y + i, 0L, H - 1);
                s += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(yy * W + x)];
            }
            out[static_cast<std::size_t>(y * W + x)] = s;
        }
    }
    return out;
}

// Box mean over a (2r+1)^2 window, truncated at the image border.
inline std::vector<double> box_mean(const std::vector<double> &p, std::size_t h, std::size_t w, std::size_t r) {
    std::vector<double> integral((h + 1) * (w + 1), 0.0);
    for(std::size_t y = 0; y < h; ++y){
        double row = 0.0;
        for(std::size_t x = 0; x < w; ++x){
            row += p[y * w + x];
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    std::vector<double> out(h * w);
    for(std::size_t y = 0; y < h; ++y){
        const std::size_t y0 = y >= r ? y - r : 0, y1 = std::min(h, y + r + 1);
        for(std::size_t x = 0; x < w; ++x){
            const std::size_t x0 = x >= r ? x - r : 0, x1 = std::min(w, x + r + 1);
            const double s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                           - integral[y1 * (w + 1) + x0] + integral[y0 * (w + 1) + x0];
            out[y * w + x] = s / static_cast<double>((y1 - y0) * (x1 - x0));
        }
    }
    return out;
}

inline void minmax_normalize(std::vector<double> &p) {
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    const double mn = *lo, range = *hi - *lo;
    if(!(range > 0.0)){
        std::fill(p.begin(), p.end(), 0.0);
        return;
    }
    for(double &v : p) v = std::clamp((v - mn) / range, 0.0, 1.0);
}

inline std::vector<double> gradient_magnitude(const std::vector<double> &p, std::size_t h, std::size_t w) {
    std::vector<double> out(h * w);
    for(std::size_t y = 0; y < h; ++y){
        for(std::size_t x = 0; x < w; ++x){
            const std::size_t xl = x > 0 ? x - 1 : 0, xr = std::min(x + 1, w - 1);
            const std::size_t yu = y > 0 ? y - 1 : 0, yd = std::min(y + 1, h - 1);
            const double gx = (p[y * w + xr] - p[y * w + xl]) / static_cast<double>(std::max<std::size_t>(xr - xl, 1));
            const double gy = (p[yd * w + x] - p[yu * w + x]) / static_cast<double>(std::max<std::size_t>(yd - yu, 1));
            out[y * w + x] = std::sqrt(gx * gx + gy * gy);
        }
    }
    return out;
}

inline std::vector<double> laplacian_magnitude(const std::vector<double> &p, std::size_t h, std::size_t w) {
    std::vector<double> out(h * w);
    for(std::size_t y = 0; y < h; ++y){
        for(std::size_t x = 0; x < w; ++x){
            const std::size_t xl = x > 0 ? x - 1 : 0, xr = std::min(x + 1, w - 1);
            const std::size_t yu = y > 0 ? y - 1 : 0, yd = std::min(y + 1, h - 1);
            const double c = p[y * w + x];
            out[y * w + x] = std::abs(p[y * w + xl] + p[y * w + xr] + p[yu * w + x] + p[yd * w + x] - 4.0 * c);
        }
    }
    return out;
}

} // namespace detail

// Contrast-insensitive channels: gradient magnitude of the sigma=1 smoothed
// frame, locally contrast-normalized intensity (15 px window), and Laplacian
// magnitude. Each channel is min-max normalized, then pooled by spec.scale.
template <class T>
FeatureMap<T> extract_features(const Image<T> &img, const FeatureExtractorSpec &spec) {
    if(spec.kind != FeatureKind::handcrafted){
        throw std::invalid_argument("extract_features: unsupported feature extractor kind");
    }
    spec.validate();
    const std::size_t h = img.height, w = img.width;
    if(h % spec.scale != 0 || w % spec.scale != 0){
        throw std::invalid_argument("extract_features: grid not divisible by scale");
    }
    std::vector<double> raw(img.data.begin(), img.data.end());
    const auto smooth = detail::convolve_separable(raw, h, w, detail::gaussian_kernel(1.0));

    std::vector<std::vector<double>> chans;
    chans.push_back(detail::gradient_magnitude(smooth, h, w));
    if(spec.channels >= 2){
        const auto mu = detail::box_mean(raw, h, w, 7);
        std::vector<double> sq(raw.size());
        for(std::size_t i = 0; i < raw.size(); ++i) sq[i] = raw[i] * raw[i];
        const auto mu2 = detail::box_mean(sq, h, w, 7);
        std::vector<double> lcn(raw.size());
        for(std::size_t i = 0; i < raw.size(); ++i){
            const double sd = std::sqrt(std::max(0.0, mu2[i] - mu[i] * mu[i]));
            lcn[i] = (raw[i] - mu[i]) / (sd + 1e-3);
        }
        chans.push_back(std::move(lcn));
    }
    if(spec.channels >= 3){
        chans.push_back(detail::laplacian_magnitude(smooth, h, w));
    }

    const std::size_t H = h / spec.scale, W = w / spec.scale;
    FeatureMap<T> out(spec.channels, H, W);
    for(std::size_t c = 0; c < spec.channels; ++c){
        detail::minmax_normalize(chans[c]);
        std::vector<double> pooled = spec.scale == 1 ? chans[c] : pool_plane(chans[c], h, w, spec.scale);
        auto dst = out.channel(c);
        for(std::size_t i = 0; i < pooled.size(); ++i) dst[i] = static_cast<T>(pooled[i]);
    }
    return out;
}

template <class T>
FeatureSet<T> extract_feature_set(const Sequence<T> &seq, const FeatureExtractorSpec &spec) {
    seq.validate();
    std::vector<FeatureMap<T>> items;
    items.reserve(seq.length());
    for(const auto &f : seq.frames) items.push_back(extract_features(f, spec));
    return FeatureSet<T>(std::move(items));
}

} // namespace setreg
