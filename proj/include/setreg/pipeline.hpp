#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "setreg/core.hpp"
#include "setreg/parallel.hpp"
#include "setreg/setagg.hpp"
#include "setreg/warp.hpp"

namespace setreg {

struct PipelineSpec {
    std::size_t scales = 4;
    std::size_t channels = 16;
    std::uint64_t seed = 0;

    void validate() const {
        if(scales < 1) throw std::invalid_argument("PipelineSpec: scales must be >= 1");
        if(channels < 1) throw std::invalid_argument("PipelineSpec: channels must be >= 1");
    }

    bool operator==(const PipelineSpec &) const = default;
};

// 3x3 convolution, zero padding, weights indexed [out][in][ky][kx].
template <class T>
struct Conv3x3 {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<T> weight;
    std::vector<T> bias;

    Conv3x3() = default;
    Conv3x3(std::size_t i, std::size_t o) : in(i), out(o), weight(o * i * 9, T(0)), bias(o, T(0)) {}

    void init_uniform(std::mt19937_64 &rng) {
        const double s = 1.0 / std::sqrt(static_cast<double>(in * 9));
        std::uniform_real_distribution<double> U(-s, s);
        for(auto &v : weight) v = static_cast<T>(U(rng));
        for(auto &v : bias) v = static_cast<T>(U(rng));
    }

    bool operator==(const Conv3x3 &) const = default;
};

// One shared parameter set per scale: encoder, context update, decoder head.
template <class T>
struct ScaleParams {
    Conv3x3<T> encoder;  // 1 -> C
    Conv3x3<T> update;   // [z, T] (2C) -> C, feeds the next coarser scale
    Conv3x3<T> hidden;   // [z, T] (2C) -> C
    Conv3x3<T> head;     // C -> 2 incremental displacement components

    bool operator==(const ScaleParams &) const = default;
};

template <class T>
struct PipelineParams {
    PipelineSpec spec;
    std::vector<ScaleParams<T>> scales; // index 0 = finest

    bool operator==(const PipelineParams &) const = default;

    // Every tensor with a stable name, for serialization.
    template <class Fn>
    void for_each_tensor(Fn &&fn) {
        for(std::size_t k = 0; k < scales.size(); ++k){
            const std::string p = "scale" + std::to_string(k + 1) + ".";
            auto &s = scales[k];
            for(auto [name, conv] : {std::pair<const char *, Conv3x3<T> *>{"encoder", &s.encoder}, {"update", &s.update},
                                     {"hidden", &s.hidden}, {"head", &s.head}}){
                fn(p + name + ".weight", conv->weight, std::vector<std::size_t>{conv->out, conv->in, 3, 3});
                fn(p + name + ".bias", conv->bias, std::vector<std::size_t>{conv->out});
            }
        }
    }
};

// Deterministic uniform(+-1/sqrt(fan_in)) initialization. The displacement head
// starts at zero, so fresh parameters emit zero fields, unless random_head.
template <class T>
PipelineParams<T> init_params(const PipelineSpec &spec, bool random_head = false) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    PipelineParams<T> p;
    p.spec = spec;
    const std::size_t C = spec.channels;
    for(std::size_t k = 0; k < spec.scales; ++k){
        ScaleParams<T> s{Conv3x3<T>(1, C), Conv3x3<T>(2 * C, C), Conv3x3<T>(2 * C, C), Conv3x3<T>(C, 2)};
        s.encoder.init_uniform(rng);
        s.update.init_uniform(rng);
        s.hidden.init_uniform(rng);
        if(random_head) s.head.init_uniform(rng);
        p.scales.push_back(std::move(s));
    }
    return p;
}

namespace detail {

template <class T>
std::vector<T> conv3x3(const Conv3x3<T> &c, const std::vector<T> &x, std::size_t h, std::size_t w) {
    if(x.size() != c.in * h * w) throw std::invalid_argument("conv3x3: input shape mismatch");
    const std::size_t N = h * w;
    std::vector<double> acc(c.out * N, 0.0);
    for(std::size_t o = 0; o < c.out; ++o){
        double *dst = acc.data() + o * N;
        std::fill(dst, dst + N, static_cast<double>(c.bias[o]));
        for(std::size_t i = 0; i < c.in; ++i){
            const T *src = x.data() + i * N;
            const T *k = c.weight.data() + (o * c.in + i) * 9;
            for(int dy = -1; dy <= 1; ++dy){
                for(int dx = -1; dx <= 1; ++dx){
                    const double kv = k[(dy + 1) * 3 + (dx + 1)];
                    if(kv == 0.0) continue;
                    const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
                    const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
                    for(std::size_t y = y0; y < y1; ++y){
                        const T *srow = src + static_cast<std::size_t>(static_cast<long>(y) + dy) * w;
                        double *drow = dst + y * w;
                        for(std::size_t xx = x0; xx < x1; ++xx){
                            drow[xx] += kv * srow[static_cast<std::size_t>(static_cast<long>(xx) + dx)];
                        }
                    }
                }
            }
        }
    }
    std::vector<T> out(acc.size());
    for(std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i]);
    return out;
}

template <class T>
void leaky_relu(std::vector<T> &v, T slope = T(0.2)) {
    for(auto &x : v) if(x < T(0)) x *= slope;
}

template <class T>
std::vector<T> pool_channels(const std::vector<T> &x, std::size_t c, std::size_t h, std::size_t w, std::size_t f) {
    if(f == 1) return x;
    std::vector<T> out;
    out.reserve(x.size() / (f * f));
    for(std::size_t k = 0; k < c; ++k){
        const std::vector<T> plane(x.begin() + static_cast<std::ptrdiff_t>(k * h * w),
                                   x.begin() + static_cast<std::ptrdiff_t>((k + 1) * h * w));
        const auto p = pool_plane(plane, h, w, f);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

template <class T>
std::vector<T> concat(const std::vector<T> &a, const std::vector<T> &b) {
    std::vector<T> out(a);
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

} // namespace detail

// z_i^(k): LeakyReLU(conv(avgpool(img, 2^(k-1)))), C x H/2^(k-1) x W/2^(k-1).
// k is 1-based (1 = finest).
template <class T>
FeatureMap<T> encode_frame(const Image<T> &img, const PipelineParams<T> &params, std::size_t k) {
    if(k < 1 || k > params.scales.size()) throw std::invalid_argument("encode_frame: scale index out of range");
    const std::size_t f = std::size_t{1} << (k - 1);
    if(img.height % f != 0 || img.width % f != 0) throw std::invalid_argument("encode_frame: grid not divisible by the scale factor");
    const auto pooled = downsample_image(img, f);
    const auto &enc = params.scales[k - 1].encoder;
    FeatureMap<T> z(enc.out, pooled.height, pooled.width);
    z.data = detail::conv3x3(enc, pooled.data, pooled.height, pooled.width);
    detail::leaky_relu(z.data);
    return z;
}

// Encoder pass fine -> coarse with the broadcast canonical context injected at
// each scale, then a shared decoder coarse -> fine whose incremental fields
// compose as u = acc(x) + inc(x + acc(x)).
template <class T>
TransformSet<T> forward(const Sequence<T> &input, const PipelineParams<T> &params, std::size_t threads = 1) {
    input.validate();
    const auto &spec = params.spec;
    spec.validate();
    if(params.scales.size() != spec.scales) throw std::invalid_argument("forward: parameter scale count mismatch");
    const std::size_t K = spec.scales, L = input.length(), H = input.height(), W = input.width();
    const std::size_t top = std::size_t{1} << (K - 1);
    if(H % top != 0 || W % top != 0) throw std::invalid_argument("forward: image dimensions must be divisible by 2^(K-1)");
    const auto seq = normalize_sequence(input);
    const std::size_t C = spec.channels;

    std::vector<std::vector<FeatureMap<T>>> z(K);
    std::vector<FeatureMap<T>> tpl(K);
    for(std::size_t k = 1; k <= K; ++k){
        std::vector<FeatureMap<T>> zk(L);
        parallel_for(L, threads, [&](std::size_t i){
            zk[i] = encode_frame(seq.frames[i], params, k);
            if(k > 1){
                // context update from the finer scale, downsampled by 2
                const auto &prev = z[k - 2][i];
                const auto &t = tpl[k - 2];
                auto u = detail::conv3x3(params.scales[k - 2].update, detail::concat(prev.data, t.data), prev.height, prev.width);
                detail::leaky_relu(u);
                const auto d = detail::pool_channels(u, C, prev.height, prev.width, 2);
                for(std::size_t j = 0; j < d.size(); ++j) zk[i].data[j] += d[j];
            }
        });
        auto t = correlation_template(FeatureSet<T>(zk)).first;
        z[k - 1] = std::move(zk);
        tpl[k - 1] = t;
    }

    std::vector<DisplacementField<T>> acc;
    for(std::size_t k = K; k >= 1; --k){
        const std::size_t h = H >> (k - 1), w = W >> (k - 1);
        if(acc.empty()) acc.assign(L, DisplacementField<T>(h, w));
        else parallel_for(L, threads, [&](std::size_t i){ acc[i] = upsample_field(acc[i], 2); });
        const auto &sp = params.scales[k - 1];
        const auto &t = tpl[k - 1];
        parallel_for(L, threads, [&](std::size_t i){
            auto hdn = detail::conv3x3(sp.hidden, detail::concat(z[k - 1][i].data, t.data), h, w);
            detail::leaky_relu(hdn);
            const auto phi = detail::conv3x3(sp.head, hdn, h, w);
            DisplacementField<T> inc(h, w);
            std::copy(phi.begin(), phi.begin() + static_cast<std::ptrdiff_t>(h * w), inc.dx.begin());
            std::copy(phi.begin() + static_cast<std::ptrdiff_t>(h * w), phi.end(), inc.dy.begin());
            acc[i] = compose(inc, acc[i]);
        });
    }
    return TransformSet<T>(std::move(acc));
}

} // namespace setreg
