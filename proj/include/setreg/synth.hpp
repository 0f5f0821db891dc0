#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "setreg/core.hpp"
#include "setreg/features.hpp"
#include "setreg/qmap.hpp"
#include "setreg/warp.hpp"

namespace setreg {

enum Tissue : std::uint8_t { background = 0, blood = 1, myocardium = 2, band = 3 };

struct TissueT1 {
    double blood = 1800.0;
    double myocardium = 1100.0;
    double band = 600.0;
    double background = 300.0;
};

struct Phantom {
    std::size_t height = 0;
    std::size_t width = 0;
    LabelMask labels;
    Image<double> A, B, T1star;
    std::vector<std::pair<double, double>> landmarks; // (x, y) on the blood/myocardium boundary

    Image<double> signal(double t) const {
        Image<double> out(height, width);
        for(std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = SignalModel{A.data[i], B.data[i], T1star.data[i]}(t);
        return out;
    }
};

namespace detail {

// Gaussian-filtered white noise. The noise is drawn on a grid padded by the
// kernel radius and cropped, so borders carry no replicated-edge artifacts.
inline std::vector<double> smooth_noise(std::size_t h, std::size_t w, double sigma, std::mt19937_64 &rng) {
    std::normal_distribution<double> N(0.0, 1.0);
    const auto k = gaussian_kernel(sigma);
    const std::size_t r = k.size() / 2, H = h + 2 * r, W = w + 2 * r;
    std::vector<double> p(H * W);
    for(auto &v : p) v = N(rng);
    const auto big = convolve_separable(p, H, W, k);
    std::vector<double> out(h * w);
    for(std::size_t y = 0; y < h; ++y)
        for(std::size_t x = 0; x < w; ++x) out[y * w + x] = big[(y + r) * W + x + r];
    return out;
}

inline double max_abs(const std::vector<double> &v) {
    double m = 0;
    for(double x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace detail

// Blood pool disk inside a myocardial annulus, a liver-like band along the
// lower edge, and background. T1* carries a smooth +-15% texture so every
// tissue has internal structure, and its tissue boundaries are slightly blurred.
inline Phantom make_phantom(std::size_t H, std::size_t W, std::uint64_t seed, const TissueT1 &t1 = {}) {
    if(H < 64 || W < 64) throw std::invalid_argument("make_phantom: grid must be at least 64x64");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const double s = static_cast<double>(std::min(H, W));
    const double cx = 0.5 * static_cast<double>(W) + 0.03 * s * U(rng);
    const double cy = 0.45 * static_cast<double>(H) + 0.03 * s * U(rng);
    const double rb = s * (0.13 + 0.01 * U(rng));
    const double rm = s * (0.22 + 0.01 * U(rng));
    const double ecc = 1.0 + 0.08 * U(rng);
    const double band_top = 0.78 * static_cast<double>(H) + 0.02 * s * U(rng);
    const double band_tilt = 0.1 * U(rng);

    Phantom ph;
    ph.height = H;
    ph.width = W;
    ph.labels = LabelMask(H, W);
    for(std::size_t y = 0; y < H; ++y){
        for(std::size_t x = 0; x < W; ++x){
            const double dx = (static_cast<double>(x) - cx) * ecc, dy = (static_cast<double>(y) - cy) / ecc;
            const double r = std::hypot(dx, dy);
            std::uint8_t l = background;
            if(r < rb) l = blood;
            else if(r < rm) l = myocardium;
            else if(static_cast<double>(y) > band_top + band_tilt * (static_cast<double>(x) - cx)) l = band;
            ph.labels.at(x, y) = l;
        }
    }

    const auto tex = detail::smooth_noise(H, W, s / 24.0, rng);
    const double tmax = std::max(detail::max_abs(tex), 1e-12);
    ph.A = Image<double>(H, W, 1.0);
    ph.B = Image<double>(H, W, 2.0);
    ph.T1star = Image<double>(H, W);
    for(std::size_t i = 0; i < H * W; ++i){
        double base = t1.background;
        switch(ph.labels.labels[i]){
            case blood: base = t1.blood; break;
            case myocardium: base = t1.myocardium; break;
            case band: base = t1.band; break;
            default: break;
        }
        ph.T1star.data[i] = base * (1.0 + 0.15 * tex[i] / tmax);
    }
    // partial-volume blur: tissue boundaries become ramps a few pixels wide
    ph.T1star.data = detail::convolve_separable(ph.T1star.data, H, W, detail::gaussian_kernel(s / 128.0));

    // two points where the myocardium meets the blood pool
    for(double ang : {2.2, 3.9}){
        const double rx = rb / ecc, ry = rb * ecc;
        ph.landmarks.emplace_back(cx + rx * std::cos(ang), cy + ry * std::sin(ang));
    }
    return ph;
}

// Gaussian-filtered white-noise vector field scaled to max |u| = max_magnitude.
inline DisplacementField<double> smooth_random_field(std::size_t H, std::size_t W, double max_magnitude,
                                                     double correlation_length, std::uint64_t seed) {
    if(correlation_length < 4.0) throw std::invalid_argument("smooth_random_field: correlation length must be >= 4 px");
    std::mt19937_64 rng(seed);
    DisplacementField<double> f(H, W);
    f.dx = detail::smooth_noise(H, W, correlation_length / 2.0, rng);
    f.dy = detail::smooth_noise(H, W, correlation_length / 2.0, rng);
    const double m = f.max_magnitude();
    const double scale = m > 0 ? max_magnitude / m : 0.0;
    for(auto &v : f.dx) v *= scale;
    for(auto &v : f.dy) v *= scale;
    return f;
}

// Inverse of x -> x + u(x) by fixed-point iteration: v(x) = -u(x + v(x)).
template <class T>
DisplacementField<T> invert_field(const DisplacementField<T> &u, int iterations = 50) {
    DisplacementField<T> v(u.height, u.width);
    for(std::size_t i = 0; i < v.size(); ++i){
        v.dx[i] = -u.dx[i];
        v.dy[i] = -u.dy[i];
    }
    for(int it = 0; it < iterations; ++it){
        for(std::size_t y = 0; y < u.height; ++y){
            for(std::size_t x = 0; x < u.width; ++x){
                const std::size_t i = y * u.width + x;
                const T sx = static_cast<T>(x) + v.dx[i], sy = static_cast<T>(y) + v.dy[i];
                v.dx[i] = -sample_bilinear(u.dx, u.height, u.width, sx, sy);
                v.dy[i] = -sample_bilinear(u.dy, u.height, u.width, sx, sy);
            }
        }
    }
    return v;
}

// Solve q + u(q) = p for q.
template <class T>
std::pair<double, double> pull_point(const DisplacementField<T> &u, double px, double py, int iterations = 50) {
    double qx = px, qy = py;
    for(int it = 0; it < iterations; ++it){
        qx = px - static_cast<double>(sample_bilinear(u.dx, u.height, u.width, static_cast<T>(qx), static_cast<T>(qy)));
        qy = py - static_cast<double>(sample_bilinear(u.dy, u.height, u.width, static_cast<T>(qx), static_cast<T>(qy)));
    }
    return {qx, qy};
}

enum class MotionKind { smooth_random, translation };

struct MotionModel {
    MotionKind kind = MotionKind::smooth_random;
    double max_magnitude = 5.0;       // px
    double correlation_length = 24.0; // px
    std::uint64_t seed = 0;
};

inline std::vector<double> default_times(std::size_t L = 11) {
    if(L < 2) throw std::invalid_argument("default_times: L must be >= 2");
    std::vector<double> t(L);
    for(std::size_t i = 0; i < L; ++i) t[i] = 100.0 + 3000.0 * static_cast<double>(i) / static_cast<double>(L - 1);
    return t;
}

struct SimulatedCase {
    Sequence<double> frames;
    TransformSet<double> motion; // frame_i(x) = clean(x + motion_i(x))
    TransformSet<double> truth;  // per-frame inverse of the motion: the ideal registration output
    std::vector<LabelMask> masks;
    LandmarkSet landmarks;
};

// Contrast first, then per-frame motion, then additive Gaussian noise.
// The motion has zero per-pixel mean over frames and max |u| = max_magnitude
// over the whole group.
inline SimulatedCase simulate_sequence(const Phantom &ph, const std::vector<double> &times, double noise_sigma,
                                       const MotionModel &motion, std::uint64_t seed) {
    if(times.size() < 2) throw std::invalid_argument("simulate_sequence: at least two times are required");
    if(!(noise_sigma >= 0.0)) throw std::invalid_argument("simulate_sequence: noise sigma must be nonnegative");
    const std::size_t L = times.size(), H = ph.height, W = ph.width, N = H * W;
    std::mt19937_64 rng(seed);

    std::vector<DisplacementField<double>> g(L, DisplacementField<double>(H, W));
    if(motion.max_magnitude > 0.0){
        std::mt19937_64 mrng(motion.seed ^ (seed * 0x9E3779B97F4A7C15ULL));
        for(std::size_t i = 0; i < L; ++i){
            if(motion.kind == MotionKind::smooth_random){
                g[i] = smooth_random_field(H, W, 1.0, motion.correlation_length, mrng());
            } else {
                std::normal_distribution<double> Nd(0.0, 1.0);
                const double tx = Nd(mrng), ty = Nd(mrng);
                std::fill(g[i].dx.begin(), g[i].dx.end(), tx);
                std::fill(g[i].dy.begin(), g[i].dy.end(), ty);
            }
        }
        for(std::size_t p = 0; p < N; ++p){
            double mx = 0, my = 0;
            for(const auto &f : g){
                mx += f.dx[p];
                my += f.dy[p];
            }
            mx /= static_cast<double>(L);
            my /= static_cast<double>(L);
            for(auto &f : g){
                f.dx[p] -= mx;
                f.dy[p] -= my;
            }
        }
        double m = 0;
        for(const auto &f : g) m = std::max(m, f.max_magnitude());
        const double scale = m > 0 ? motion.max_magnitude / m : 0.0;
        for(auto &f : g){
            for(auto &v : f.dx) v *= scale;
            for(auto &v : f.dy) v *= scale;
        }
    }

    SimulatedCase out;
    std::normal_distribution<double> noise(0.0, noise_sigma > 0 ? noise_sigma : 1.0);
    std::vector<Image<double>> frames;
    std::vector<FrameMeta> meta;
    for(std::size_t i = 0; i < L; ++i){
        auto f = warp_image(ph.signal(times[i]), g[i]);
        if(noise_sigma > 0) for(auto &v : f.data) v += noise(rng);
        frames.push_back(std::move(f));
        meta.push_back({times[i], "frame" + std::to_string(i)});
        out.masks.push_back(warp_labels(ph.labels, g[i]));
        for(const auto &[lx, ly] : ph.landmarks){
            const auto [qx, qy] = pull_point(g[i], lx, ly);
            out.landmarks.points.push_back({i, qx, qy});
        }
        out.truth.fields.push_back(invert_field(g[i]));
    }
    out.frames = Sequence<double>(std::move(frames), std::move(meta));
    out.motion = TransformSet<double>(std::move(g));
    return out;
}

} // namespace setreg
