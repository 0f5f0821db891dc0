#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "setreg/core.hpp"
#include "setreg/parallel.hpp"
#include "setreg/setagg.hpp"
#include "setreg/warp.hpp"

namespace setreg {

struct HistogramConfig {
    std::size_t bins = 32;
    double kernel_sigma = 1.0; // in bin widths; the intensity range is fixed to [0,1]

    void validate() const {
        if(bins < 8) throw std::invalid_argument("HistogramConfig: bins must be >= 8");
        if(!(kernel_sigma > 0.0) || kernel_sigma > 4.0){
            throw std::invalid_argument("HistogramConfig: kernel_sigma must be in (0, 4]");
        }
        if(static_cast<double>(bins) - 1.0 - 6.0 * kernel_sigma < 1.0){
            throw std::invalid_argument("HistogramConfig: too few bins for the kernel width");
        }
    }
};

struct LossWeights {
    double lambda_f = 0.5;
    double lambda_s = 10.0;
    double lambda_c = 0.05;

    void validate() const {
        for(double v : {lambda_f, lambda_s, lambda_c}){
            if(!std::isfinite(v) || v < 0.0) throw std::invalid_argument("LossWeights must be finite and nonnegative");
        }
    }
};

template <class T>
struct LossBreakdown {
    double cte_image = 0.0;
    double cte_feature = 0.0;
    double smooth = 0.0;
    double cyclic = 0.0;
    double total = 0.0;
    std::vector<DisplacementField<T>> grad; // d total / d u_i, one field per frame
};

// Kernel taps of one intensity value: weights over consecutive bins, normalized
// to sum 1, and their derivatives with respect to the intensity.
struct KernelTaps {
    static constexpr std::size_t kMax = 25;
    int first = 0;
    int count = 0;
    std::array<double, kMax> w{};
    std::array<double, kMax> dw{};
};

// Gaussian Parzen window truncated at 3 sigma. A quadratic correction makes
// the window and its slope vanish at the cut, so the estimator is C1.
class ParzenKernel {
  public:
    explicit ParzenKernel(const HistogramConfig &cfg) : bins_(static_cast<int>(cfg.bins)), sigma_(cfg.kernel_sigma) {
        cfg.validate();
        radius_ = 3.0 * sigma_;
        inv2s2_ = 1.0 / (2.0 * sigma_ * sigma_);
        g3_ = std::exp(-radius_ * radius_ * inv2s2_);
        for(std::size_t j = 0; j < KernelTaps::kMax; ++j){
            cj_[j] = std::exp(-static_cast<double>(j * j) * inv2s2_);
        }
    }

    int bins() const { return bins_; }

    // Continuous bin coordinate. [0,1] spans the bins whose kernels fit
    // entirely inside the table, so no sample is ever clipped at the edges.
    double span() const { return static_cast<double>(bins_ - 1) - 2.0 * radius_; }
    double coordinate(double v) const { return radius_ + std::clamp(v, 0.0, 1.0) * span(); }

    void taps(double v, KernelTaps &out, bool with_derivative) const {
        const bool clamped = v < 0.0 || v > 1.0;
        const double s = coordinate(v);
        const int lo = std::max(0, static_cast<int>(std::ceil(s - radius_)));
        const int hi = std::min(bins_ - 1, static_cast<int>(std::floor(s + radius_)));
        out.first = lo;
        out.count = hi - lo + 1;
        // g(delta - j) = exp(-delta^2 k) * exp(2 delta j k) * exp(-j^2 k), k = 1/(2 sigma^2)
        const double delta = s - lo;
        const double a = std::exp(-delta * delta * inv2s2_);
        const double r = std::exp(2.0 * delta * inv2s2_);
        double rj = 1.0;
        double Z = 0.0, Zp = 0.0;
        for(int j = 0; j < out.count; ++j){
            const double d = delta - j;
            const double g = a * rj * cj_[static_cast<std::size_t>(j)];
            rj *= r;
            double f = g - g3_ * (5.5 - d * d * inv2s2_);
            double fp = -(d * 2.0 * inv2s2_) * (g - g3_);
            if(std::abs(d) >= radius_){
                f = 0.0;
                fp = 0.0;
            }
            out.w[static_cast<std::size_t>(j)] = f;
            out.dw[static_cast<std::size_t>(j)] = fp;
            Z += f;
            Zp += fp;
        }
        const double invZ = 1.0 / Z;
        const double scale = (with_derivative && !clamped) ? span() * invZ * invZ : 0.0;
        for(int j = 0; j < out.count; ++j){
            const auto k = static_cast<std::size_t>(j);
            const double f = out.w[k];
            out.dw[k] = scale * (out.dw[k] * Z - f * Zp);
            out.w[k] = f * invZ;
        }
    }

  private:
    int bins_;
    double sigma_;
    double radius_ = 0.0;
    double inv2s2_ = 0.0;
    double g3_ = 0.0;
    std::array<double, KernelTaps::kMax> cj_{};
};

struct JointHistogram {
    std::size_t bins = 0;
    std::vector<double> p; // p[a * bins + b]; a indexes the first image, b the second

    double at(std::size_t a, std::size_t b) const { return p[a * bins + b]; }
    double sum() const {
        double s = 0.0;
        for(double v : p) s += v;
        return s;
    }
};

namespace detail {

template <class T>
void check_unit_range(std::span<const T> v, const char *what) {
    for(auto x : v){
        if(!(x >= T(-1e-6) && x <= T(1.0 + 1e-6))){
            throw std::invalid_argument(std::string(what) + ": intensities must be normalized to [0,1]");
        }
    }
}

inline double entropy_unchecked(const std::vector<double> &p) {
    double h = 0.0;
    for(double v : p) if(v > 0.0) h -= v * std::log(v);
    return h;
}

} // namespace detail

template <class T>
JointHistogram soft_joint_histogram(std::span<const T> a, std::span<const T> b, const HistogramConfig &cfg) {
    if(a.size() != b.size() || a.empty()){
        throw std::invalid_argument("soft_joint_histogram: inputs differ in size");
    }
    detail::check_unit_range(a, "soft_joint_histogram");
    detail::check_unit_range(b, "soft_joint_histogram");
    const ParzenKernel K(cfg);
    JointHistogram h{cfg.bins, std::vector<double>(cfg.bins * cfg.bins, 0.0)};
    KernelTaps ta, tb;
    for(std::size_t x = 0; x < a.size(); ++x){
        K.taps(a[x], ta, false);
        K.taps(b[x], tb, false);
        for(int i = 0; i < ta.count; ++i){
            double *row = &h.p[static_cast<std::size_t>(ta.first + i) * cfg.bins + static_cast<std::size_t>(tb.first)];
            const double wa = ta.w[static_cast<std::size_t>(i)];
            for(int j = 0; j < tb.count; ++j) row[j] += wa * tb.w[static_cast<std::size_t>(j)];
        }
    }
    const double inv = 1.0 / static_cast<double>(a.size());
    for(double &v : h.p) v *= inv;
    return h;
}

template <class T>
JointHistogram soft_joint_histogram(const Image<T> &a, const Image<T> &b, const HistogramConfig &cfg) {
    if(!a.same_grid(b)) throw std::invalid_argument("soft_joint_histogram: grids differ");
    return soft_joint_histogram(std::span<const T>(a.data), std::span<const T>(b.data), cfg);
}

// Shannon entropy in nats with 0 log 0 = 0.
inline double entropy(const std::vector<double> &p) {
    double s = 0.0;
    for(double v : p){
        if(!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("entropy: negative or non-finite probability");
        s += v;
    }
    if(std::abs(s - 1.0) > 1e-6) throw std::invalid_argument("entropy: probabilities do not sum to 1");
    return detail::entropy_unchecked(p);
}

inline double entropy(const JointHistogram &h) { return entropy(h.p); }

// Per-frame stack of C planes after warping, plus the source gradient sampled
// at each warped position (needed to chain the loss back to displacements).
template <class T>
struct WarpedStack {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::vector<T>> values;
    std::vector<std::vector<T>> gx;
    std::vector<std::vector<T>> gy;

    std::size_t length() const { return values.size(); }
    std::size_t plane_size() const { return height * width; }
    std::span<const T> plane(std::size_t i, std::size_t c) const {
        return {values[i].data() + c * plane_size(), plane_size()};
    }
};

template <class T>
WarpedStack<T> warp_stack(const std::vector<FeatureMap<T>> &src, const TransformSet<T> &t, bool with_gradient,
                          std::size_t threads = 1) {
    if(src.size() != t.length()){
        throw std::invalid_argument("warp_stack: transform count does not match item count");
    }
    WarpedStack<T> out;
    out.channels = src.front().channels;
    out.height = src.front().height;
    out.width = src.front().width;
    const std::size_t L = src.size(), N = out.plane_size(), C = out.channels;
    out.values.assign(L, std::vector<T>(C * N));
    if(with_gradient){
        out.gx.assign(L, std::vector<T>(C * N));
        out.gy.assign(L, std::vector<T>(C * N));
    }
    parallel_for(L, threads, [&](std::size_t i){
        const auto &u = t.fields[i];
        if(!u.same_grid(out.height, out.width) || !src[i].same_shape(src.front())){
            throw std::invalid_argument("warp_stack: grid mismatch");
        }
        for(std::size_t c = 0; c < C; ++c){
            const std::vector<T> plane(src[i].channel(c).begin(), src[i].channel(c).end());
            for(std::size_t y = 0; y < out.height; ++y){
                for(std::size_t x = 0; x < out.width; ++x){
                    const std::size_t p = y * out.width + x;
                    const T sx = static_cast<T>(x) + u.dx[p];
                    const T sy = static_cast<T>(y) + u.dy[p];
                    if(with_gradient){
                        const auto g = sample_bilinear_grad(plane, out.height, out.width, sx, sy);
                        out.values[i][c * N + p] = g.value;
                        out.gx[i][c * N + p] = g.ddx;
                        out.gy[i][c * N + p] = g.ddy;
                    } else {
                        out.values[i][c * N + p] = sample_bilinear(plane, out.height, out.width, sx, sy);
                    }
                }
            }
        }
    });
    return out;
}

template <class T>
std::vector<std::span<const T>> stack_items(const WarpedStack<T> &s) {
    std::vector<std::span<const T>> out;
    for(const auto &v : s.values) out.emplace_back(v);
    return out;
}

template <class T>
struct CteResult {
    double value = 0.0;
    // d value / d warped intensity, per frame, C*N entries; includes the path
    // through the template (weights held constant)
    std::vector<std::vector<double>> sensitivity;
};

// Mean over frames and channels of H(T, I_i) - H(I_i), with T = sum_i w_i I_i
// built per channel.
template <class T>
CteResult<T> cte_with_gradient(const WarpedStack<T> &s, const AggregationWeights &w, const HistogramConfig &cfg,
                               bool with_gradient, std::size_t threads = 1) {
    const std::size_t L = s.length(), C = s.channels, N = s.plane_size(), B = cfg.bins;
    if(w.size() != L) throw std::invalid_argument("cte: weight count does not match frame count");
    const ParzenKernel K(cfg);

    std::vector<std::vector<T>> templates(C);
    for(std::size_t c = 0; c < C; ++c){
        std::vector<std::span<const T>> planes;
        for(std::size_t i = 0; i < L; ++i) planes.push_back(s.plane(i, c));
        templates[c] = weighted_sum(planes, w);
    }

    // joint and marginal log tables per (frame, channel)
    std::vector<std::vector<double>> logj(L * C), logm(L * C);
    std::vector<double> terms(L * C, 0.0);
    parallel_for(L * C, threads, [&](std::size_t ic){
        const std::size_t i = ic / C, c = ic % C;
        std::vector<double> pj(B * B, 0.0), pm(B, 0.0);
        const auto img = s.plane(i, c);
        const auto &tpl = templates[c];
        KernelTaps ta, tb;
        for(std::size_t x = 0; x < N; ++x){
            K.taps(tpl[x], ta, false);
            K.taps(img[x], tb, false);
            for(int b = 0; b < tb.count; ++b) pm[static_cast<std::size_t>(tb.first + b)] += tb.w[static_cast<std::size_t>(b)];
            for(int a = 0; a < ta.count; ++a){
                double *row = &pj[static_cast<std::size_t>(ta.first + a) * B + static_cast<std::size_t>(tb.first)];
                const double wa = ta.w[static_cast<std::size_t>(a)];
                for(int b = 0; b < tb.count; ++b) row[b] += wa * tb.w[static_cast<std::size_t>(b)];
            }
        }
        const double inv = 1.0 / static_cast<double>(N);
        for(double &v : pj) v *= inv;
        for(double &v : pm) v *= inv;
        terms[ic] = detail::entropy_unchecked(pj) - detail::entropy_unchecked(pm);
        if(with_gradient){
            for(double &v : pj) v = v > 0.0 ? std::log(v) : 0.0;
            for(double &v : pm) v = v > 0.0 ? std::log(v) : 0.0;
            logj[ic] = std::move(pj);
            logm[ic] = std::move(pm);
        }
    });

    CteResult<T> out;
    double total = 0.0;
    for(double v : terms) total += v;
    const double norm = 1.0 / static_cast<double>(L * C);
    out.value = total * norm;
    if(!with_gradient) return out;

    out.sensitivity.assign(L, std::vector<double>(C * N, 0.0));
    const double scale = -norm / static_cast<double>(N);
    parallel_for(s.height, threads, [&](std::size_t y){
        KernelTaps ta, tb;
        for(std::size_t c = 0; c < C; ++c){
            for(std::size_t xx = 0; xx < s.width; ++xx){
                const std::size_t x = y * s.width + xx;
                K.taps(templates[c][x], ta, true);
                double dT = 0.0;
                for(std::size_t i = 0; i < L; ++i){
                    K.taps(s.values[i][c * N + x], tb, true);
                    const auto &G = logj[i * C + c];
                    const auto &g = logm[i * C + c];
                    double dI = 0.0;
                    for(int a = 0; a < ta.count; ++a){
                        const double *row = &G[static_cast<std::size_t>(ta.first + a) * B + static_cast<std::size_t>(tb.first)];
                        double sw = 0.0, sd = 0.0;
                        for(int b = 0; b < tb.count; ++b){
                            sw += tb.w[static_cast<std::size_t>(b)] * row[b];
                            sd += tb.dw[static_cast<std::size_t>(b)] * row[b];
                        }
                        dT += ta.dw[static_cast<std::size_t>(a)] * sw;
                        dI += ta.w[static_cast<std::size_t>(a)] * sd;
                    }
                    for(int b = 0; b < tb.count; ++b){
                        dI -= tb.dw[static_cast<std::size_t>(b)] * g[static_cast<std::size_t>(tb.first + b)];
                    }
                    out.sensitivity[i][c * N + x] = scale * dI;
                }
                for(std::size_t i = 0; i < L; ++i){
                    out.sensitivity[i][c * N + x] += w.w[i] * scale * dT;
                }
            }
        }
    });
    return out;
}

// CTE of already-warped, normalized frames against a given template.
template <class T>
double cte(const Sequence<T> &warped, const Image<T> &tpl, const HistogramConfig &cfg) {
    warped.validate();
    double total = 0.0;
    for(const auto &f : warped.frames){
        if(!f.same_grid(tpl)) throw std::invalid_argument("cte: template grid differs from frames");
        const auto h = soft_joint_histogram(tpl, f, cfg);
        std::vector<double> marginal(cfg.bins, 0.0);
        for(std::size_t a = 0; a < cfg.bins; ++a){
            for(std::size_t b = 0; b < cfg.bins; ++b) marginal[b] += h.at(a, b);
        }
        total += detail::entropy_unchecked(h.p) - detail::entropy_unchecked(marginal);
    }
    return total / static_cast<double>(warped.length());
}

// Mean over frames, pixels and components of squared forward differences
// (zero across the far border).
template <class T>
double smoothness(const TransformSet<T> &t, std::vector<DisplacementField<T>> *grad = nullptr, double weight = 1.0) {
    if(t.length() == 0) return 0.0;
    const std::size_t h = t.height(), w = t.width();
    const double norm = 1.0 / (static_cast<double>(t.length() * h * w) * 2.0);
    double acc = 0.0;
    for(std::size_t i = 0; i < t.length(); ++i){
        const auto &u = t.fields[i];
        for(const auto *comp : {&u.dx, &u.dy}){
            const auto &p = *comp;
            std::vector<T> *gp = nullptr;
            if(grad) gp = comp == &u.dx ? &(*grad)[i].dx : &(*grad)[i].dy;
            for(std::size_t y = 0; y < h; ++y){
                for(std::size_t x = 0; x < w; ++x){
                    const std::size_t k = y * w + x;
                    if(x + 1 < w){
                        const double d = static_cast<double>(p[k + 1]) - p[k];
                        acc += d * d;
                        if(gp){
                            (*gp)[k] -= static_cast<T>(weight * 2.0 * norm * d);
                            (*gp)[k + 1] += static_cast<T>(weight * 2.0 * norm * d);
                        }
                    }
                    if(y + 1 < h){
                        const double d = static_cast<double>(p[k + w]) - p[k];
                        acc += d * d;
                        if(gp){
                            (*gp)[k] -= static_cast<T>(weight * 2.0 * norm * d);
                            (*gp)[k + w] += static_cast<T>(weight * 2.0 * norm * d);
                        }
                    }
                }
            }
        }
    }
    return acc * norm;
}

// Mean over pixels of the squared norm of the frame-averaged displacement.
template <class T>
double cyclic(const TransformSet<T> &t, std::vector<DisplacementField<T>> *grad = nullptr, double weight = 1.0) {
    const std::size_t L = t.length();
    if(L == 0) return 0.0;
    const std::size_t n = t.fields.front().size();
    double acc = 0.0;
    const double invL = 1.0 / static_cast<double>(L);
    for(std::size_t k = 0; k < n; ++k){
        double mx = 0.0, my = 0.0;
        for(const auto &u : t.fields){
            mx += u.dx[k];
            my += u.dy[k];
        }
        mx *= invL;
        my *= invL;
        acc += mx * mx + my * my;
        if(grad){
            const double s = weight * 2.0 * invL / static_cast<double>(n);
            for(auto &g : *grad){
                g.dx[k] += static_cast<T>(s * mx);
                g.dy[k] += static_cast<T>(s * my);
            }
        }
    }
    return acc / static_cast<double>(n);
}

// Loss on pre-warped stacks. Weights are treated as constants: the gradient
// flows through the warped values and the templates they form, not through
// the eigenvector.
template <class T>
LossBreakdown<T> evaluate_loss(const WarpedStack<T> &images, const AggregationWeights &image_weights,
                               const WarpedStack<T> *features, const AggregationWeights *feature_weights,
                               const TransformSet<T> &t, const LossWeights &lw, const HistogramConfig &cfg,
                               bool with_gradient, std::size_t threads = 1) {
    lw.validate();
    const std::size_t L = t.length();
    LossBreakdown<T> out;
    if(with_gradient){
        out.grad.assign(L, DisplacementField<T>(t.height(), t.width()));
    }

    auto chain = [&](const WarpedStack<T> &s, const CteResult<T> &r, double lambda){
        const std::size_t N = s.plane_size();
        for(std::size_t i = 0; i < L; ++i){
            auto &g = out.grad[i];
            for(std::size_t c = 0; c < s.channels; ++c){
                for(std::size_t p = 0; p < N; ++p){
                    const double sv = lambda * r.sensitivity[i][c * N + p];
                    g.dx[p] += static_cast<T>(sv * s.gx[i][c * N + p]);
                    g.dy[p] += static_cast<T>(sv * s.gy[i][c * N + p]);
                }
            }
        }
    };

    const auto ri = cte_with_gradient(images, image_weights, cfg, with_gradient, threads);
    out.cte_image = ri.value;
    if(with_gradient) chain(images, ri, 1.0);

    if(features != nullptr && feature_weights != nullptr && lw.lambda_f > 0.0){
        const auto rf = cte_with_gradient(*features, *feature_weights, cfg, with_gradient, threads);
        out.cte_feature = rf.value;
        if(with_gradient) chain(*features, rf, lw.lambda_f);
    }

    out.smooth = smoothness(t, with_gradient ? &out.grad : nullptr, lw.lambda_s);
    out.cyclic = cyclic(t, with_gradient ? &out.grad : nullptr, lw.lambda_c);
    out.total = out.cte_image + lw.lambda_f * out.cte_feature + lw.lambda_s * out.smooth + lw.lambda_c * out.cyclic;
    return out;
}

template <class T>
std::vector<FeatureMap<T>> as_feature_maps(const Sequence<T> &seq) {
    std::vector<FeatureMap<T>> out;
    for(const auto &f : seq.frames) out.push_back(FeatureMap<T>::from_image(f));
    return out;
}

// Full loss from source frames (and optional source features) under the given
// fields. Frames and features must already be normalized to [0,1].
template <class T>
LossBreakdown<T> total_loss(const Sequence<T> &frames, const FeatureSet<T> *features, const TransformSet<T> &t,
                            const AggregationWeights &image_weights, const AggregationWeights *feature_weights,
                            const LossWeights &lw, const HistogramConfig &cfg, std::size_t threads = 1) {
    frames.validate();
    if(t.length() != frames.length()) throw std::invalid_argument("total_loss: transform count mismatch");
    const auto wi = warp_stack(as_feature_maps(frames), t, true, threads);
    if(features != nullptr){
        const auto wf = warp_stack(features->items, t, true, threads);
        return evaluate_loss(wi, image_weights, &wf, feature_weights, t, lw, cfg, true, threads);
    }
    return evaluate_loss<T>(wi, image_weights, nullptr, nullptr, t, lw, cfg, true, threads);
}

} // namespace setreg
