#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "setreg/core.hpp"
#include "setreg/features.hpp"
#include "setreg/loss.hpp"
#include "setreg/parallel.hpp"
#include "setreg/setagg.hpp"
#include "setreg/warp.hpp"

namespace setreg {

enum class Precision { single, dual };

struct OptimConfig {
    std::size_t scales = 4;
    std::vector<std::size_t> iters_per_scale{100, 100, 100, 50}; // coarsest first
    double step_size = 0.5;                                      // Adam learning rate, pixels of the current level
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool anneal = true;           // cosine decay of the step to zero over each level's iterations
    std::size_t warmup_iters = 10; // linear ramp of the step at the start of each level
    LossWeights loss_weights{};
    HistogramConfig hist{};
    FeatureExtractorSpec feature_spec{};
    bool use_features = true;
    Aggregation aggregation = Aggregation::correlation;
    Precision precision = Precision::single;
    std::uint64_t seed = 0;
    std::size_t threads = 0; // 0: SETREG_THREADS or 1

    void validate() const {
        if(scales < 1) throw std::invalid_argument("OptimConfig: scales must be >= 1");
        if(iters_per_scale.size() != scales) throw std::invalid_argument("OptimConfig: one iteration count per scale is required");
        for(auto n : iters_per_scale) if(n < 1) throw std::invalid_argument("OptimConfig: iteration counts must be >= 1");
        if(!(step_size > 0.0) || !std::isfinite(step_size)) throw std::invalid_argument("OptimConfig: step_size must be positive");
        if(!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)){
            throw std::invalid_argument("OptimConfig: invalid moment parameters");
        }
        loss_weights.validate();
        hist.validate();
        if(use_features) feature_spec.validate();
    }
};

template <class T>
struct RegistrationResult {
    TransformSet<T> transforms;
    std::vector<LossBreakdown<T>> loss_history; // one entry per iteration, gradients dropped
    std::vector<std::size_t> history_scale;     // scale index (1 = finest) of each history entry
    AggregationWeights weights;                 // image weights at the last iteration
    AggregationWeights feature_weights;         // empty when features are off
    std::vector<double> wall_time_ms;           // per scale, coarsest first
    double aggregation_time_ms = 0.0;           // time spent building weights
    double final_step_size = 0.0;
};

namespace detail {

// Transpose of v -> v(x + a(x)) for bilinear sampling: spreads g(x) onto the
// four nodes around x + a(x), honoring border clamping.
template <class T>
void scatter_through(const std::vector<T> &g, const DisplacementField<T> &a, std::vector<T> &out) {
    const std::size_t h = a.height, w = a.width;
    std::fill(out.begin(), out.end(), T(0));
    for(std::size_t y = 0; y < h; ++y){
        for(std::size_t x = 0; x < w; ++x){
            const std::size_t p = y * w + x;
            std::size_t x0, x1, y0, y1;
            T fx, fy;
            bool cx, cy;
            bilinear_setup(static_cast<T>(x) + a.dx[p], w, x0, x1, fx, cx);
            bilinear_setup(static_cast<T>(y) + a.dy[p], h, y0, y1, fy, cy);
            const T v = g[p];
            out[y0 * w + x0] += v * (T(1) - fx) * (T(1) - fy);
            out[y0 * w + x1] += v * fx * (T(1) - fy);
            out[y1 * w + x0] += v * (T(1) - fx) * fy;
            out[y1 * w + x1] += v * fx * fy;
        }
    }
}

template <class T>
AggregationWeights stack_weights(const WarpedStack<T> &s, Aggregation mode) {
    if(mode == Aggregation::mean) return uniform_weights(s.length());
    return correlation_weights(stack_items(s));
}

template <class T>
std::size_t pyramid_factor(std::size_t level) {
    return std::size_t{1} << level;
}

} // namespace detail

// Objective at the grid of `t`, weights rebuilt from the warped stacks.
// `frames` must already be normalized to [0,1].
template <class T>
LossBreakdown<T> registration_objective(const Sequence<T> &frames, const TransformSet<T> &t, const OptimConfig &cfg,
                                        bool with_gradient = false) {
    const std::size_t threads = resolve_threads(cfg.threads);
    const auto ws = warp_stack(as_feature_maps(frames), t, with_gradient, threads);
    const auto wi = detail::stack_weights(ws, cfg.aggregation);
    if(cfg.use_features){
        auto spec = cfg.feature_spec;
        spec.scale = 1;
        const auto fs = extract_feature_set(frames, spec);
        const auto wf = warp_stack(fs.items, t, with_gradient, threads);
        const auto ww = detail::stack_weights(wf, cfg.aggregation);
        return evaluate_loss(ws, wi, &wf, &ww, t, cfg.loss_weights, cfg.hist, with_gradient, threads);
    }
    return evaluate_loss<T>(ws, wi, nullptr, nullptr, t, cfg.loss_weights, cfg.hist, with_gradient, threads);
}

// Multi-scale instance optimization. At each level the fields are
// u = acc(x) + inc(x + acc(x)), where acc carries the coarser levels (and the
// warm start, if any) and inc is the level's own variable, started at zero.
template <class T>
RegistrationResult<T> register_with_init(const Sequence<T> &input, const OptimConfig &cfg,
                                         const TransformSet<T> *init) {
    cfg.validate();
    input.validate();
    const std::size_t L = input.length(), H = input.height(), W = input.width();
    const std::size_t top = detail::pyramid_factor<T>(cfg.scales - 1);
    if(H % top != 0 || W % top != 0){
        throw std::invalid_argument("register: image dimensions must be divisible by 2^(scales-1)");
    }
    if(init != nullptr && (init->length() != L || init->height() != H || init->width() != W)){
        throw std::invalid_argument("register: initial transforms do not match the sequence grid");
    }
    const std::size_t threads = resolve_threads(cfg.threads);
    const auto frames = normalize_sequence(input);

    RegistrationResult<T> res;
    double step = cfg.step_size;
    bool halved = false;
    std::vector<DisplacementField<T>> corr; // composed increments of the coarser levels

    for(std::size_t lv = cfg.scales; lv-- > 0;){
        const auto t0 = std::chrono::steady_clock::now();
        const std::size_t f = detail::pyramid_factor<T>(lv);
        const std::size_t h = H / f, w = W / f, N = h * w;

        std::vector<Image<T>> level_frames(L);
        parallel_for(L, threads, [&](std::size_t i){ level_frames[i] = downsample_image(frames.frames[i], f); });
        const Sequence<T> seq(std::move(level_frames));
        const auto images = as_feature_maps(seq);
        std::vector<FeatureMap<T>> feats;
        if(cfg.use_features){
            auto spec = cfg.feature_spec;
            spec.scale = 1;
            feats.resize(L);
            parallel_for(L, threads, [&](std::size_t i){ feats[i] = extract_features(seq.frames[i], spec); });
        }

        if(corr.empty()){
            corr.assign(L, DisplacementField<T>(h, w));
        } else {
            parallel_for(L, threads, [&](std::size_t i){ corr[i] = upsample_field(corr[i], 2); });
        }
        std::vector<DisplacementField<T>> acc = corr;
        if(init != nullptr){
            parallel_for(L, threads, [&](std::size_t i){
                acc[i] = compose(corr[i], downsample_field(init->fields[i], f));
            });
        }

        std::vector<DisplacementField<T>> inc(L, DisplacementField<T>(h, w)), m1 = inc, m2 = inc, prev = inc;
        TransformSet<T> full(acc);
        std::vector<T> gx(N), gy(N);
        const std::size_t iters = cfg.iters_per_scale[cfg.scales - 1 - lv];
        std::size_t k = 0;
        for(std::size_t it = 0; it < iters; ++it){
            parallel_for(L, threads, [&](std::size_t i){ full.fields[i] = compose(inc[i], acc[i]); });
            const auto ws = warp_stack(images, full, true, threads);
            std::optional<WarpedStack<T>> wf;
            if(cfg.use_features) wf = warp_stack(feats, full, true, threads);
            const auto ta = std::chrono::steady_clock::now();
            res.weights = detail::stack_weights(ws, cfg.aggregation);
            if(wf) res.feature_weights = detail::stack_weights(*wf, cfg.aggregation);
            res.aggregation_time_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - ta).count();

            auto lb = wf ? evaluate_loss(ws, res.weights, &*wf, &res.feature_weights, full, cfg.loss_weights, cfg.hist, true, threads)
                         : evaluate_loss<T>(ws, res.weights, nullptr, nullptr, full, cfg.loss_weights, cfg.hist, true, threads);
            bool finite = std::isfinite(lb.total);
            for(std::size_t i = 0; finite && i < L; ++i){
                for(std::size_t p = 0; p < N; ++p){
                    if(!std::isfinite(lb.grad[i].dx[p]) || !std::isfinite(lb.grad[i].dy[p])){
                        finite = false;
                        break;
                    }
                }
            }
            if(!finite){
                if(halved){
                    std::ostringstream msg;
                    msg << "register: non-finite loss at scale " << lv + 1 << ", iteration " << it
                        << " after halving the step to " << step;
                    throw std::runtime_error(msg.str());
                }
                halved = true;
                step *= 0.5;
                inc = prev;
                continue;
            }

            auto grad = std::move(lb.grad);
            lb.grad.clear();
            res.loss_history.push_back(lb);
            res.history_scale.push_back(lv + 1);

            ++k;
            const double b1 = cfg.beta1, b2 = cfg.beta2;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(k));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(k));
            double lr = step;
            if(cfg.anneal) lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(it) / static_cast<double>(iters)));
            if(it < cfg.warmup_iters) lr *= static_cast<double>(it + 1) / static_cast<double>(cfg.warmup_iters + 1);
            prev = inc;
            parallel_for(L, threads, [&](std::size_t i){
                std::vector<T> sx(N), sy(N);
                detail::scatter_through(grad[i].dx, acc[i], sx);
                detail::scatter_through(grad[i].dy, acc[i], sy);
                auto update = [&](std::vector<T> &u, std::vector<T> &m, std::vector<T> &v, const std::vector<T> &g){
                    for(std::size_t p = 0; p < N; ++p){
                        const double gp = g[p];
                        const double mp = b1 * m[p] + (1.0 - b1) * gp;
                        const double vp = b2 * v[p] + (1.0 - b2) * gp * gp;
                        m[p] = static_cast<T>(mp);
                        v[p] = static_cast<T>(vp);
                        u[p] -= static_cast<T>(lr * (mp / c1) / (std::sqrt(vp / c2) + cfg.epsilon));
                    }
                };
                update(inc[i].dx, m1[i].dx, m2[i].dx, sx);
                update(inc[i].dy, m1[i].dy, m2[i].dy, sy);
            });
        }

        if(lv == 0){
            parallel_for(L, threads, [&](std::size_t i){ full.fields[i] = compose(inc[i], acc[i]); });
            res.transforms = full;
        } else {
            parallel_for(L, threads, [&](std::size_t i){ corr[i] = compose(inc[i], corr[i]); });
        }
        res.wall_time_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    res.final_step_size = step;
    return res;
}

template <class T>
RegistrationResult<T> register_group(const Sequence<T> &seq, const OptimConfig &cfg) {
    return register_with_init<T>(seq, cfg, nullptr);
}

template <class T>
RegistrationResult<T> register_with_init(const Sequence<T> &seq, const OptimConfig &cfg, const TransformSet<T> &init) {
    return register_with_init<T>(seq, cfg, &init);
}

template <class T>
struct BatchItem {
    std::optional<RegistrationResult<T>> result;
    std::string error; // set when the registration threw
};

// Independent registrations; the worker pool splits across items, each item
// runs single-threaded so results match sequential execution.
template <class T>
std::vector<BatchItem<T>> register_batch(const std::vector<Sequence<T>> &seqs, const OptimConfig &cfg) {
    std::vector<BatchItem<T>> out(seqs.size());
    OptimConfig item_cfg = cfg;
    item_cfg.threads = 1;
    parallel_for(seqs.size(), resolve_threads(cfg.threads), [&](std::size_t i){
        try {
            out[i].result = register_group(seqs[i], item_cfg);
        } catch(const std::exception &e) {
            out[i].error = e.what();
        }
    });
    return out;
}

} // namespace setreg
