#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "setreg/core.hpp"
#include "setreg/setagg.hpp"
#include "setreg/synth.hpp"
#include "setreg/warp.hpp"

namespace setreg {

inline double dice(const LabelMask &a, const LabelMask &b, std::uint8_t label) {
    if(a.height != b.height || a.width != b.width) throw std::invalid_argument("dice: mask grids differ");
    std::size_t na = 0, nb = 0, both = 0;
    for(std::size_t i = 0; i < a.labels.size(); ++i){
        const bool x = a.labels[i] == label, y = b.labels[i] == label;
        na += x;
        nb += y;
        both += x && y;
    }
    if(na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0; // population standard deviation
};

inline MeanSd mean_sd(const std::vector<double> &v) {
    MeanSd r;
    if(v.empty()) return r;
    for(double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    for(double x : v) r.sd += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(r.sd / static_cast<double>(v.size()));
    return r;
}

inline MeanSd all_pair_dice(const std::vector<LabelMask> &masks, std::uint8_t label) {
    if(masks.size() < 2) throw std::invalid_argument("all_pair_dice: at least two masks are required");
    std::vector<double> d;
    for(std::size_t i = 0; i < masks.size(); ++i)
        for(std::size_t j = i + 1; j < masks.size(); ++j) d.push_back(dice(masks[i], masks[j], label));
    return mean_sd(d);
}

template <class T>
std::vector<LabelMask> warp_masks(const std::vector<LabelMask> &masks, const TransformSet<T> &t) {
    if(masks.size() != t.length()) throw std::invalid_argument("warp_masks: mask count does not match transform count");
    std::vector<LabelMask> out;
    for(std::size_t i = 0; i < masks.size(); ++i) out.push_back(warp_labels(masks[i], t.fields[i]));
    return out;
}

// Frame landmarks carried into the common grid: q with q + u_i(q) = p.
template <class T>
LandmarkSet map_landmarks(const LandmarkSet &lm, const TransformSet<T> &t) {
    LandmarkSet out;
    for(const auto &p : lm.points){
        if(p.frame_index >= t.length()) throw std::invalid_argument("map_landmarks: frame index out of range");
        const auto [qx, qy] = pull_point(t.fields[p.frame_index], p.x, p.y);
        out.points.push_back({p.frame_index, qx, qy});
    }
    return out;
}

// Weighted mean position of the k-th landmark over frames.
inline std::vector<std::pair<double, double>> reference_landmarks(const LandmarkSet &mapped, std::size_t frames,
                                                                  const AggregationWeights &w) {
    if(w.size() != frames) throw std::invalid_argument("reference_landmarks: weight count does not match frame count");
    std::vector<std::pair<double, double>> ref;
    std::vector<double> wsum;
    std::vector<std::size_t> seen(frames, 0);
    for(const auto &p : mapped.points){
        if(p.frame_index >= frames) throw std::invalid_argument("reference_landmarks: frame index out of range");
        const std::size_t k = seen[p.frame_index]++;
        if(k >= ref.size()){
            ref.resize(k + 1, {0.0, 0.0});
            wsum.resize(k + 1, 0.0);
        }
        ref[k].first += w.w[p.frame_index] * p.x;
        ref[k].second += w.w[p.frame_index] * p.y;
        wsum[k] += w.w[p.frame_index];
    }
    for(std::size_t f = 1; f < frames; ++f){
        if(seen[f] != seen[0]) throw std::invalid_argument("reference_landmarks: frames carry different landmark counts");
    }
    for(std::size_t k = 0; k < ref.size(); ++k){
        ref[k].first /= wsum[k];
        ref[k].second /= wsum[k];
    }
    return ref;
}

// Mean distance between mapped landmarks and their reference positions.
inline double tre(const LandmarkSet &mapped, const std::vector<std::pair<double, double>> &reference) {
    std::vector<std::size_t> seen;
    double s = 0;
    std::size_t n = 0;
    for(const auto &p : mapped.points){
        if(p.frame_index >= seen.size()) seen.resize(p.frame_index + 1, 0);
        const std::size_t k = seen[p.frame_index]++;
        if(k >= reference.size()) throw std::invalid_argument("tre: landmark count does not match the reference");
        s += std::hypot(p.x - reference[k].first, p.y - reference[k].second);
        ++n;
    }
    for(auto c : seen) if(c != 0 && c != reference.size()) throw std::invalid_argument("tre: landmark count does not match the reference");
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

template <class T>
double tre(const LandmarkSet &frame_landmarks, const TransformSet<T> &t, const AggregationWeights &w) {
    const auto mapped = map_landmarks(frame_landmarks, t);
    return tre(mapped, reference_landmarks(mapped, t.length(), w));
}

struct JacobianStats {
    double log_det_std = 0.0;
    double folding_ratio = 0.0;
    std::size_t nonpositive = 0;
};

template <class T>
JacobianStats jacobian_stats(const TransformSet<T> &t) {
    JacobianStats s;
    std::vector<double> logs;
    std::size_t total = 0;
    for(const auto &f : t.fields){
        const auto det = jacobian_det(f);
        for(std::size_t y = 0; y < f.height; ++y){
            for(std::size_t x = 0; x < f.width; ++x){
                const double d = det.at(x, y);
                ++total;
                if(d <= 0){
                    ++s.nonpositive;
                    continue;
                }
                const bool interior = x > 0 && y > 0 && x + 1 < f.width && y + 1 < f.height;
                if(interior) logs.push_back(std::log(d));
            }
        }
    }
    s.log_det_std = mean_sd(logs).sd;
    s.folding_ratio = total == 0 ? 0.0 : static_cast<double>(s.nonpositive) / static_cast<double>(total);
    return s;
}

// Standard deviation of log det J over interior pixels with det J > 0.
template <class T>
double log_det_j_std(const TransformSet<T> &t) {
    return jacobian_stats(t).log_det_std;
}

// Fraction of pixels, over all frames, with det J <= 0.
template <class T>
double folding_ratio(const TransformSet<T> &t) {
    return jacobian_stats(t).folding_ratio;
}

// Fraction of masked pixels whose r2 is at least each threshold.
inline std::vector<double> r2_survival(const Image<double> &r2, const LabelMask *mask, const std::vector<double> &thresholds,
                                       std::uint8_t label = 0) {
    for(std::size_t i = 1; i < thresholds.size(); ++i){
        if(thresholds[i] < thresholds[i - 1]) throw std::invalid_argument("r2_survival: thresholds must be sorted");
    }
    if(mask != nullptr && (mask->height != r2.height || mask->width != r2.width)){
        throw std::invalid_argument("r2_survival: mask grid mismatch");
    }
    std::vector<double> vals;
    for(std::size_t i = 0; i < r2.data.size(); ++i){
        if(mask == nullptr || (label == 0 ? mask->labels[i] > 0 : mask->labels[i] == label)) vals.push_back(r2.data[i]);
    }
    std::vector<double> out;
    for(double th : thresholds){
        std::size_t c = 0;
        for(double v : vals) c += v >= th;
        out.push_back(vals.empty() ? 0.0 : static_cast<double>(c) / static_cast<double>(vals.size()));
    }
    return out;
}

// Mean endpoint distance between two transform sets after removing each
// set's per-pixel mean over frames (the common reference is arbitrary).
// An optional mask restricts the pixels.
template <class T, class U>
double relative_endpoint_error(const TransformSet<T> &a, const TransformSet<U> &b, const LabelMask *mask = nullptr) {
    if(a.length() != b.length() || a.height() != b.height() || a.width() != b.width()){
        throw std::invalid_argument("relative_endpoint_error: transform sets differ in shape");
    }
    const std::size_t L = a.length(), N = a.height() * a.width();
    double s = 0;
    std::size_t n = 0;
    for(std::size_t p = 0; p < N; ++p){
        if(mask != nullptr && mask->labels[p] == 0) continue;
        double max_ = 0, may = 0, mbx = 0, mby = 0;
        for(std::size_t i = 0; i < L; ++i){
            max_ += a.fields[i].dx[p];
            may += a.fields[i].dy[p];
            mbx += b.fields[i].dx[p];
            mby += b.fields[i].dy[p];
        }
        max_ /= static_cast<double>(L);
        may /= static_cast<double>(L);
        mbx /= static_cast<double>(L);
        mby /= static_cast<double>(L);
        for(std::size_t i = 0; i < L; ++i){
            const double ex = (a.fields[i].dx[p] - max_) - (b.fields[i].dx[p] - mbx);
            const double ey = (a.fields[i].dy[p] - may) - (b.fields[i].dy[p] - mby);
            s += std::hypot(ex, ey);
            ++n;
        }
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

} // namespace setreg
