#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "setreg/core.hpp"

namespace setreg {

// One frame's C x H x W feature stack, channel-major.
template <class T>
struct FeatureMap {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> data;

    FeatureMap() = default;
    FeatureMap(std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    std::size_t plane_size() const { return height * width; }
    std::span<T> channel(std::size_t c) { return {data.data() + c * plane_size(), plane_size()}; }
    std::span<const T> channel(std::size_t c) const { return {data.data() + c * plane_size(), plane_size()}; }
    bool same_shape(const FeatureMap &o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    static FeatureMap from_image(const Image<T> &img) {
        FeatureMap f(1, img.height, img.width);
        f.data = img.data;
        return f;
    }

    bool operator==(const FeatureMap &) const = default;
};

template <class T>
struct FeatureSet {
    std::vector<FeatureMap<T>> items;

    FeatureSet() = default;
    explicit FeatureSet(std::vector<FeatureMap<T>> it) : items(std::move(it)) { validate(); }

    void validate() const {
        if(items.size() < 2){
            throw std::invalid_argument("FeatureSet requires at least two items");
        }
        for(const auto &f : items){
            if(!f.same_shape(items.front())){
                throw std::invalid_argument("FeatureSet items do not share one shape");
            }
        }
    }

    std::size_t length() const { return items.size(); }

    bool operator==(const FeatureSet &) const = default;
};

struct AggregationWeights {
    std::vector<double> w;

    std::size_t size() const { return w.size(); }
    double sum() const { return std::accumulate(w.begin(), w.end(), 0.0); }
    bool is_uniform(double tol = 1e-12) const {
        for(double v : w) if(std::abs(v - 1.0 / static_cast<double>(w.size())) > tol) return false;
        return true;
    }
};

// Dense symmetric L x L matrix, row-major.
struct SquareMatrix {
    std::size_t n = 0;
    std::vector<double> a;

    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t size, double fill = 0.0) : n(size), a(size * size, fill) {}
    double &operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

struct EigenSettings {
    double tolerance = 1e-10;
    std::size_t max_iterations = 1000;
    // Power iteration runs on M^(2^squarings); the eigenvectors are those of M.
    std::size_t squarings = 6;
};

namespace detail {

template <class T>
double dot_span(std::span<const T> a, std::span<const T> b) {
    // four partial sums keep the loop vectorizable without reassociation flags
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    const std::size_t n = a.size();
    for(; i + 4 <= n; i += 4){
        s0 += static_cast<double>(a[i]) * b[i];
        s1 += static_cast<double>(a[i + 1]) * b[i + 1];
        s2 += static_cast<double>(a[i + 2]) * b[i + 2];
        s3 += static_cast<double>(a[i + 3]) * b[i + 3];
    }
    for(; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
    return (s0 + s1) + (s2 + s3);
}

inline SquareMatrix matmul(const SquareMatrix &x, const SquareMatrix &y) {
    SquareMatrix out(x.n);
    for(std::size_t i = 0; i < x.n; ++i){
        for(std::size_t k = 0; k < x.n; ++k){
            const double xik = x(i, k);
            if(xik == 0.0) continue;
            for(std::size_t j = 0; j < x.n; ++j) out(i, j) += xik * y(k, j);
        }
    }
    return out;
}

inline std::vector<double> matvec(const SquareMatrix &m, const std::vector<double> &v) {
    std::vector<double> out(m.n, 0.0);
    for(std::size_t i = 0; i < m.n; ++i){
        double s = 0.0;
        for(std::size_t j = 0; j < m.n; ++j) s += m(i, j) * v[j];
        out[i] = s;
    }
    return out;
}

inline double norm2(const std::vector<double> &v) {
    double s = 0.0;
    for(double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace detail

// Mean-centred, unit-l2 vectors in double precision. Items that are constant
// (zero after centring) map to the zero vector.
template <class T>
std::vector<std::vector<double>> flatten_normalize(const std::vector<std::span<const T>> &items) {
    std::vector<std::vector<double>> out;
    out.reserve(items.size());
    for(const auto &it : items){
        std::vector<double> v(it.begin(), it.end());
        double raw2 = 0.0, mean = 0.0;
        for(double x : v){
            if(!std::isfinite(x)) throw std::invalid_argument("flatten_normalize: non-finite feature value");
            mean += x;
            raw2 += x * x;
        }
        mean /= static_cast<double>(std::max<std::size_t>(v.size(), 1));
        double n2 = 0.0;
        for(double &x : v){
            x -= mean;
            n2 += x * x;
        }
        const double nrm = std::sqrt(n2);
        if(!(nrm > 1e-10 * std::sqrt(raw2))){
            std::fill(v.begin(), v.end(), 0.0);
        } else {
            for(double &x : v) x /= nrm;
        }
        out.push_back(std::move(v));
    }
    return out;
}

template <class T>
std::vector<std::vector<double>> flatten_normalize(const FeatureSet<T> &fs) {
    fs.validate();
    std::vector<std::span<const T>> spans;
    for(const auto &f : fs.items) spans.emplace_back(f.data);
    return flatten_normalize(spans);
}

inline SquareMatrix correlation_matrix(const std::vector<std::vector<double>> &vs) {
    const std::size_t L = vs.size();
    SquareMatrix C(L);
    for(std::size_t i = 0; i < L; ++i){
        if(vs[i].size() != vs.front().size()){
            throw std::invalid_argument("correlation_matrix: vectors differ in length");
        }
    }
    std::vector<bool> zero(L);
    for(std::size_t i = 0; i < L; ++i){
        zero[i] = std::all_of(vs[i].begin(), vs[i].end(), [](double x){ return x == 0.0; });
    }
    for(std::size_t i = 0; i < L; ++i){
        C(i, i) = zero[i] ? 0.0 : 1.0;
        for(std::size_t j = i + 1; j < L; ++j){
            const double d = detail::dot_span<double>(vs[i], vs[j]);
            C(i, j) = d;
            C(j, i) = d;
        }
    }
    return C;
}

// Unit eigenvector of the largest eigenvalue, signed so its entries sum to a
// positive value. Falls back to the uniform vector when the sum vanishes or
// the iteration does not settle.
inline std::vector<double> leading_eigenvector(const SquareMatrix &C, const EigenSettings &cfg = {}) {
    const std::size_t L = C.n;
    if(L == 0) throw std::invalid_argument("leading_eigenvector: empty matrix");
    double scale = 0.0;
    for(double x : C.a) scale = std::max(scale, std::abs(x));
    for(std::size_t i = 0; i < L; ++i){
        for(std::size_t j = i + 1; j < L; ++j){
            if(std::abs(C(i, j) - C(j, i)) > 1e-6 * std::max(1.0, scale)){
                throw std::invalid_argument("leading_eigenvector: matrix is not symmetric");
            }
        }
    }
    const std::vector<double> uniform(L, 1.0 / std::sqrt(static_cast<double>(L)));
    if(scale == 0.0) return uniform;

    // Shift by the Gershgorin lower bound so the top algebraic eigenvalue also
    // has the top magnitude.
    double shift = 0.0;
    for(std::size_t i = 0; i < L; ++i){
        double r = 0.0;
        for(std::size_t j = 0; j < L; ++j) if(j != i) r += std::abs(C(i, j));
        shift = std::max(shift, -(C(i, i) - r));
    }
    SquareMatrix M = C;
    for(std::size_t i = 0; i < L; ++i) M(i, i) += shift;

    SquareMatrix P = M;
    for(std::size_t s = 0; s < cfg.squarings; ++s){
        P = detail::matmul(P, P);
        double mx = 0.0;
        for(double x : P.a) mx = std::max(mx, std::abs(x));
        if(!(mx > 0.0) || !std::isfinite(mx)) break;
        for(double &x : P.a) x /= mx;
    }

    auto iterate = [&](const SquareMatrix &A, std::vector<double> v, std::size_t max_it, bool &converged) {
        converged = false;
        for(std::size_t it = 0; it < max_it; ++it){
            auto next = detail::matvec(A, v);
            const double nn = detail::norm2(next);
            if(!(nn > 0.0) || !std::isfinite(nn)) return v;
            for(double &x : next) x /= nn;
            double diff = 0.0;
            for(std::size_t i = 0; i < L; ++i) diff = std::max(diff, std::abs(next[i] - v[i]));
            v = std::move(next);
            if(diff < cfg.tolerance){
                converged = true;
                break;
            }
        }
        return v;
    };

    bool ok = false;
    std::vector<double> v = iterate(P, uniform, cfg.max_iterations, ok);
    if(!ok) return uniform;
    // polish on the shifted matrix itself
    v = iterate(M, v, cfg.max_iterations, ok);
    if(!ok) return uniform;

    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    if(std::abs(s) < 1e-12) return uniform;
    if(s < 0.0) for(double &x : v) x = -x;
    return v;
}

// w_i = v_i / sum(v); negative entries are clamped to zero and the rest renormalized.
inline AggregationWeights aggregation_weights(const std::vector<double> &v) {
    if(v.empty() || std::all_of(v.begin(), v.end(), [](double x){ return x == 0.0; })){
        throw std::invalid_argument("aggregation_weights: all-zero eigenvector");
    }
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    if(!(s > 0.0)){
        throw std::invalid_argument("aggregation_weights: eigenvector entries must sum to a positive value");
    }
    AggregationWeights out;
    out.w.resize(v.size());
    bool clamped = false;
    for(std::size_t i = 0; i < v.size(); ++i){
        out.w[i] = v[i] / s;
        if(out.w[i] < 0.0){
            out.w[i] = 0.0;
            clamped = true;
        }
    }
    if(clamped){
        const double t = out.sum();
        for(double &x : out.w) x /= t;
    }
    return out;
}

inline AggregationWeights uniform_weights(std::size_t L) {
    if(L == 0) throw std::invalid_argument("uniform_weights: empty set");
    return AggregationWeights{std::vector<double>(L, 1.0 / static_cast<double>(L))};
}

// Pointwise weighted sum accumulated in double.
template <class T>
std::vector<T> weighted_sum(const std::vector<std::span<const T>> &items, const AggregationWeights &w) {
    if(items.size() != w.size()){
        throw std::invalid_argument("weighted_template: weight count does not match item count");
    }
    const std::size_t n = items.front().size();
    std::vector<double> acc(n, 0.0);
    for(std::size_t i = 0; i < items.size(); ++i){
        if(items[i].size() != n) throw std::invalid_argument("weighted_template: items differ in size");
        const double wi = w.w[i];
        if(wi == 0.0) continue;
        const auto &it = items[i];
        for(std::size_t p = 0; p < n; ++p) acc[p] += wi * static_cast<double>(it[p]);
    }
    std::vector<T> out(n);
    for(std::size_t p = 0; p < n; ++p) out[p] = static_cast<T>(acc[p]);
    return out;
}

template <class T>
FeatureMap<T> weighted_template(const FeatureSet<T> &fs, const AggregationWeights &w) {
    fs.validate();
    std::vector<std::span<const T>> spans;
    for(const auto &f : fs.items) spans.emplace_back(f.data);
    FeatureMap<T> out(fs.items.front().channels, fs.items.front().height, fs.items.front().width);
    out.data = weighted_sum(spans, w);
    return out;
}

template <class T>
AggregationWeights correlation_weights(const std::vector<std::span<const T>> &items, const EigenSettings &cfg = {}) {
    if(items.size() < 2) throw std::invalid_argument("correlation_weights: need at least two items");
    const auto vs = flatten_normalize(items);
    const auto C = correlation_matrix(vs);
    return aggregation_weights(leading_eigenvector(C, cfg));
}

// The full invariant aggregation: normalize, correlate, leading eigenvector,
// weights, weighted template.
template <class T>
std::pair<FeatureMap<T>, AggregationWeights> correlation_template(const FeatureSet<T> &fs, const EigenSettings &cfg = {}) {
    fs.validate();
    std::vector<std::span<const T>> spans;
    for(const auto &f : fs.items) spans.emplace_back(f.data);
    auto w = correlation_weights(spans, cfg);
    auto t = weighted_template(fs, w);
    return {std::move(t), std::move(w)};
}

template <class T>
std::pair<FeatureMap<T>, AggregationWeights> mean_template(const FeatureSet<T> &fs) {
    fs.validate();
    auto w = uniform_weights(fs.length());
    auto t = weighted_template(fs, w);
    return {std::move(t), std::move(w)};
}

enum class Aggregation { correlation, mean };

} // namespace setreg
