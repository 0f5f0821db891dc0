#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "setreg/core.hpp"
#include "setreg/parallel.hpp"

namespace setreg {

// S(t) = A - B exp(-t / T1*)
struct SignalModel {
    double A = 1.0;
    double B = 2.0;
    double T1star = 1000.0; // ms

    double operator()(double t) const { return A - B * std::exp(-t / T1star); }
};

inline double model_eval(const SignalModel &m, double t) { return m(t); }

inline double look_locker_correct(double A, double B, double T1star) {
    if(!(A > 0.0)) throw std::invalid_argument("look_locker_correct: A must be positive");
    return T1star * (B / A - 1.0);
}

struct Sample {
    double t;
    double value;
};

struct VoxelFit {
    SignalModel model;
    double t1 = 0.0;
    double r2 = 0.0;
    double sd_t1 = 0.0;
    bool converged = false;
};

namespace detail {

struct LinearFit {
    double A = 0.0, B = 0.0, ssr = std::numeric_limits<double>::infinity();
};

// Best (A, B) for a fixed T1*: ordinary least squares on [1, -exp(-t/T1*)].
inline LinearFit fit_amplitudes(const std::vector<Sample> &s, double t1s) {
    const double n = static_cast<double>(s.size());
    double se = 0, see = 0, sy = 0, sey = 0;
    for(const auto &p : s){
        const double e = std::exp(-p.t / t1s);
        se += e;
        see += e * e;
        sy += p.value;
        sey += e * p.value;
    }
    const double det = n * see - se * se;
    LinearFit f;
    if(std::abs(det) < 1e-300) return f;
    // y = A - B e
    const double A = (see * sy - se * sey) / det;
    const double mB = (n * sey - se * sy) / det;
    f.A = A;
    f.B = -mB;
    f.ssr = 0;
    for(const auto &p : s){
        const double r = p.value - (f.A - f.B * std::exp(-p.t / t1s));
        f.ssr += r * r;
    }
    return f;
}

inline double residual_ss(const std::vector<Sample> &s, const SignalModel &m) {
    double ssr = 0;
    for(const auto &p : s){
        const double r = p.value - m(p.t);
        ssr += r * r;
    }
    return ssr;
}

} // namespace detail

// Grid search over T1* in {100, ..., 3000} ms with linear (A, B), then
// Levenberg-Marquardt on all three parameters.
inline VoxelFit fit_voxel(const std::vector<Sample> &samples) {
    if(samples.size() < 4) throw std::invalid_argument("fit_voxel: at least four samples are required");
    {
        std::vector<double> ts;
        for(const auto &s : samples){
            if(!std::isfinite(s.t) || !std::isfinite(s.value)) throw std::invalid_argument("fit_voxel: non-finite sample");
            ts.push_back(s.t);
        }
        std::sort(ts.begin(), ts.end());
        if(std::adjacent_find(ts.begin(), ts.end()) != ts.end()){
            throw std::invalid_argument("fit_voxel: sample times must be distinct");
        }
    }
    const std::size_t n = samples.size();

    SignalModel best;
    double best_ssr = std::numeric_limits<double>::infinity();
    for(int k = 1; k <= 30; ++k){
        const double t1s = 100.0 * k;
        const auto f = detail::fit_amplitudes(samples, t1s);
        if(f.ssr < best_ssr){
            best_ssr = f.ssr;
            best = {f.A, f.B, t1s};
        }
    }

    VoxelFit out;
    out.model = best;
    Eigen::Vector3d p(best.A, best.B, best.T1star);
    double ssr = best_ssr;
    double lambda = 1e-3;
    Eigen::MatrixXd J(n, 3);
    Eigen::VectorXd r(n);
    auto linearize = [&](const Eigen::Vector3d &q){
        for(std::size_t i = 0; i < n; ++i){
            const double t = samples[i].t, e = std::exp(-t / q[2]);
            r[i] = samples[i].value - (q[0] - q[1] * e);
            J(i, 0) = 1.0;
            J(i, 1) = -e;
            J(i, 2) = -q[1] * e * t / (q[2] * q[2]);
        }
    };
    bool converged = false;
    for(int it = 0; it < 200; ++it){
        linearize(p);
        const Eigen::Matrix3d JtJ = J.transpose() * J;
        const Eigen::Vector3d Jtr = J.transpose() * r;
        if(Jtr.norm() <= 1e-14 * std::max(1.0, std::sqrt(ssr))){
            converged = true;
            break;
        }
        bool accepted = false;
        while(lambda < 1e12){
            Eigen::Matrix3d Ad = JtJ;
            for(int d = 0; d < 3; ++d) Ad(d, d) += lambda * std::max(JtJ(d, d), 1e-12);
            const Eigen::Vector3d step = Ad.ldlt().solve(Jtr);
            const Eigen::Vector3d q = p + step;
            if(q[2] > 1.0 && q.allFinite()){
                const double s = detail::residual_ss(samples, {q[0], q[1], q[2]});
                if(s <= ssr){
                    const double rel = (ssr - s) / std::max(ssr, 1e-300);
                    const double dp = step.cwiseAbs().cwiseQuotient(p.cwiseAbs().cwiseMax(1e-12)).maxCoeff();
                    p = q;
                    ssr = s;
                    lambda = std::max(lambda * 0.3, 1e-12);
                    accepted = true;
                    if(rel < 1e-15 || dp < 1e-12) converged = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if(!accepted){
            // no descent direction left: at a minimum to working precision
            converged = ssr <= best_ssr;
            break;
        }
        if(converged) break;
    }

    if(converged && std::isfinite(ssr) && ssr <= best_ssr){
        out.model = {p[0], p[1], p[2]};
        out.converged = true;
    } else {
        ssr = best_ssr;
        out.converged = false;
    }

    double mean = 0;
    for(const auto &s : samples) mean += s.value;
    mean /= static_cast<double>(n);
    double sst = 0;
    for(const auto &s : samples) sst += (s.value - mean) * (s.value - mean);
    // r2 is exactly 1 only when the residuals vanish
    if(ssr < 1e-12){
        out.r2 = 1.0;
    } else {
        out.r2 = std::min(1.0 - ssr / std::max(sst, 1e-12), std::nextafter(1.0, 0.0));
    }

    const auto &m = out.model;
    out.t1 = m.A > 0 ? look_locker_correct(m.A, m.B, m.T1star) : 0.0;

    // delta method on T1 = T1*(B/A - 1) with covariance sigma^2 (J^T J)^-1
    if(n > 3 && m.A > 0){
        linearize(Eigen::Vector3d(m.A, m.B, m.T1star));
        const double sigma2 = ssr / static_cast<double>(n - 3);
        const Eigen::Matrix3d JtJ = J.transpose() * J;
        Eigen::FullPivLU<Eigen::Matrix3d> lu(JtJ);
        if(lu.isInvertible()){
            const Eigen::Matrix3d cov = sigma2 * lu.inverse();
            const Eigen::Vector3d g(-m.T1star * m.B / (m.A * m.A), m.T1star / m.A, m.B / m.A - 1.0);
            out.sd_t1 = std::sqrt(std::max(0.0, g.dot(cov * g)));
        }
    }
    return out;
}

struct FitResult {
    std::size_t height = 0;
    std::size_t width = 0;
    Image<double> A, B, T1star, t1, r2, sd_t1;
    LabelMask converged;     // 1 where the LM refinement converged
    LabelMask fitted;        // 1 where a fit was attempted
    std::vector<double> masked_r2; // r2 of fitted pixels, row-major order
};

// Fit every pixel selected by the mask (label > 0, or == label when given).
// Unfitted pixels stay zero.
template <class T>
FitResult fit_map(const Sequence<T> &seq, const std::vector<double> &times, const LabelMask *mask = nullptr,
                  std::optional<std::uint8_t> label = std::nullopt, std::size_t threads = 1) {
    seq.validate();
    if(times.size() != seq.length()) throw std::invalid_argument("fit_map: times length does not match sequence length");
    const std::size_t h = seq.height(), w = seq.width(), N = h * w;
    if(mask != nullptr && !(mask->height == h && mask->width == w)) throw std::invalid_argument("fit_map: mask grid mismatch");
    FitResult out;
    out.height = h;
    out.width = w;
    out.A = out.B = out.T1star = out.t1 = out.r2 = out.sd_t1 = Image<double>(h, w);
    out.converged = out.fitted = LabelMask(h, w);
    std::vector<std::size_t> pix;
    for(std::size_t p = 0; p < N; ++p){
        if(mask == nullptr){
            pix.push_back(p);
            continue;
        }
        const auto l = mask->labels[p];
        if(label ? l == *label : l > 0) pix.push_back(p);
    }
    std::vector<VoxelFit> fits(pix.size());
    parallel_for(pix.size(), threads, [&](std::size_t k){
        std::vector<Sample> s(times.size());
        for(std::size_t i = 0; i < times.size(); ++i) s[i] = {times[i], static_cast<double>(seq.frames[i].data[pix[k]])};
        fits[k] = fit_voxel(s);
    });
    for(std::size_t k = 0; k < pix.size(); ++k){
        const std::size_t p = pix[k];
        const auto &f = fits[k];
        out.A.data[p] = f.model.A;
        out.B.data[p] = f.model.B;
        out.T1star.data[p] = f.model.T1star;
        out.t1.data[p] = f.t1;
        out.r2.data[p] = f.r2;
        out.sd_t1.data[p] = f.sd_t1;
        out.converged.labels[p] = f.converged ? 1 : 0;
        out.fitted.labels[p] = 1;
        out.masked_r2.push_back(f.r2);
    }
    return out;
}

inline double median(std::vector<double> v) {
    if(v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if(v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

} // namespace setreg
