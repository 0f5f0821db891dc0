#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "setreg/qmap.hpp"
#include "setreg/synth.hpp"
#include "setreg/warp.hpp"

using namespace setreg;

namespace {

std::vector<double> eleven_times() {
    std::vector<double> t;
    for(int i = 0; i < 11; ++i) t.push_back(100.0 + 300.0 * i);
    return t;
}

std::vector<Sample> sample(const SignalModel &m, const std::vector<double> &times) {
    std::vector<Sample> s;
    for(double t : times) s.push_back({t, m(t)});
    return s;
}

// Independent coarse fit: for each T1* on the 100 ms grid, solve the 2x2
// normal equations for (A, B) by Cramer's rule and keep the best.
double grid_only_t1star(const std::vector<Sample> &s) {
    double best = 0, best_ssr = 1e300;
    for(int g = 100; g <= 3000; g += 100){
        double n = 0, e = 0, ee = 0, y = 0, ey = 0;
        for(const auto &p : s){
            const double x = -std::exp(-p.t / g);
            n += 1; e += x; ee += x * x; y += p.value; ey += x * p.value;
        }
        const double det = n * ee - e * e;
        const double A = (y * ee - e * ey) / det, B = (n * ey - e * y) / det;
        double ssr = 0;
        for(const auto &p : s){
            const double r = p.value - (A + B * -std::exp(-p.t / g));
            ssr += r * r;
        }
        if(ssr < best_ssr){
            best_ssr = ssr;
            best = g;
        }
    }
    return best;
}

} // namespace

TEST(ModelEval, AsymptoteAndOrigin) {
    const SignalModel m{1.0, 2.0, 1000.0};
    EXPECT_NEAR(model_eval(m, 1e6), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(model_eval(m, 0.0), -1.0);
}

TEST(ModelEval, NullTimeSolvesAnalytically) {
    const SignalModel m{1.0, 2.0, 1000.0};
    const double tnull = 1000.0 * std::log(2.0);
    EXPECT_NEAR(tnull, 693.147, 1e-3);
    EXPECT_NEAR(model_eval(m, tnull), 0.0, 1e-12);
}

TEST(LookLocker, Examples) {
    EXPECT_DOUBLE_EQ(look_locker_correct(1.0, 2.0, 1000.0), 1000.0);
    EXPECT_DOUBLE_EQ(look_locker_correct(1.3, 1.3, 800.0), 0.0);
    EXPECT_NEAR(look_locker_correct(1.0, 1.8, 900.0), 720.0, 1e-9);
    EXPECT_THROW(look_locker_correct(0.0, 1.0, 900.0), std::invalid_argument);
    EXPECT_THROW(look_locker_correct(-1.0, 1.0, 900.0), std::invalid_argument);
}

TEST(FitVoxel, RecoversNoiselessModel) {
    const auto s = sample({1.0, 2.0, 1000.0}, eleven_times());
    const auto f = fit_voxel(s);
    EXPECT_TRUE(f.converged);
    EXPECT_NEAR(f.model.T1star, 1000.0, 1.0);
    EXPECT_GT(f.r2, 0.9999);
    EXPECT_NEAR(f.t1, 1000.0, 2.0);
    // the coarse grid alone lands on the right cell
    EXPECT_DOUBLE_EQ(grid_only_t1star(s), 1000.0);
}

TEST(FitVoxel, GridOracleBracketsRefinedEstimate) {
    const auto s = sample({0.9, 1.7, 1234.0}, eleven_times());
    const double g = grid_only_t1star(s);
    const auto f = fit_voxel(s);
    EXPECT_LE(std::abs(f.model.T1star - g), 100.0);
    EXPECT_NEAR(f.model.T1star, 1234.0, 1234.0 * 1e-3);
}

TEST(FitVoxel, ConstantDataHasUnitR2) {
    std::vector<Sample> s;
    for(double t : eleven_times()) s.push_back({t, 0.7});
    const auto f = fit_voxel(s);
    EXPECT_EQ(f.r2, 1.0);
    EXPECT_NEAR(f.model.A, 0.7, 1e-9);
    EXPECT_NEAR(f.model.B, 0.0, 1e-9);
}

TEST(FitVoxel, R2BelowOneWithResiduals) {
    auto s = sample({1.0, 2.0, 1000.0}, eleven_times());
    s[4].value += 0.05;
    const auto f = fit_voxel(s);
    EXPECT_LT(f.r2, 1.0);
    EXPECT_GE(f.sd_t1, 0.0);
}

TEST(FitVoxel, RejectsBadSamples) {
    EXPECT_THROW(fit_voxel({{100, 1}, {200, 1}, {300, 1}}), std::invalid_argument);
    EXPECT_THROW(fit_voxel({{100, 1}, {100, 1}, {300, 1}, {400, 0}}), std::invalid_argument);
}

TEST(FitVoxel, NoiselessConsistencyOverRandomModels) {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const auto times = eleven_times();
    for(int k = 0; k < 100; ++k){
        const double A = 0.5 + 1.5 * U(rng);
        const double B = A * (1.0 + 2.0 * U(rng));
        const double T = 200.0 + 2300.0 * U(rng);
        const auto s = sample({A, B, T}, times);
        const auto f = fit_voxel(s);
        for(const auto &p : s){
            const double scale = std::max(std::abs(p.value), 1e-3 * A);
            EXPECT_LE(std::abs(f.model(p.t) - p.value) / scale, 1e-6) << "draw " << k << " t " << p.t;
        }
    }
}

TEST(FitVoxel, DeltaMethodSdMatchesMonteCarlo) {
    const SignalModel truth{1.0, 2.0, 1000.0};
    const auto times = eleven_times();
    std::mt19937_64 rng(55);
    std::normal_distribution<double> N(0.0, 0.05);
    std::vector<double> t1s;
    double sd_sum = 0;
    for(int k = 0; k < 500; ++k){
        auto s = sample(truth, times);
        for(auto &p : s) p.value += N(rng);
        const auto f = fit_voxel(s);
        t1s.push_back(f.t1);
        sd_sum += f.sd_t1;
    }
    double m = 0;
    for(double v : t1s) m += v;
    m /= static_cast<double>(t1s.size());
    double var = 0;
    for(double v : t1s) var += (v - m) * (v - m);
    const double empirical = std::sqrt(var / static_cast<double>(t1s.size() - 1));
    const double predicted = sd_sum / 500.0;
    EXPECT_GT(predicted, empirical / 2.0);
    EXPECT_LT(predicted, empirical * 2.0);
}

TEST(FitMap, AlignedBeatsShifted) {
    const auto ph = make_phantom(64, 64, 3);
    const auto times = eleven_times();
    std::vector<Image<double>> aligned, shifted;
    for(std::size_t i = 0; i < times.size(); ++i){
        const auto img = ph.signal(times[i]);
        aligned.push_back(img);
        DisplacementField<double> u(64, 64);
        const double s = (i % 2 == 0) ? 3.0 : -3.0;
        u.dx.assign(u.size(), s);
        shifted.push_back(warp_image(img, u));
    }
    const auto ra = fit_map(Sequence<double>(aligned), times, &ph.labels);
    const auto rs = fit_map(Sequence<double>(shifted), times, &ph.labels);
    EXPECT_GT(median(ra.masked_r2), 0.999);
    EXPECT_LT(median(rs.masked_r2), median(ra.masked_r2));
}

TEST(FitMap, EmptyMaskGivesEmptyStatistics) {
    const auto ph = make_phantom(64, 64, 1);
    const auto times = eleven_times();
    std::vector<Image<double>> frames;
    for(double t : times) frames.push_back(ph.signal(t));
    const LabelMask empty(64, 64);
    const auto r = fit_map(Sequence<double>(frames), times, &empty);
    EXPECT_TRUE(r.masked_r2.empty());
    EXPECT_EQ(r.fitted.count(1), 0u);
    for(double v : r.t1.data) EXPECT_EQ(v, 0.0);
}

TEST(FitMap, LengthMismatchThrows) {
    const auto ph = make_phantom(64, 64, 1);
    std::vector<Image<double>> frames{ph.signal(100), ph.signal(400)};
    EXPECT_THROW(fit_map(Sequence<double>(frames), {100.0}), std::invalid_argument);
}

TEST(FitMap, ThreadCountDoesNotChangeResult) {
    const auto ph = make_phantom(64, 64, 9);
    const auto times = eleven_times();
    std::vector<Image<double>> frames;
    for(double t : times) frames.push_back(ph.signal(t));
    const Sequence<double> seq(frames);
    const auto a = fit_map(seq, times, &ph.labels, std::uint8_t{2}, 1);
    const auto b = fit_map(seq, times, &ph.labels, std::uint8_t{2}, 3);
    EXPECT_EQ(a.t1, b.t1);
    EXPECT_EQ(a.r2, b.r2);
}
