#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "setreg/setagg.hpp"

using namespace setreg;

namespace {

FeatureMap<float> constant_map(float v, std::size_t c = 1, std::size_t h = 3, std::size_t w = 3) {
    return FeatureMap<float>(c, h, w, v);
}

FeatureSet<float> random_set(std::size_t L, std::mt19937_64 &rng, std::size_t c = 2, std::size_t h = 6, std::size_t w = 5) {
    std::normal_distribution<float> N(0.f, 1.f);
    std::vector<float> base(c * h * w);
    for(auto &v : base) v = N(rng);
    std::vector<FeatureMap<float>> items;
    for(std::size_t i = 0; i < L; ++i){
        FeatureMap<float> f(c, h, w);
        const float mix = 0.3f + 0.7f * static_cast<float>(rng() % 1000) / 1000.f;
        for(std::size_t k = 0; k < f.data.size(); ++k) f.data[k] = mix * base[k] + 0.5f * N(rng);
        items.push_back(f);
    }
    return FeatureSet<float>(items);
}

Permutation random_permutation(std::size_t L, std::mt19937_64 &rng) {
    std::vector<std::size_t> m(L);
    std::iota(m.begin(), m.end(), std::size_t{0});
    std::shuffle(m.begin(), m.end(), rng);
    return Permutation(m);
}

SquareMatrix random_psd(std::size_t L, std::mt19937_64 &rng) {
    std::normal_distribution<double> N(0, 1);
    std::vector<double> B(L * L);
    for(auto &v : B) v = N(rng);
    SquareMatrix C(L);
    for(std::size_t i = 0; i < L; ++i)
        for(std::size_t j = 0; j < L; ++j){
            double s = 0;
            for(std::size_t k = 0; k < L; ++k) s += B[i * L + k] * B[j * L + k];
            C(i, j) = s;
        }
    return C;
}

} // namespace

TEST(FlattenNormalize, ConstantItemBecomesZero) {
    std::vector<float> ones(9, 1.f);
    const auto v = flatten_normalize(std::vector<std::span<const float>>{std::span<const float>(ones)});
    for(double x : v[0]) EXPECT_EQ(x, 0.0);
}

TEST(FlattenNormalize, TwoValues) {
    std::vector<float> item{-1.f, 1.f};
    const auto v = flatten_normalize(std::vector<std::span<const float>>{std::span<const float>(item)});
    EXPECT_NEAR(v[0][0], -0.70710678, 1e-8);
    EXPECT_NEAR(v[0][1], 0.70710678, 1e-8);
}

TEST(FlattenNormalize, RandomItemsHaveUnitNorm) {
    std::mt19937_64 rng(10);
    const auto fs = random_set(5, rng);
    for(const auto &v : flatten_normalize(fs)){
        double n = 0;
        for(double x : v) n += x * x;
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    }
}

TEST(FlattenNormalize, NonFiniteThrows) {
    std::vector<float> item{0.f, std::numeric_limits<float>::infinity()};
    EXPECT_THROW(flatten_normalize(std::vector<std::span<const float>>{std::span<const float>(item)}), std::invalid_argument);
}

TEST(CorrelationMatrix, IdenticalAndOrthogonal) {
    const double r = 1 / std::sqrt(2.0);
    const auto same = correlation_matrix({{r, r}, {r, r}});
    for(double x : same.a) EXPECT_NEAR(x, 1.0, 1e-15);
    const auto orth = correlation_matrix({{1, 0}, {0, 1}});
    EXPECT_EQ(orth(0, 0), 1.0);
    EXPECT_EQ(orth(1, 1), 1.0);
    EXPECT_EQ(orth(0, 1), 0.0);
    EXPECT_EQ(orth(1, 0), 0.0);
}

TEST(CorrelationMatrix, ThreeVectorsByDirectInnerProducts) {
    std::vector<std::vector<double>> vs{{0.6, 0.8, 0.0}, {0.0, 0.6, 0.8}, {0.8, 0.0, 0.6}};
    const auto C = correlation_matrix(vs);
    // 0.6*0 + 0.8*0.6 = 0.48; 0.6*0.8 = 0.48; 0.8*0.6 = 0.48
    EXPECT_NEAR(C(0, 1), 0.48, 1e-15);
    EXPECT_NEAR(C(0, 2), 0.48, 1e-15);
    EXPECT_NEAR(C(1, 2), 0.48, 1e-15);
    EXPECT_EQ(C(1, 0), C(0, 1));
    EXPECT_THROW(correlation_matrix({{1, 0}, {1}}), std::invalid_argument);
}

TEST(CorrelationMatrix, ZeroItemHasZeroDiagonal) {
    const auto C = correlation_matrix({{0, 0}, {1, 0}});
    EXPECT_EQ(C(0, 0), 0.0);
    EXPECT_EQ(C(1, 1), 1.0);
}

TEST(LeadingEigenvector, SymmetricTwoByTwo) {
    SquareMatrix ones(2, 1.0);
    auto v = leading_eigenvector(ones);
    EXPECT_NEAR(v[0], 0.70710678, 1e-8);
    EXPECT_NEAR(v[1], 0.70710678, 1e-8);
    SquareMatrix m(2);
    m(0, 0) = m(1, 1) = 1.0;
    m(0, 1) = m(1, 0) = 0.5;
    v = leading_eigenvector(m);
    EXPECT_NEAR(v[0], 0.70710678, 1e-8);
    EXPECT_NEAR(v[1], 0.70710678, 1e-8);
}

TEST(LeadingEigenvector, AsymmetricThrows) {
    SquareMatrix m(2, 1.0);
    m(0, 1) = 0.5;
    EXPECT_THROW(leading_eigenvector(m), std::invalid_argument);
}

TEST(LeadingEigenvector, ZeroSumFallsBackToUniform) {
    // leading eigenvector of [[0,-1],[-1,0]] is (1,-1)/sqrt2: sums to zero
    SquareMatrix m(2);
    m(0, 1) = m(1, 0) = -1.0;
    const auto v = leading_eigenvector(m);
    EXPECT_NEAR(v[0], 0.70710678, 1e-8);
    EXPECT_NEAR(v[1], 0.70710678, 1e-8);
}

TEST(LeadingEigenvector, MatchesJacobiOracleOnRandomPsd) {
    std::mt19937_64 rng(11);
    for(int trial = 0; trial < 200; ++trial){
        const std::size_t L = 2 + trial % 7;
        const auto C = random_psd(L, rng);
        const auto v = leading_eigenvector(C);
        const auto ref = oracle::leading_eigenvector(C.a, L);
        for(std::size_t i = 0; i < L; ++i) EXPECT_NEAR(v[i], ref[i], 1e-8) << "trial " << trial;
    }
}

TEST(AggregationWeights, Examples) {
    auto w = aggregation_weights({0.6, 0.8});
    EXPECT_NEAR(w.w[0], 0.428571428, 1e-8);
    EXPECT_NEAR(w.w[1], 0.571428571, 1e-8);
    w = aggregation_weights({0.5, 0.5, 0.5, 0.5});
    for(double x : w.w) EXPECT_DOUBLE_EQ(x, 0.25);
    w = aggregation_weights({-1e-9, 0.5, 0.5});
    EXPECT_EQ(w.w[0], 0.0);
    EXPECT_NEAR(w.w[1], 0.5, 1e-15);
    EXPECT_NEAR(w.sum(), 1.0, 1e-15);
    EXPECT_THROW(aggregation_weights({0.0, 0.0}), std::invalid_argument);
}

TEST(WeightedTemplate, Examples) {
    FeatureSet<float> two({constant_map(1.f), constant_map(3.f)});
    auto t = weighted_template(two, AggregationWeights{{0.5, 0.5}});
    for(float v : t.data) EXPECT_FLOAT_EQ(v, 2.f);
    t = weighted_template(two, AggregationWeights{{1.0, 0.0}});
    EXPECT_EQ(t, two.items[0]);
    FeatureSet<float> four({constant_map(1.f), constant_map(2.f), constant_map(3.f), constant_map(4.f)});
    t = weighted_template(four, uniform_weights(4));
    for(float v : t.data) EXPECT_FLOAT_EQ(v, 2.5f);
    EXPECT_THROW(weighted_template(four, uniform_weights(3)), std::invalid_argument);
}

TEST(CorrelationTemplate, IdenticalItemsGiveUniformWeights) {
    std::mt19937_64 rng(12);
    const auto base = random_set(2, rng).items[0];
    FeatureSet<float> fs({base, base, base});
    const auto [t, w] = correlation_template(fs);
    for(double x : w.w) EXPECT_NEAR(x, 1.0 / 3.0, 1e-12);
    for(std::size_t k = 0; k < t.data.size(); ++k) EXPECT_NEAR(t.data[k], base.data[k], 1e-6);
}

TEST(CorrelationTemplate, MatchesDenseOracleChain) {
    std::mt19937_64 rng(13);
    for(int trial = 0; trial < 20; ++trial){
        const auto fs = random_set(3, rng);
        const auto [t, w] = correlation_template(fs);
        // oracle chain: centre, normalize, Gram matrix, Jacobi, w = v / sum v
        std::vector<std::vector<double>> vs;
        for(const auto &it : fs.items){
            std::vector<double> v(it.data.begin(), it.data.end());
            double m = 0;
            for(double x : v) m += x;
            m /= static_cast<double>(v.size());
            double n = 0;
            for(double &x : v){ x -= m; n += x * x; }
            for(double &x : v) x /= std::sqrt(n);
            vs.push_back(v);
        }
        std::vector<double> G(9);
        for(int i = 0; i < 3; ++i)
            for(int j = 0; j < 3; ++j){
                double s = 0;
                for(std::size_t k = 0; k < vs[0].size(); ++k) s += vs[static_cast<std::size_t>(i)][k] * vs[static_cast<std::size_t>(j)][k];
                G[static_cast<std::size_t>(i * 3 + j)] = s;
            }
        const auto v = oracle::leading_eigenvector(G, 3);
        const double sum = v[0] + v[1] + v[2];
        for(std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w.w[i], v[i] / sum, 1e-6);
    }
}

TEST(CorrelationTemplate, PermutationInvariant) {
    std::mt19937_64 rng(14);
    for(int trial = 0; trial < 100; ++trial){
        const std::size_t L = 2 + rng() % 15;
        const auto fs = random_set(L, rng);
        const auto p = random_permutation(L, rng);
        const auto [t0, w0] = correlation_template(fs);
        const auto [t1, w1] = correlation_template(FeatureSet<float>(p.apply(fs.items)));
        for(std::size_t k = 0; k < t0.data.size(); ++k) EXPECT_NEAR(t0.data[k], t1.data[k], 1e-6);
        const auto pw = p.apply(w0.w);
        for(std::size_t i = 0; i < L; ++i) EXPECT_NEAR(pw[i], w1.w[i], 1e-9);
        EXPECT_NEAR(w0.sum(), 1.0, 1e-6);
    }
}

TEST(CorrelationTemplate, RepeatedRunsBitIdentical) {
    std::mt19937_64 rng(15);
    const auto fs = random_set(7, rng);
    const auto a = correlation_template(fs);
    const auto b = correlation_template(fs);
    EXPECT_EQ(a.second.w, b.second.w);
    EXPECT_EQ(a.first, b.first);
}

TEST(MeanTemplate, Examples) {
    FeatureSet<float> fs({constant_map(0.f), constant_map(2.f)});
    auto [t, w] = mean_template(fs);
    for(float v : t.data) EXPECT_FLOAT_EQ(v, 1.f);
    EXPECT_TRUE(w.is_uniform());
    FeatureSet<float> rep({constant_map(5.f), constant_map(5.f), constant_map(5.f)});
    EXPECT_EQ(mean_template(rep).first, rep.items[0]);
    FeatureSet<float> swapped({constant_map(2.f), constant_map(0.f)});
    EXPECT_EQ(mean_template(swapped).first, mean_template(fs).first);
}
