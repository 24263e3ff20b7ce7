#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "bisnn/network.hpp"
#include "bisnn/srm.hpp"
#include "oracles.hpp"

using namespace bisnn;

namespace {

// Independently evaluated closed forms (Python, math module).
constexpr double kAlpha1 = 0.132498671423;      // exp(-0.05) - exp(-0.2)
constexpr double kBeta1Tau2 = 0.606530659713;   // exp(-0.5)
constexpr double kBeta2Tau2 = 0.367879441171;   // exp(-1)
constexpr double kSigmaPrime2 = 0.104993585404; // s(2)(1 - s(2))

} // namespace

TEST(FilterParams, RejectsInvalid) {
    EXPECT_THROW(FilterParams(0.0, 5.0, 2.0, 0.5), ConfigError);
    EXPECT_THROW(FilterParams(20.0, -1.0, 2.0, 0.5), ConfigError);
    EXPECT_THROW(FilterParams(20.0, 5.0, 0.0, 0.5), ConfigError);
    EXPECT_THROW(FilterParams(10.0, 10.0, 2.0, 0.5), ConfigError);
    EXPECT_THROW(FilterParams(20.0, 5.0, 2.0, 0.5, 0.0), ConfigError);
    EXPECT_NO_THROW(FilterParams(20.0, 5.0, 2.0, 0.5));
}

TEST(FilterParams, Defaults) {
    const FilterParams p;
    EXPECT_EQ(p.tau_mem(), 20.0);
    EXPECT_EQ(p.tau_syn(), 5.0);
    EXPECT_EQ(p.tau_ref(), 2.0);
    EXPECT_EQ(p.threshold(), 0.5);
    EXPECT_EQ(p.surrogate_steepness(), 1.0);
}

TEST(Filters, AlphaValues) {
    const FilterParams p(20.0, 5.0, 2.0, 0.5);
    EXPECT_EQ(filter_alpha(0, p), 0.0);
    EXPECT_NEAR(filter_alpha(1, p), kAlpha1, 1e-12);
    EXPECT_NEAR(filter_alpha(5000, p), 0.0, 1e-100);
    // Monotone decay after the peak.
    std::size_t peak = 1;
    for (std::size_t t = 1; t < 200; ++t)
        if (filter_alpha(t, p) > filter_alpha(peak, p)) peak = t;
    for (std::size_t t = peak; t < 400; ++t) EXPECT_GE(filter_alpha(t, p), filter_alpha(t + 1, p));
    EXPECT_LE(peak, 10U);
}

TEST(Filters, BetaValues) {
    const FilterParams p(20.0, 5.0, 2.0, 0.5);
    EXPECT_EQ(filter_beta(0, p), 0.0);
    EXPECT_NEAR(filter_beta(1, p), kBeta1Tau2, 1e-12);
    EXPECT_NEAR(filter_beta(2, p), kBeta2Tau2, 1e-12);
}

TEST(StepTraces, ZeroHistoryStaysZero) {
    const FilterParams p;
    LayerState s(3, 2);
    const std::vector<std::uint8_t> in(3, 0), own(2, 0);
    for (int t = 0; t < 50; ++t) s = step_traces(s, in, own, p);
    EXPECT_EQ(s.presynaptic().norm(), 0.0);
    EXPECT_EQ(s.refractory.norm(), 0.0);
}

TEST(StepTraces, SingleSpikeGivesAlpha1) {
    const FilterParams p(20.0, 5.0, 2.0, 0.5);
    LayerState s(1, 1);
    s = step_traces(s, std::vector<std::uint8_t>{1}, std::vector<std::uint8_t>{1}, p);
    EXPECT_NEAR(s.presynaptic()[0], kAlpha1, 1e-12);
    EXPECT_NEAR(s.refractory[0], kBeta1Tau2, 1e-12);
    EXPECT_EQ(s.last_spikes[0], 1);
}

TEST(StepTraces, DimensionMismatch) {
    LayerState s(3, 2);
    EXPECT_THROW((void)step_traces(s, std::vector<std::uint8_t>(2, 0), std::vector<std::uint8_t>(2, 0), {}), ShapeError);
    EXPECT_THROW((void)step_traces(s, std::vector<std::uint8_t>(3, 0), std::vector<std::uint8_t>(1, 0), {}), ShapeError);
}

// Recursion equals the explicit convolution for random trains and parameters.
TEST(StepTraces, RecursionMatchesConvolution) {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> tau(0.5, 40.0);
    std::uniform_real_distribution<double> rate(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        double tm = tau(gen), ts = tau(gen);
        if (std::abs(tm - ts) < 1e-3) ts += 1.0;
        const FilterParams p(tm, ts, tau(gen), 0.5);
        const double r = rate(gen);
        const std::size_t T = 200;
        std::vector<int> in(T), own(T);
        std::bernoulli_distribution b(r);
        for (std::size_t t = 0; t < T; ++t) {
            in[t] = b(gen);
            own[t] = b(gen);
        }
        LayerState s(1, 1);
        for (std::size_t t = 0; t < T; ++t) {
            const double want_p = oracle::convolve(in, t, [&](std::size_t d) { return oracle::alpha(d, tm, ts); });
            const double want_r = oracle::convolve(own, t, [&](std::size_t d) { return oracle::beta(d, p.tau_ref()); });
            ASSERT_NEAR(s.presynaptic()[0], want_p, 1e-10) << "t=" << t;
            ASSERT_NEAR(s.refractory[0], want_r, 1e-10) << "t=" << t;
            ASSERT_GE(s.trace_mem[0], 0.0);
            ASSERT_GE(s.trace_syn[0], 0.0);
            s = step_traces(s, std::vector<std::uint8_t>{std::uint8_t(in[t])},
                            std::vector<std::uint8_t>{std::uint8_t(own[t])}, p);
        }
    }
}

TEST(MembraneAndSpike, ZeroInputBelowThreshold) {
    const FilterParams p;
    const LayerState s(2, 3);
    const auto [u, spikes] = membrane_and_spike(s, Matrix::Ones(3, 2), 1.0, p);
    EXPECT_EQ(u.norm(), 0.0);
    for (auto v : spikes) EXPECT_EQ(v, 0);
}

TEST(MembraneAndSpike, ThresholdIsInclusive) {
    const FilterParams p(20.0, 5.0, 2.0, 0.25);
    LayerState s(1, 1);
    s.trace_mem[0] = 0.75;
    s.trace_syn[0] = 0.5;
    const auto [u, spikes] = membrane_and_spike(s, Matrix::Ones(1, 1), 1.0, p);
    EXPECT_EQ(u[0], 0.25);
    EXPECT_EQ(spikes[0], 1);
}

TEST(MembraneAndSpike, ScaledSignedSum) {
    const FilterParams p;
    LayerState s(2, 1);
    s.trace_mem << 0.4, 0.1;
    Matrix w(1, 2);
    w << 1.0, -1.0;
    const auto [u, spikes] = membrane_and_spike(s, w, 1.0 / std::sqrt(2.0), p);
    EXPECT_NEAR(u[0], 0.212132034356, 1e-12);
    EXPECT_EQ(spikes[0], 0);
}

TEST(MembraneAndSpike, RefractoryIsNotScaled) {
    const FilterParams p;
    LayerState s(1, 1);
    s.trace_mem[0] = 1.0;
    s.refractory[0] = 0.3;
    const auto [u, spikes] = membrane_and_spike(s, Matrix::Ones(1, 1), 0.5, p);
    EXPECT_DOUBLE_EQ(u[0], 0.5 - 0.3);
}

TEST(MembraneAndSpike, ShapeAndFiniteness) {
    const FilterParams p;
    LayerState s(2, 1);
    EXPECT_THROW((void)membrane_and_spike(s, Matrix::Ones(1, 3), 1.0, p), ShapeError);
    EXPECT_THROW((void)membrane_and_spike(s, Matrix::Ones(2, 2), 1.0, p), ShapeError);
    s.trace_mem[0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW((void)membrane_and_spike(s, Matrix::Ones(1, 2), 1.0, p), NumericError);
}

TEST(MembraneAndSpike, RaisingThresholdNeverAddsSpikes) {
    std::mt19937_64 gen(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        LayerState s(4, 3);
        for (int j = 0; j < 4; ++j) {
            s.trace_mem[j] = std::abs(n(gen));
            s.trace_syn[j] = std::abs(n(gen));
        }
        Matrix w = Matrix::NullaryExpr(3, 4, [&] { return n(gen) > 0 ? 1.0 : -1.0; });
        const double lo = n(gen);
        const double hi = lo + std::abs(n(gen));
        const auto a = membrane_and_spike(s, w, 0.5, FilterParams(20, 5, 2, lo)).second;
        const auto b = membrane_and_spike(s, w, 0.5, FilterParams(20, 5, 2, hi)).second;
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(b[i], a[i]);
    }
}

TEST(Surrogate, Values) {
    const FilterParams p(20, 5, 2, 0.5);
    EXPECT_DOUBLE_EQ(surrogate_derivative(0.5, p), 0.25);
    EXPECT_NEAR(surrogate_derivative(2.5, p), kSigmaPrime2, 1e-12);
    EXPECT_GT(surrogate_derivative(1e6, p), 0.0);
    EXPECT_LT(surrogate_derivative(1e6, p), 1e-300);
    EXPECT_LT(surrogate_derivative(-60.0, p), 1e-25);
}

TEST(Surrogate, SymmetricPositiveAndPeaked) {
    const FilterParams p(20, 5, 2, 0.3, 2.5);
    std::mt19937_64 gen(11);
    std::normal_distribution<double> n(0.0, 10.0);
    for (int k = 0; k < 1000; ++k) {
        const double d = n(gen);
        const double a = surrogate_derivative(0.3 + d, p);
        EXPECT_NEAR(a, surrogate_derivative(0.3 - d, p), 1e-12 * a);
        EXPECT_GT(a, 0.0);
        EXPECT_LE(a, 0.25);
    }
}

TEST(ZeroInput, NeverFires) {
    const FilterParams p;
    const auto net = Network::dense(5, {4, 3}, 2, TaskKind::classification, p, 1);
    std::vector<Matrix> w{Matrix::Ones(4, 5), Matrix::Ones(3, 4)};
    const auto pass = forward_sequence(net, w, SpikeTensor(60, 5));
    for (const auto& l : pass.layers) {
        EXPECT_EQ(l.spikes.count(), 0U);
        EXPECT_EQ(l.presynaptic.norm(), 0.0);
    }
}
