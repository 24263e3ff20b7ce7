#pragma once

// Synthetic datasets and population coding of real-valued inputs into spike trains.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "bisnn/error.hpp"
#include "bisnn/rng.hpp"
#include "bisnn/spikes.hpp"

namespace bisnn {

struct Range {
    double low = 0.0;
    double high = 1.0;
    friend bool operator==(const Range&, const Range&) = default;
};

struct PopulationCodeSpec {
    std::size_t n_units = 10;  // per input dimension
    std::vector<Range> ranges; // one per input dimension
    double width = 0.0;        // tuning-curve std; 0 selects (high - low) / n_units per dimension
    double max_rate = 0.5;     // firing probability per step at a unit's center
    std::size_t steps = 100;   // T

    void validate() const {
        if (n_units == 0) throw ConfigError("PopulationCodeSpec: n_units must be positive");
        if (ranges.empty()) throw ConfigError("PopulationCodeSpec: at least one input range is required");
        for (const auto& r : ranges)
            if (!(r.low < r.high)) throw ConfigError("PopulationCodeSpec: range requires low < high");
        if (!(width >= 0.0) || !std::isfinite(width)) throw ConfigError("PopulationCodeSpec: width must be positive");
        if (!(max_rate > 0.0 && max_rate <= 1.0)) throw ConfigError("PopulationCodeSpec: max_rate must lie in (0, 1]");
        if (steps == 0) throw ConfigError("PopulationCodeSpec: T must be positive");
    }

    [[nodiscard]] std::size_t dims() const noexcept { return ranges.size(); }
    [[nodiscard]] std::size_t neurons() const noexcept { return ranges.size() * n_units; }

    [[nodiscard]] double center(std::size_t dim, std::size_t unit) const {
        const auto& r = ranges[dim];
        if (n_units == 1) return 0.5 * (r.low + r.high);
        return r.low + (r.high - r.low) * static_cast<double>(unit) / static_cast<double>(n_units - 1);
    }

    [[nodiscard]] double tuning_width(std::size_t dim) const {
        if (width > 0.0) return width;
        return (ranges[dim].high - ranges[dim].low) / static_cast<double>(n_units);
    }

    /// Firing probability of `unit` of dimension `dim` for input value x (clamped to the range).
    [[nodiscard]] double rate(std::size_t dim, std::size_t unit, double x) const {
        x = std::clamp(x, ranges[dim].low, ranges[dim].high);
        const double d = x - center(dim, unit);
        const double w = tuning_width(dim);
        return max_rate * std::exp(-d * d / (2.0 * w * w));
    }
};

/// Bernoulli spike trains with Gaussian tuning. Output is (T, dims * n_units);
/// neuron index is dim * n_units + unit.
[[nodiscard]] inline SpikeTensor population_encode(std::span<const double> x, const PopulationCodeSpec& spec,
                                                   const CounterRng& rng) {
    spec.validate();
    require_shape(x.size() == spec.dims(), "population_encode: input dimension does not match spec");
    const std::size_t n = spec.neurons();
    std::vector<double> rates(n);
    for (std::size_t d = 0; d < spec.dims(); ++d)
        for (std::size_t j = 0; j < spec.n_units; ++j) rates[d * spec.n_units + j] = spec.rate(d, j, x[d]);
    SpikeTensor out(spec.steps, n);
    for (std::size_t t = 0; t < spec.steps; ++t)
        for (std::size_t k = 0; k < n; ++k) out.set(t, k, rng.uniform(t * n + k) < rates[k]);
    return out;
}

struct LabeledPoints {
    std::vector<std::array<double, 2>> points;
    std::vector<int> labels;
};

/// Two interleaving half circles. Class 0: (cos t, sin t); class 1:
/// (1 - cos t, 1/2 - sin t); t uniform on [0, pi]; isotropic Gaussian noise.
[[nodiscard]] inline LabeledPoints gen_two_moons(std::size_t n_per_class, double noise_std, std::uint64_t seed) {
    if (n_per_class == 0) throw ConfigError("gen_two_moons: n_per_class must be positive");
    if (!(noise_std >= 0.0)) throw ConfigError("gen_two_moons: noise_std must be nonnegative");
    RngStream angle(seed, 1);
    RngStream noise(seed, 2);
    LabeledPoints out;
    for (int cls = 0; cls < 2; ++cls) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const double th = std::numbers::pi * angle.uniform();
            double x = cls == 0 ? std::cos(th) : 1.0 - std::cos(th);
            double y = cls == 0 ? std::sin(th) : 0.5 - std::sin(th);
            if (noise_std > 0.0) {
                x += noise_std * noise.normal();
                y += noise_std * noise.normal();
            }
            out.points.push_back({x, y});
            out.labels.push_back(cls);
        }
    }
    return out;
}

struct RegressionPoints {
    std::vector<double> x;
    std::vector<double> y;
};

inline constexpr std::array<Range, 3> kClusterSupport{{{-1.0, -0.6}, {-0.2, 0.2}, {0.6, 1.0}}};

[[nodiscard]] constexpr double cubic_target(double x) noexcept { return x * x * x; }

/// Three separated clusters of inputs with y = x^3 + N(0, noise_std^2).
[[nodiscard]] inline RegressionPoints gen_1d_clusters(std::uint64_t seed, std::size_t per_cluster = 50,
                                                      double noise_std = 0.02) {
    RngStream u(seed, 1);
    RngStream noise(seed, 2);
    RegressionPoints out;
    for (const auto& c : kClusterSupport) {
        for (std::size_t i = 0; i < per_cluster; ++i) {
            const double x = u.uniform(c.low, c.high);
            out.x.push_back(x);
            out.y.push_back(cubic_target(x) + (noise_std > 0.0 ? noise_std * noise.normal() : 0.0));
        }
    }
    return out;
}

} // namespace bisnn
