#pragma once

// Discrete-time Spike Response Model.
//
// Membrane potential of neuron i at time t:
//
//     u[i,t] = kappa * sum_j w[i,j] * p[j,t] - (beta * s_i)[t]
//     p[j,t] = (alpha * s_j)[t] = sum_{d>0} alpha[d] * s[j,t-d]
//
// with alpha[t] = exp(-t/tau_mem) - exp(-t/tau_syn) and beta[t] = exp(-t/tau_ref).
// Both convolutions are realized by first-order recursions: p is kept as the
// difference of two exponential traces.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bisnn/error.hpp"

namespace bisnn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class FilterParams {
public:
    FilterParams() = default;

    FilterParams(double tau_mem, double tau_syn, double tau_ref, double threshold,
                 double surrogate_steepness = 1.0)
        : tau_mem_(tau_mem), tau_syn_(tau_syn), tau_ref_(tau_ref), threshold_(threshold),
          steepness_(surrogate_steepness) {
        if (!(tau_mem > 0.0) || !(tau_syn > 0.0) || !(tau_ref > 0.0))
            throw ConfigError("FilterParams: time constants must be positive");
        if (tau_mem == tau_syn)
            throw ConfigError("FilterParams: tau_mem == tau_syn makes the synaptic filter identically zero");
        if (!(surrogate_steepness > 0.0))
            throw ConfigError("FilterParams: surrogate steepness must be positive");
        if (!std::isfinite(threshold) || !std::isfinite(tau_mem) || !std::isfinite(tau_syn) ||
            !std::isfinite(tau_ref))
            throw ConfigError("FilterParams: parameters must be finite");
    }

    [[nodiscard]] double tau_mem() const noexcept { return tau_mem_; }
    [[nodiscard]] double tau_syn() const noexcept { return tau_syn_; }
    [[nodiscard]] double tau_ref() const noexcept { return tau_ref_; }
    [[nodiscard]] double threshold() const noexcept { return threshold_; }
    [[nodiscard]] double surrogate_steepness() const noexcept { return steepness_; }

    // One-step decay factors of the recursive realizations.
    [[nodiscard]] double decay_mem() const noexcept { return std::exp(-1.0 / tau_mem_); }
    [[nodiscard]] double decay_syn() const noexcept { return std::exp(-1.0 / tau_syn_); }
    [[nodiscard]] double decay_ref() const noexcept { return std::exp(-1.0 / tau_ref_); }

    friend bool operator==(const FilterParams&, const FilterParams&) = default;

private:
    double tau_mem_ = 20.0;
    double tau_syn_ = 5.0;
    double tau_ref_ = 2.0;
    double threshold_ = 0.5;
    double steepness_ = 1.0;
};

/// Synaptic alpha kernel; zero at t = 0 because the convolution only sums over past steps.
[[nodiscard]] inline double filter_alpha(std::size_t t, const FilterParams& params) noexcept {
    if (t == 0) return 0.0;
    const auto td = static_cast<double>(t);
    return std::exp(-td / params.tau_mem()) - std::exp(-td / params.tau_syn());
}

/// Refractory (self-feedback) kernel.
[[nodiscard]] inline double filter_beta(std::size_t t, const FilterParams& params) noexcept {
    if (t == 0) return 0.0;
    return std::exp(-static_cast<double>(t) / params.tau_ref());
}

/// State of one layer between time steps. `presynaptic()` is p[j,t].
struct LayerState {
    Vector membrane;
    Vector trace_mem;
    Vector trace_syn;
    Vector refractory;
    std::vector<std::uint8_t> last_spikes;

    LayerState() = default;
    LayerState(std::size_t n_in, std::size_t n_out)
        : membrane(Vector::Zero(static_cast<Eigen::Index>(n_out))),
          trace_mem(Vector::Zero(static_cast<Eigen::Index>(n_in))),
          trace_syn(Vector::Zero(static_cast<Eigen::Index>(n_in))),
          refractory(Vector::Zero(static_cast<Eigen::Index>(n_out))),
          last_spikes(n_out, 0) {}

    [[nodiscard]] std::size_t inputs() const noexcept { return static_cast<std::size_t>(trace_mem.size()); }
    [[nodiscard]] std::size_t neurons() const noexcept { return static_cast<std::size_t>(membrane.size()); }
    [[nodiscard]] Vector presynaptic() const { return trace_mem - trace_syn; }
};

/// Consume the spikes of the current step. Afterwards the traces hold the
/// filtered history as seen by the next step.
[[nodiscard]] inline LayerState step_traces(LayerState state, std::span<const std::uint8_t> input_spikes,
                                            std::span<const std::uint8_t> own_spikes,
                                            const FilterParams& params) {
    require_shape(input_spikes.size() == state.inputs(), "step_traces: input spike count does not match traces");
    require_shape(own_spikes.size() == state.neurons(), "step_traces: own spike count does not match neurons");
    const double dm = params.decay_mem();
    const double ds = params.decay_syn();
    const double dr = params.decay_ref();
    for (std::size_t j = 0; j < input_spikes.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double s = input_spikes[j];
        state.trace_mem[jj] = dm * (state.trace_mem[jj] + s);
        state.trace_syn[jj] = ds * (state.trace_syn[jj] + s);
    }
    for (std::size_t i = 0; i < own_spikes.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        state.refractory[ii] = dr * (state.refractory[ii] + own_spikes[i]);
    }
    state.last_spikes.assign(own_spikes.begin(), own_spikes.end());
    return state;
}

/// Heaviside with Theta(0) = 1: a neuron sitting exactly on threshold fires.
[[nodiscard]] inline std::uint8_t fires(double u, double threshold) noexcept {
    return u >= threshold ? 1 : 0;
}

[[nodiscard]] inline std::pair<Vector, std::vector<std::uint8_t>>
membrane_and_spike(const LayerState& state, const Matrix& weights, double scale, const FilterParams& params) {
    require_shape(weights.cols() == static_cast<Eigen::Index>(state.inputs()),
                  "membrane_and_spike: weight columns do not match presynaptic sources");
    require_shape(weights.rows() == static_cast<Eigen::Index>(state.neurons()),
                  "membrane_and_spike: weight rows do not match neurons");
    Vector u = scale * (weights * state.presynaptic()) - state.refractory;
    std::vector<std::uint8_t> s(static_cast<std::size_t>(u.size()));
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        if (!std::isfinite(u[i])) throw NumericError("membrane_and_spike: non-finite membrane potential");
        s[static_cast<std::size_t>(i)] = fires(u[i], params.threshold());
    }
    return {std::move(u), std::move(s)};
}

[[nodiscard]] inline double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// sigma'(z) = sigma(z)(1 - sigma(z)) with z = steepness * (u - threshold).
[[nodiscard]] inline double surrogate_derivative(double u, const FilterParams& params) noexcept {
    const double z = params.surrogate_steepness() * (u - params.threshold());
    // Evaluated through |z| so the value is exactly symmetric about the threshold.
    const double e = std::exp(-std::abs(z));
    const double d = e / ((1.0 + e) * (1.0 + e));
    return d > 0.0 ? d : std::numeric_limits<double>::min();
}

} // namespace bisnn
