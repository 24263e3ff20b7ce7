#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bisnn/error.hpp"

namespace bisnn {

/// Time-major binary activation record: row t holds the spikes of all
/// neurons at time step t+1.
class SpikeTensor {
public:
    SpikeTensor() = default;
    SpikeTensor(std::size_t steps, std::size_t neurons)
        : steps_(steps), neurons_(neurons), data_(steps * neurons, 0) {}

    SpikeTensor(std::size_t steps, std::size_t neurons, std::vector<std::uint8_t> data)
        : steps_(steps), neurons_(neurons), data_(std::move(data)) {
        require_shape(data_.size() == steps_ * neurons_, "SpikeTensor: data size does not match shape");
        for (auto v : data_)
            require_shape(v <= 1, "SpikeTensor: entries must be 0 or 1");
    }

    [[nodiscard]] std::size_t steps() const noexcept { return steps_; }
    [[nodiscard]] std::size_t neurons() const noexcept { return neurons_; }

    [[nodiscard]] std::uint8_t operator()(std::size_t t, std::size_t n) const noexcept {
        return data_[t * neurons_ + n];
    }
    void set(std::size_t t, std::size_t n, bool v) noexcept { data_[t * neurons_ + n] = v ? 1 : 0; }

    [[nodiscard]] std::span<const std::uint8_t> row(std::size_t t) const noexcept {
        return {data_.data() + t * neurons_, neurons_};
    }
    [[nodiscard]] std::span<std::uint8_t> row(std::size_t t) noexcept {
        return {data_.data() + t * neurons_, neurons_};
    }

    [[nodiscard]] const std::vector<std::uint8_t>& data() const noexcept { return data_; }

    [[nodiscard]] std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
    }

    friend bool operator==(const SpikeTensor&, const SpikeTensor&) = default;

private:
    std::size_t steps_ = 0;
    std::size_t neurons_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Supervision for one sequence: a class label, or a real vector presented
/// as the regression target at every time step.
struct Target {
    int label = -1;
    Eigen::VectorXd value;

    [[nodiscard]] static Target classification(int label) { return Target{label, {}}; }
    [[nodiscard]] static Target regression(Eigen::VectorXd value) { return Target{-1, std::move(value)}; }
    [[nodiscard]] bool is_label() const noexcept { return label >= 0; }
};

struct Example {
    SpikeTensor input;
    Target target;
};

} // namespace bisnn
