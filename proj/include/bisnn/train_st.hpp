#pragma once

// Straight-through training of binary-weight SNNs: latent real weights are
// binarized for every forward pass, and the surrogate gradient taken at the
// binary point updates the latent weights by plain SGD.

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "bisnn/error.hpp"
#include "bisnn/network.hpp"
#include "bisnn/rng.hpp"

namespace bisnn {

/// sign(x) = +1 for x >= 0, -1 otherwise.
[[nodiscard]] constexpr double sign_pm1(double x) noexcept { return x >= 0.0 ? 1.0 : -1.0; }

struct RealWeights {
    std::vector<Matrix> layers;

    /// Entries uniform in [-bound, bound].
    [[nodiscard]] static RealWeights uniform(const Network& net, std::uint64_t seed, double bound = 0.1) {
        RealWeights w{net.zeros()};
        const CounterRng root(seed, 0x57U);
        for (std::size_t l = 0; l < w.layers.size(); ++l) {
            RngStream s(root.substream(l));
            for (Eigen::Index c = 0; c < w.layers[l].cols(); ++c)
                for (Eigen::Index r = 0; r < w.layers[l].rows(); ++r) w.layers[l](r, c) = s.uniform(-bound, bound);
        }
        return w;
    }

    [[nodiscard]] bool finite() const { return all_finite(layers); }
};

/// Weights restricted to {+1, -1}.
class BinaryWeights {
public:
    BinaryWeights() = default;
    explicit BinaryWeights(std::vector<Matrix> layers) : layers_(std::move(layers)) {
        for (const auto& m : layers_)
            if (!(m.array().abs() == 1.0).all()) throw ConfigError("BinaryWeights: entries must be +1 or -1");
    }

    [[nodiscard]] const std::vector<Matrix>& layers() const noexcept { return layers_; }
    [[nodiscard]] std::span<const Matrix> span() const noexcept { return layers_; }

    friend bool operator==(const BinaryWeights&, const BinaryWeights&) = default;

private:
    std::vector<Matrix> layers_;
};

[[nodiscard]] inline BinaryWeights binarize(std::span<const Matrix> real) {
    std::vector<Matrix> out;
    out.reserve(real.size());
    for (const auto& m : real) out.push_back(m.unaryExpr([](double x) { return sign_pm1(x); }));
    return BinaryWeights(std::move(out));
}

[[nodiscard]] inline BinaryWeights binarize(const RealWeights& w) { return binarize(std::span<const Matrix>(w.layers)); }

/// ST row of the rule table: w_r <- w_r - eta * grad, grad taken at sign(w_r).
inline void st_update(Matrix& latent, const Matrix& grad, double eta) { latent -= eta * grad; }

struct StOptions {
    double eta = 0.01;
    bool clip = false; // optional clipping of latent weights to [-1, 1]
    unsigned workers = 1;
};

struct StStep {
    RealWeights weights;
    double mean_loss = 0.0;
};

/// One ST-BiSNN update on a mini-batch (indices into `data`).
[[nodiscard]] inline StStep st_step(RealWeights w_real, const Network& net, std::span<const Example> data,
                                    std::span<const std::size_t> batch, const StOptions& opt) {
    if (!(opt.eta >= 0.0)) throw ConfigError("st_step: learning rate must be nonnegative");
    if (batch.empty()) throw ConfigError("st_step: empty batch");
    const auto binary = binarize(w_real);
    auto g = batch_gradient(net, binary.span(), data, batch, opt.workers);
    if (!all_finite(g.mean_grad)) throw NumericError("st_step: non-finite gradient");
    for (std::size_t l = 0; l < w_real.layers.size(); ++l) {
        st_update(w_real.layers[l], g.mean_grad[l], opt.eta);
        if (opt.clip) w_real.layers[l] = w_real.layers[l].cwiseMax(-1.0).cwiseMin(1.0);
    }
    return {std::move(w_real), g.mean_loss};
}

} // namespace bisnn
