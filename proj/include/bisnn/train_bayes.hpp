#pragma once

// Bayesian training of binary-weight SNNs.
//
// The posterior over weights is a mean-field Bernoulli distribution on
// {+1,-1} with natural parameters (logits) w_r:
//
//     P(w = +1) = sigmoid(2 w_r),   E[w] = mu = tanh(w_r).
//
// The free energy E_q[L] + rho KL(q || prior) is minimized by natural
// gradient on w_r, with the gradient with respect to mu estimated through a
// Gumbel-Softmax relaxed sample w = tanh((w_r + delta) / tau).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "bisnn/error.hpp"
#include "bisnn/network.hpp"
#include "bisnn/rng.hpp"
#include "bisnn/train_st.hpp"

namespace bisnn {

inline constexpr double kEpsilonClamp = 1e-7;
inline constexpr double kLogitCap = 15.0;

struct VariationalParams {
    std::vector<Matrix> logits;

    [[nodiscard]] static VariationalParams zeros(const Network& net) { return {net.zeros()}; }

    /// Logits uniform in [-bound, bound].
    [[nodiscard]] static VariationalParams uniform(const Network& net, std::uint64_t seed, double bound = 0.1) {
        return {RealWeights::uniform(net, seed, bound).layers};
    }

    /// w_r = 0.5 log(p / (1 - p)).
    [[nodiscard]] static VariationalParams from_probabilities(std::span<const Matrix> p) {
        VariationalParams v;
        for (const auto& m : p)
            v.logits.push_back(m.unaryExpr([](double x) { return 0.5 * std::log(x / (1.0 - x)); }));
        return v;
    }

    /// w_r = 0.5 log((1 + mu) / (1 - mu)) = artanh(mu).
    [[nodiscard]] static VariationalParams from_means(std::span<const Matrix> mu) {
        VariationalParams v;
        for (const auto& m : mu) v.logits.push_back(m.unaryExpr([](double x) { return std::atanh(x); }));
        return v;
    }

    [[nodiscard]] std::vector<Matrix> means() const {
        std::vector<Matrix> out;
        for (const auto& m : logits) out.push_back(m.array().tanh().matrix());
        return out;
    }

    /// P(w = +1) = sigmoid(2 w_r).
    [[nodiscard]] std::vector<Matrix> probabilities() const {
        std::vector<Matrix> out;
        for (const auto& m : logits) out.push_back(m.unaryExpr([](double x) { return sigmoid(2.0 * x); }));
        return out;
    }

    [[nodiscard]] bool finite() const { return all_finite(logits); }
};

struct BayesHyperparams {
    double rho = 1e-4;   // temperature
    double tau_gs = 1.0; // relaxation
    double eta = 1e-3;
    std::vector<Matrix> prior_logits; // empty: uniform prior (all zero)
    std::size_t ensemble_size = 10;
    std::size_t gs_samples = 1; // relaxed samples averaged per update
    unsigned workers = 1;

    void validate() const {
        if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("BayesHyperparams: eta must lie in (0, 1)");
        if (!(tau_gs > 0.0)) throw ConfigError("BayesHyperparams: tau_gs must be positive");
        if (!(rho >= 0.0) || !std::isfinite(rho)) throw ConfigError("BayesHyperparams: rho must be nonnegative");
        if (ensemble_size == 0) throw ConfigError("BayesHyperparams: ensemble_size must be positive");
        if (gs_samples == 0) throw ConfigError("BayesHyperparams: gs_samples must be positive");
    }

    [[nodiscard]] Matrix prior(std::size_t layer, const Matrix& like) const {
        if (prior_logits.empty()) return Matrix::Zero(like.rows(), like.cols());
        require_shape(layer < prior_logits.size() && prior_logits[layer].rows() == like.rows() &&
                          prior_logits[layer].cols() == like.cols(),
                      "BayesHyperparams: prior logits do not match the weight shapes");
        return prior_logits[layer];
    }
};

/// delta = 0.5 log(eps / (1 - eps)), eps clamped to [1e-7, 1 - 1e-7].
[[nodiscard]] inline double logistic_noise(double eps) noexcept {
    eps = std::clamp(eps, kEpsilonClamp, 1.0 - kEpsilonClamp);
    return 0.5 * std::log(eps / (1.0 - eps));
}

[[nodiscard]] inline double gs_relax(double logit, double delta, double tau) noexcept {
    return std::tanh((logit + delta) / tau);
}

/// Relaxed sample of every weight. Weight k of the flattened (column-major)
/// layer uses counter `offset + k`, so draws do not depend on scheduling.
[[nodiscard]] inline Matrix gs_sample(const Matrix& logits, double tau, const CounterRng& rng, std::uint64_t offset = 0) {
    if (!(tau > 0.0)) throw ConfigError("gs_sample: tau must be positive");
    Matrix w(logits.rows(), logits.cols());
    for (Eigen::Index k = 0; k < logits.size(); ++k)
        w.data()[k] = gs_relax(logits.data()[k], logistic_noise(rng.uniform(offset + static_cast<std::uint64_t>(k))), tau);
    return w;
}

[[nodiscard]] inline std::vector<Matrix> gs_sample(std::span<const Matrix> logits, double tau, const CounterRng& rng) {
    std::vector<Matrix> out;
    std::uint64_t offset = 0;
    for (const auto& m : logits) {
        out.push_back(gs_sample(m, tau, rng, offset));
        offset += static_cast<std::uint64_t>(m.size());
    }
    return out;
}

/// d mu-chain factor (1 - w^2) / (tau (1 - tanh^2(w_r))). The 1/(1 - tanh^2)
/// part is cosh^2 with |w_r| capped at 15.
[[nodiscard]] inline double gs_gradient_scale(double logit, double w, double tau) noexcept {
    const double c = std::cosh(std::min(std::abs(logit), kLogitCap));
    return (1.0 - w) * (1.0 + w) * c * c / tau;
}

[[nodiscard]] inline Matrix gs_gradient_scale(const Matrix& logits, const Matrix& w, double tau) {
    require_shape(logits.rows() == w.rows() && logits.cols() == w.cols(), "gs_gradient_scale: shape mismatch");
    Matrix f(w.rows(), w.cols());
    for (Eigen::Index k = 0; k < w.size(); ++k) f.data()[k] = gs_gradient_scale(logits.data()[k], w.data()[k], tau);
    return f;
}

/// Bayes row of the rule table:
///   w_r <- (1 - eta rho) w_r - eta (grad_mu - rho w_r0)
inline void bayes_update(Matrix& logits, const Matrix& grad_mu, const Matrix& prior_logits, double eta, double rho) {
    logits = (1.0 - eta * rho) * logits - eta * (grad_mu - rho * prior_logits);
}

struct BayesStep {
    VariationalParams params;
    double mean_loss = 0.0; // loss at the relaxed sample(s)
};

/// One Bayes-BiSNN update. `rng` addresses the Gumbel draws of this step;
/// sample s uses rng.substream(s).
[[nodiscard]] inline BayesStep bayes_step(VariationalParams q, const Network& net, std::span<const Example> data,
                                          std::span<const std::size_t> batch, const BayesHyperparams& hyper,
                                          const CounterRng& rng) {
    hyper.validate();
    if (batch.empty()) throw ConfigError("bayes_step: empty batch");
    net.check_weights(q.logits);

    std::vector<Matrix> grad_mu = net.zeros();
    double loss = 0.0;
    for (std::size_t s = 0; s < hyper.gs_samples; ++s) {
        const auto relaxed = gs_sample(q.logits, hyper.tau_gs, rng.substream(s));
        const auto g = batch_gradient(net, relaxed, data, batch, hyper.workers);
        for (std::size_t l = 0; l < grad_mu.size(); ++l)
            grad_mu[l].array() += gs_gradient_scale(q.logits[l], relaxed[l], hyper.tau_gs).array() * g.mean_grad[l].array();
        loss += g.mean_loss;
    }
    const double inv = 1.0 / static_cast<double>(hyper.gs_samples);
    for (std::size_t l = 0; l < grad_mu.size(); ++l) {
        grad_mu[l] *= inv;
        bayes_update(q.logits[l], grad_mu[l], hyper.prior(l, q.logits[l]), hyper.eta, hyper.rho);
    }
    if (!q.finite()) throw NumericError("bayes_step: non-finite logits after update");
    return {std::move(q), loss * inv};
}

namespace detail {

/// log sigmoid(z), stable for large |z|.
[[nodiscard]] inline double log_sigmoid(double z) noexcept {
    return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

} // namespace detail

/// KL(Bern(sigmoid(2x)) || Bern(sigmoid(2x0))) of one weight.
[[nodiscard]] inline double bernoulli_kl(double logit, double prior_logit) noexcept {
    const double p = sigmoid(2.0 * logit);
    const double lp = detail::log_sigmoid(2.0 * logit);
    const double lq = detail::log_sigmoid(-2.0 * logit);
    const double lpi = detail::log_sigmoid(2.0 * prior_logit);
    const double lqi = detail::log_sigmoid(-2.0 * prior_logit);
    return p * (lp - lpi) + (1.0 - p) * (lq - lqi);
}

[[nodiscard]] inline double kl_divergence(std::span<const Matrix> logits, std::span<const Matrix> prior_logits) {
    double kl = 0.0;
    for (std::size_t l = 0; l < logits.size(); ++l) {
        const bool uniform = prior_logits.empty();
        if (!uniform)
            require_shape(prior_logits[l].rows() == logits[l].rows() && prior_logits[l].cols() == logits[l].cols(),
                          "kl_divergence: prior shape mismatch");
        for (Eigen::Index k = 0; k < logits[l].size(); ++k)
            kl += bernoulli_kl(logits[l].data()[k], uniform ? 0.0 : prior_logits[l].data()[k]);
    }
    return kl;
}

/// Monitored objective: loss estimate + rho * KL(q || prior).
[[nodiscard]] inline double free_energy(std::span<const Matrix> logits, double loss_estimate,
                                        std::span<const Matrix> prior_logits, double rho) {
    if (rho == 0.0) return loss_estimate;
    return loss_estimate + rho * kl_divergence(logits, prior_logits);
}

/// MAP weights sign(2 sigmoid(2 w_r) - 1), which equals sign(w_r).
[[nodiscard]] inline BinaryWeights map_weights(std::span<const Matrix> logits) { return binarize(logits); }

/// Hard binary sample: w = +1 with probability sigmoid(2 w_r).
[[nodiscard]] inline std::vector<Matrix> sample_binary(std::span<const Matrix> logits, const CounterRng& rng) {
    std::vector<Matrix> out;
    std::uint64_t offset = 0;
    for (const auto& m : logits) {
        Matrix w(m.rows(), m.cols());
        for (Eigen::Index k = 0; k < m.size(); ++k)
            w.data()[k] = rng.uniform(offset + static_cast<std::uint64_t>(k)) < sigmoid(2.0 * m.data()[k]) ? 1.0 : -1.0;
        offset += static_cast<std::uint64_t>(m.size());
        out.push_back(std::move(w));
    }
    return out;
}

} // namespace bisnn
