#pragma once

// Verification routines shared by the test suites and the `gradcheck`
// subcommand. None of these are used by training.
//
//  * Frozen-trajectory check: record a forward pass, hold every presynaptic
//    trace and refractory term at its recorded value, replace the spike
//    nonlinearity by sigmoid(k (u - theta)) / k and compare the analytic local
//    gradient (error signals evaluated on the smoothed outputs) with central
//    finite differences of the smoothed loss. The smoothed loss is evaluated
//    here from scratch, not through the training code path.
//  * Enumeration oracles over {+1,-1}^n for the mean-field Bernoulli
//    posterior: exact gradient of E_q[L] with respect to the means, and the
//    Gibbs posterior.
//  * Gumbel-Softmax estimator check against the enumeration gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bisnn/error.hpp"
#include "bisnn/network.hpp"
#include "bisnn/rng.hpp"
#include "bisnn/train_bayes.hpp"

namespace bisnn::check {

struct FrozenLayer {
    RowMatrix presynaptic; // T x n_in
    RowMatrix refractory;  // T x n_out
};

/// Recover the refractory terms of a recorded pass: refr = kappa W p - u.
[[nodiscard]] inline std::vector<FrozenLayer> freeze(const Network& net, std::span<const Matrix> weights,
                                                     const ForwardPass& pass) {
    std::vector<FrozenLayer> out;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const auto& traj = pass.layers[l];
        RowMatrix syn = net.specs()[l].scale * (traj.presynaptic * weights[l].transpose());
        out.push_back({traj.presynaptic, syn - traj.membrane});
    }
    return out;
}

[[nodiscard]] inline double smooth_spike(double u, const FilterParams& p) {
    const double k = p.surrogate_steepness();
    return 1.0 / (1.0 + std::exp(-k * (u - p.threshold()))) / k;
}

/// Smoothed sum of local losses over all layers and steps with the
/// trajectory frozen; only the synaptic summation depends on `weights`.
[[nodiscard]] inline double smoothed_loss(const Network& net, std::span<const Matrix> weights,
                                          std::span<const FrozenLayer> frozen, const Target& target) {
    double total = 0.0;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const auto& R = net.readouts()[l].matrix;
        const RowMatrix u = net.specs()[l].scale * (frozen[l].presynaptic * weights[l].transpose()) - frozen[l].refractory;
        for (Eigen::Index t = 0; t < u.rows(); ++t) {
            Vector s(u.cols());
            for (Eigen::Index i = 0; i < u.cols(); ++i) s[i] = smooth_spike(u(t, i), net.params());
            const Vector y = R * s;
            if (net.readouts()[l].kind == TaskKind::regression) {
                total += 0.5 * (y - target.value).squaredNorm();
            } else {
                const double m = y.maxCoeff();
                total += m + std::log((y.array() - m).exp().sum()) - y[target.label];
            }
        }
    }
    return total;
}

/// Library gradient with error signals evaluated on the smoothed outputs.
[[nodiscard]] inline std::vector<Matrix> smoothed_analytic_gradient(const Network& net, const ForwardPass& pass,
                                                                    const Target& target) {
    std::vector<RowMatrix> errors;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const auto& u = pass.layers[l].membrane;
        RowMatrix e(u.rows(), u.cols());
        for (Eigen::Index t = 0; t < u.rows(); ++t) {
            Vector s(u.cols());
            for (Eigen::Index i = 0; i < u.cols(); ++i) s[i] = smooth_spike(u(t, i), net.params());
            e.row(t) = local_loss_and_errors(s, net.readouts()[l], target).error_signals.transpose();
        }
        errors.push_back(std::move(e));
    }
    return local_gradient(net, pass, errors);
}

[[nodiscard]] inline std::vector<Matrix> smoothed_finite_difference(const Network& net, std::vector<Matrix> weights,
                                                                    std::span<const FrozenLayer> frozen,
                                                                    const Target& target, double h) {
    std::vector<Matrix> g;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Matrix gl(weights[l].rows(), weights[l].cols());
        for (Eigen::Index k = 0; k < weights[l].size(); ++k) {
            const double w0 = weights[l].data()[k];
            weights[l].data()[k] = w0 + h;
            const double up = smoothed_loss(net, weights, frozen, target);
            weights[l].data()[k] = w0 - h;
            const double dn = smoothed_loss(net, weights, frozen, target);
            weights[l].data()[k] = w0;
            gl.data()[k] = (up - dn) / (2.0 * h);
        }
        g.push_back(std::move(gl));
    }
    return g;
}

/// max_k |a_k - b_k| / max(|a_k|, |b_k|, floor).
[[nodiscard]] inline double max_relative_error(std::span<const Matrix> a, std::span<const Matrix> b, double floor = 1e-7) {
    double worst = 0.0;
    for (std::size_t l = 0; l < a.size(); ++l)
        for (Eigen::Index k = 0; k < a[l].size(); ++k) {
            const double x = a[l].data()[k];
            const double y = b[l].data()[k];
            worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
        }
    return worst;
}

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::size_t parameters = 0;
};

[[nodiscard]] inline GradcheckResult frozen_trajectory_check(const Network& net, std::span<const Matrix> weights,
                                                             const Example& ex, double h = 1e-6) {
    const auto pass = forward_sequence(net, weights, ex.input);
    const auto frozen = freeze(net, weights, pass);
    const auto analytic = smoothed_analytic_gradient(net, pass, ex.target);
    const auto numeric =
        smoothed_finite_difference(net, std::vector<Matrix>(weights.begin(), weights.end()), frozen, ex.target, h);
    return {max_relative_error(analytic, numeric), net.parameter_count()};
}

// ---------------------------------------------------------------------------
// Enumeration over binary weights.

using BinaryLoss = std::function<double(std::span<const double>)>;

inline constexpr std::size_t kMaxEnumerated = 16;

[[nodiscard]] inline std::vector<double> binary_config(std::size_t bits, std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k) w[k] = (bits >> k) & 1U ? 1.0 : -1.0;
    return w;
}

[[nodiscard]] inline double bernoulli_mass(double logit, double w) noexcept {
    const double p = sigmoid(2.0 * logit);
    return w > 0.0 ? p : 1.0 - p;
}

/// d/d mu_k of E_q[L(w)]: 0.5 * sum_{others} q(others) (L(w_k=+1) - L(w_k=-1)).
[[nodiscard]] inline std::vector<double> exact_mean_gradient(const BinaryLoss& loss, std::span<const double> logits) {
    const std::size_t n = logits.size();
    if (n > kMaxEnumerated) throw ConfigError("exact_mean_gradient: too many weights to enumerate");
    std::vector<double> g(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t bits = 0; bits < (std::size_t{1} << n); ++bits) {
            if (!((bits >> k) & 1U)) continue;
            auto plus = binary_config(bits, n);
            auto minus = plus;
            minus[k] = -1.0;
            double q = 1.0;
            for (std::size_t m = 0; m < n; ++m)
                if (m != k) q *= bernoulli_mass(logits[m], plus[m]);
            g[k] += 0.5 * q * (loss(plus) - loss(minus));
        }
    }
    return g;
}

/// Normalized Gibbs posterior prior(w) exp(-L(w)/rho) over {+1,-1}^n;
/// entry `bits` has w_k = +1 iff bit k is set.
[[nodiscard]] inline std::vector<double> gibbs_posterior(const BinaryLoss& loss, std::span<const double> prior_logits,
                                                         double rho) {
    if (!(rho > 0.0)) throw ConfigError("gibbs_posterior: rho must be positive");
    const std::size_t n = prior_logits.size();
    if (n > kMaxEnumerated) throw ConfigError("gibbs_posterior: too many weights to enumerate");
    std::vector<double> log_q(std::size_t{1} << n);
    for (std::size_t bits = 0; bits < log_q.size(); ++bits) {
        const auto w = binary_config(bits, n);
        double lp = 0.0;
        for (std::size_t k = 0; k < n; ++k) lp += std::log(bernoulli_mass(prior_logits[k], w[k]));
        log_q[bits] = lp - loss(w) / rho;
    }
    const double m = *std::max_element(log_q.begin(), log_q.end());
    double z = 0.0;
    for (auto& v : log_q) z += (v = std::exp(v - m));
    for (auto& v : log_q) v /= z;
    return log_q;
}

/// Multilinear toy loss L(w) = sum_S c_S prod_{k in S} w_k over all subsets S.
/// It is differentiable in relaxed weights and its gradient is exact.
struct MultilinearLoss {
    std::size_t n = 0;
    std::vector<double> coeff; // indexed by subset bitmask

    [[nodiscard]] static MultilinearLoss random(std::size_t n, CounterRng rng) {
        MultilinearLoss f{n, std::vector<double>(std::size_t{1} << n)};
        for (std::size_t s = 1; s < f.coeff.size(); ++s) f.coeff[s] = 2.0 * rng.uniform(s) - 1.0;
        return f;
    }

    [[nodiscard]] double operator()(std::span<const double> w) const {
        double total = 0.0;
        for (std::size_t s = 0; s < coeff.size(); ++s) {
            double prod = coeff[s];
            for (std::size_t k = 0; k < n; ++k)
                if ((s >> k) & 1U) prod *= w[k];
            total += prod;
        }
        return total;
    }

    [[nodiscard]] std::vector<double> gradient(std::span<const double> w) const {
        std::vector<double> g(n, 0.0);
        for (std::size_t s = 0; s < coeff.size(); ++s)
            for (std::size_t k = 0; k < n; ++k) {
                if (!((s >> k) & 1U)) continue;
                double prod = coeff[s];
                for (std::size_t m = 0; m < n; ++m)
                    if (m != k && ((s >> m) & 1U)) prod *= w[m];
                g[k] += prod;
            }
        return g;
    }
};

struct EstimatorResult {
    std::vector<double> mean;     // Monte Carlo mean of the estimator
    std::vector<double> std_error;
    std::vector<double> exact;    // enumeration gradient
    double max_z = 0.0;           // max |mean - exact| / std_error
};

/// Monte Carlo mean of factor(w_r, w, tau) * dL/dw at w = tanh((w_r + delta)/tau).
[[nodiscard]] inline EstimatorResult gs_estimator_check(const MultilinearLoss& loss, std::span<const double> logits,
                                                        double tau, std::size_t samples, const CounterRng& rng) {
    const std::size_t n = logits.size();
    std::vector<double> sum(n, 0.0), sum_sq(n, 0.0), w(n);
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t k = 0; k < n; ++k)
            w[k] = gs_relax(logits[k], logistic_noise(rng.uniform(s * n + k)), tau);
        const auto g = loss.gradient(w);
        for (std::size_t k = 0; k < n; ++k) {
            const double est = gs_gradient_scale(logits[k], w[k], tau) * g[k];
            sum[k] += est;
            sum_sq[k] += est * est;
        }
    }
    EstimatorResult r;
    r.exact = exact_mean_gradient([&](std::span<const double> x) { return loss(x); }, logits);
    const auto ns = static_cast<double>(samples);
    for (std::size_t k = 0; k < n; ++k) {
        const double m = sum[k] / ns;
        const double var = std::max(sum_sq[k] / ns - m * m, 0.0) * ns / (ns - 1.0);
        r.mean.push_back(m);
        r.std_error.push_back(std::sqrt(var / ns));
        r.max_z = std::max(r.max_z, std::abs(m - r.exact[k]) / r.std_error.back());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Randomized suites.

struct SuiteSummary {
    std::size_t cases = 0;
    double worst = 0.0; // max relative error, or max z-score
};

/// Frozen-trajectory checks on random 2-layer networks: layer widths and
/// inputs in [2, 16], T in [5, 20], Gaussian weights, input rate 0.4.
[[nodiscard]] inline SuiteSummary gradcheck_suite(std::size_t n_nets, std::uint64_t seed) {
    SuiteSummary out;
    for (std::size_t c = 0; c < n_nets; ++c) {
        RngStream r(seed, c);
        auto size = [&] { return 2 + static_cast<std::size_t>(r.below(15)); };
        const auto kind = c % 2 ? TaskKind::classification : TaskKind::regression;
        const std::size_t n_in = size();
        const std::size_t steps = 5 + static_cast<std::size_t>(r.below(16));
        const auto net = Network::dense(n_in, {size(), size()}, 3, kind, FilterParams(20, 5, 2, 0.2), seed + c);
        std::vector<Matrix> w;
        for (const auto& s : net.specs())
            w.push_back(Matrix::NullaryExpr(static_cast<Eigen::Index>(s.n_out), static_cast<Eigen::Index>(s.n_in),
                                            [&] { return r.normal(); }));
        SpikeTensor input(steps, n_in);
        for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t j = 0; j < n_in; ++j) input.set(t, j, r.uniform() < 0.4 ? 1 : 0);
        const Example ex{std::move(input), kind == TaskKind::classification ? Target::classification(1)
                                                                             : Target::regression(Vector::Constant(3, 0.3))};
        out.worst = std::max(out.worst, frozen_trajectory_check(net, w, ex).max_rel_error);
        ++out.cases;
    }
    return out;
}

/// Gumbel-Softmax estimator on random multilinear losses of n_weights
/// weights with logits uniform in [-1, 1]; worst is the max z-score.
[[nodiscard]] inline SuiteSummary estimator_suite(std::size_t n_losses, std::size_t n_weights, double tau,
                                                  std::size_t samples, std::uint64_t seed) {
    SuiteSummary out;
    const CounterRng root(seed, 0x65C);
    for (std::size_t c = 0; c < n_losses; ++c) {
        const CounterRng rng = root.substream(c);
        const auto loss = MultilinearLoss::random(n_weights, rng.substream(0));
        std::vector<double> logits(n_weights);
        for (std::size_t k = 0; k < n_weights; ++k) logits[k] = 2.0 * rng.substream(1).uniform(k) - 1.0;
        out.worst = std::max(out.worst, gs_estimator_check(loss, logits, tau, samples, rng.substream(2)).max_z);
        ++out.cases;
    }
    return out;
}

} // namespace bisnn::check
