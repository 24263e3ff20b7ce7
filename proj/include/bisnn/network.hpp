#pragma once

// Feedforward stack of fully connected SRM layers. Every layer carries a
// fixed random readout and its own local loss, so each layer's weight
// gradient only depends on quantities local to that layer: inter-layer
// spike dependencies and the refractory history are treated as constants.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "bisnn/error.hpp"
#include "bisnn/rng.hpp"
#include "bisnn/spikes.hpp"
#include "bisnn/srm.hpp"

namespace bisnn {

enum class TaskKind { regression, classification };

inline const char* to_string(TaskKind k) noexcept {
    return k == TaskKind::regression ? "regression" : "classification";
}

inline TaskKind task_kind_from_string(const std::string& s) {
    if (s == "regression") return TaskKind::regression;
    if (s == "classification") return TaskKind::classification;
    throw ConfigError("unknown task kind '" + s + "'");
}

struct LayerSpec {
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::size_t readout_dim = 0;
    double scale = 0.0; // kappa

    /// Fully connected layer with kappa = 1/sqrt(n_in).
    [[nodiscard]] static LayerSpec dense(std::size_t n_in, std::size_t n_out, std::size_t readout_dim) {
        LayerSpec s{n_in, n_out, readout_dim, 1.0 / std::sqrt(static_cast<double>(n_in))};
        s.validate();
        return s;
    }

    void validate() const {
        if (n_in == 0 || n_out == 0 || readout_dim == 0) throw ConfigError("LayerSpec: dimensions must be positive");
        if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("LayerSpec: scale must be positive");
    }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Fixed linear map from a layer's spikes to its auxiliary output. Never trained.
struct ReadoutHead {
    Matrix matrix; // readout_dim x n_out
    TaskKind kind = TaskKind::classification;

    /// Entries uniform in [-1/sqrt(n_out), 1/sqrt(n_out)].
    [[nodiscard]] static ReadoutHead random(std::size_t readout_dim, std::size_t n_out, TaskKind kind,
                                            CounterRng rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(n_out));
        RngStream stream(rng);
        Matrix m(static_cast<Eigen::Index>(readout_dim), static_cast<Eigen::Index>(n_out));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = stream.uniform(-bound, bound);
        return {std::move(m), kind};
    }
};

struct PerStepLoss {
    double value = 0.0;
    Vector error_signals; // dl_t / ds_i through the readout
};

namespace detail {

inline double log_sum_exp(const Vector& y) {
    const double m = y.maxCoeff();
    return m + std::log((y.array() - m).exp().sum());
}

} // namespace detail

[[nodiscard]] inline Vector softmax(const Vector& logits) {
    const double m = logits.maxCoeff();
    Vector e = (logits.array() - m).exp();
    return e / e.sum();
}

/// Local loss of one layer at one step and the induced error signals.
/// Regression: l = 0.5 ||R s - r||^2. Classification: cross-entropy of softmax(R s).
/// `layer_output` may be binary spikes or real-valued (smoothed) outputs.
[[nodiscard]] inline PerStepLoss local_loss_and_errors(const Vector& layer_output, const ReadoutHead& head,
                                                       const Target& target) {
    require_shape(layer_output.size() == head.matrix.cols(), "local_loss: output size does not match readout");
    const Vector y = head.matrix * layer_output;
    Vector dl_dy;
    double loss = 0.0;
    if (head.kind == TaskKind::regression) {
        require_shape(target.value.size() == y.size(), "local_loss: regression target size does not match readout");
        dl_dy = y - target.value;
        loss = 0.5 * dl_dy.squaredNorm();
    } else {
        if (target.label < 0 || target.label >= y.size())
            throw ShapeError("local_loss: label " + std::to_string(target.label) + " out of range");
        const double lse = detail::log_sum_exp(y);
        loss = lse - y[target.label];
        dl_dy = (y.array() - lse).exp();
        dl_dy[target.label] -= 1.0;
    }
    return {loss, head.matrix.transpose() * dl_dy};
}

[[nodiscard]] inline PerStepLoss local_loss_and_errors(std::span<const std::uint8_t> spikes, const ReadoutHead& head,
                                                       const Target& target) {
    Vector s(static_cast<Eigen::Index>(spikes.size()));
    for (std::size_t i = 0; i < spikes.size(); ++i) s[static_cast<Eigen::Index>(i)] = spikes[i];
    return local_loss_and_errors(s, head, target);
}

/// Per-layer record of one forward pass: everything the local gradient needs.
struct LayerTrajectory {
    RowMatrix membrane;    // T x n_out, u[i,t]
    RowMatrix presynaptic; // T x n_in,  p[j,t]
    SpikeTensor spikes;    // T x n_out
};

struct ForwardPass {
    std::vector<LayerTrajectory> layers;

    [[nodiscard]] const SpikeTensor& output_spikes() const { return layers.back().spikes; }
};

/// Network context: layer shapes, readouts and neuron parameters. Synaptic
/// weights are kept outside so the training rules own them.
class Network {
public:
    Network() = default;
    Network(std::vector<LayerSpec> specs, std::vector<ReadoutHead> readouts, FilterParams params)
        : specs_(std::move(specs)), readouts_(std::move(readouts)), params_(params) {
        if (specs_.empty()) throw ConfigError("Network: at least one layer is required");
        if (readouts_.size() != specs_.size()) throw ConfigError("Network: one readout per layer is required");
        for (std::size_t l = 0; l < specs_.size(); ++l) {
            specs_[l].validate();
            if (l > 0 && specs_[l].n_in != specs_[l - 1].n_out)
                throw ConfigError("Network: layer " + std::to_string(l) + " input size does not match previous layer");
            const auto& r = readouts_[l].matrix;
            if (r.rows() != static_cast<Eigen::Index>(specs_[l].readout_dim) ||
                r.cols() != static_cast<Eigen::Index>(specs_[l].n_out))
                throw ConfigError("Network: readout shape does not match layer spec");
            if (readouts_[l].kind != readouts_[0].kind) throw ConfigError("Network: mixed readout kinds");
        }
    }

    /// Build dense layers n_inputs -> sizes[0] -> ... with seeded random readouts.
    [[nodiscard]] static Network dense(std::size_t n_inputs, const std::vector<std::size_t>& sizes,
                                       std::size_t readout_dim, TaskKind kind, FilterParams params,
                                       std::uint64_t readout_seed) {
        std::vector<LayerSpec> specs;
        std::vector<ReadoutHead> heads;
        std::size_t prev = n_inputs;
        const CounterRng root(readout_seed, 0x5eadU);
        for (std::size_t l = 0; l < sizes.size(); ++l) {
            specs.push_back(LayerSpec::dense(prev, sizes[l], readout_dim));
            heads.push_back(ReadoutHead::random(readout_dim, sizes[l], kind, root.substream(l)));
            prev = sizes[l];
        }
        return Network(std::move(specs), std::move(heads), params);
    }

    [[nodiscard]] const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
    [[nodiscard]] const std::vector<ReadoutHead>& readouts() const noexcept { return readouts_; }
    [[nodiscard]] const FilterParams& params() const noexcept { return params_; }
    [[nodiscard]] std::size_t depth() const noexcept { return specs_.size(); }
    [[nodiscard]] std::size_t inputs() const { return specs_.front().n_in; }
    [[nodiscard]] std::size_t readout_dim() const { return specs_.back().readout_dim; }
    [[nodiscard]] TaskKind kind() const { return readouts_.front().kind; }

    [[nodiscard]] std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (const auto& s : specs_) n += s.n_in * s.n_out;
        return n;
    }

    void check_weights(std::span<const Matrix> weights) const {
        require_shape(weights.size() == specs_.size(), "weights: layer count does not match network");
        for (std::size_t l = 0; l < specs_.size(); ++l)
            require_shape(weights[l].rows() == static_cast<Eigen::Index>(specs_[l].n_out) &&
                              weights[l].cols() == static_cast<Eigen::Index>(specs_[l].n_in),
                          "weights: layer " + std::to_string(l) + " has the wrong shape");
    }

    /// Zero matrices with the weight shapes of every layer.
    [[nodiscard]] std::vector<Matrix> zeros() const {
        std::vector<Matrix> z;
        for (const auto& s : specs_)
            z.push_back(Matrix::Zero(static_cast<Eigen::Index>(s.n_out), static_cast<Eigen::Index>(s.n_in)));
        return z;
    }

private:
    std::vector<LayerSpec> specs_;
    std::vector<ReadoutHead> readouts_;
    FilterParams params_;
};

/// Presynaptic traces p[j,t] of a spike train, via the two-trace recursion.
[[nodiscard]] inline RowMatrix presynaptic_traces(const SpikeTensor& spikes, const FilterParams& params) {
    const auto T = static_cast<Eigen::Index>(spikes.steps());
    const auto n = static_cast<Eigen::Index>(spikes.neurons());
    RowMatrix p(T, n);
    Vector tm = Vector::Zero(n);
    Vector ts = Vector::Zero(n);
    const double dm = params.decay_mem();
    const double ds = params.decay_syn();
    for (Eigen::Index t = 0; t < T; ++t) {
        p.row(t) = (tm - ts).transpose();
        const auto row = spikes.row(static_cast<std::size_t>(t));
        for (Eigen::Index j = 0; j < n; ++j) {
            const double s = row[static_cast<std::size_t>(j)];
            tm[j] = dm * (tm[j] + s);
            ts[j] = ds * (ts[j] + s);
        }
    }
    return p;
}

/// Run the network over a whole input sequence. Because layers are
/// feedforward, each layer is simulated over all T steps before the next;
/// this is the same computation as stepping all layers together, but the
/// synaptic summation becomes one matrix product per layer.
[[nodiscard]] inline ForwardPass forward_sequence(const Network& net, std::span<const Matrix> weights,
                                                  const SpikeTensor& input) {
    net.check_weights(weights);
    require_shape(input.neurons() == net.inputs(), "forward_sequence: input width does not match network");
    const auto& params = net.params();
    const double theta = params.threshold();
    const double dr = params.decay_ref();
    const auto T = static_cast<Eigen::Index>(input.steps());

    ForwardPass pass;
    pass.layers.reserve(net.depth());
    const SpikeTensor* layer_input = &input;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const auto& spec = net.specs()[l];
        LayerTrajectory traj;
        traj.presynaptic = presynaptic_traces(*layer_input, params);
        traj.membrane = spec.scale * (traj.presynaptic * weights[l].transpose());
        traj.spikes = SpikeTensor(static_cast<std::size_t>(T), spec.n_out);
        Vector refractory = Vector::Zero(static_cast<Eigen::Index>(spec.n_out));
        for (Eigen::Index t = 0; t < T; ++t) {
            auto out = traj.spikes.row(static_cast<std::size_t>(t));
            for (Eigen::Index i = 0; i < refractory.size(); ++i) {
                const double u = traj.membrane(t, i) - refractory[i];
                if (!std::isfinite(u)) throw NumericError("forward_sequence: non-finite membrane potential");
                traj.membrane(t, i) = u;
                const auto s = fires(u, theta);
                out[static_cast<std::size_t>(i)] = s;
                refractory[i] = dr * (refractory[i] + s);
            }
        }
        pass.layers.push_back(std::move(traj));
        layer_input = &pass.layers.back().spikes;
    }
    return pass;
}

/// Error signals e[i,t] of every layer (T x n_out each) and the summed local losses.
struct SequenceErrors {
    std::vector<RowMatrix> errors;
    std::vector<double> layer_loss; // summed over t
    [[nodiscard]] double total() const {
        double s = 0.0;
        for (double v : layer_loss) s += v;
        return s;
    }
};

[[nodiscard]] inline SequenceErrors sequence_errors(const Network& net, const ForwardPass& pass,
                                                    const Target& target) {
    require_shape(pass.layers.size() == net.depth(), "sequence_errors: trajectory depth does not match network");
    SequenceErrors out;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const auto& spikes = pass.layers[l].spikes;
        RowMatrix e(static_cast<Eigen::Index>(spikes.steps()), static_cast<Eigen::Index>(spikes.neurons()));
        double loss = 0.0;
        for (std::size_t t = 0; t < spikes.steps(); ++t) {
            const auto step = local_loss_and_errors(spikes.row(t), net.readouts()[l], target);
            loss += step.value;
            e.row(static_cast<Eigen::Index>(t)) = step.error_signals.transpose();
        }
        out.errors.push_back(std::move(e));
        out.layer_loss.push_back(loss);
    }
    return out;
}

/// g[i,j] = kappa * sum_t e[i,t] * sigma'(u[i,t] - theta) * p[j,t] for every layer.
[[nodiscard]] inline std::vector<Matrix> local_gradient(const Network& net, const ForwardPass& pass,
                                                        std::span<const RowMatrix> errors) {
    require_shape(pass.layers.size() == net.depth() && errors.size() == net.depth(),
                  "local_gradient: trajectory/errors depth mismatch");
    std::vector<Matrix> grads;
    grads.reserve(net.depth());
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const auto& traj = pass.layers[l];
        require_shape(errors[l].rows() == traj.membrane.rows() && errors[l].cols() == traj.membrane.cols(),
                      "local_gradient: errors do not match trajectory");
        RowMatrix post = traj.membrane.unaryExpr([&](double u) { return surrogate_derivative(u, net.params()); });
        post.array() *= errors[l].array();
        grads.push_back(net.specs()[l].scale * (post.transpose() * traj.presynaptic));
    }
    return grads;
}

struct SequenceGradient {
    std::vector<Matrix> grads;
    std::vector<double> layer_loss;
};

/// Gradient and local losses of one example at the given weight values.
[[nodiscard]] inline SequenceGradient example_gradient(const Network& net, std::span<const Matrix> weights,
                                                       const Example& ex) {
    const auto pass = forward_sequence(net, weights, ex.input);
    auto errs = sequence_errors(net, pass, ex.target);
    return {local_gradient(net, pass, errs.errors), std::move(errs.layer_loss)};
}

struct BatchGradient {
    std::vector<Matrix> mean_grad;
    double mean_loss = 0.0; // summed over layers and steps, averaged over examples
};

/// Mean gradient over a mini-batch. Per-example results are reduced in index
/// order, so the result is bit-identical for any worker count.
[[nodiscard]] inline BatchGradient batch_gradient(const Network& net, std::span<const Matrix> weights,
                                                  std::span<const Example> data,
                                                  std::span<const std::size_t> batch, unsigned workers = 1) {
    if (batch.empty()) throw ConfigError("batch_gradient: empty batch");
    std::vector<SequenceGradient> per(batch.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) per[k] = example_gradient(net, weights, data[batch[k]]);
    };
    workers = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(batch.size())));
    if (workers == 1) {
        work(0, batch.size());
    } else {
        std::vector<std::exception_ptr> errors(workers);
        {
            std::vector<std::jthread> pool;
            const std::size_t chunk = (batch.size() + workers - 1) / workers;
            for (unsigned w = 0; w < workers; ++w) {
                const std::size_t b = w * chunk;
                const std::size_t e = std::min(batch.size(), b + chunk);
                pool.emplace_back([&, w, b, e] {
                    try {
                        work(b, e);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            }
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    BatchGradient out{net.zeros(), 0.0};
    for (const auto& g : per) {
        for (std::size_t l = 0; l < out.mean_grad.size(); ++l) out.mean_grad[l] += g.grads[l];
        for (double v : g.layer_loss) out.mean_loss += v;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& g : out.mean_grad) g *= inv;
    out.mean_loss *= inv;
    return out;
}

[[nodiscard]] inline bool all_finite(std::span<const Matrix> ms) {
    return std::all_of(ms.begin(), ms.end(), [](const Matrix& m) { return m.allFinite(); });
}

} // namespace bisnn
