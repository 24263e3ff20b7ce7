#pragma once

// MAP and ensemble predictors, accuracy / ECE / NLL, and prediction grids
// over a 2D input box for decision and uncertainty maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bisnn/dataset.hpp"
#include "bisnn/encoding.hpp"
#include "bisnn/error.hpp"
#include "bisnn/network.hpp"
#include "bisnn/rng.hpp"
#include "bisnn/train_bayes.hpp"
#include "bisnn/train_st.hpp"

namespace bisnn {

enum class PredictorKind { map, ensemble };

/// How per-step readout outputs become one prediction.
enum class Aggregation { time_average, last_step };

struct PredictionRecord {
    Vector distribution; // class probabilities, or regression mean
    Vector stddev;       // regression: spread across ensemble members (zeros for MAP)
    Target target;
    std::string predictor; // "MAP" or "ensemble-K"

    [[nodiscard]] int predicted_label() const {
        Eigen::Index k = 0;
        distribution.maxCoeff(&k);
        return static_cast<int>(k);
    }
    [[nodiscard]] double confidence() const { return distribution.maxCoeff(); }
    [[nodiscard]] bool correct() const { return predicted_label() == target.label; }
};

/// Output-layer readout aggregated over time: softmax probabilities for
/// classification, the readout value for regression.
[[nodiscard]] inline Vector network_output(const Network& net, std::span<const Matrix> weights, const SpikeTensor& input,
                                           Aggregation agg = Aggregation::time_average) {
    const auto pass = forward_sequence(net, weights, input);
    const auto& spikes = pass.output_spikes();
    const auto& head = net.readouts().back();
    Vector acc = Vector::Zero(head.matrix.rows());
    const std::size_t first = agg == Aggregation::last_step && spikes.steps() > 0 ? spikes.steps() - 1 : 0;
    Vector s(static_cast<Eigen::Index>(spikes.neurons()));
    for (std::size_t t = first; t < spikes.steps(); ++t) {
        const auto row = spikes.row(t);
        for (std::size_t i = 0; i < row.size(); ++i) s[static_cast<Eigen::Index>(i)] = row[i];
        const Vector y = head.matrix * s;
        acc += head.kind == TaskKind::classification ? softmax(y) : y;
    }
    const std::size_t n = spikes.steps() - first;
    if (n > 0) acc /= static_cast<double>(n);
    return acc;
}

/// MAP prediction: weights sign(w_r) for either ST latent weights or Bayes logits.
[[nodiscard]] inline PredictionRecord predict_map(const Network& net, std::span<const Matrix> latent, const Example& ex,
                                                  Aggregation agg = Aggregation::time_average) {
    const auto w = binarize(latent);
    PredictionRecord r;
    r.distribution = network_output(net, w.span(), ex.input, agg);
    r.stddev = Vector::Zero(r.distribution.size());
    r.target = ex.target;
    r.predictor = "MAP";
    return r;
}

/// Weight sets of an ensemble: member k is a hard binary sample drawn with rng.substream(k).
[[nodiscard]] inline std::vector<std::vector<Matrix>> ensemble_members(std::span<const Matrix> logits, std::size_t k,
                                                                       const CounterRng& rng) {
    if (k == 0) throw ConfigError("ensemble: K must be positive");
    std::vector<std::vector<Matrix>> members;
    members.reserve(k);
    for (std::size_t i = 0; i < k; ++i) members.push_back(sample_binary(logits, rng.substream(i)));
    return members;
}

[[nodiscard]] inline PredictionRecord predict_with_members(const Network& net,
                                                           std::span<const std::vector<Matrix>> members,
                                                           const Example& ex,
                                                           Aggregation agg = Aggregation::time_average) {
    Vector sum;
    Vector sum_sq;
    for (const auto& w : members) {
        const Vector y = network_output(net, w, ex.input, agg);
        if (sum.size() == 0) {
            sum = Vector::Zero(y.size());
            sum_sq = Vector::Zero(y.size());
        }
        sum += y;
        sum_sq += y.cwiseProduct(y);
    }
    const auto k = static_cast<double>(members.size());
    PredictionRecord r;
    r.distribution = sum / k;
    r.stddev = (sum_sq / k - r.distribution.cwiseProduct(r.distribution)).cwiseMax(0.0).cwiseSqrt();
    if (net.kind() == TaskKind::classification) r.stddev.setZero();
    r.target = ex.target;
    r.predictor = "ensemble-" + std::to_string(members.size());
    return r;
}

[[nodiscard]] inline PredictionRecord predict_ensemble(const Network& net, std::span<const Matrix> logits,
                                                       const Example& ex, std::size_t k, const CounterRng& rng,
                                                       Aggregation agg = Aggregation::time_average) {
    const auto members = ensemble_members(logits, k, rng);
    return predict_with_members(net, members, ex, agg);
}

/// Equal-width confidence bins on [0, 1]; empty bins contribute nothing.
[[nodiscard]] inline double expected_calibration_error(std::span<const PredictionRecord> records,
                                                       std::size_t n_bins = 15) {
    if (records.empty()) throw ConfigError("expected_calibration_error: no records");
    if (n_bins == 0) throw ConfigError("expected_calibration_error: n_bins must be positive");
    std::vector<double> conf(n_bins, 0.0);
    std::vector<double> hits(n_bins, 0.0);
    std::vector<std::size_t> count(n_bins, 0);
    for (const auto& r : records) {
        const double c = r.confidence();
        const auto b = std::min(static_cast<std::size_t>(c * static_cast<double>(n_bins)), n_bins - 1);
        conf[b] += c;
        hits[b] += r.correct() ? 1.0 : 0.0;
        ++count[b];
    }
    double ece = 0.0;
    const auto n = static_cast<double>(records.size());
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (count[b] == 0) continue;
        const auto m = static_cast<double>(count[b]);
        ece += (m / n) * std::abs(hits[b] / m - conf[b] / m);
    }
    return ece;
}

[[nodiscard]] inline double accuracy(std::span<const PredictionRecord> records) {
    if (records.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& r : records) ok += r.correct() ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(records.size());
}

/// Mean negative log-likelihood of the true labels (probabilities floored at 1e-12).
[[nodiscard]] inline double negative_log_likelihood(std::span<const PredictionRecord> records) {
    if (records.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : records) s -= std::log(std::max(r.distribution[r.target.label], 1e-12));
    return s / static_cast<double>(records.size());
}

[[nodiscard]] inline double mean_squared_error(std::span<const PredictionRecord> records) {
    if (records.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : records) s += (r.distribution - r.target.value).squaredNorm();
    return s / static_cast<double>(records.size());
}

struct Metrics {
    double accuracy = 0.0;
    double ece = 0.0;
    double nll = 0.0;
    double mse = 0.0;
    std::size_t n = 0;
};

[[nodiscard]] inline Metrics summarize(std::span<const PredictionRecord> records, TaskKind kind, std::size_t n_bins = 15) {
    Metrics m;
    m.n = records.size();
    if (records.empty()) return m;
    if (kind == TaskKind::classification) {
        m.accuracy = accuracy(records);
        m.ece = expected_calibration_error(records, n_bins);
        m.nll = negative_log_likelihood(records);
    } else {
        m.mse = mean_squared_error(records);
    }
    return m;
}

[[nodiscard]] inline std::vector<PredictionRecord> predict_dataset_map(const Network& net, std::span<const Matrix> latent,
                                                                       std::span<const Example> data,
                                                                       Aggregation agg = Aggregation::time_average) {
    std::vector<PredictionRecord> out;
    out.reserve(data.size());
    for (const auto& ex : data) out.push_back(predict_map(net, latent, ex, agg));
    return out;
}

[[nodiscard]] inline std::vector<PredictionRecord> predict_dataset_ensemble(const Network& net,
                                                                            std::span<const Matrix> logits,
                                                                            std::span<const Example> data, std::size_t k,
                                                                            const CounterRng& rng,
                                                                            Aggregation agg = Aggregation::time_average) {
    const auto members = ensemble_members(logits, k, rng);
    std::vector<PredictionRecord> out;
    out.reserve(data.size());
    for (const auto& ex : data) out.push_back(predict_with_members(net, members, ex, agg));
    return out;
}

struct GridBox {
    double x_min = -1.5;
    double x_max = 2.5;
    double y_min = -1.0;
    double y_max = 1.5;
};

/// Coordinates of grid point `index` (row-major, rows along y).
[[nodiscard]] inline std::array<double, 2> grid_point(const GridBox& box, std::size_t resolution, std::size_t index) {
    const std::size_t row = index / resolution;
    const std::size_t col = index % resolution;
    auto coord = [&](double lo, double hi, std::size_t k) {
        return resolution == 1 ? 0.5 * (lo + hi)
                               : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(resolution - 1);
    };
    return {coord(box.x_min, box.x_max, col), coord(box.y_min, box.y_max, row)};
}

/// Class-1 probability at resolution^2 points of a 2D box, row-major.
/// Point i is encoded with encoding_rng(encoding_seed, i).
[[nodiscard]] inline std::vector<double> uncertainty_grid(const Network& net, std::span<const Matrix> latent,
                                                          const PopulationCodeSpec& spec, const GridBox& box,
                                                          std::size_t resolution, PredictorKind kind,
                                                          std::size_t ensemble_size, const CounterRng& ensemble_rng,
                                                          std::uint64_t encoding_seed) {
    if (resolution == 0) throw ConfigError("uncertainty_grid: resolution must be positive");
    if (spec.dims() != 2) throw ConfigError("uncertainty_grid: requires a 2D population encoding");
    if (net.kind() != TaskKind::classification || net.readout_dim() != 2)
        throw ConfigError("uncertainty_grid: requires a 2-class network");
    std::vector<std::vector<Matrix>> members;
    if (kind == PredictorKind::map) {
        members.push_back(binarize(latent).layers());
    } else {
        members = ensemble_members(latent, ensemble_size, ensemble_rng);
    }
    std::vector<double> out(resolution * resolution);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto p = grid_point(box, resolution, i);
        const Example ex{population_encode(p, spec, encoding_rng(encoding_seed, i)), Target::classification(0)};
        out[i] = predict_with_members(net, members, ex).distribution[1];
    }
    return out;
}

} // namespace bisnn
