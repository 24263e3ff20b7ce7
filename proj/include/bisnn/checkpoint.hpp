#pragma once

// JSON checkpoint: network shape, readouts, neuron parameters, the trained
// real-valued parameters (ST latent weights or Bayes logits) and the rule's
// hyperparameters. Doubles are written with round-trip precision.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bisnn/error.hpp"
#include "bisnn/network.hpp"

namespace bisnn {

inline constexpr const char* kCheckpointFormat = "bisnn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// st and bayes train binary weights; fp is the full-precision baseline.
enum class Rule { st, bayes, fp };

inline const char* to_string(Rule r) noexcept {
    switch (r) {
    case Rule::st: return "st";
    case Rule::bayes: return "bayes";
    case Rule::fp: return "fp";
    }
    return "?";
}

inline Rule rule_from_string(const std::string& s) {
    if (s == "st") return Rule::st;
    if (s == "bayes") return Rule::bayes;
    if (s == "fp") return Rule::fp;
    throw ConfigError("unknown training rule '" + s + "' (expected st, bayes or fp)");
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw ParseError("matrix: wrong row count");
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw ParseError("matrix: wrong column count");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

inline nlohmann::json to_json(const FilterParams& p) {
    return {{"tau_mem", p.tau_mem()},
            {"tau_syn", p.tau_syn()},
            {"tau_ref", p.tau_ref()},
            {"threshold", p.threshold()},
            {"surrogate_steepness", p.surrogate_steepness()}};
}

inline FilterParams filter_params_from_json(const nlohmann::json& j) {
    const FilterParams d;
    return FilterParams(j.value("tau_mem", d.tau_mem()), j.value("tau_syn", d.tau_syn()), j.value("tau_ref", d.tau_ref()),
                        j.value("threshold", d.threshold()), j.value("surrogate_steepness", d.surrogate_steepness()));
}

struct Checkpoint {
    Rule rule = Rule::st;
    Network network;
    std::vector<Matrix> parameters; // ST latent weights, Bayes logits, or fp weights
    std::uint64_t readout_seed = 0;
    std::size_t epoch = 0;
    nlohmann::json hyper = nlohmann::json::object();    // rule hyperparameters
    nlohmann::json encoding = nlohmann::json();         // input encoding, when known
    std::vector<Matrix> prior_logits;                   // Bayes only; empty = uniform
};

inline nlohmann::json to_json(const Checkpoint& c) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < c.network.depth(); ++l) {
        const auto& s = c.network.specs()[l];
        layers.push_back({{"n_in", s.n_in},
                          {"n_out", s.n_out},
                          {"readout_dim", s.readout_dim},
                          {"scale", s.scale},
                          {"readout", matrix_to_json(c.network.readouts()[l].matrix)},
                          {"weights", matrix_to_json(c.parameters[l])}});
        if (!c.prior_logits.empty()) layers.back()["prior_logits"] = matrix_to_json(c.prior_logits[l]);
    }
    return {{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"rule", to_string(c.rule)},
            {"parameter_kind", c.rule == Rule::st ? "latent_weights" : c.rule == Rule::bayes ? "logits" : "weights"},
            {"task", to_string(c.network.kind())},
            {"filter", to_json(c.network.params())},
            {"readout_seed", c.readout_seed},
            {"epoch", c.epoch},
            {"hyper", c.hyper},
            {"encoding", c.encoding},
            {"layers", layers}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", "") != kCheckpointFormat) throw ParseError("checkpoint: unrecognized format");
        if (j.value("version", 0) != kCheckpointVersion) throw ParseError("checkpoint: unsupported version");
        Checkpoint c;
        c.rule = rule_from_string(j.at("rule").get<std::string>());
        const auto kind = task_kind_from_string(j.at("task").get<std::string>());
        const auto params = filter_params_from_json(j.at("filter"));
        std::vector<LayerSpec> specs;
        std::vector<ReadoutHead> heads;
        for (const auto& lj : j.at("layers")) {
            LayerSpec s{lj.at("n_in").get<std::size_t>(), lj.at("n_out").get<std::size_t>(),
                        lj.at("readout_dim").get<std::size_t>(), lj.at("scale").get<double>()};
            const auto rows = static_cast<Eigen::Index>(s.n_out);
            const auto cols = static_cast<Eigen::Index>(s.n_in);
            heads.push_back({matrix_from_json(lj.at("readout"), static_cast<Eigen::Index>(s.readout_dim), rows), kind});
            c.parameters.push_back(matrix_from_json(lj.at("weights"), rows, cols));
            if (lj.contains("prior_logits")) c.prior_logits.push_back(matrix_from_json(lj.at("prior_logits"), rows, cols));
            specs.push_back(s);
        }
        c.network = Network(std::move(specs), std::move(heads), params);
        c.readout_seed = j.value("readout_seed", std::uint64_t{0});
        c.epoch = j.value("epoch", std::size_t{0});
        c.hyper = j.value("hyper", nlohmann::json::object());
        c.encoding = j.value("encoding", nlohmann::json());
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << to_json(c).dump(1) << '\n';
}

[[nodiscard]] inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    return checkpoint_from_json(j);
}

} // namespace bisnn
