#pragma once

// Spike dataset container.
//
// Layout: one line of compact JSON (the header) terminated by '\n', followed
// by the payload. The payload holds n_examples * T rows, example-major then
// time-major; each row packs n_inputs spikes at 1 bit each, least significant
// bit first, padded with zero bits to a whole byte.

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bisnn/encoding.hpp"
#include "bisnn/error.hpp"
#include "bisnn/network.hpp"
#include "bisnn/spikes.hpp"

namespace bisnn {

inline constexpr const char* kDatasetFormat = "bisnn-spike-dataset";
inline constexpr int kDatasetVersion = 1;

struct Dataset {
    TaskKind kind = TaskKind::classification;
    std::size_t steps = 0;
    std::size_t n_inputs = 0;
    std::size_t output_dim = 0; // classes, or regression target size
    std::vector<Example> examples;
    nlohmann::json meta = nlohmann::json::object(); // provenance: encoding spec, seed, raw inputs

    void validate() const {
        for (const auto& ex : examples) {
            require_shape(ex.input.steps() == steps && ex.input.neurons() == n_inputs,
                          "Dataset: example shape does not match dataset shape");
            if (kind == TaskKind::classification) {
                if (ex.target.label < 0 || static_cast<std::size_t>(ex.target.label) >= output_dim)
                    throw ShapeError("Dataset: label out of range");
            } else {
                require_shape(static_cast<std::size_t>(ex.target.value.size()) == output_dim,
                              "Dataset: regression target has the wrong size");
            }
        }
    }
};

inline nlohmann::json to_json(const PopulationCodeSpec& s) {
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& r : s.ranges) ranges.push_back({r.low, r.high});
    return {{"n_units", s.n_units}, {"ranges", ranges}, {"width", s.width}, {"max_rate", s.max_rate}, {"T", s.steps}};
}

inline PopulationCodeSpec population_spec_from_json(const nlohmann::json& j) {
    PopulationCodeSpec s;
    s.n_units = j.at("n_units").get<std::size_t>();
    for (const auto& r : j.at("ranges")) s.ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    s.width = j.value("width", 0.0);
    s.max_rate = j.value("max_rate", 0.5);
    s.steps = j.at("T").get<std::size_t>();
    s.validate();
    return s;
}

/// Per-example encoding generator, shared by dataset building and grid evaluation.
[[nodiscard]] inline CounterRng encoding_rng(std::uint64_t seed, std::uint64_t index) {
    return CounterRng(seed, 0xE7CU).substream(index);
}

/// Population-code labeled 2D points.
[[nodiscard]] inline Dataset encode_classification(const LabeledPoints& pts, const PopulationCodeSpec& spec,
                                                   std::uint64_t seed, std::size_t n_classes = 2) {
    spec.validate();
    Dataset d{TaskKind::classification, spec.steps, spec.neurons(), n_classes, {}, {}};
    nlohmann::json raw = nlohmann::json::array();
    for (std::size_t i = 0; i < pts.points.size(); ++i) {
        const auto& p = pts.points[i];
        d.examples.push_back({population_encode(p, spec, encoding_rng(seed, i)), Target::classification(pts.labels[i])});
        raw.push_back({p[0], p[1]});
    }
    d.meta = {{"encoding", to_json(spec)}, {"encoding_seed", seed}, {"raw_inputs", raw}};
    d.validate();
    return d;
}

[[nodiscard]] inline Dataset encode_regression(const RegressionPoints& pts, const PopulationCodeSpec& spec,
                                               std::uint64_t seed) {
    spec.validate();
    Dataset d{TaskKind::regression, spec.steps, spec.neurons(), 1, {}, {}};
    nlohmann::json raw = nlohmann::json::array();
    for (std::size_t i = 0; i < pts.x.size(); ++i) {
        const double x = pts.x[i];
        Vector r(1);
        r[0] = pts.y[i];
        d.examples.push_back({population_encode(std::span<const double>(&x, 1), spec, encoding_rng(seed, i)),
                              Target::regression(std::move(r))});
        raw.push_back({x});
    }
    d.meta = {{"encoding", to_json(spec)}, {"encoding_seed", seed}, {"raw_inputs", raw}};
    d.validate();
    return d;
}

inline void write_dataset(std::ostream& os, const Dataset& d) {
    d.validate();
    const std::size_t row_bytes = (d.n_inputs + 7) / 8;
    nlohmann::json h = {{"format", kDatasetFormat},
                        {"version", kDatasetVersion},
                        {"task", to_string(d.kind)},
                        {"n_examples", d.examples.size()},
                        {"T", d.steps},
                        {"n_inputs", d.n_inputs},
                        {"output_dim", d.output_dim},
                        {"row_bytes", row_bytes},
                        {"bit_order", "lsb-first"},
                        {"meta", d.meta}};
    auto& targets = h["targets"] = nlohmann::json::array();
    for (const auto& ex : d.examples) {
        if (d.kind == TaskKind::classification) {
            targets.push_back(ex.target.label);
        } else {
            targets.push_back(std::vector<double>(ex.target.value.data(), ex.target.value.data() + ex.target.value.size()));
        }
    }
    os << h.dump() << '\n';
    std::vector<char> row(row_bytes);
    for (const auto& ex : d.examples) {
        for (std::size_t t = 0; t < d.steps; ++t) {
            std::fill(row.begin(), row.end(), 0);
            const auto spikes = ex.input.row(t);
            for (std::size_t n = 0; n < d.n_inputs; ++n)
                if (spikes[n]) row[n / 8] = static_cast<char>(row[n / 8] | (1 << (n % 8)));
            os.write(row.data(), static_cast<std::streamsize>(row.size()));
        }
    }
    if (!os) throw IoError("write_dataset: stream error");
}

[[nodiscard]] inline Dataset read_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("read_dataset: missing header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("read_dataset: malformed header: ") + e.what());
    }
    if (h.value("format", "") != kDatasetFormat) throw ParseError("read_dataset: not a spike dataset");
    if (h.value("version", 0) != kDatasetVersion) throw ParseError("read_dataset: unsupported version");
    Dataset d;
    try {
        d.kind = task_kind_from_string(h.at("task").get<std::string>());
        d.steps = h.at("T").get<std::size_t>();
        d.n_inputs = h.at("n_inputs").get<std::size_t>();
        d.output_dim = h.at("output_dim").get<std::size_t>();
        d.meta = h.value("meta", nlohmann::json::object());
        const auto n = h.at("n_examples").get<std::size_t>();
        const std::size_t row_bytes = (d.n_inputs + 7) / 8;
        if (h.at("row_bytes").get<std::size_t>() != row_bytes) throw ParseError("read_dataset: inconsistent row_bytes");
        const auto& targets = h.at("targets");
        if (targets.size() != n) throw ParseError("read_dataset: target count does not match n_examples");
        std::vector<char> row(row_bytes);
        d.examples.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            SpikeTensor s(d.steps, d.n_inputs);
            for (std::size_t t = 0; t < d.steps; ++t) {
                if (!is.read(row.data(), static_cast<std::streamsize>(row_bytes)))
                    throw ParseError("read_dataset: truncated payload at example " + std::to_string(i));
                for (std::size_t k = 0; k < d.n_inputs; ++k) s.set(t, k, (row[k / 8] >> (k % 8)) & 1);
            }
            Target tgt;
            if (d.kind == TaskKind::classification) {
                tgt = Target::classification(targets[i].get<int>());
            } else {
                const auto v = targets[i].get<std::vector<double>>();
                tgt = Target::regression(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
            }
            d.examples.push_back({std::move(s), std::move(tgt)});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("read_dataset: ") + e.what());
    }
    d.validate();
    return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_dataset(os, d);
}

[[nodiscard]] inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    return read_dataset(is);
}

} // namespace bisnn
