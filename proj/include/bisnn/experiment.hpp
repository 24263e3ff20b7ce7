#pragma once

// Experiment runner: configuration, dataset preparation, the ST and Bayes
// training loops with per-epoch metrics, temperature sweeps, evaluation and
// the files every run leaves behind (manifest, metrics CSV, checkpoint).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bisnn/calibration.hpp"
#include "bisnn/checkpoint.hpp"
#include "bisnn/dataset.hpp"
#include "bisnn/dvs_dataset.hpp"
#include "bisnn/encoding.hpp"
#include "bisnn/error.hpp"
#include "bisnn/network.hpp"
#include "bisnn/rng.hpp"
#include "bisnn/train_bayes.hpp"
#include "bisnn/train_st.hpp"

namespace bisnn {

inline constexpr const char* kVersion = "bisnn 0.1.0";

struct Seeds {
    std::uint64_t weights = 1;
    std::uint64_t data = 2;
    std::uint64_t gumbel = 3;
    std::uint64_t readout = 4;
    std::uint64_t encoding = 5;
    std::uint64_t ensemble = 6;
};

struct TrainRunConfig {
    Rule rule = Rule::bayes;
    std::string dataset = "twomoons"; // onedim | twomoons | dvs | file
    std::string data_path;            // dvs: recordings directory; file: dataset container
    std::string test_path;            // optional held-out set of the same kind

    std::size_t epochs = 300;
    std::size_t batch_size = 32;
    std::optional<double> eta; // unset: rule default
    double rho = 1e-4;
    double tau_gs = 1.0;
    std::size_t gs_samples = 1;
    bool clip = false;
    double init_bound = 0.1;

    FilterParams filter;
    std::vector<std::size_t> layers{64};

    Seeds seeds;

    // population coding of synthetic inputs
    std::size_t n_units = 10;
    std::size_t steps = 100;
    double max_rate = 0.5;

    // two moons
    std::size_t n_per_class = 200;
    double noise = 0.1;
    std::size_t test_per_class = 200;

    // dvs recordings; held out by a seeded per-class split unless test_path is set
    std::vector<int> dvs_classes{0, 1};
    int dvs_scale = 4;
    std::size_t dvs_limit = 200;
    double test_fraction = 0.25;

    std::size_t ensemble_size = 10;
    std::size_t ece_bins = 15;
    Aggregation aggregation = Aggregation::time_average;
    std::size_t metrics_every = 1;
    unsigned workers = 1;

    std::string output_dir;

    static constexpr double kDefaultEta = 0.01;
    [[nodiscard]] double learning_rate() const noexcept { return eta.value_or(kDefaultEta); }

    void validate() const {
        if (dataset != "onedim" && dataset != "twomoons" && dataset != "dvs" && dataset != "file")
            throw ConfigError("dataset must be one of onedim, twomoons, dvs, file");
        if ((dataset == "dvs" || dataset == "file") && data_path.empty())
            throw ConfigError("dataset '" + dataset + "' requires data_path");
        for (const auto& p : {data_path, test_path})
            if (!p.empty() && !std::filesystem::exists(p)) throw ConfigError("path does not exist: " + p);
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (layers.empty() || std::find(layers.begin(), layers.end(), 0U) != layers.end())
            throw ConfigError("layers must be a nonempty list of positive sizes");
        const double lr = learning_rate();
        if (rule != Rule::bayes && !(lr >= 0.0)) throw ConfigError("eta must be nonnegative");
        if (rule == Rule::bayes) hyper().validate();
        if (!(init_bound >= 0.0)) throw ConfigError("init_bound must be nonnegative");
        if (metrics_every == 0) throw ConfigError("metrics_every must be positive");
        if (ensemble_size == 0 || ece_bins == 0) throw ConfigError("ensemble_size and ece_bins must be positive");
    }

    [[nodiscard]] BayesHyperparams hyper() const {
        BayesHyperparams h;
        h.rho = rho;
        h.tau_gs = tau_gs;
        h.eta = learning_rate();
        h.ensemble_size = ensemble_size;
        h.gs_samples = gs_samples;
        h.workers = workers;
        return h;
    }

    [[nodiscard]] PopulationCodeSpec population(std::vector<Range> ranges) const {
        PopulationCodeSpec s;
        s.n_units = n_units;
        s.ranges = std::move(ranges);
        s.max_rate = max_rate;
        s.steps = steps;
        return s;
    }
};

inline const char* to_string(Aggregation a) noexcept { return a == Aggregation::time_average ? "time_average" : "last_step"; }

inline Aggregation aggregation_from_string(const std::string& s) {
    if (s == "time_average") return Aggregation::time_average;
    if (s == "last_step") return Aggregation::last_step;
    throw ConfigError("unknown aggregation '" + s + "'");
}

inline nlohmann::json to_json(const TrainRunConfig& c) {
    return {{"rule", to_string(c.rule)},
            {"dataset", c.dataset},
            {"data_path", c.data_path},
            {"test_path", c.test_path},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"eta", c.learning_rate()},
            {"rho", c.rho},
            {"tau_gs", c.tau_gs},
            {"gs_samples", c.gs_samples},
            {"clip", c.clip},
            {"init_bound", c.init_bound},
            {"filter", to_json(c.filter)},
            {"layers", c.layers},
            {"seeds",
             {{"weights", c.seeds.weights},
              {"data", c.seeds.data},
              {"gumbel", c.seeds.gumbel},
              {"readout", c.seeds.readout},
              {"encoding", c.seeds.encoding},
              {"ensemble", c.seeds.ensemble}}},
            {"n_units", c.n_units},
            {"T", c.steps},
            {"max_rate", c.max_rate},
            {"n_per_class", c.n_per_class},
            {"noise", c.noise},
            {"test_per_class", c.test_per_class},
            {"dvs_classes", c.dvs_classes},
            {"dvs_scale", c.dvs_scale},
            {"dvs_limit", c.dvs_limit},
            {"test_fraction", c.test_fraction},
            {"ensemble_size", c.ensemble_size},
            {"ece_bins", c.ece_bins},
            {"aggregation", to_string(c.aggregation)},
            {"metrics_every", c.metrics_every},
            {"workers", c.workers},
            {"output_dir", c.output_dir}};
}

/// Overlay the keys present in `j` onto `base`. Unknown keys are rejected.
inline TrainRunConfig config_from_json(const nlohmann::json& j, TrainRunConfig c = {}) {
    static const std::vector<std::string> known{
        "rule",        "dataset",  "data_path",  "test_path",     "epochs",        "batch_size", "eta",
        "rho",         "tau_gs",   "gs_samples", "clip",          "init_bound",    "filter",     "layers",
        "seeds",       "n_units",  "T",          "max_rate",      "n_per_class",   "noise",      "test_per_class",
        "dvs_classes", "dvs_scale", "dvs_limit", "test_fraction",
        "ensemble_size", "ece_bins", "aggregation", "metrics_every", "workers",     "output_dir"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
    try {
        if (j.contains("rule")) c.rule = rule_from_string(j["rule"].get<std::string>());
        if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
        if (j.contains("data_path")) c.data_path = j["data_path"].get<std::string>();
        if (j.contains("test_path")) c.test_path = j["test_path"].get<std::string>();
        if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("eta")) c.eta = j["eta"].get<double>();
        if (j.contains("rho")) c.rho = j["rho"].get<double>();
        if (j.contains("tau_gs")) c.tau_gs = j["tau_gs"].get<double>();
        if (j.contains("gs_samples")) c.gs_samples = j["gs_samples"].get<std::size_t>();
        if (j.contains("clip")) c.clip = j["clip"].get<bool>();
        if (j.contains("init_bound")) c.init_bound = j["init_bound"].get<double>();
        if (j.contains("filter")) c.filter = filter_params_from_json(j["filter"]);
        if (j.contains("layers")) c.layers = j["layers"].get<std::vector<std::size_t>>();
        if (j.contains("seeds")) {
            const auto& s = j["seeds"];
            c.seeds.weights = s.value("weights", c.seeds.weights);
            c.seeds.data = s.value("data", c.seeds.data);
            c.seeds.gumbel = s.value("gumbel", c.seeds.gumbel);
            c.seeds.readout = s.value("readout", c.seeds.readout);
            c.seeds.encoding = s.value("encoding", c.seeds.encoding);
            c.seeds.ensemble = s.value("ensemble", c.seeds.ensemble);
        }
        if (j.contains("n_units")) c.n_units = j["n_units"].get<std::size_t>();
        if (j.contains("T")) c.steps = j["T"].get<std::size_t>();
        if (j.contains("max_rate")) c.max_rate = j["max_rate"].get<double>();
        if (j.contains("n_per_class")) c.n_per_class = j["n_per_class"].get<std::size_t>();
        if (j.contains("noise")) c.noise = j["noise"].get<double>();
        if (j.contains("test_per_class")) c.test_per_class = j["test_per_class"].get<std::size_t>();
        if (j.contains("dvs_classes")) c.dvs_classes = j["dvs_classes"].get<std::vector<int>>();
        if (j.contains("dvs_scale")) c.dvs_scale = j["dvs_scale"].get<int>();
        if (j.contains("dvs_limit")) c.dvs_limit = j["dvs_limit"].get<std::size_t>();
        if (j.contains("test_fraction")) c.test_fraction = j["test_fraction"].get<double>();
        if (j.contains("ensemble_size")) c.ensemble_size = j["ensemble_size"].get<std::size_t>();
        if (j.contains("ece_bins")) c.ece_bins = j["ece_bins"].get<std::size_t>();
        if (j.contains("aggregation")) c.aggregation = aggregation_from_string(j["aggregation"].get<std::string>());
        if (j.contains("metrics_every")) c.metrics_every = j["metrics_every"].get<std::size_t>();
        if (j.contains("workers")) c.workers = j["workers"].get<unsigned>();
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Data

inline const std::vector<Range> kTwoMoonsRanges{{-1.5, 2.5}, {-1.0, 1.5}};
inline const std::vector<Range> kOneDimRanges{{-1.2, 1.2}};

struct PreparedData {
    Dataset train;
    std::optional<Dataset> test;
};

[[nodiscard]] inline PreparedData prepare_data(const TrainRunConfig& c) {
    PreparedData d;
    if (c.dataset == "twomoons") {
        const auto spec = c.population(kTwoMoonsRanges);
        d.train = encode_classification(gen_two_moons(c.n_per_class, c.noise, c.seeds.data), spec, c.seeds.encoding);
        if (c.test_per_class > 0)
            d.test = encode_classification(gen_two_moons(c.test_per_class, c.noise, c.seeds.data ^ 0x7E57ULL), spec,
                                           c.seeds.encoding ^ 0x7E57ULL);
    } else if (c.dataset == "onedim") {
        const auto spec = c.population(kOneDimRanges);
        d.train = encode_regression(gen_1d_clusters(c.seeds.data), spec, c.seeds.encoding);
        RegressionPoints grid;
        for (int i = 0; i <= 200; ++i) {
            const double x = -1.2 + 2.4 * i / 200.0;
            grid.x.push_back(x);
            grid.y.push_back(cubic_target(x));
        }
        d.test = encode_regression(grid, spec, c.seeds.encoding ^ 0x7E57ULL);
    } else if (c.dataset == "dvs") {
        DvsIngestOptions opt;
        opt.classes = c.dvs_classes;
        opt.scale = c.dvs_scale;
        opt.limit = c.dvs_limit;
        opt.binning.steps = c.steps;
        auto all = ingest_dvs_directory(c.data_path, opt);
        if (c.test_path.empty()) {
            auto [tr, te] = split_dataset(all, c.test_fraction, c.seeds.data);
            d.train = std::move(tr);
            d.test = std::move(te);
        } else {
            d.train = std::move(all);
            d.test = ingest_dvs_directory(c.test_path, opt);
        }
    } else {
        d.train = load_dataset(c.data_path);
        if (!c.test_path.empty()) d.test = load_dataset(c.test_path);
    }
    if (d.test && (d.test->n_inputs != d.train.n_inputs || d.test->kind != d.train.kind))
        throw ShapeError("test dataset is incompatible with the training dataset");
    return d;
}

[[nodiscard]] inline Network build_network(const TrainRunConfig& c, const Dataset& d) {
    return Network::dense(d.n_inputs, c.layers, d.output_dim, d.kind, c.filter, c.seeds.readout);
}

// ---------------------------------------------------------------------------
// Training

struct EpochRow {
    std::size_t epoch = 0;
    double loss = 0.0;           // mean per-example loss (all layers, all steps)
    double train_accuracy = NAN; // MAP predictor, classification
    double train_mse = NAN;      // MAP predictor, regression
    double free_energy = NAN;    // Bayes only
    double kl = NAN;             // Bayes only
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochRow> history;
};

inline std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_header() { return "epoch,loss,train_accuracy,train_mse,free_energy,kl"; }

inline std::string csv_row(const EpochRow& r) {
    return std::to_string(r.epoch) + "," + format_double(r.loss) + "," + format_double(r.train_accuracy) + "," +
           format_double(r.train_mse) + "," + format_double(r.free_energy) + "," + format_double(r.kl);
}

/// Fisher-Yates permutation of [0, n) addressed by (seed, epoch).
[[nodiscard]] inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const CounterRng rng = CounterRng(seed, 0x5u).substream(epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i, i)]);
    return idx;
}

[[nodiscard]] inline Checkpoint initial_checkpoint(const TrainRunConfig& c, const Dataset& train) {
    Checkpoint ck;
    ck.rule = c.rule;
    ck.network = build_network(c, train);
    ck.parameters = RealWeights::uniform(ck.network, c.seeds.weights, c.init_bound).layers;
    ck.readout_seed = c.seeds.readout;
    ck.hyper = {{"eta", c.learning_rate()}, {"batch_size", c.batch_size}};
    if (c.rule == Rule::bayes) {
        ck.hyper["rho"] = c.rho;
        ck.hyper["tau_gs"] = c.tau_gs;
        ck.hyper["gs_samples"] = c.gs_samples;
        ck.hyper["prior_logits"] = "zero";
    } else if (c.rule == Rule::st) {
        ck.hyper["clip"] = c.clip;
    }
    ck.hyper["ensemble_size"] = c.ensemble_size;
    if (train.meta.contains("encoding")) {
        ck.encoding = train.meta["encoding"];
    } else if (train.meta.contains("binning")) {
        ck.encoding = {{"binning", train.meta["binning"]}};
    }
    return ck;
}

/// Point-estimate predictions: sign(parameters) for the binary rules, the
/// weights themselves for the full-precision baseline.
[[nodiscard]] inline std::vector<PredictionRecord> predict_dataset_point(const Checkpoint& ck,
                                                                         std::span<const Example> data,
                                                                         Aggregation agg) {
    if (ck.rule != Rule::fp) return predict_dataset_map(ck.network, ck.parameters, data, agg);
    const std::vector<std::vector<Matrix>> members{ck.parameters};
    std::vector<PredictionRecord> out;
    out.reserve(data.size());
    for (const auto& ex : data) {
        out.push_back(predict_with_members(ck.network, members, ex, agg));
        out.back().predictor = "full-precision";
    }
    return out;
}

[[nodiscard]] inline EpochRow evaluate_epoch(const Checkpoint& ck, const Dataset& train, const TrainRunConfig& c,
                                             std::size_t epoch, double loss) {
    EpochRow row;
    row.epoch = epoch;
    row.loss = loss;
    const auto records = predict_dataset_point(ck, train.examples, c.aggregation);
    const auto m = summarize(records, train.kind, c.ece_bins);
    if (train.kind == TaskKind::classification) {
        row.train_accuracy = m.accuracy;
    } else {
        row.train_mse = m.mse;
    }
    if (ck.rule == Rule::bayes) {
        row.kl = kl_divergence(ck.parameters, ck.prior_logits);
        row.free_energy = loss + c.rho * row.kl;
    }
    return row;
}

using EpochCallback = std::function<void(const EpochRow&, const Checkpoint&)>;

/// In-memory training loop. Each epoch visits a seeded permutation of the
/// training set in mini-batches; the last batch may be smaller.
[[nodiscard]] inline TrainResult train(const TrainRunConfig& c, const Dataset& data, const EpochCallback& on_epoch = {}) {
    c.validate();
    if (data.examples.empty()) throw ConfigError("training set is empty");
    TrainResult result{initial_checkpoint(c, data), {}};
    auto& ck = result.checkpoint;
    const auto hyper = c.hyper();
    const CounterRng gumbel(c.seeds.gumbel, 0x65U);
    std::uint64_t step = 0;
    for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
        const auto order = epoch_order(data.examples.size(), c.seeds.data, epoch);
        double loss = 0.0;
        for (std::size_t b = 0; b < order.size(); b += c.batch_size) {
            const std::span<const std::size_t> batch(order.data() + b, std::min(c.batch_size, order.size() - b));
            if (c.rule == Rule::st) {
                auto r = st_step(RealWeights{ck.parameters}, ck.network, data.examples, batch,
                                 StOptions{c.learning_rate(), c.clip, c.workers});
                ck.parameters = std::move(r.weights.layers);
                loss += r.mean_loss * static_cast<double>(batch.size());
            } else if (c.rule == Rule::fp) {
                auto g = batch_gradient(ck.network, ck.parameters, data.examples, batch, c.workers);
                if (!all_finite(g.mean_grad)) throw NumericError("fp step: non-finite gradient");
                for (std::size_t l = 0; l < ck.parameters.size(); ++l) ck.parameters[l] -= c.learning_rate() * g.mean_grad[l];
                loss += g.mean_loss * static_cast<double>(batch.size());
            } else {
                auto r = bayes_step(VariationalParams{ck.parameters}, ck.network, data.examples, batch, hyper,
                                    gumbel.substream(step));
                ck.parameters = std::move(r.params.logits);
                loss += r.mean_loss * static_cast<double>(batch.size());
            }
            ++step;
        }
        ck.epoch = epoch;
        loss /= static_cast<double>(order.size());
        if (epoch % c.metrics_every == 0 || epoch == c.epochs) {
            result.history.push_back(evaluate_epoch(ck, data, c, epoch, loss));
            if (on_epoch) on_epoch(result.history.back(), ck);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct PredictorMetrics {
    std::string predictor;
    Metrics metrics;
};

[[nodiscard]] inline nlohmann::json to_json(const PredictorMetrics& p, TaskKind kind) {
    nlohmann::json j = {{"predictor", p.predictor}, {"n", p.metrics.n}};
    if (kind == TaskKind::classification) {
        j["accuracy"] = p.metrics.accuracy;
        j["ece"] = p.metrics.ece;
        j["nll"] = p.metrics.nll;
    } else {
        j["mse"] = p.metrics.mse;
    }
    return j;
}

/// MAP metrics always; for Bayes checkpoints also the ensemble predictor.
[[nodiscard]] inline std::vector<PredictorMetrics> evaluate(const Checkpoint& ck, const Dataset& data,
                                                            std::size_t ensemble_size, std::uint64_t ensemble_seed,
                                                            std::size_t ece_bins = 15,
                                                            Aggregation agg = Aggregation::time_average,
                                                            bool include_ensemble = true) {
    require_shape(data.n_inputs == ck.network.inputs() && data.kind == ck.network.kind() &&
                      data.output_dim == ck.network.readout_dim(),
                  "evaluate: dataset is incompatible with the checkpoint");
    std::vector<PredictorMetrics> out;
    out.push_back({ck.rule == Rule::fp ? "full-precision" : "MAP",
                   summarize(predict_dataset_point(ck, data.examples, agg), data.kind, ece_bins)});
    if (ck.rule == Rule::bayes && include_ensemble) {
        const auto rec = predict_dataset_ensemble(ck.network, ck.parameters, data.examples, ensemble_size,
                                                  CounterRng(ensemble_seed, 0xE45U), agg);
        out.push_back({"ensemble-" + std::to_string(ensemble_size), summarize(rec, data.kind, ece_bins)});
    }
    return out;
}

[[nodiscard]] inline nlohmann::json metrics_json(const std::vector<PredictorMetrics>& ms, TaskKind kind) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& m : ms) j.push_back(to_json(m, kind));
    return j;
}

// ---------------------------------------------------------------------------
// Run directories

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot open '" + p.string() + "' for writing");
    os << s;
}

} // namespace detail

[[nodiscard]] inline nlohmann::json run_manifest(const TrainRunConfig& c, const Dataset& train) {
    return {{"version", kVersion},
            {"config", to_json(c)},
            {"dataset", {{"n_examples", train.examples.size()}, {"T", train.steps}, {"n_inputs", train.n_inputs},
                         {"output_dim", train.output_dim}, {"task", to_string(train.kind)}}},
            {"defaults",
             {{"eta_default", TrainRunConfig::kDefaultEta},
              {"readout_init", "uniform [-1/sqrt(n_out), 1/sqrt(n_out)], frozen"},
              {"weight_init", "uniform [-init_bound, init_bound]"},
              {"hidden_layer_target", "global target"},
              {"error_signals", "binary spike outputs"},
              {"kappa", "1/sqrt(n_in), synaptic sum only"},
              {"heaviside_at_zero", 1},
              {"prior_logits", "zero"},
              {"gs_samples_per_update", c.gs_samples},
              {"epsilon_clamp", kEpsilonClamp},
              {"logit_cap_in_scale", kLogitCap},
              {"convergence", "fixed epoch budget"},
              {"decision", to_string(c.aggregation)},
              {"ece_bins", c.ece_bins}}}};
}

/// Grid CSV with columns x, y, p (class-1 probability).
[[nodiscard]] inline std::string grid_csv(const GridBox& box, std::size_t resolution, const std::vector<double>& p) {
    std::string s = "x,y,p\n";
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto xy = grid_point(box, resolution, i);
        s += format_double(xy[0]) + "," + format_double(xy[1]) + "," + format_double(p[i]) + "\n";
    }
    return s;
}

struct RunOutput {
    TrainResult result;
    PreparedData data;
    nlohmann::json final_metrics;
};

/// Train with the configured rule and write manifest.json, metrics.csv,
/// checkpoint.json and metrics.json into `output_dir` (when set). On a
/// numerical failure the last good checkpoint is kept on disk.
inline RunOutput run_train(const TrainRunConfig& c) {
    c.validate();
    RunOutput out;
    out.data = prepare_data(c);
    const std::filesystem::path dir = c.output_dir;
    std::ofstream csv;
    if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        detail::write_text(dir / "manifest.json", run_manifest(c, out.data.train).dump(2) + "\n");
        csv.open(dir / "metrics.csv", std::ios::binary);
        if (!csv) throw IoError("cannot write metrics.csv");
        csv << csv_header() << "\n";
        save_checkpoint((dir / "checkpoint.json").string(), initial_checkpoint(c, out.data.train));
    }
    auto on_epoch = [&](const EpochRow& row, const Checkpoint& ck) {
        if (dir.empty()) return;
        csv << csv_row(row) << "\n" << std::flush;
        save_checkpoint((dir / "checkpoint.json").string(), ck);
    };
    out.result = train(c, out.data.train, on_epoch);
    const auto& ck = out.result.checkpoint;
    const auto kind = out.data.train.kind;
    out.final_metrics = {{"train", metrics_json(evaluate(ck, out.data.train, c.ensemble_size, c.seeds.ensemble,
                                                         c.ece_bins, c.aggregation), kind)}};
    if (out.data.test)
        out.final_metrics["test"] = metrics_json(
            evaluate(ck, *out.data.test, c.ensemble_size, c.seeds.ensemble, c.ece_bins, c.aggregation), kind);
    if (!dir.empty()) {
        save_checkpoint((dir / "checkpoint.json").string(), ck);
        detail::write_text(dir / "metrics.json", out.final_metrics.dump(2) + "\n");
    }
    return out;
}

/// MAP and ensemble grids of a 2D two-class run.
struct Grids {
    std::vector<double> map;
    std::vector<double> ensemble; // empty for ST
};

[[nodiscard]] inline Grids compute_grids(const Checkpoint& ck, const TrainRunConfig& c, const GridBox& box,
                                         std::size_t resolution) {
    const auto spec = population_spec_from_json(ck.encoding);
    const CounterRng ens(c.seeds.ensemble, 0xE45U);
    const std::uint64_t grid_seed = c.seeds.encoding ^ 0x6A1DULL;
    if (ck.rule == Rule::fp) throw ConfigError("decision grids are computed for binary rules only");
    Grids g;
    g.map = uncertainty_grid(ck.network, ck.parameters, spec, box, resolution, PredictorKind::map, 1, ens, grid_seed);
    if (ck.rule == Rule::bayes)
        g.ensemble = uncertainty_grid(ck.network, ck.parameters, spec, box, resolution, PredictorKind::ensemble,
                                      c.ensemble_size, ens, grid_seed);
    return g;
}

/// Fraction of grid points whose predicted class differs.
[[nodiscard]] inline double grid_disagreement(const std::vector<double>& a, const std::vector<double>& b) {
    require_shape(a.size() == b.size() && !a.empty(), "grid_disagreement: grids differ in size");
    std::size_t diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] >= 0.5) != (b[i] >= 0.5) ? 1 : 0;
    return static_cast<double>(diff) / static_cast<double>(a.size());
}

struct SweepEntry {
    double rho = 0.0;
    nlohmann::json metrics;
    double train_accuracy = NAN; // MAP, final epoch
    Grids grids;
};

struct SweepResult {
    std::vector<SweepEntry> entries;
    std::optional<SweepEntry> st; // straight-through reference run
    double st_disagreement = NAN; // vs the smallest-rho Bayes run (MAP decisions)
};

struct SweepOptions {
    std::size_t grid_resolution = 40;
    GridBox box;
    bool include_st = false;
};

inline std::string rho_label(double rho) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", rho);
    return buf;
}

/// One Bayes run per temperature, all sharing the data seed; optionally an
/// ST reference run. Writes a comparison table, grids and a manifest.
inline SweepResult run_sweep(const TrainRunConfig& base, const std::vector<double>& rhos, const SweepOptions& opt = {}) {
    if (rhos.empty()) throw ConfigError("run_sweep: at least one rho value is required");
    const std::filesystem::path dir = base.output_dir;
    if (!dir.empty()) std::filesystem::create_directories(dir);
    const bool want_grids = base.dataset == "twomoons";

    auto one = [&](TrainRunConfig c, const std::string& name) {
        c.output_dir = dir.empty() ? std::string{} : (dir / name).string();
        auto run = run_train(c);
        SweepEntry e;
        e.rho = c.rho;
        e.metrics = run.final_metrics;
        e.train_accuracy = run.result.history.empty() ? NAN : run.result.history.back().train_accuracy;
        if (want_grids) {
            e.grids = compute_grids(run.result.checkpoint, c, opt.box, opt.grid_resolution);
            if (!dir.empty()) {
                detail::write_text(dir / name / "grid_map.csv", grid_csv(opt.box, opt.grid_resolution, e.grids.map));
                if (!e.grids.ensemble.empty())
                    detail::write_text(dir / name / "grid_ensemble.csv",
                                       grid_csv(opt.box, opt.grid_resolution, e.grids.ensemble));
            }
        }
        return e;
    };

    SweepResult res;
    for (double rho : rhos) {
        TrainRunConfig c = base;
        c.rule = Rule::bayes;
        c.rho = rho;
        res.entries.push_back(one(c, "rho_" + rho_label(rho)));
    }
    if (opt.include_st) {
        TrainRunConfig c = base;
        c.rule = Rule::st;
        c.eta.reset();
        res.st = one(c, "st");
        const auto lowest = std::min_element(res.entries.begin(), res.entries.end(),
                                             [](const SweepEntry& a, const SweepEntry& b) { return a.rho < b.rho; });
        if (want_grids) res.st_disagreement = grid_disagreement(res.st->grids.map, lowest->grids.map);
    }

    if (!dir.empty()) {
        std::string table = "rho,train_accuracy,test_accuracy_map,test_accuracy_ensemble,test_ece_map,test_ece_ensemble\n";
        for (const auto& e : res.entries) {
            auto get = [&](std::size_t k, const char* key) {
                if (!e.metrics.contains("test") || e.metrics["test"].size() <= k) return std::string{};
                return format_double(e.metrics["test"][k].value(key, NAN));
            };
            table += format_double(e.rho) + "," + format_double(e.train_accuracy) + "," + get(0, "accuracy") + "," +
                     get(1, "accuracy") + "," + get(0, "ece") + "," + get(1, "ece") + "\n";
        }
        detail::write_text(dir / "sweep.csv", table);
        nlohmann::json manifest = {{"version", kVersion},
                                   {"rho_values", rhos},
                                   {"base_config", to_json(base)},
                                   {"grid", {{"resolution", opt.grid_resolution},
                                             {"box", {opt.box.x_min, opt.box.x_max, opt.box.y_min, opt.box.y_max}}}},
                                   {"include_st", opt.include_st}};
        if (res.st && !std::isnan(res.st_disagreement)) manifest["st_vs_lowest_rho_disagreement"] = res.st_disagreement;
        detail::write_text(dir / "sweep_manifest.json", manifest.dump(2) + "\n");
    }
    return res;
}

/// Metrics JSON for a checkpoint on a dataset.
[[nodiscard]] inline nlohmann::json run_eval(const Checkpoint& ck, const Dataset& data, std::size_t ensemble_size,
                                             std::uint64_t ensemble_seed, std::size_t ece_bins = 15,
                                             Aggregation agg = Aggregation::time_average, bool include_ensemble = true) {
    return {{"rule", to_string(ck.rule)},
            {"epoch", ck.epoch},
            {"task", to_string(data.kind)},
            {"metrics", metrics_json(evaluate(ck, data, ensemble_size, ensemble_seed, ece_bins, agg, include_ensemble),
                                     data.kind)}};
}

} // namespace bisnn
