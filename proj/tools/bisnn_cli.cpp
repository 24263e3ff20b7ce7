// bisnn command-line front end: dataset generation and ingestion, training,
// temperature sweeps, evaluation and gradient checks.
//
// Failures exit nonzero and print {"error": ..., "kind": ...} on stderr.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bisnn/checkpoint.hpp"
#include "bisnn/dataset.hpp"
#include "bisnn/dvs_dataset.hpp"
#include "bisnn/encoding.hpp"
#include "bisnn/error.hpp"
#include "bisnn/experiment.hpp"
#include "bisnn/gradcheck.hpp"

using nlohmann::json;

namespace {

int fail(const std::string& kind, const std::string& what) {
    std::cerr << json{{"error", what}, {"kind", kind}}.dump() << '\n';
    return 1;
}

json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw bisnn::IoError("cannot open '" + path + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw bisnn::ParseError(path + ": " + e.what());
    }
}

// Run options shared by train and sweep. Only flags given on the command
// line override the config file.
struct RunFlags {
    std::string config;
    std::string rule, dataset, data, test_data, out, aggregation;
    std::size_t epochs = 0, batch_size = 0, gs_samples = 0, metrics_every = 0, n_per_class = 0, ensemble_size = 0,
                dvs_limit = 0;
    double eta = 0, rho = 0, tau_gs = 0, init_bound = 0, noise = 0;
    bool clip = false;
    std::vector<std::size_t> layers;
    std::uint64_t seed_weights = 0, seed_data = 0, seed_gumbel = 0, seed_readout = 0, seed_encoding = 0,
                  seed_ensemble = 0;
    unsigned workers = 1;
    std::vector<int> dvs_classes;

    std::vector<std::pair<CLI::Option*, std::function<void(bisnn::TrainRunConfig&)>>> setters;

    template <class T, class F>
    CLI::Option* add(CLI::App* app, const std::string& name, T& target, const std::string& help, F apply) {
        return setters.emplace_back(app->add_option(name, target, help), apply).first;
    }

    void attach(CLI::App* app) {
        app->add_option("--config", config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
        add(app, "--rule", rule, "st | bayes | fp", [this](auto& c) { c.rule = bisnn::rule_from_string(rule); });
        add(app, "--dataset", dataset, "onedim | twomoons | dvs | file", [this](auto& c) { c.dataset = dataset; });
        add(app, "--data", data, "recordings directory (dvs) or dataset file (file)", [this](auto& c) { c.data_path = data; });
        add(app, "--test-data", test_data, "held-out directory or dataset file", [this](auto& c) { c.test_path = test_data; });
        add(app, "--epochs", epochs, "training epochs", [this](auto& c) { c.epochs = epochs; });
        add(app, "--batch-size", batch_size, "mini-batch size", [this](auto& c) { c.batch_size = batch_size; });
        add(app, "--eta", eta, "learning rate", [this](auto& c) { c.eta = eta; });
        add(app, "--rho", rho, "temperature (bayes)", [this](auto& c) { c.rho = rho; });
        add(app, "--tau-gs", tau_gs, "Gumbel-Softmax temperature", [this](auto& c) { c.tau_gs = tau_gs; });
        add(app, "--gs-samples", gs_samples, "relaxed samples per update", [this](auto& c) { c.gs_samples = gs_samples; });
        add(app, "--init-bound", init_bound, "initial weights uniform in [-b, b]", [this](auto& c) { c.init_bound = init_bound; });
        add(app, "--layers", layers, "layer sizes, e.g. --layers 64 or --layers 64,32",
            [this](auto& c) { c.layers = layers; })->delimiter(',');
        add(app, "--seed-weights", seed_weights, "", [this](auto& c) { c.seeds.weights = seed_weights; });
        add(app, "--seed-data", seed_data, "", [this](auto& c) { c.seeds.data = seed_data; });
        add(app, "--seed-gumbel", seed_gumbel, "", [this](auto& c) { c.seeds.gumbel = seed_gumbel; });
        add(app, "--seed-readout", seed_readout, "", [this](auto& c) { c.seeds.readout = seed_readout; });
        add(app, "--seed-encoding", seed_encoding, "", [this](auto& c) { c.seeds.encoding = seed_encoding; });
        add(app, "--seed-ensemble", seed_ensemble, "", [this](auto& c) { c.seeds.ensemble = seed_ensemble; });
        add(app, "--n-per-class", n_per_class, "two-moons points per class", [this](auto& c) { c.n_per_class = n_per_class; });
        add(app, "--noise", noise, "two-moons noise std", [this](auto& c) { c.noise = noise; });
        add(app, "--ensemble-size", ensemble_size, "", [this](auto& c) { c.ensemble_size = ensemble_size; });
        add(app, "--metrics-every", metrics_every, "epochs between metrics rows",
            [this](auto& c) { c.metrics_every = metrics_every; });
        add(app, "--aggregation", aggregation, "time_average | last_step",
            [this](auto& c) { c.aggregation = bisnn::aggregation_from_string(aggregation); });
        add(app, "--dvs-classes", dvs_classes, "digits used for dvs", [this](auto& c) { c.dvs_classes = dvs_classes; })
            ->delimiter(',');
        add(app, "--dvs-limit", dvs_limit, "cap on dvs recordings", [this](auto& c) { c.dvs_limit = dvs_limit; });
        add(app, "--workers", workers, "gradient worker threads", [this](auto& c) { c.workers = workers; });
        add(app, "--out", out, "output directory", [this](auto& c) { c.output_dir = out; });
        setters.emplace_back(app->add_flag("--clip", clip, "clip ST latent weights to [-1, 1]"),
                             [this](auto& c) { c.clip = clip; });
    }

    [[nodiscard]] bisnn::TrainRunConfig resolve() const {
        bisnn::TrainRunConfig c;
        if (!config.empty()) c = bisnn::config_from_json(read_json_file(config));
        for (const auto& [opt, f] : setters)
            if (opt->count() > 0) f(c);
        return c;
    }
};

bisnn::PopulationCodeSpec population_spec(std::size_t n_units, std::size_t steps, double max_rate,
                                          std::vector<bisnn::Range> ranges) {
    bisnn::PopulationCodeSpec s;
    s.n_units = n_units;
    s.steps = steps;
    s.max_rate = max_rate;
    s.ranges = std::move(ranges);
    return s;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Binary spiking neural networks trained with straight-through or Bayesian learning rules"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(bisnn::kVersion));

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a population-coded synthetic dataset");
    std::string gen_kind = "twomoons", gen_out, gen_test_out;
    std::size_t gen_n = 200, gen_test_n = 200, gen_units = 10, gen_T = 100;
    double gen_noise = 0.1, gen_rate = 0.5;
    std::uint64_t gen_seed = 2, gen_enc_seed = 5;
    gen->add_option("--kind", gen_kind, "twomoons | onedim")->check(CLI::IsMember({"twomoons", "onedim"}));
    gen->add_option("--out", gen_out, "output dataset file")->required();
    gen->add_option("--test-out", gen_test_out, "held-out two-moons set drawn with a different seed");
    gen->add_option("--n-per-class", gen_n, "two-moons points per class");
    gen->add_option("--test-per-class", gen_test_n, "held-out points per class");
    gen->add_option("--noise", gen_noise, "two-moons noise std");
    gen->add_option("--seed", gen_seed, "data seed");
    gen->add_option("--encoding-seed", gen_enc_seed, "spike encoding seed");
    gen->add_option("--n-units", gen_units, "population units per input dimension");
    gen->add_option("--T", gen_T, "time steps");
    gen->add_option("--max-rate", gen_rate, "peak spike probability per step");

    // ingest-dvs
    auto* ing = app.add_subcommand("ingest-dvs", "bin AEDAT 2.0 recordings into a spike dataset");
    std::string ing_in, ing_out, ing_test_out;
    bisnn::DvsIngestOptions ing_opt;
    std::vector<int> crop;
    double ing_split = 0.25;
    std::uint64_t ing_seed = 2;
    bool no_polarity = false;
    ing->add_option("--input", ing_in, "directory of mnist_<d>_scale<NN>_<i>.aedat files")->required();
    ing->add_option("--out", ing_out, "output dataset file")->required();
    ing->add_option("--test-out", ing_test_out, "write a seeded per-class held-out split here");
    ing->add_option("--test-fraction", ing_split, "held-out fraction when --test-out is given");
    ing->add_option("--split-seed", ing_seed, "split seed");
    ing->add_option("--classes", ing_opt.classes, "digits to keep")->delimiter(',');
    ing->add_option("--scale", ing_opt.scale, "recording scale to keep, 0 for all");
    ing->add_option("--limit", ing_opt.limit, "cap on the number of recordings ingested");
    ing->add_option("--T", ing_opt.binning.steps, "time bins");
    ing->add_option("--window-us", ing_opt.binning.window_us, "bin width in microseconds");
    ing->add_option("--crop", crop, "x,y,width,height")->delimiter(',')->expected(4);
    ing->add_option("--downsample", ing_opt.binning.downsample, "spatial stride");
    ing->add_flag("--no-polarity", no_polarity, "merge ON and OFF events into one channel");

    // train / sweep
    auto* tr = app.add_subcommand("train", "train one network");
    RunFlags train_flags;
    train_flags.attach(tr);

    auto* sw = app.add_subcommand("sweep", "Bayes runs over several temperatures");
    RunFlags sweep_flags;
    sweep_flags.attach(sw);
    std::vector<double> rhos{1e-6, 1e-4, 1e-2, 1.0};
    bool with_st = false;
    std::size_t grid_res = 40;
    sw->add_option("--rhos", rhos, "temperatures")->delimiter(',');
    sw->add_flag("--with-st", with_st, "add a straight-through reference run");
    sw->add_option("--grid-resolution", grid_res, "points per side of the decision grids");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset file");
    std::string ev_ckpt, ev_data, ev_out, ev_agg = "time_average";
    std::size_t ev_k = 10, ev_bins = 15;
    std::uint64_t ev_seed = 6;
    bool ev_map_only = false;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint.json")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", ev_data, "dataset file")->required()->check(CLI::ExistingFile);
    ev->add_option("--ensemble-size", ev_k, "ensemble members");
    ev->add_option("--ensemble-seed", ev_seed, "ensemble sampling seed");
    ev->add_option("--ece-bins", ev_bins, "calibration bins");
    ev->add_option("--aggregation", ev_agg, "time_average | last_step");
    ev->add_flag("--map-only", ev_map_only, "skip the ensemble predictor");
    ev->add_option("--out", ev_out, "also write the metrics JSON here");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "frozen-trajectory and Gumbel-Softmax estimator checks");
    std::size_t gc_nets = 20, gc_losses = 5, gc_weights = 4, gc_samples = 100000;
    double gc_tau = 0.05;
    std::uint64_t gc_seed = 1;
    gc->add_option("--nets", gc_nets, "random networks for the finite-difference check");
    gc->add_option("--losses", gc_losses, "random toy losses for the estimator check");
    gc->add_option("--weights", gc_weights, "weights per toy loss (<= 16)");
    gc->add_option("--samples", gc_samples, "Monte Carlo samples per toy loss");
    gc->add_option("--tau", gc_tau, "relaxation temperature");
    gc->add_option("--seed", gc_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        if (*gen) {
            if (gen_kind == "twomoons") {
                const auto spec = population_spec(gen_units, gen_T, gen_rate, bisnn::kTwoMoonsRanges);
                bisnn::save_dataset(gen_out, bisnn::encode_classification(bisnn::gen_two_moons(gen_n, gen_noise, gen_seed),
                                                                          spec, gen_enc_seed));
                if (!gen_test_out.empty())
                    bisnn::save_dataset(gen_test_out,
                                        bisnn::encode_classification(
                                            bisnn::gen_two_moons(gen_test_n, gen_noise, gen_seed ^ 0x7E57ULL), spec,
                                            gen_enc_seed ^ 0x7E57ULL));
            } else {
                const auto spec = population_spec(gen_units, gen_T, gen_rate, bisnn::kOneDimRanges);
                bisnn::save_dataset(gen_out, bisnn::encode_regression(bisnn::gen_1d_clusters(gen_seed), spec, gen_enc_seed));
            }
            std::cout << json{{"written", gen_out}}.dump() << '\n';
        } else if (*ing) {
            if (!crop.empty()) {
                ing_opt.binning.crop_x = static_cast<std::uint16_t>(crop[0]);
                ing_opt.binning.crop_y = static_cast<std::uint16_t>(crop[1]);
                ing_opt.binning.crop_width = static_cast<std::uint16_t>(crop[2]);
                ing_opt.binning.crop_height = static_cast<std::uint16_t>(crop[3]);
            }
            ing_opt.binning.polarity_channels = !no_polarity;
            const auto all = bisnn::ingest_dvs_directory(ing_in, ing_opt);
            if (ing_test_out.empty()) {
                bisnn::save_dataset(ing_out, all);
            } else {
                const auto [train, test] = bisnn::split_dataset(all, ing_split, ing_seed);
                bisnn::save_dataset(ing_out, train);
                bisnn::save_dataset(ing_test_out, test);
            }
            std::cout << json{{"recordings", all.examples.size()}, {"n_inputs", all.n_inputs}, {"T", all.steps}}.dump()
                      << '\n';
        } else if (*tr) {
            const auto c = train_flags.resolve();
            const auto run = bisnn::run_train(c);
            std::cout << run.final_metrics.dump(2) << '\n';
        } else if (*sw) {
            const auto c = sweep_flags.resolve();
            bisnn::SweepOptions opt;
            opt.grid_resolution = grid_res;
            opt.include_st = with_st;
            const auto res = bisnn::run_sweep(c, rhos, opt);
            json summary = json::array();
            for (const auto& e : res.entries)
                summary.push_back({{"rho", e.rho}, {"train_accuracy", e.train_accuracy}, {"metrics", e.metrics}});
            json out{{"runs", summary}};
            if (res.st) out["st"] = {{"train_accuracy", res.st->train_accuracy}, {"metrics", res.st->metrics}};
            if (!std::isnan(res.st_disagreement)) out["st_vs_lowest_rho_disagreement"] = res.st_disagreement;
            std::cout << out.dump(2) << '\n';
        } else if (*ev) {
            const auto ck = bisnn::load_checkpoint(ev_ckpt);
            const auto data = bisnn::load_dataset(ev_data);
            const auto j = bisnn::run_eval(ck, data, ev_k, ev_seed, ev_bins, bisnn::aggregation_from_string(ev_agg),
                                           !ev_map_only);
            if (!ev_out.empty()) {
                std::ofstream os(ev_out);
                if (!os) throw bisnn::IoError("cannot write '" + ev_out + "'");
                os << j.dump(2) << '\n';
            }
            std::cout << j.dump(2) << '\n';
        } else if (*gc) {
            if (gc_weights == 0 || gc_weights > bisnn::check::kMaxEnumerated)
                throw bisnn::ConfigError("--weights must lie in [1, 16]");
            const auto fd = bisnn::check::gradcheck_suite(gc_nets, gc_seed);
            const auto est = bisnn::check::estimator_suite(gc_losses, gc_weights, gc_tau, gc_samples, gc_seed);
            std::cout << json{{"frozen_trajectory", {{"networks", fd.cases}, {"max_relative_error", fd.worst}}},
                              {"gs_estimator",
                               {{"losses", est.cases}, {"tau", gc_tau}, {"samples", gc_samples},
                                {"max_z_score", est.worst}}}}
                             .dump(2)
                      << '\n';
        }
    } catch (const bisnn::Error& e) {
        return fail(e.kind(), e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail("io_error", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
