#pragma once

// Directory ingestion of MNIST-DVS style recordings into the spike dataset
// container. Recordings are found recursively by file name,
// mnist_<digit>_scale<NN>_<index>.aedat, and sorted by path.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bisnn/dataset.hpp"
#include "bisnn/error.hpp"
#include "bisnn/events.hpp"
#include "bisnn/rng.hpp"

namespace bisnn {

struct DvsRecording {
    std::string path;
    int digit = 0;
    int scale = 0;
};

struct DvsIngestOptions {
    BinningSpec binning;
    std::vector<int> classes{0, 1}; // label k is classes[k]
    int scale = 4;                  // 0 accepts every scale
    std::size_t limit = 0;          // cap on recordings, 0 = no cap
};

inline nlohmann::json to_json(const BinningSpec& b) {
    return {{"window_us", b.window_us},
            {"T", b.steps},
            {"crop", {b.crop_x, b.crop_y, b.crop_width, b.crop_height}},
            {"downsample", b.downsample},
            {"polarity_channels", b.polarity_channels}};
}

/// Recordings under `root` matching the options. With a limit, classes are
/// taken round-robin so the subset stays balanced.
[[nodiscard]] inline std::vector<DvsRecording> find_recordings(const std::filesystem::path& root,
                                                               const DvsIngestOptions& opt) {
    if (!std::filesystem::is_directory(root)) throw IoError("not a directory: " + root.string());
    if (opt.classes.empty()) throw ConfigError("ingest: at least one class is required");
    static const std::regex name(R"(mnist_(\d)_scale(\d+)_(\d+)\.aedat)", std::regex::icase);
    std::vector<std::vector<DvsRecording>> by_class(opt.classes.size());
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::smatch m;
        const std::string file = entry.path().filename().string();
        if (!std::regex_match(file, m, name)) continue;
        DvsRecording r{entry.path().string(), std::stoi(m[1].str()), std::stoi(m[2].str())};
        if (opt.scale != 0 && r.scale != opt.scale) continue;
        const auto it = std::find(opt.classes.begin(), opt.classes.end(), r.digit);
        if (it == opt.classes.end()) continue;
        by_class[static_cast<std::size_t>(it - opt.classes.begin())].push_back(std::move(r));
    }
    for (auto& v : by_class)
        std::sort(v.begin(), v.end(), [](const DvsRecording& a, const DvsRecording& b) { return a.path < b.path; });
    std::vector<DvsRecording> out;
    for (std::size_t i = 0;; ++i) {
        bool any = false;
        for (const auto& v : by_class) {
            if (i >= v.size()) continue;
            any = true;
            if (opt.limit != 0 && out.size() >= opt.limit) return out;
            out.push_back(v[i]);
        }
        if (!any) break;
    }
    return out;
}

[[nodiscard]] inline Dataset ingest_recordings(const std::vector<DvsRecording>& recs, const DvsIngestOptions& opt) {
    opt.binning.validate();
    Dataset d{TaskKind::classification, opt.binning.steps, opt.binning.neurons(), opt.classes.size(), {}, {}};
    nlohmann::json files = nlohmann::json::array();
    for (const auto& r : recs) {
        const auto it = std::find(opt.classes.begin(), opt.classes.end(), r.digit);
        if (it == opt.classes.end()) throw ConfigError("ingest: recording digit not among the classes: " + r.path);
        const auto events = read_aedat_file(r.path);
        d.examples.push_back({bin_events(events, opt.binning),
                              Target::classification(static_cast<int>(it - opt.classes.begin()))});
        files.push_back({{"path", r.path}, {"digit", r.digit}, {"events", events.size()}});
    }
    d.meta = {{"source", "aedat"}, {"binning", to_json(opt.binning)}, {"classes", opt.classes},
              {"scale", opt.scale}, {"files", files}};
    d.validate();
    return d;
}

[[nodiscard]] inline Dataset ingest_dvs_directory(const std::filesystem::path& root, const DvsIngestOptions& opt) {
    const auto recs = find_recordings(root, opt);
    if (recs.empty()) throw IoError("no matching AEDAT recordings under " + root.string());
    return ingest_recordings(recs, opt);
}

/// Seeded split: a permutation of each class, the first test_fraction of
/// each going to the test set. Example order is otherwise preserved.
[[nodiscard]] inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double test_fraction,
                                                               std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
    Dataset train = d, test = d;
    train.examples.clear();
    test.examples.clear();
    std::vector<bool> is_test(d.examples.size(), false);
    const std::size_t groups = d.kind == TaskKind::classification ? d.output_dim : 1;
    for (std::size_t g = 0; g < groups; ++g) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < d.examples.size(); ++i)
            if (d.kind != TaskKind::classification || d.examples[i].target.label == static_cast<int>(g)) idx.push_back(i);
        const CounterRng rng = CounterRng(seed, 0x5917U).substream(g);
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i, i)]);
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
        for (std::size_t k = 0; k < n_test; ++k) is_test[idx[k]] = true;
    }
    for (std::size_t i = 0; i < d.examples.size(); ++i) (is_test[i] ? test : train).examples.push_back(d.examples[i]);
    train.meta["split"] = {{"part", "train"}, {"test_fraction", test_fraction}, {"seed", seed}};
    test.meta["split"] = {{"part", "test"}, {"test_fraction", test_fraction}, {"seed", seed}};
    return {std::move(train), std::move(test)};
}

} // namespace bisnn
