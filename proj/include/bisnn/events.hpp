#pragma once

// AEDAT 2.0 event-camera recordings (DVS128 address layout) and binning of
// events into fixed-duration binary spike frames.
//
// File: optional ASCII header lines starting with '#', the first of which
// names the version ("#!AER-DAT2.0"), then 8-byte big-endian records
// [32-bit address][32-bit timestamp in microseconds].
//
// DVS128 address word: bit 0 polarity (0 = ON, 1 = OFF), bits 1..7 column
// (mirrored: x = 127 - raw), bits 8..14 row.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bisnn/error.hpp"
#include "bisnn/spikes.hpp"

namespace bisnn {

inline constexpr std::uint16_t kSensorSize = 128;

enum class Polarity : std::uint8_t { on = 0, off = 1 };

struct DvsEvent {
    std::uint64_t timestamp = 0; // microseconds
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    Polarity polarity = Polarity::on;

    friend bool operator==(const DvsEvent&, const DvsEvent&) = default;
};

namespace detail {

[[nodiscard]] inline std::uint32_t read_be32(const std::uint8_t* p) noexcept {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

} // namespace detail

[[nodiscard]] constexpr DvsEvent decode_dvs128(std::uint32_t address, std::uint32_t timestamp) noexcept {
    DvsEvent e;
    e.timestamp = timestamp;
    e.polarity = (address & 1U) ? Polarity::off : Polarity::on;
    e.x = static_cast<std::uint16_t>(kSensorSize - 1 - ((address >> 1) & 0x7FU));
    e.y = static_cast<std::uint16_t>((address >> 8) & 0x7FU);
    return e;
}

/// Decode a whole recording. Events are returned sorted by timestamp (stable).
[[nodiscard]] inline std::vector<DvsEvent> parse_aedat(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    bool first_line = true;
    while (pos < bytes.size() && bytes[pos] == '#') {
        const auto* begin = bytes.data() + pos;
        const auto* nl = std::find(begin, bytes.data() + bytes.size(), std::uint8_t{'\n'});
        std::string_view line(reinterpret_cast<const char*>(begin), static_cast<std::size_t>(nl - begin));
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (first_line && line.starts_with("#!AER-DAT")) {
            const auto version = line.substr(9);
            if (version != "2.0") throw ParseError("parse_aedat: unsupported AEDAT version '" + std::string(version) + "'");
        }
        first_line = false;
        pos = static_cast<std::size_t>(nl - bytes.data());
        if (pos < bytes.size()) ++pos; // consume '\n'
    }

    const std::size_t payload = bytes.size() - pos;
    if (payload % 8 != 0)
        throw ParseError("parse_aedat: truncated record at byte offset " + std::to_string(pos + payload / 8 * 8));
    std::vector<DvsEvent> events;
    events.reserve(payload / 8);
    for (; pos < bytes.size(); pos += 8)
        events.push_back(decode_dvs128(detail::read_be32(bytes.data() + pos), detail::read_be32(bytes.data() + pos + 4)));
    std::stable_sort(events.begin(), events.end(),
                     [](const DvsEvent& a, const DvsEvent& b) { return a.timestamp < b.timestamp; });
    return events;
}

[[nodiscard]] inline std::vector<DvsEvent> read_aedat_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_aedat(bytes);
}

struct BinningSpec {
    std::uint64_t window_us = 2000;
    std::size_t steps = 100; // T
    std::uint16_t crop_x = 32;
    std::uint16_t crop_y = 32;
    std::uint16_t crop_width = 64;
    std::uint16_t crop_height = 64;
    std::uint16_t downsample = 2;
    bool polarity_channels = true;

    void validate() const {
        if (window_us == 0 || steps == 0 || downsample == 0 || crop_width == 0 || crop_height == 0)
            throw ConfigError("BinningSpec: window, T, downsample and crop size must be positive");
        if (crop_x + crop_width > kSensorSize || crop_y + crop_height > kSensorSize)
            throw ConfigError("BinningSpec: crop exceeds sensor bounds");
    }

    [[nodiscard]] std::size_t channels() const noexcept { return polarity_channels ? 2 : 1; }
    [[nodiscard]] std::size_t width() const noexcept { return (crop_width + downsample - 1) / downsample; }
    [[nodiscard]] std::size_t height() const noexcept { return (crop_height + downsample - 1) / downsample; }
    [[nodiscard]] std::size_t neurons() const noexcept { return channels() * height() * width(); }
};

/// OR-binning into a (T, channels * H * W) tensor, channel-major then row-major.
/// Time is measured from the first event; events past T windows are dropped.
[[nodiscard]] inline SpikeTensor bin_events(std::span<const DvsEvent> events, const BinningSpec& spec) {
    spec.validate();
    SpikeTensor out(spec.steps, spec.neurons());
    if (events.empty()) return out;
    const std::uint64_t t0 = events.front().timestamp;
    const std::size_t w = spec.width();
    const std::size_t h = spec.height();
    for (const auto& e : events) {
        if (e.timestamp < t0) throw ConfigError("bin_events: events must be sorted by timestamp");
        const std::uint64_t bin = (e.timestamp - t0) / spec.window_us;
        if (bin >= spec.steps) continue;
        if (e.x < spec.crop_x || e.x >= spec.crop_x + spec.crop_width) continue;
        if (e.y < spec.crop_y || e.y >= spec.crop_y + spec.crop_height) continue;
        const std::size_t cx = (e.x - spec.crop_x) / spec.downsample;
        const std::size_t cy = (e.y - spec.crop_y) / spec.downsample;
        const std::size_t c = spec.polarity_channels && e.polarity == Polarity::off ? 1 : 0;
        out.set(static_cast<std::size_t>(bin), (c * h + cy) * w + cx, true);
    }
    return out;
}

} // namespace bisnn
