#pragma once

// Test-only reference computations: brute-force convolutions and an AEDAT
// encoder written from the record layout.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// sum_{d > 0} f(d) * s[t - d] over the spike history s[0..t-1], with f
/// evaluated directly from its closed form.
inline double convolve(const std::vector<int>& s, std::size_t t, const std::function<double(std::size_t)>& kernel) {
    double acc = 0.0;
    for (std::size_t d = 1; d <= t; ++d) acc += kernel(d) * s[t - d];
    return acc;
}

inline double alpha(std::size_t t, double tau_mem, double tau_syn) {
    return std::exp(-double(t) / tau_mem) - std::exp(-double(t) / tau_syn);
}

inline double beta(std::size_t t, double tau_ref) { return std::exp(-double(t) / tau_ref); }

/// Big-endian AEDAT 2.0 writer for DVS128 events, written from the address
/// layout: bit 0 polarity (1 = OFF), bits 1..7 = 127 - x, bits 8..14 = y.
struct RawEvent {
    std::uint32_t timestamp;
    int x;
    int y;
    bool off;
};

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

inline std::vector<std::uint8_t> encode_aedat(const std::vector<RawEvent>& events, bool with_header = true) {
    std::vector<std::uint8_t> out;
    if (with_header) {
        const std::string h = "#!AER-DAT2.0\r\n# This is a raw AE data file - do not edit\r\n# Data format is int32 address, int32 timestamp (8 bytes total)\r\n";
        out.assign(h.begin(), h.end());
    }
    for (const auto& e : events) {
        const std::uint32_t addr = (std::uint32_t(e.y) << 8) | (std::uint32_t(127 - e.x) << 1) | (e.off ? 1U : 0U);
        put_be32(out, addr);
        put_be32(out, e.timestamp);
    }
    return out;
}

} // namespace oracle
