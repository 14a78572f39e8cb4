#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "abdmri/errors.hpp"
#include "abdmri/geometry.hpp"

namespace abdmri {

using cfloat = std::complex<float>;

enum class ElementKind : std::uint8_t { int16, float32, complex64 };

[[nodiscard]] constexpr std::size_t element_size(ElementKind k) noexcept {
    switch (k) {
        case ElementKind::int16:     return 2;
        case ElementKind::float32:   return 4;
        case ElementKind::complex64: return 8;
    }
    return 0;
}

// Geometry-aware voxel container. Channels share the grid; scalar kinds
// (int16, float32) live in `real`, complex64 in `cplx`. int16 payloads are
// held as float (exactly representable) and narrowed again on write.
struct Volume {
    Geometry geom;
    ElementKind kind = ElementKind::float32;
    std::vector<std::string> names;
    std::vector<std::vector<float>> real;
    std::vector<std::vector<cfloat>> cplx;

    [[nodiscard]] bool is_complex() const { return kind == ElementKind::complex64; }
    [[nodiscard]] std::size_t nchannels() const { return names.size(); }
    [[nodiscard]] std::size_t nvox() const { return geom.nvox(); }

    static Volume scalar(const Geometry& g, ElementKind k = ElementKind::float32,
                         const std::string& name = "data", float fill = 0.0f) {
        Volume v;
        v.geom = g;
        v.kind = k;
        v.names.push_back(name);
        v.real.emplace_back(g.nvox(), fill);
        return v;
    }

    static Volume complex(const Geometry& g, std::size_t channels) {
        Volume v;
        v.geom = g;
        v.kind = ElementKind::complex64;
        for (std::size_t c = 0; c < channels; ++c) {
            v.names.push_back("c" + std::to_string(c));
            v.cplx.emplace_back(g.nvox(), cfloat{0.0f, 0.0f});
        }
        return v;
    }

    [[nodiscard]] int find(const std::string& name) const {
        for (std::size_t c = 0; c < names.size(); ++c)
            if (names[c] == name) return static_cast<int>(c);
        return -1;
    }

    [[nodiscard]] std::vector<float>& channel(const std::string& name) {
        const int c = find(name);
        require(c >= 0 && !is_complex(), ErrorCode::missing_channel, "no scalar channel '" + name + "'");
        return real[static_cast<std::size_t>(c)];
    }

    [[nodiscard]] const std::vector<float>& channel(const std::string& name) const {
        const int c = find(name);
        require(c >= 0 && !is_complex(), ErrorCode::missing_channel, "no scalar channel '" + name + "'");
        return real[static_cast<std::size_t>(c)];
    }

    [[nodiscard]] std::vector<float>& data() {
        require(!real.empty(), ErrorCode::invalid_volume, "volume has no scalar channel");
        return real[0];
    }

    [[nodiscard]] const std::vector<float>& data() const {
        require(!real.empty(), ErrorCode::invalid_volume, "volume has no scalar channel");
        return real[0];
    }

    void validate() const {
        geom.validate();
        require(nchannels() > 0, ErrorCode::invalid_volume, "volume has no channels");
        const std::size_t n = nvox();
        if (is_complex()) {
            require(cplx.size() == names.size() && real.empty(), ErrorCode::invalid_volume,
                    "channel bookkeeping mismatch");
            for (const auto& ch : cplx) {
                require(ch.size() == n, ErrorCode::invalid_volume, "channel length disagrees with dims");
                for (const cfloat& v : ch)
                    require(std::isfinite(v.real()) && std::isfinite(v.imag()), ErrorCode::invalid_volume,
                            "non-finite voxel value");
            }
        } else {
            require(real.size() == names.size() && cplx.empty(), ErrorCode::invalid_volume,
                    "channel bookkeeping mismatch");
            for (const auto& ch : real) {
                require(ch.size() == n, ErrorCode::invalid_volume, "channel length disagrees with dims");
                for (const float v : ch)
                    require(std::isfinite(v), ErrorCode::invalid_volume, "non-finite voxel value");
            }
        }
    }
};

// Multiecho acquisition: one complex channel per echo.
struct EchoSeries {
    Volume volume;                      // complex64, channels = echoes
    std::vector<double> echo_times_ms;  // strictly increasing
    double flip_angle_deg = 0.0;
    double repetition_time_ms = 0.0;

    [[nodiscard]] std::size_t echo_count() const { return echo_times_ms.size(); }

    void validate(std::size_t min_echoes = 3) const {
        volume.validate();
        require(volume.is_complex(), ErrorCode::invalid_volume, "echo series must be complex");
        require(volume.nchannels() == echo_times_ms.size(), ErrorCode::invalid_volume,
                "echo count disagrees with channel count");
        require(echo_times_ms.size() >= min_echoes, ErrorCode::insufficient_echoes,
                "need at least " + std::to_string(min_echoes) + " echoes");
        for (std::size_t e = 1; e < echo_times_ms.size(); ++e)
            require(echo_times_ms[e] > echo_times_ms[e - 1], ErrorCode::invalid_volume,
                    "echo times must be strictly increasing");
    }
};

// Mean over mask, helpers used across QC modules.
[[nodiscard]] inline double masked_mean(const std::vector<float>& v, const std::vector<std::uint8_t>& mask) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) {
            sum += v[i];
            ++n;
        }
    return n ? sum / double(n) : 0.0;
}

[[nodiscard]] inline float percentile(std::vector<float> values, double p) {
    if (values.empty()) return 0.0f;
    const double pos = p / 100.0 * double(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - double(lo);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const float vlo = values[lo];
    std::nth_element(values.begin() + static_cast<std::ptrdiff_t>(lo), values.begin() + static_cast<std::ptrdiff_t>(hi),
                     values.end());
    return static_cast<float>(vlo * (1.0 - frac) + values[hi] * frac);
}

}  // namespace abdmri
