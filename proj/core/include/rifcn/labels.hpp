#pragma once

#include <cstdint>
#include <vector>

#include "rifcn/error.hpp"

namespace rifcn {

/// Sentinel class value excluded from loss and every metric.
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Per-pixel class indices for one image, row-major.
struct LabelRaster {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> v;

    LabelRaster() = default;
    LabelRaster(int h_, int w_, std::uint8_t fill = 0) : h(h_), w(w_) {
        if (h_ < 1 || w_ < 1) {
            throw ShapeError("LabelRaster: dims must be >= 1");
        }
        v.assign(static_cast<std::size_t>(h_) * w_, fill);
    }

    std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return v.size(); }

    bool same_shape(const LabelRaster& o) const { return h == o.h && w == o.w; }
};

} // namespace rifcn
