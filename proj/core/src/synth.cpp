#include "rifcn/synth.hpp"

#include <algorithm>
#include <cstdio>

namespace rifcn {

namespace {

// visual class colors (distinct from the label palette on purpose)
constexpr std::uint8_t kClassColor[6][3] = {
    {40, 40, 40},   // background
    {220, 60, 60},  // class 1
    {60, 220, 60},  // class 2
    {70, 70, 230},  // class 3
    {230, 230, 60}, // class 4
    {210, 60, 210}, // class 5
};
constexpr int kNoiseAmp = 18;

double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { // inclusive
    return lo + static_cast<int>(unit_uniform(rng) * (hi - lo + 1));
}

} // namespace

std::pair<RasterImage, LabelRaster> synth_tile(int size, int classes, std::mt19937_64& rng) {
    if (classes < 2 || classes > 6) {
        throw ConfigError("synth: classes must be in 2..6");
    }
    LabelRaster labels(size, size, 0);

    // 2-3 shapes per non-background class; later classes paint over earlier
    for (int cls = 1; cls < classes; ++cls) {
        const int shapes = uniform_int(rng, 2, 3);
        for (int s = 0; s < shapes; ++s) {
            const bool disk = unit_uniform(rng) < 0.5;
            const int extent = uniform_int(rng, std::max(3, size / 8), std::max(4, size / 4));
            const int cy = uniform_int(rng, 0, size - 1);
            const int cx = uniform_int(rng, 0, size - 1);
            if (disk) {
                const int r = extent / 2;
                for (int y = std::max(0, cy - r); y <= std::min(size - 1, cy + r); ++y) {
                    for (int x = std::max(0, cx - r); x <= std::min(size - 1, cx + r); ++x) {
                        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
                            labels.at(y, x) = static_cast<std::uint8_t>(cls);
                        }
                    }
                }
            } else {
                const int hh = std::max(1, extent / 2 + uniform_int(rng, -1, 1));
                const int hw = std::max(1, extent / 2 + uniform_int(rng, -1, 1));
                for (int y = std::max(0, cy - hh); y <= std::min(size - 1, cy + hh); ++y) {
                    for (int x = std::max(0, cx - hw); x <= std::min(size - 1, cx + hw); ++x) {
                        labels.at(y, x) = static_cast<std::uint8_t>(cls);
                    }
                }
            }
        }
    }

    RasterImage img(1, 3, size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const std::uint8_t cls = labels.at(y, x);
            for (int c = 0; c < 3; ++c) {
                const int noise = uniform_int(rng, -kNoiseAmp, kNoiseAmp);
                const int v = std::clamp(static_cast<int>(kClassColor[cls][c]) + noise, 0, 255);
                img.at(0, c, y, x) = static_cast<float>(v) / 255.0f;
            }
        }
    }
    return {std::move(img), std::move(labels)};
}

void synth_dataset(const std::filesystem::path& out_dir, int count, int size, int classes, std::uint64_t seed) {
    if (count < 1) {
        throw ConfigError("synth: count must be >= 1");
    }
    if (size < 16 || size % 16 != 0) {
        throw ConfigError("synth: size must be a positive multiple of 16");
    }
    const std::filesystem::path images = out_dir / "images";
    const std::filesystem::path labels = out_dir / "labels";
    std::filesystem::create_directories(images);
    std::filesystem::create_directories(labels);

    const ClassPalette palette = ClassPalette::isprs_subset(classes);
    std::mt19937_64 rng(seed);
    for (int i = 0; i < count; ++i) {
        auto [img, lab] = synth_tile(size, classes, rng);
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%04d", i);
        write_netpbm(images / (std::string(name) + ".ppm"), img);
        write_netpbm(labels / (std::string(name) + ".ppm"), encode_labels(lab, palette));
    }
}

PatchSet synth_patches(int count, int size, int classes, std::uint64_t seed) {
    if (count < 1) {
        throw ConfigError("synth: count must be >= 1");
    }
    if (size < 16 || size % 16 != 0) {
        throw ConfigError("synth: size must be a positive multiple of 16");
    }
    PatchSet out;
    out.reserve(static_cast<std::size_t>(count));
    std::mt19937_64 rng(seed);
    for (int i = 0; i < count; ++i) {
        auto [img, lab] = synth_tile(size, classes, rng);
        out.push_back(Patch{std::move(img), std::move(lab)});
    }
    return out;
}

} // namespace rifcn
