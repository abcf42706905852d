#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>

#include "rifcn/data_io.hpp"

namespace rifcn {

/// One synthetic tile: random rectangles and disks, one visual color profile
/// per class, on a noisy dark background (class 0). Colors are separated by
/// far more than the noise amplitude, so the classes are learnable from pixel
/// evidence alone.
std::pair<RasterImage, LabelRaster> synth_tile(int size, int classes, std::mt19937_64& rng);

/// Deterministic dataset of count tiles under out_dir/images and
/// out_dir/labels (palette-encoded PPM pairs named synth_NNNN).
void synth_dataset(const std::filesystem::path& out_dir, int count, int size, int classes, std::uint64_t seed);

/// In-memory variant used by tests and the training quickstart.
PatchSet synth_patches(int count, int size, int classes, std::uint64_t seed);

} // namespace rifcn
