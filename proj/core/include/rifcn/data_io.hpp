#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rifcn/labels.hpp"
#include "rifcn/model.hpp"
#include "rifcn/tensor.hpp"

namespace rifcn {

/// Multi-band raster: (1, c, h, w) float tensor, values in [0,1] for 8-bit
/// sources (divided by 255 on read; no mean subtraction).
using RasterImage = Tensor4<float>;

// ---------------------------------------------------------------------------
// NTR raw tensor container
//
// Single tensor file, little-endian:
//   4-byte magic "NTR1"
//   one ASCII header line: "<dtype> <ndim> <d0> <d1> ... \n", dtype in {u8,f32,f64}
//   raw payload, row-major
//
// Multi-record file (checkpoints): magic, u32 record count, records of
// (u16 name length, name bytes, tensor header line + payload), then a CRC32
// of everything between the magic and the checksum.
// ---------------------------------------------------------------------------

enum class NtrDtype { U8, F32, F64 };

struct NtrTensor {
    NtrDtype dtype = NtrDtype::U8;
    std::vector<std::uint64_t> dims;
    std::vector<std::uint8_t> payload;

    std::size_t element_count() const;
};

void write_ntr(const std::filesystem::path& path, const NtrTensor& t);
NtrTensor read_ntr(const std::filesystem::path& path);

/// Writes text through a temp file and atomic rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

void write_ntr_records(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, NtrTensor>>& records);
std::vector<std::pair<std::string, NtrTensor>> read_ntr_records(const std::filesystem::path& path);

/// Convenience wrappers for float tensors stored as NTR.
NtrTensor ntr_from_tensor(const Tensor4<float>& t, bool squeeze_batch);
Tensor4<float> tensor_from_ntr(const NtrTensor& t);

// ---------------------------------------------------------------------------
// netpbm (binary P5/P6, 8-bit, maxval 255) and raster ingestion
// ---------------------------------------------------------------------------

/// Reads PGM (1 channel), PPM (3 channels), or NTR into a normalized raster.
RasterImage read_raster(const std::filesystem::path& path);

/// Writes a raster as P5 (c==1) or P6 (c==3), quantizing with round(v*255).
void write_netpbm(const std::filesystem::path& path, const RasterImage& img);

// ---------------------------------------------------------------------------
// Label palette
// ---------------------------------------------------------------------------

struct ClassPalette {
    std::vector<std::pair<std::string, std::array<std::uint8_t, 3>>> entries;

    int size() const { return static_cast<int>(entries.size()); }

    /// The 6-class aerial labeling legend: white impervious surfaces, blue
    /// buildings, cyan low vegetation, green trees, yellow cars, red clutter.
    static ClassPalette isprs();

    /// First num_classes entries of the legend.
    static ClassPalette isprs_subset(int num_classes);
};

/// Maps palette colors to class indices; any unmatched color becomes IGNORE
/// (tolerates antialiased boundaries in painted ground truth).
LabelRaster decode_labels(const RasterImage& img, const ClassPalette& palette);

/// Inverse of decode_labels; IGNORE renders black.
RasterImage encode_labels(const LabelRaster& labels, const ClassPalette& palette);

// ---------------------------------------------------------------------------
// Patch extraction, augmentation, tile inference
// ---------------------------------------------------------------------------

struct Patch {
    Tensor4<float> image; ///< (1, c, P, P)
    LabelRaster labels;
};

using PatchSet = std::vector<Patch>;

/// Offsets 0, stride, 2*stride, ... with the final window anchored to the
/// border so the grid covers every pixel.
std::vector<int> window_offsets(int extent, int window, int stride);

/// Regular grid of aligned (image, label) crops of size P.
PatchSet sample_patches(const RasterImage& image, const LabelRaster& labels, int patch, int stride);

/// With probability 3/4 replaces each patch by one of its horizontal,
/// vertical, or double flip, chosen uniformly; labels flip identically.
/// Deterministic in seed.
PatchSet augment_flips(const PatchSet& patches, std::uint64_t seed);

Tensor4<float> flip_image(const Tensor4<float>& t, bool horizontal, bool vertical);
LabelRaster flip_labels(const LabelRaster& l, bool horizontal, bool vertical);

/// Sliding-window prediction over a full tile with per-pixel averaging of
/// window probabilities. Windows advance by patch - overlap, border-anchored.
Tensor4<float> stitch_predict(const Model<float>& model, const RasterImage& tile, int patch, int overlap);

/// Per-pixel argmax of a probability volume (1, M, h, w); for M == 1 the
/// threshold is 0.5.
LabelRaster argmax_labels(const Tensor4<float>& probs);

/// Image/label files paired by stem. Throws DataError listing unpaired stems.
std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pair_by_stem(
    const std::filesystem::path& images_dir, const std::filesystem::path& labels_dir);

} // namespace rifcn
