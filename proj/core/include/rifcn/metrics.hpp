#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rifcn/labels.hpp"

namespace rifcn {

/// M x M pixel-count table; counts(t, p) = pixels with true class t predicted p.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    int num_classes() const { return m_; }
    std::uint64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * m_ + pred]; }
    std::uint64_t& at(int truth, int pred) { return counts_[static_cast<std::size_t>(truth) * m_ + pred]; }
    std::uint64_t total() const;
    std::uint64_t trace() const;

    /// Elementwise addition; tiles may be accumulated in any order.
    void merge(const ConfusionMatrix& other);

private:
    int m_;
    std::vector<std::uint64_t> counts_;
};

/// Counts every pixel whose truth and prediction are both supervised; IGNORE
/// in either operand skips the pixel.
void accumulate(ConfusionMatrix& cm, const LabelRaster& truth, const LabelRaster& pred);

struct ClassScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double iou = 0.0;
};

/// Per-class precision, recall, F1 (harmonic mean), and IoU from the matrix.
/// Zero denominators score 0.
std::vector<ClassScore> f1_scores(const ConfusionMatrix& cm);

/// trace / total. Throws on an empty matrix.
double overall_accuracy(const ConfusionMatrix& cm);

/// Jaccard index of the class masks over pixels supervised in both rasters.
/// Empty union scores 1 when both masks are empty, else 0.
double iou(const LabelRaster& truth, const LabelRaster& pred, int cls);

/// Marks IGNORE every pixel that has a differently-labeled supervised pixel
/// within Euclidean distance radius (dx^2 + dy^2 <= radius^2, clipped at the
/// image border). Evaluation on the result is tolerant to small boundary errors.
LabelRaster erode_boundary_gt(const LabelRaster& truth, int radius = 3);

struct TileScore {
    std::string name;
    double overall_accuracy = 0.0;
    double mean_f1 = 0.0;
};

struct Report {
    ConfusionMatrix accumulated;
    std::vector<ClassScore> per_class;
    double mean_f1 = 0.0; ///< over the selected class subset
    double overall_accuracy = 0.0;
    std::vector<TileScore> tiles;
    bool eroded = false;

    std::string to_table(const std::vector<std::string>& class_names) const;
    std::string to_csv(const std::vector<std::string>& class_names) const;
};

struct TilePair {
    std::string name;
    LabelRaster truth;
    LabelRaster pred;
};

/// Full evaluation protocol over (truth, prediction) tiles: accumulated and
/// per-tile confusion matrices, per-class F1/IoU, mean F1, and overall
/// accuracy; optionally on boundary-eroded ground truth (radius 3).
/// class_subset restricts the mean-F1 average (empty = all classes).
Report evaluate_tiles(const std::vector<TilePair>& pairs, int num_classes, bool eroded,
                      const std::vector<int>& class_subset = {});

} // namespace rifcn
