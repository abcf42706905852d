#include "rifcn/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <utility>

namespace rifcn {

ConfusionMatrix::ConfusionMatrix(int num_classes) : m_(num_classes) {
    if (num_classes < 1) {
        throw ConfigError("ConfusionMatrix: num_classes must be >= 1");
    }
    counts_.assign(static_cast<std::size_t>(m_) * m_, 0);
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (std::uint64_t v : counts_) {
        t += v;
    }
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (int i = 0; i < m_; ++i) {
        t += at(i, i);
    }
    return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.m_ != m_) {
        throw ShapeError("ConfusionMatrix::merge: class count mismatch");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
        counts_[i] += other.counts_[i];
    }
}

void accumulate(ConfusionMatrix& cm, const LabelRaster& truth, const LabelRaster& pred) {
    if (!truth.same_shape(pred)) {
        throw ShapeError("accumulate: truth " + std::to_string(truth.h) + "x" + std::to_string(truth.w) +
                         " vs pred " + std::to_string(pred.h) + "x" + std::to_string(pred.w));
    }
    const int m = cm.num_classes();
    for (std::size_t i = 0; i < truth.v.size(); ++i) {
        const std::uint8_t t = truth.v[i];
        const std::uint8_t p = pred.v[i];
        if (t == kIgnoreLabel || p == kIgnoreLabel) {
            continue;
        }
        if (t >= m || p >= m) {
            throw DataError("accumulate: label " + std::to_string(std::max(t, p)) + " out of range for " +
                            std::to_string(m) + " classes");
        }
        cm.at(t, p) += 1;
    }
}

std::vector<ClassScore> f1_scores(const ConfusionMatrix& cm) {
    const int m = cm.num_classes();
    std::vector<std::uint64_t> row_sum(m, 0), col_sum(m, 0);
    for (int t = 0; t < m; ++t) {
        for (int p = 0; p < m; ++p) {
            row_sum[t] += cm.at(t, p);
            col_sum[p] += cm.at(t, p);
        }
    }
    std::vector<ClassScore> out(m);
    for (int c = 0; c < m; ++c) {
        const double tp = static_cast<double>(cm.at(c, c));
        const double fp = static_cast<double>(col_sum[c]) - tp;
        const double fn = static_cast<double>(row_sum[c]) - tp;
        ClassScore& s = out[c];
        s.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        s.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
        s.iou = tp + fp + fn > 0 ? tp / (tp + fp + fn) : 0.0;
    }
    return out;
}

double overall_accuracy(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) {
        throw DataError("overall_accuracy: empty confusion matrix");
    }
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

double iou(const LabelRaster& truth, const LabelRaster& pred, int cls) {
    if (!truth.same_shape(pred)) {
        throw ShapeError("iou: raster shape mismatch");
    }
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < truth.v.size(); ++i) {
        if (truth.v[i] == kIgnoreLabel || pred.v[i] == kIgnoreLabel) {
            continue;
        }
        const bool a = truth.v[i] == cls;
        const bool b = pred.v[i] == cls;
        if (a && b) {
            ++inter;
        }
        if (a || b) {
            ++uni;
        }
    }
    if (uni == 0) {
        return 1.0; // both masks empty
    }
    return static_cast<double>(inter) / static_cast<double>(uni);
}

LabelRaster erode_boundary_gt(const LabelRaster& truth, int radius) {
    if (radius < 0) {
        throw ConfigError("erode_boundary_gt: radius must be >= 0");
    }
    // disk offsets dx^2 + dy^2 <= r^2
    std::vector<std::pair<int, int>> disk;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dy * dy + dx * dx <= radius * radius && !(dy == 0 && dx == 0)) {
                disk.emplace_back(dy, dx);
            }
        }
    }
    LabelRaster out = truth;
    for (int y = 0; y < truth.h; ++y) {
        for (int x = 0; x < truth.w; ++x) {
            const std::uint8_t v = truth.at(y, x);
            if (v == kIgnoreLabel) {
                continue;
            }
            for (const auto& [dy, dx] : disk) {
                const int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= truth.h || nx < 0 || nx >= truth.w) {
                    continue;
                }
                const std::uint8_t u = truth.at(ny, nx);
                if (u != kIgnoreLabel && u != v) {
                    out.at(y, x) = kIgnoreLabel;
                    break;
                }
            }
        }
    }
    return out;
}

Report evaluate_tiles(const std::vector<TilePair>& pairs, int num_classes, bool eroded,
                      const std::vector<int>& class_subset) {
    if (pairs.empty()) {
        throw DataError("evaluate_tiles: no tile pairs");
    }
    Report report{ConfusionMatrix(num_classes), {}, 0.0, 0.0, {}, eroded};
    for (const TilePair& pair : pairs) {
        const LabelRaster truth = eroded ? erode_boundary_gt(pair.truth, 3) : pair.truth;
        ConfusionMatrix tile_cm(num_classes);
        accumulate(tile_cm, truth, pair.pred);
        report.accumulated.merge(tile_cm);

        TileScore ts;
        ts.name = pair.name;
        if (tile_cm.total() > 0) {
            ts.overall_accuracy = overall_accuracy(tile_cm);
            const auto scores = f1_scores(tile_cm);
            double sum = 0.0;
            int n = 0;
            for (int c = 0; c < num_classes; ++c) {
                if (class_subset.empty() ||
                    std::find(class_subset.begin(), class_subset.end(), c) != class_subset.end()) {
                    sum += scores[c].f1;
                    ++n;
                }
            }
            ts.mean_f1 = n > 0 ? sum / n : 0.0;
        }
        report.tiles.push_back(std::move(ts));
    }

    report.per_class = f1_scores(report.accumulated);
    report.overall_accuracy = overall_accuracy(report.accumulated);
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (class_subset.empty() || std::find(class_subset.begin(), class_subset.end(), c) != class_subset.end()) {
            sum += report.per_class[c].f1;
            ++n;
        }
    }
    report.mean_f1 = n > 0 ? sum / n : 0.0;
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

} // namespace

std::string Report::to_table(const std::vector<std::string>& class_names) const {
    std::string out;
    out += "class                 precision  recall     f1         iou\n";
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const std::string name = c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
        char line[160];
        std::snprintf(line, sizeof(line), "%-20s  %-9s  %-9s  %-9s  %-9s\n", name.c_str(),
                      fmt(per_class[c].precision).c_str(), fmt(per_class[c].recall).c_str(),
                      fmt(per_class[c].f1).c_str(), fmt(per_class[c].iou).c_str());
        out += line;
    }
    out += "\nmean F1: " + fmt(mean_f1) + "\n";
    out += "overall accuracy: " + fmt(overall_accuracy) + "\n";
    if (eroded) {
        out += "(boundary-eroded ground truth, radius 3)\n";
    }
    return out;
}

std::string Report::to_csv(const std::vector<std::string>& class_names) const {
    std::string out = "class,precision,recall,f1,iou\n";
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const std::string name = c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
        char line[200];
        std::snprintf(line, sizeof(line), "%s,%.10g,%.10g,%.10g,%.10g\n", name.c_str(), per_class[c].precision,
                      per_class[c].recall, per_class[c].f1, per_class[c].iou);
        out += line;
    }
    char tail[120];
    std::snprintf(tail, sizeof(tail), "mean_f1,%.10g\noverall_accuracy,%.10g\neroded,%d\n", mean_f1,
                  overall_accuracy, eroded ? 1 : 0);
    out += tail;
    return out;
}

} // namespace rifcn
