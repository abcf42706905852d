#pragma once

#include <filesystem>
#include <string>

#include "rifcn/model.hpp"
#include "rifcn/optim.hpp"

namespace rifcn {

/// Plain-text key=value run description. Unknown keys, duplicates, and
/// malformed values are fatal; '#' starts a comment.
struct RunConfig {
    // model
    int levels = 4;
    std::vector<int> widths = {64, 128, 256, 512, 1024};
    double width_factor = 1.0;
    int in_channels = 3;
    int num_classes = 6;
    // training
    int epochs = 30;
    int batch_size = 8;
    double val_fraction = 0.10;
    int patience = 5;
    std::uint64_t seed = 0;
    std::string optimizer = "nadam"; // nadam | sgd
    double lr = 2e-4;
    double momentum = 0.9;
    bool augment = true;
    // data
    std::string images_dir;
    std::string labels_dir;
    int patch = 64;
    int patch_stride = 0; ///< 0 means patch (non-overlapping grid)
    int overlap = 0;
    // outputs
    std::string checkpoint = "model.ntr";
    std::string report = "train_report.csv";

    ForwardStreamSpec model_spec() const;
    TrainConfig train_config() const;

    /// Cross-field checks (widths length, patch divisibility, class count).
    void validate() const;
};

RunConfig parse_run_config(const std::filesystem::path& path);

/// The schema text printed by the CLI help.
std::string run_config_schema();

} // namespace rifcn
