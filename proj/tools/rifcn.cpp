#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rifcn/data_io.hpp"
#include "rifcn/metrics.hpp"
#include "rifcn/model.hpp"
#include "rifcn/optim.hpp"
#include "rifcn/run_config.hpp"
#include "rifcn/selfcheck.hpp"
#include "rifcn/synth.hpp"

namespace fs = std::filesystem;
using namespace rifcn;

namespace {

// exit taxonomy: 0 ok, 1 config/usage, 2 data, 3 numeric, 4 selfcheck failure
template <typename F>
int run_guarded(F&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

ClassPalette label_palette(int num_classes) {
    // the sigmoid head still reads two-color (background/foreground) rasters
    return ClassPalette::isprs_subset(std::max(2, num_classes));
}

void ensure_parent_dir(const fs::path& p) {
    const fs::path dir = p.parent_path();
    if (!dir.empty()) {
        fs::create_directories(dir);
    }
}

int cmd_train(const std::string& config_path, std::int64_t seed_override, double width_factor_override) {
    RunConfig cfg = parse_run_config(config_path);
    if (seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(seed_override);
    }
    if (width_factor_override > 0) {
        cfg.width_factor = width_factor_override;
    }
    cfg.validate();
    if (cfg.images_dir.empty() || cfg.labels_dir.empty()) {
        throw ConfigError("config: images_dir and labels_dir are required for training");
    }
    if (cfg.num_classes > 6) {
        throw ConfigError("config: palette-coded labels support at most 6 classes");
    }

    const auto pairs = pair_by_stem(cfg.images_dir, cfg.labels_dir);
    const ClassPalette palette = label_palette(cfg.num_classes);
    const int max_label = cfg.num_classes == 1 ? 1 : cfg.num_classes - 1;

    PatchSet patches;
    const int stride = cfg.patch_stride == 0 ? cfg.patch : cfg.patch_stride;
    for (const auto& [img_path, lab_path] : pairs) {
        const RasterImage img = read_raster(img_path);
        if (img.c() != cfg.in_channels) {
            throw DataError("tile " + img_path.stem().string() + " has " + std::to_string(img.c()) +
                            " channels, config expects " + std::to_string(cfg.in_channels));
        }
        const LabelRaster labels = decode_labels(read_raster(lab_path), palette);
        for (std::uint8_t v : labels.v) {
            if (v != kIgnoreLabel && v > max_label) {
                throw DataError("tile " + lab_path.stem().string() + " has label " + std::to_string(v) +
                                " outside the configured " + std::to_string(cfg.num_classes) + " classes");
            }
        }
        PatchSet tile_patches = sample_patches(img, labels, cfg.patch, stride);
        std::move(tile_patches.begin(), tile_patches.end(), std::back_inserter(patches));
    }
    if (cfg.augment) {
        patches = augment_flips(patches, cfg.seed + 0x9e3779b97f4a7c15ull);
    }

    Model<float> model = build_model<float>(cfg.model_spec(), cfg.num_classes, cfg.seed);
    std::printf("training: %zu patches of %dx%d, %llu parameters\n", patches.size(), cfg.patch, cfg.patch,
                static_cast<unsigned long long>(model.parameter_count()));

    const TrainReport report = train(model, patches, cfg.train_config());
    for (const EpochRow& r : report.rows) {
        std::printf("epoch %3d  train_loss %.6f  val_loss %.6f  train_acc %.4f  val_acc %.4f\n", r.epoch,
                    r.train_loss, r.val_loss, r.train_acc, r.val_acc);
    }
    if (report.early_stopped) {
        std::printf("early stop: best epoch %d restored\n", report.best_epoch);
    }

    ensure_parent_dir(cfg.checkpoint);
    ensure_parent_dir(cfg.report);
    serialize_model(model, cfg.checkpoint);
    report.write_csv(cfg.report);
    std::printf("checkpoint: %s\nreport: %s\n", cfg.checkpoint.c_str(), cfg.report.c_str());
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& input, const std::string& output,
                const std::string& probs_path, int patch, int overlap) {
    const Model<float> model = deserialize_model(checkpoint);
    const RasterImage tile = read_raster(input);
    if (tile.c() != model.spec.in_channels) {
        throw DataError("tile has " + std::to_string(tile.c()) + " channels, checkpoint expects " +
                        std::to_string(model.spec.in_channels));
    }
    const int div = 1 << model.spec.levels;
    int window = patch;
    if (window <= 0) {
        window = std::min({tile.h(), tile.w(), 256});
        window -= window % div;
        if (window < div) {
            throw DataError("tile too small for the model: " + std::to_string(tile.h()) + "x" +
                            std::to_string(tile.w()));
        }
    }
    if (window % div != 0) {
        throw ConfigError("--patch must be a multiple of " + std::to_string(div));
    }

    const Tensor4<float> probs = stitch_predict(model, tile, window, overlap);
    const LabelRaster labels = argmax_labels(probs);

    ensure_parent_dir(output);
    write_netpbm(output, encode_labels(labels, label_palette(model.num_classes)));
    if (!probs_path.empty()) {
        ensure_parent_dir(probs_path);
        write_ntr(probs_path, ntr_from_tensor(probs, /*squeeze_batch=*/true));
    }
    std::printf("prediction: %s (%dx%d, window %d, overlap %d)\n", output.c_str(), tile.h(), tile.w(), window,
                overlap);
    return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, bool eroded, const std::string& classes_str,
             const std::string& csv_path) {
    const auto pairs = pair_by_stem(pred_dir, gt_dir);
    const ClassPalette palette = ClassPalette::isprs();

    std::vector<TilePair> tiles;
    tiles.reserve(pairs.size());
    for (const auto& [pred_path, gt_path] : pairs) {
        TilePair tp;
        tp.name = pred_path.stem().string();
        tp.pred = decode_labels(read_raster(pred_path), palette);
        tp.truth = decode_labels(read_raster(gt_path), palette);
        tiles.push_back(std::move(tp));
    }

    std::vector<int> subset;
    if (!classes_str.empty()) {
        std::istringstream ss(classes_str);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            const int c = std::stoi(tok);
            if (c < 0 || c >= palette.size()) {
                throw ConfigError("--classes: index " + std::to_string(c) + " out of range");
            }
            subset.push_back(c);
        }
    }

    const Report report = evaluate_tiles(tiles, palette.size(), eroded, subset);
    std::vector<std::string> names;
    for (const auto& [name, rgb] : palette.entries) {
        names.push_back(name);
    }
    std::printf("%s", report.to_table(names).c_str());

    ensure_parent_dir(csv_path);
    write_text_atomic(csv_path, report.to_csv(names));
    std::printf("csv: %s\n", csv_path.c_str());
    return 0;
}

int cmd_selfcheck(bool inject_adjoint_fault) {
    const auto results = run_selfcheck(inject_adjoint_fault);
    bool all_pass = true;
    std::string first_fail;
    for (const SuiteResult& r : results) {
        std::printf("%-18s %s  max err %.3e  (threshold %.0e)  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                    r.max_err, r.threshold, r.detail.c_str());
        if (!r.pass && all_pass) {
            all_pass = false;
            first_fail = r.name;
        }
    }
    if (!all_pass) {
        std::fprintf(stderr, "selfcheck failed: %s\n", first_fail.c_str());
        return 4;
    }
    return 0;
}

int cmd_synth(const std::string& out_dir, int count, int size, int classes, std::uint64_t seed) {
    synth_dataset(out_dir, count, size, classes, seed);
    std::printf("wrote %d %dx%d tiles (%d classes) under %s\n", count, size, size, classes, out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bidirectional fully-convolutional segmentation: train, predict, evaluate."};
    app.require_subcommand(1);
    app.footer("Environment: RIFCN_THREADS caps internal parallelism (0 = sequential).");

    std::string config_path;
    std::int64_t seed_override = -1;
    double width_factor_override = 0.0;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    train_cmd->add_option("--config", config_path, "key=value run config")->required();
    train_cmd->add_option("--seed", seed_override, "override the config seed");
    train_cmd->add_option("--width-factor", width_factor_override, "override the config width factor");
    train_cmd->footer("Config schema:\n" + run_config_schema());

    std::string checkpoint, input, output, probs_path;
    int patch = 0, overlap = 0;
    auto* predict_cmd = app.add_subcommand("predict", "Sliding-window prediction over a tile");
    predict_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    predict_cmd->add_option("--input", input, "tile raster (ppm/pgm/ntr)")->required();
    predict_cmd->add_option("--output", output, "palette-encoded label map (ppm)")->required();
    predict_cmd->add_option("--probs", probs_path, "also write the probability volume (ntr)");
    predict_cmd->add_option("--patch", patch, "window size (default: fit to tile, max 256)");
    predict_cmd->add_option("--overlap", overlap, "window overlap in pixels");

    std::string pred_dir, gt_dir, classes_str, csv_path = "eval_report.csv";
    bool eroded = false;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate predictions against ground truth");
    eval_cmd->add_option("--pred", pred_dir, "directory of predicted label maps")->required();
    eval_cmd->add_option("--gt", gt_dir, "directory of ground-truth label maps")->required();
    eval_cmd->add_flag("--eroded", eroded, "evaluate on boundary-eroded ground truth (radius 3)");
    eval_cmd->add_option("--classes", classes_str, "comma list restricting the mean-F1 average");
    eval_cmd->add_option("--csv", csv_path, "CSV report path");

    bool inject_adjoint_fault = false;
    auto* selfcheck_cmd = app.add_subcommand("selfcheck", "Run the numeric property suites");
    selfcheck_cmd->add_flag("--inject-adjoint-fault", inject_adjoint_fault, "test hook: sabotage the deconv kernel")
        ->group(""); // hidden

    std::string synth_out;
    int synth_count = 8, synth_size = 32, synth_classes = 3;
    std::uint64_t synth_seed = 0;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic desk-scale dataset");
    synth_cmd->add_option("--out", synth_out, "output directory (images/ + labels/)")->required();
    synth_cmd->add_option("--count", synth_count, "number of tiles");
    synth_cmd->add_option("--size", synth_size, "tile size (multiple of 16)");
    synth_cmd->add_option("--classes", synth_classes, "class count including background (2..6)");
    synth_cmd->add_option("--seed", synth_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (train_cmd->parsed()) {
        return run_guarded([&] { return cmd_train(config_path, seed_override, width_factor_override); });
    }
    if (predict_cmd->parsed()) {
        return run_guarded([&] { return cmd_predict(checkpoint, input, output, probs_path, patch, overlap); });
    }
    if (eval_cmd->parsed()) {
        return run_guarded([&] { return cmd_eval(pred_dir, gt_dir, eroded, classes_str, csv_path); });
    }
    if (selfcheck_cmd->parsed()) {
        return run_guarded([&] { return cmd_selfcheck(inject_adjoint_fault); });
    }
    if (synth_cmd->parsed()) {
        return run_guarded([&] { return cmd_synth(synth_out, synth_count, synth_size, synth_classes, synth_seed); });
    }
    return 1;
}
