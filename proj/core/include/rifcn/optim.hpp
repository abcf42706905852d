#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rifcn/data_io.hpp"
#include "rifcn/model.hpp"

namespace rifcn {

/// Classical momentum: v <- gamma*v + eta*g; w <- w - v.
template <typename T>
struct SgdMomentumState {
    double eta = 2e-4;
    double gamma = 0.9;
    std::vector<std::vector<T>> velocity; ///< allocated lazily, congruent to params
};

template <typename T>
void sgd_momentum_step(std::span<std::span<T>> params, std::span<std::span<const T>> grads,
                       SgdMomentumState<T>& state);

/// Nesterov Adam with the multiplicative momentum schedule
///   mu_t = beta1 * (1 - 0.5 * 0.96^(t*psi)),
/// first and second moments bias-corrected by the running product of mu and
/// beta2^t respectively. Step counter t is 1-based at use.
template <typename T>
struct NadamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double schedule_decay = 0.004;
    double eta = 2e-4;
    std::int64_t t = 0;
    double mu_product = 1.0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

template <typename T>
void nadam_step(std::span<std::span<T>> params, std::span<std::span<const T>> grads, NadamState<T>& state);

enum class OptimizerKind { Nadam, SgdMomentum };

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    double val_fraction = 0.10;
    int patience = 5;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::Nadam;
    double lr = 2e-4;
    double momentum = 0.9;
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct TrainReport {
    std::vector<EpochRow> rows;
    int best_epoch = -1;
    bool early_stopped = false;

    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
};

/// Mini-batch training with a seeded validation split, per-epoch early
/// stopping on validation loss, and restoration of the best parameters.
/// Deterministic in seed for a fixed thread budget (and for any budget, since
/// all reductions are fixed-order). Throws NumericError if the loss goes
/// non-finite.
TrainReport train(Model<float>& model, const PatchSet& data, const TrainConfig& cfg);

/// Mean fraction of supervised pixels whose argmax prediction matches.
double pixel_accuracy(const Model<float>& model, std::span<const Patch> data);

} // namespace rifcn
