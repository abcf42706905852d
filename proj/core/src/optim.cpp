#include "rifcn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace rifcn {

namespace {

template <typename T>
void check_congruent(std::span<std::span<T>> params, std::span<std::span<const T>> grads,
                     std::vector<std::vector<T>>& state_buf, const char* op) {
    if (params.size() != grads.size()) {
        throw ShapeError(std::string(op) + ": parameter/gradient buffer count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size()) {
            throw ShapeError(std::string(op) + ": buffer " + std::to_string(i) + " size mismatch");
        }
    }
    if (state_buf.empty()) {
        state_buf.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state_buf[i].assign(params[i].size(), T(0));
        }
    } else if (state_buf.size() != params.size()) {
        throw ShapeError(std::string(op) + ": optimizer state does not match parameters");
    } else {
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (state_buf[i].size() != params[i].size()) {
                throw ShapeError(std::string(op) + ": optimizer state buffer " + std::to_string(i) + " mismatch");
            }
        }
    }
}

// Stdlib-independent shuffle (Fisher-Yates with raw 64-bit draws).
void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

std::uint64_t supervised_count(std::span<const LabelRaster> labels) {
    std::uint64_t count = 0;
    for (const auto& lab : labels) {
        for (std::uint8_t v : lab.v) {
            if (v != kIgnoreLabel) {
                ++count;
            }
        }
    }
    return count;
}

struct AccCount {
    std::uint64_t correct = 0;
    std::uint64_t supervised = 0;
};

AccCount batch_accuracy(const Tensor4<float>& probs, std::span<const LabelRaster> labels) {
    AccCount acc;
    const int M = probs.c();
    const std::size_t S = static_cast<std::size_t>(probs.h()) * probs.w();
    for (int in = 0; in < probs.n(); ++in) {
        const auto& lab = labels[in];
        for (std::size_t s = 0; s < S; ++s) {
            const std::uint8_t t = lab.v[s];
            if (t == kIgnoreLabel) {
                continue;
            }
            int pred = 0;
            if (M == 1) {
                pred = probs.plane(in, 0)[s] > 0.5f ? 1 : 0;
            } else {
                float bv = probs.plane(in, 0)[s];
                for (int c = 1; c < M; ++c) {
                    const float v = probs.plane(in, c)[s];
                    if (v > bv) {
                        bv = v;
                        pred = c;
                    }
                }
            }
            acc.supervised += 1;
            if (pred == t) {
                acc.correct += 1;
            }
        }
    }
    return acc;
}

Tensor4<float> assemble_batch(const PatchSet& data, std::span<const std::size_t> idx) {
    const auto& first = data[idx[0]].image;
    Tensor4<float> batch(static_cast<int>(idx.size()), first.c(), first.h(), first.w());
    const std::size_t item = first.size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& img = data[idx[i]].image;
        if (img.c() != first.c() || img.h() != first.h() || img.w() != first.w()) {
            throw ShapeError("train: patches have inconsistent shapes");
        }
        std::copy(img.data(), img.data() + item, batch.data() + i * item);
    }
    return batch;
}

} // namespace

template <typename T>
void sgd_momentum_step(std::span<std::span<T>> params, std::span<std::span<const T>> grads,
                       SgdMomentumState<T>& state) {
    check_congruent(params, grads, state.velocity, "sgd_momentum_step");
    const T eta = static_cast<T>(state.eta);
    const T gamma = static_cast<T>(state.gamma);
    for (std::size_t b = 0; b < params.size(); ++b) {
        T* w = params[b].data();
        const T* g = grads[b].data();
        T* v = state.velocity[b].data();
        const std::size_t count = params[b].size();
        for (std::size_t i = 0; i < count; ++i) {
            v[i] = gamma * v[i] + eta * g[i];
            w[i] -= v[i];
        }
    }
}

template <typename T>
void nadam_step(std::span<std::span<T>> params, std::span<std::span<const T>> grads, NadamState<T>& state) {
    check_congruent(params, grads, state.m, "nadam_step");
    if (state.v.empty()) {
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.v[i].assign(params[i].size(), T(0));
        }
    }

    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double mu_t = state.beta1 * (1.0 - 0.5 * std::pow(0.96, t * state.schedule_decay));
    const double mu_t1 = state.beta1 * (1.0 - 0.5 * std::pow(0.96, (t + 1.0) * state.schedule_decay));
    const double mu_prod_t = state.mu_product * mu_t;
    const double mu_prod_t1 = mu_prod_t * mu_t1;

    const T beta1 = static_cast<T>(state.beta1);
    const T beta2 = static_cast<T>(state.beta2);
    const T one_m_beta1 = static_cast<T>(1.0 - state.beta1);
    const T one_m_beta2 = static_cast<T>(1.0 - state.beta2);
    const T om_sched_t = static_cast<T>(1.0 - mu_prod_t);
    const T om_sched_t1 = static_cast<T>(1.0 - mu_prod_t1);
    const T om_beta2t = static_cast<T>(1.0 - std::pow(state.beta2, t));
    const T om_mu_t = static_cast<T>(1.0 - mu_t);
    const T mu_t1_T = static_cast<T>(mu_t1);
    const T eta = static_cast<T>(state.eta);
    const T eps = static_cast<T>(state.eps);

    for (std::size_t b = 0; b < params.size(); ++b) {
        T* w = params[b].data();
        const T* g = grads[b].data();
        T* m = state.m[b].data();
        T* v = state.v[b].data();
        const std::size_t count = params[b].size();
        for (std::size_t i = 0; i < count; ++i) {
            const T gi = g[i];
            m[i] = beta1 * m[i] + one_m_beta1 * gi;
            v[i] = beta2 * v[i] + (one_m_beta2 * gi) * gi;
            const T g_hat = gi / om_sched_t;
            const T m_hat = m[i] / om_sched_t1;
            const T v_hat = v[i] / om_beta2t;
            const T m_bar = om_mu_t * g_hat + mu_t1_T * m_hat;
            w[i] -= eta * m_bar / (std::sqrt(v_hat) + eps);
        }
    }
    state.mu_product = mu_prod_t;
}

std::string TrainReport::to_csv() const {
    std::string out = "epoch,train_loss,val_loss,train_acc,val_acc\n";
    char buf[160];
    for (const EpochRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.train_loss, r.val_loss,
                      r.train_acc, r.val_acc);
        out += buf;
    }
    return out;
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
    write_text_atomic(path, to_csv());
}

double pixel_accuracy(const Model<float>& model, std::span<const Patch> data) {
    AccCount total;
    for (const Patch& p : data) {
        const Tensor4<float> probs = predict(model, p.image);
        const AccCount a = batch_accuracy(probs, std::span<const LabelRaster>(&p.labels, 1));
        total.correct += a.correct;
        total.supervised += a.supervised;
    }
    return total.supervised == 0 ? 0.0 : static_cast<double>(total.correct) / static_cast<double>(total.supervised);
}

TrainReport train(Model<float>& model, const PatchSet& data, const TrainConfig& cfg) {
    if (data.empty()) {
        throw DataError("train: empty dataset");
    }
    if (cfg.batch_size < 1) {
        throw ConfigError("train: batch_size must be >= 1");
    }
    if (cfg.val_fraction <= 0.0 || cfg.val_fraction >= 1.0) {
        throw ConfigError("train: val_fraction must be in (0, 1)");
    }
    if (cfg.epochs < 1) {
        throw ConfigError("train: epochs must be >= 1");
    }
    const int div = 1 << model.spec.levels;
    for (const Patch& p : data) {
        if (p.image.h() % div != 0 || p.image.w() % div != 0) {
            throw DataError("train: patch dims " + std::to_string(p.image.h()) + "x" + std::to_string(p.image.w()) +
                            " not divisible by " + std::to_string(div));
        }
    }

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    shuffle_indices(order, rng);

    // Validation split: at least one sample on each side when possible.
    std::size_t val_count = 0;
    if (data.size() >= 2) {
        val_count = static_cast<std::size_t>(static_cast<double>(data.size()) * cfg.val_fraction);
        val_count = std::clamp<std::size_t>(val_count, 1, data.size() - 1);
    }
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_count));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(val_count), order.end());

    auto params = param_views(model);
    NadamState<float> nadam;
    nadam.eta = cfg.lr;
    SgdMomentumState<float> sgd;
    sgd.eta = cfg.lr;
    sgd.gamma = cfg.momentum;

    auto snapshot = [&params]() {
        std::vector<std::vector<float>> copy(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            copy[i].assign(params[i].begin(), params[i].end());
        }
        return copy;
    };
    auto restore = [&params](const std::vector<std::vector<float>>& copy) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            std::copy(copy[i].begin(), copy[i].end(), params[i].begin());
        }
    };

    auto evaluate = [&model](const PatchSet& set, std::span<const std::size_t> idx, double& loss, double& acc) {
        double nll_sum = 0.0;
        AccCount total;
        for (std::size_t i : idx) {
            const Patch& p = set[i];
            const Tensor4<float> probs = predict(model, p.image);
            const std::span<const LabelRaster> labs(&p.labels, 1);
            const std::uint64_t sup = supervised_count(labs);
            if (sup == 0) {
                continue;
            }
            nll_sum += compute_loss(probs, labs, model.head_kind) * static_cast<double>(sup);
            const AccCount a = batch_accuracy(probs, labs);
            total.correct += a.correct;
            total.supervised += a.supervised;
        }
        loss = total.supervised == 0 ? 0.0 : nll_sum / static_cast<double>(total.supervised);
        acc = total.supervised == 0 ? 0.0 : static_cast<double>(total.correct) / static_cast<double>(total.supervised);
    };

    TrainReport report;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_params;
    int bad_epochs = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_indices(train_idx, rng);

        double nll_sum = 0.0;
        AccCount train_total;
        for (std::size_t start = 0; start < train_idx.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> batch_idx(train_idx.data() + start, stop - start);

            std::vector<LabelRaster> labels;
            labels.reserve(batch_idx.size());
            for (std::size_t i : batch_idx) {
                labels.push_back(data[i].labels);
            }
            const std::uint64_t sup = supervised_count(labels);
            if (sup == 0) {
                continue; // nothing to learn from in this batch
            }
            const Tensor4<float> batch = assemble_batch(data, batch_idx);

            ActivationCache<float> cache;
            const Tensor4<float> probs = forward_train(model, batch, cache);
            const double loss = compute_loss(probs, std::span<const LabelRaster>(labels), model.head_kind);
            if (!std::isfinite(loss)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            }
            nll_sum += loss * static_cast<double>(sup);
            const AccCount a = batch_accuracy(probs, labels);
            train_total.correct += a.correct;
            train_total.supervised += a.supervised;

            Gradients<float> grads = backprop(model, cache, probs, std::span<const LabelRaster>(labels));
            auto gviews = grad_views(grads);
            if (cfg.optimizer == OptimizerKind::Nadam) {
                nadam_step(std::span<std::span<float>>(params), std::span<std::span<const float>>(gviews), nadam);
            } else {
                sgd_momentum_step(std::span<std::span<float>>(params), std::span<std::span<const float>>(gviews),
                                  sgd);
            }
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss =
            train_total.supervised == 0 ? 0.0 : nll_sum / static_cast<double>(train_total.supervised);
        row.train_acc = train_total.supervised == 0
                            ? 0.0
                            : static_cast<double>(train_total.correct) / static_cast<double>(train_total.supervised);
        if (val_idx.empty()) {
            row.val_loss = row.train_loss;
            row.val_acc = row.train_acc;
        } else {
            evaluate(data, val_idx, row.val_loss, row.val_acc);
        }
        if (!std::isfinite(row.val_loss)) {
            throw NumericError("train: non-finite validation loss at epoch " + std::to_string(epoch));
        }
        report.rows.push_back(row);

        if (row.val_loss < best_val) {
            best_val = row.val_loss;
            report.best_epoch = epoch;
            best_params = snapshot();
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs > cfg.patience) {
                report.early_stopped = true;
                break;
            }
        }
    }

    if (!best_params.empty()) {
        restore(best_params);
    }
    return report;
}

template void sgd_momentum_step<float>(std::span<std::span<float>>, std::span<std::span<const float>>,
                                       SgdMomentumState<float>&);
template void sgd_momentum_step<double>(std::span<std::span<double>>, std::span<std::span<const double>>,
                                        SgdMomentumState<double>&);
template void nadam_step<float>(std::span<std::span<float>>, std::span<std::span<const float>>, NadamState<float>&);
template void nadam_step<double>(std::span<std::span<double>>, std::span<std::span<const double>>,
                                 NadamState<double>&);

} // namespace rifcn
