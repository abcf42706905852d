#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rifcn/labels.hpp"
#include "rifcn/tensor_ops.hpp"

namespace rifcn {

/// Geometry of the feature-extraction stream: levels pooling stages and
/// levels+1 convolutional blocks of two 3x3 conv layers each.
struct ForwardStreamSpec {
    int levels = 4;
    std::vector<int> block_widths = {64, 128, 256, 512, 1024};
    int in_channels = 3;
    static constexpr int convs_per_block = 2;

    void validate() const;

    /// Copy with every width scaled by factor (floored at 1), for desk-scale runs.
    ForwardStreamSpec scaled(double factor) const;
};

enum class HeadKind { Softmax, Sigmoid };

std::string to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);

/// Multi-resolution activations: fwd[l] from the extraction stream and bwd[l]
/// from the top-down fusion recurrence, each at resolution (h/2^l, w/2^l).
/// bwd[levels] equals fwd[levels] (recurrence base case).
template <typename T>
struct FeaturePyramid {
    std::vector<Tensor4<T>> fwd;
    std::vector<Tensor4<T>> bwd;
};

/// All learnable parameters of the bidirectional segmentation network.
template <typename T>
struct Model {
    ForwardStreamSpec spec;
    int num_classes = 1;
    HeadKind head_kind = HeadKind::Sigmoid;

    /// blocks[l][j]: 3x3 stride-1 pad-1 conv j of block l.
    std::vector<std::array<ConvKernel<T>, 2>> blocks;
    /// fuse_conv[l]: 3x3 conv widths[l] -> widths[l], the lateral fusion term.
    std::vector<ConvKernel<T>> fuse_conv;
    /// fuse_deconv[l]: 4x4 stride-2 pad-1 transposed conv widths[l+1] -> widths[l],
    /// the upsampling fusion term (each level exactly doubles resolution).
    std::vector<ConvKernel<T>> fuse_deconv;
    /// 1x1 conv widths[0] -> num_classes.
    ConvKernel<T> head;

    std::uint64_t parameter_count() const;
};

/// Closed-form parameter count for a spec, without allocating a model.
std::uint64_t parameter_count(const ForwardStreamSpec& spec, int num_classes);

/// Glorot-uniform initialized model, deterministic in seed. The head is
/// sigmoid for num_classes == 1 and softmax otherwise.
template <typename T>
Model<T> build_model(const ForwardStreamSpec& spec, int num_classes, std::uint64_t seed);

/// Everything the backward pass needs from one forward invocation. A cache is
/// single-use: backprop marks it consumed and rejects reuse.
template <typename T>
struct ActivationCache {
    FeaturePyramid<T> pyramid;
    std::vector<Tensor4<T>> block_in;   ///< input of conv 0 per block
    std::vector<Tensor4<T>> block_mid;  ///< ReLU output of conv 0 per block
    std::vector<PoolResult<T>> pools;   ///< per level 0..L-1
    std::vector<Tensor4<T>> fuse_a;     ///< ReLU(conv(fwd[l])) per level
    std::vector<Tensor4<T>> fuse_b;     ///< ReLU(deconv(bwd[l+1])) per level
    bool populated = false;
    bool consumed = false;
};

/// Runs the extraction stream, filling cache.pyramid.fwd and the block/pool
/// caches. Input spatial dims must divide 2^levels.
template <typename T>
void forward_stream(const Model<T>& model, const Tensor4<T>& x, ActivationCache<T>& cache);

/// Runs the top-down fusion recurrence over a populated pyramid:
/// bwd[L] = fwd[L]; bwd[l] = ReLU(conv(fwd[l])) + ReLU(deconv(bwd[l+1])).
/// Returns a copy of bwd[0], at full input resolution.
template <typename T>
Tensor4<T> backward_stream_fuse(const Model<T>& model, FeaturePyramid<T>& pyramid, ActivationCache<T>& cache);

/// Class probabilities (n, M, h, w): softmax over channels, or sigmoid for the
/// single-class head. Pure; does not retain activations.
template <typename T>
Tensor4<T> predict(const Model<T>& model, const Tensor4<T>& x);

/// Forward pass that retains activations for a subsequent backprop call.
template <typename T>
Tensor4<T> forward_train(const Model<T>& model, const Tensor4<T>& x, ActivationCache<T>& cache);

/// Mean negative log-likelihood over supervised pixels (cross-entropy for the
/// softmax head, binary cross-entropy for sigmoid). Probabilities are clamped
/// to [1e-7, 1 - 1e-7] before the log. Throws NumericError when every pixel is
/// ignored.
template <typename T>
double compute_loss(const Tensor4<T>& probs, std::span<const LabelRaster> labels, HeadKind kind);

template <typename T>
double compute_loss(const Tensor4<T>& probs, const LabelRaster& labels, HeadKind kind);

/// Loss gradient w.r.t. the head logits: (p - target) / supervised_count,
/// zero at ignored pixels. Shared by both heads.
template <typename T>
Tensor4<T> loss_grad_logits(const Tensor4<T>& probs, std::span<const LabelRaster> labels, HeadKind kind);

/// Parameter gradients, congruent with Model<T>.
template <typename T>
struct Gradients {
    std::vector<std::array<KernelGrad<T>, 2>> blocks;
    std::vector<KernelGrad<T>> fuse_conv;
    std::vector<KernelGrad<T>> fuse_deconv;
    KernelGrad<T> head;
};

/// Full end-to-end backward pass. The cache must come from the forward_train
/// call that produced probs; it is consumed by this call.
template <typename T>
Gradients<T> backprop(const Model<T>& model, ActivationCache<T>& cache, const Tensor4<T>& probs,
                      std::span<const LabelRaster> labels);

/// Flat views over every parameter (or gradient) buffer, in one fixed order:
/// blocks ascending (conv0 w, conv0 b, conv1 w, conv1 b), fusion levels
/// ascending (conv w/b, deconv w/b), then head w/b. Optimizers iterate these.
template <typename T>
std::vector<std::span<T>> param_views(Model<T>& model);

template <typename T>
std::vector<std::span<const T>> grad_views(const Gradients<T>& grads);

/// Writes the model to a single-file checkpoint (tensor container with a
/// plain-text manifest record), via a temp file and atomic rename.
void serialize_model(const Model<float>& model, const std::filesystem::path& path);

/// Reads a checkpoint written by serialize_model. Throws DataError on bad
/// magic, version mismatch, checksum failure, or truncation.
Model<float> deserialize_model(const std::filesystem::path& path);

} // namespace rifcn
