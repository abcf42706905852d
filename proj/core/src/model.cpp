#include "rifcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "rifcn/data_io.hpp"

namespace rifcn {

namespace {

constexpr double kProbClamp = 1e-7;

template <typename T>
void add_inplace(Tensor4<T>& dst, const Tensor4<T>& src) {
    require_same_shape(dst, src, "add");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst.data()[i] += src.data()[i];
    }
}

// Uniform draw in [0,1) built from the top 53 bits of the generator output,
// so initialization is reproducible across standard libraries.
double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename T>
void fill_glorot(Tensor4<T>& w, int fan_in, int fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
    for (std::size_t i = 0; i < w.size(); ++i) {
        w.data()[i] = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * limit);
    }
}

// Parameter structure with zero weights; build_model initializes it.
template <typename T>
Model<T> make_structure(const ForwardStreamSpec& spec, int num_classes) {
    spec.validate();
    if (num_classes < 1) {
        throw ConfigError("num_classes must be >= 1");
    }
    Model<T> m;
    m.spec = spec;
    m.num_classes = num_classes;
    m.head_kind = num_classes == 1 ? HeadKind::Sigmoid : HeadKind::Softmax;
    const int L = spec.levels;
    m.blocks.reserve(L + 1);
    for (int l = 0; l <= L; ++l) {
        const int in0 = l == 0 ? spec.in_channels : spec.block_widths[l - 1];
        const int wch = spec.block_widths[l];
        m.blocks.push_back({make_conv_kernel<T>(in0, wch, 3, 1, 1), make_conv_kernel<T>(wch, wch, 3, 1, 1)});
    }
    for (int l = 0; l < L; ++l) {
        m.fuse_conv.push_back(make_conv_kernel<T>(spec.block_widths[l], spec.block_widths[l], 3, 1, 1));
        m.fuse_deconv.push_back(make_deconv_kernel<T>(spec.block_widths[l + 1], spec.block_widths[l], 4, 2, 1));
    }
    m.head = make_conv_kernel<T>(spec.block_widths[0], num_classes, 1, 1, 0);
    return m;
}

template <typename T>
Gradients<T> make_gradients(const Model<T>& m) {
    Gradients<T> g;
    g.blocks.resize(m.blocks.size());
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        for (int j = 0; j < 2; ++j) {
            const auto& k = m.blocks[l][j];
            g.blocks[l][j].weights = Tensor4<T>(k.d0(), k.d1(), k.kh(), k.kw());
            g.blocks[l][j].bias.assign(k.bias.size(), T(0));
        }
    }
    g.fuse_conv.resize(m.fuse_conv.size());
    g.fuse_deconv.resize(m.fuse_deconv.size());
    g.head.weights = Tensor4<T>(m.head.d0(), m.head.d1(), m.head.kh(), m.head.kw());
    g.head.bias.assign(m.head.bias.size(), T(0));
    return g;
}

template <typename T>
Tensor4<T> head_logits(const Model<T>& model, const Tensor4<T>& fused) {
    return conv2d(fused, model.head);
}

template <typename T>
Tensor4<T> apply_head_activation(const Model<T>& model, const Tensor4<T>& logits) {
    return model.head_kind == HeadKind::Softmax ? softmax_channels(logits) : activation(Activation::Sigmoid, logits);
}

template <typename T>
void check_labels(const Tensor4<T>& probs, std::span<const LabelRaster> labels) {
    if (static_cast<int>(labels.size()) != probs.n()) {
        throw ShapeError("labels: batch size " + std::to_string(labels.size()) + " != probs batch " +
                         std::to_string(probs.n()));
    }
    for (const auto& lab : labels) {
        if (lab.h != probs.h() || lab.w != probs.w()) {
            throw ShapeError("labels: raster " + std::to_string(lab.h) + "x" + std::to_string(lab.w) +
                             " does not match probs " + std::to_string(probs.h()) + "x" + std::to_string(probs.w()));
        }
    }
}

} // namespace

void ForwardStreamSpec::validate() const {
    if (levels < 1) {
        throw ConfigError("spec: levels must be >= 1");
    }
    if (static_cast<int>(block_widths.size()) != levels + 1) {
        throw ConfigError("spec: block_widths must have levels+1 entries, got " +
                          std::to_string(block_widths.size()) + " for levels=" + std::to_string(levels));
    }
    for (int w : block_widths) {
        if (w < 1) {
            throw ConfigError("spec: block widths must be >= 1");
        }
    }
    if (in_channels < 1) {
        throw ConfigError("spec: in_channels must be >= 1");
    }
}

ForwardStreamSpec ForwardStreamSpec::scaled(double factor) const {
    if (factor <= 0) {
        throw ConfigError("spec: width factor must be positive");
    }
    ForwardStreamSpec s = *this;
    for (int& w : s.block_widths) {
        w = std::max(1, static_cast<int>(std::lround(w * factor)));
    }
    return s;
}

std::string to_string(HeadKind k) {
    return k == HeadKind::Softmax ? "softmax" : "sigmoid";
}

HeadKind head_kind_from_string(const std::string& s) {
    if (s == "softmax") {
        return HeadKind::Softmax;
    }
    if (s == "sigmoid") {
        return HeadKind::Sigmoid;
    }
    throw ConfigError("unknown head kind: " + s);
}

std::uint64_t parameter_count(const ForwardStreamSpec& spec, int num_classes) {
    spec.validate();
    std::uint64_t total = 0;
    const auto& w = spec.block_widths;
    for (int l = 0; l <= spec.levels; ++l) {
        const std::uint64_t in0 = l == 0 ? spec.in_channels : w[l - 1];
        const std::uint64_t wc = w[l];
        total += wc * in0 * 9 + wc;
        total += wc * wc * 9 + wc;
    }
    for (int l = 0; l < spec.levels; ++l) {
        const std::uint64_t wl = w[l], wn = w[l + 1];
        total += wl * wl * 9 + wl;
        total += wn * wl * 16 + wl;
    }
    total += static_cast<std::uint64_t>(num_classes) * w[0] + num_classes;
    return total;
}

template <typename T>
std::uint64_t Model<T>::parameter_count() const {
    return rifcn::parameter_count(spec, num_classes);
}

template <typename T>
Model<T> build_model(const ForwardStreamSpec& spec, int num_classes, std::uint64_t seed) {
    Model<T> m = make_structure<T>(spec, num_classes);
    std::mt19937_64 rng(seed);
    for (int l = 0; l <= spec.levels; ++l) {
        for (int j = 0; j < 2; ++j) {
            auto& k = m.blocks[l][j];
            fill_glorot(k.weights, k.d1() * 9, k.d0() * 9, rng);
        }
    }
    for (int l = 0; l < spec.levels; ++l) {
        auto& kc = m.fuse_conv[l];
        fill_glorot(kc.weights, kc.d1() * 9, kc.d0() * 9, rng);
        auto& kd = m.fuse_deconv[l];
        // transposed map: d0 is the input channel axis
        fill_glorot(kd.weights, kd.d0() * 16, kd.d1() * 16, rng);
    }
    fill_glorot(m.head.weights, m.head.d1(), m.head.d0(), rng);
    return m;
}

template <typename T>
void forward_stream(const Model<T>& model, const Tensor4<T>& x, ActivationCache<T>& cache) {
    const auto& spec = model.spec;
    const int L = spec.levels;
    if (x.c() != spec.in_channels) {
        throw ShapeError("forward_stream: input has " + std::to_string(x.c()) + " channels, model expects " +
                         std::to_string(spec.in_channels));
    }
    const int div = 1 << L;
    if (x.h() % div != 0 || x.w() % div != 0) {
        throw ShapeError("forward_stream: input dims " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                         " must be divisible by " + std::to_string(div));
    }
    cache = ActivationCache<T>{};
    cache.pyramid.fwd.resize(L + 1);
    cache.block_in.resize(L + 1);
    cache.block_mid.resize(L + 1);
    cache.pools.resize(L);

    Tensor4<T> cur = x;
    for (int l = 0; l <= L; ++l) {
        cache.block_in[l] = std::move(cur);
        Tensor4<T> a0 = activation(Activation::Relu, conv2d(cache.block_in[l], model.blocks[l][0]));
        cache.block_mid[l] = std::move(a0);
        cache.pyramid.fwd[l] = activation(Activation::Relu, conv2d(cache.block_mid[l], model.blocks[l][1]));
        if (l < L) {
            cache.pools[l] = maxpool2d(cache.pyramid.fwd[l]);
            cur = cache.pools[l].y;
        }
    }
    cache.populated = true;
}

template <typename T>
Tensor4<T> backward_stream_fuse(const Model<T>& model, FeaturePyramid<T>& pyramid, ActivationCache<T>& cache) {
    const int L = model.spec.levels;
    if (static_cast<int>(pyramid.fwd.size()) != L + 1) {
        throw ShapeError("backward_stream_fuse: pyramid has " + std::to_string(pyramid.fwd.size()) +
                         " forward levels, expected " + std::to_string(L + 1));
    }
    pyramid.bwd.assign(L + 1, Tensor4<T>{});
    pyramid.bwd[L] = pyramid.fwd[L];
    cache.fuse_a.assign(L, Tensor4<T>{});
    cache.fuse_b.assign(L, Tensor4<T>{});
    for (int l = L - 1; l >= 0; --l) {
        Tensor4<T> a = activation(Activation::Relu, conv2d(pyramid.fwd[l], model.fuse_conv[l]));
        Tensor4<T> b = activation(Activation::Relu, deconv2d(pyramid.bwd[l + 1], model.fuse_deconv[l]));
        require_same_shape(a, b, "backward_stream_fuse");
        Tensor4<T> fused = a;
        add_inplace(fused, b);
        cache.fuse_a[l] = std::move(a);
        cache.fuse_b[l] = std::move(b);
        pyramid.bwd[l] = std::move(fused);
    }
    return pyramid.bwd[0];
}

template <typename T>
Tensor4<T> forward_train(const Model<T>& model, const Tensor4<T>& x, ActivationCache<T>& cache) {
    forward_stream(model, x, cache);
    Tensor4<T> fused = backward_stream_fuse(model, cache.pyramid, cache);
    return apply_head_activation(model, head_logits(model, fused));
}

template <typename T>
Tensor4<T> predict(const Model<T>& model, const Tensor4<T>& x) {
    ActivationCache<T> cache;
    return forward_train(model, x, cache);
}

template <typename T>
double compute_loss(const Tensor4<T>& probs, std::span<const LabelRaster> labels, HeadKind kind) {
    check_labels(probs, labels);
    const int M = probs.c();
    const std::size_t S = static_cast<std::size_t>(probs.h()) * probs.w();
    double acc = 0.0;
    std::uint64_t count = 0;
    for (int in = 0; in < probs.n(); ++in) {
        const auto& lab = labels[in];
        for (std::size_t s = 0; s < S; ++s) {
            const std::uint8_t t = lab.v[s];
            if (t == kIgnoreLabel) {
                continue;
            }
            if (kind == HeadKind::Sigmoid) {
                if (t > 1) {
                    throw DataError("compute_loss: binary head saw label " + std::to_string(t));
                }
                const double p = std::clamp(static_cast<double>(probs.plane(in, 0)[s]), kProbClamp, 1.0 - kProbClamp);
                acc -= t == 1 ? std::log(p) : std::log(1.0 - p);
            } else {
                if (t >= M) {
                    throw DataError("compute_loss: label " + std::to_string(t) + " out of range for " +
                                    std::to_string(M) + " classes");
                }
                const double p =
                    std::clamp(static_cast<double>(probs.plane(in, t)[s]), kProbClamp, 1.0 - kProbClamp);
                acc -= std::log(p);
            }
            ++count;
        }
    }
    if (count == 0) {
        throw DataError("compute_loss: empty supervision (every pixel ignored)");
    }
    return acc / static_cast<double>(count);
}

template <typename T>
double compute_loss(const Tensor4<T>& probs, const LabelRaster& labels, HeadKind kind) {
    return compute_loss(probs, std::span<const LabelRaster>(&labels, 1), kind);
}

template <typename T>
Tensor4<T> loss_grad_logits(const Tensor4<T>& probs, std::span<const LabelRaster> labels, HeadKind kind) {
    check_labels(probs, labels);
    const int M = probs.c();
    const std::size_t S = static_cast<std::size_t>(probs.h()) * probs.w();
    std::uint64_t count = 0;
    for (int in = 0; in < probs.n(); ++in) {
        for (std::size_t s = 0; s < S; ++s) {
            if (labels[in].v[s] != kIgnoreLabel) {
                ++count;
            }
        }
    }
    if (count == 0) {
        throw DataError("loss_grad_logits: empty supervision (every pixel ignored)");
    }
    const T scale = T(1) / static_cast<T>(count);
    Tensor4<T> g = zeros_like(probs);
    for (int in = 0; in < probs.n(); ++in) {
        const auto& lab = labels[in];
        for (std::size_t s = 0; s < S; ++s) {
            const std::uint8_t t = lab.v[s];
            if (t == kIgnoreLabel) {
                continue;
            }
            if (kind == HeadKind::Sigmoid) {
                g.plane(in, 0)[s] = (probs.plane(in, 0)[s] - static_cast<T>(t)) * scale;
            } else {
                for (int c = 0; c < M; ++c) {
                    const T target = c == t ? T(1) : T(0);
                    g.plane(in, c)[s] = (probs.plane(in, c)[s] - target) * scale;
                }
            }
        }
    }
    return g;
}

template <typename T>
Gradients<T> backprop(const Model<T>& model, ActivationCache<T>& cache, const Tensor4<T>& probs,
                      std::span<const LabelRaster> labels) {
    if (!cache.populated || cache.consumed) {
        throw Error("backprop: stale cache (not from a fresh forward pass)");
    }
    const int L = model.spec.levels;
    if (static_cast<int>(cache.fuse_a.size()) != L || static_cast<int>(cache.pyramid.bwd.size()) != L + 1) {
        throw Error("backprop: cache missing fusion activations");
    }
    cache.consumed = true;

    Gradients<T> grads = make_gradients(model);

    // head
    Tensor4<T> g_logits = loss_grad_logits(probs, labels, model.head_kind);
    ConvBackward<T> hb = conv2d_backward(cache.pyramid.bwd[0], model.head, g_logits);
    grads.head = std::move(hb.grad_k);

    // fusion recurrence, shallow to deep
    std::vector<Tensor4<T>> dfwd(L + 1);
    for (int l = 0; l <= L; ++l) {
        dfwd[l] = zeros_like(cache.pyramid.fwd[l]);
    }
    Tensor4<T> g = std::move(hb.grad_x); // dL/d bwd[l]
    for (int l = 0; l < L; ++l) {
        Tensor4<T> da = activation_backward(Activation::Relu, cache.fuse_a[l], g);
        ConvBackward<T> cb = conv2d_backward(cache.pyramid.fwd[l], model.fuse_conv[l], da);
        add_inplace(dfwd[l], cb.grad_x);
        grads.fuse_conv[l] = std::move(cb.grad_k);

        Tensor4<T> db = activation_backward(Activation::Relu, cache.fuse_b[l], g);
        ConvBackward<T> dbk = deconv2d_backward(cache.pyramid.bwd[l + 1], model.fuse_deconv[l], db);
        grads.fuse_deconv[l] = std::move(dbk.grad_k);
        g = std::move(dbk.grad_x);
    }
    add_inplace(dfwd[L], g); // bwd[L] is fwd[L]

    // extraction blocks, deep to shallow
    for (int l = L; l >= 0; --l) {
        Tensor4<T> dpre1 = activation_backward(Activation::Relu, cache.pyramid.fwd[l], dfwd[l]);
        ConvBackward<T> c1 = conv2d_backward(cache.block_mid[l], model.blocks[l][1], dpre1);
        grads.blocks[l][1] = std::move(c1.grad_k);
        Tensor4<T> dpre0 = activation_backward(Activation::Relu, cache.block_mid[l], c1.grad_x);
        ConvBackward<T> c0 = conv2d_backward(cache.block_in[l], model.blocks[l][0], dpre0);
        grads.blocks[l][0] = std::move(c0.grad_k);
        if (l > 0) {
            Tensor4<T> dprev = maxpool2d_backward(cache.pools[l - 1], c0.grad_x);
            add_inplace(dfwd[l - 1], dprev);
        }
    }
    return grads;
}

template <typename T>
std::vector<std::span<T>> param_views(Model<T>& model) {
    std::vector<std::span<T>> out;
    auto push = [&out](Tensor4<T>& w, std::vector<T>& b) {
        out.emplace_back(w.data(), w.size());
        out.emplace_back(b.data(), b.size());
    };
    for (auto& blk : model.blocks) {
        push(blk[0].weights, blk[0].bias);
        push(blk[1].weights, blk[1].bias);
    }
    for (std::size_t l = 0; l < model.fuse_conv.size(); ++l) {
        push(model.fuse_conv[l].weights, model.fuse_conv[l].bias);
        push(model.fuse_deconv[l].weights, model.fuse_deconv[l].bias);
    }
    push(model.head.weights, model.head.bias);
    return out;
}

template <typename T>
std::vector<std::span<const T>> grad_views(const Gradients<T>& grads) {
    std::vector<std::span<const T>> out;
    auto push = [&out](const Tensor4<T>& w, const std::vector<T>& b) {
        out.emplace_back(w.data(), w.size());
        out.emplace_back(b.data(), b.size());
    };
    for (const auto& blk : grads.blocks) {
        push(blk[0].weights, blk[0].bias);
        push(blk[1].weights, blk[1].bias);
    }
    for (std::size_t l = 0; l < grads.fuse_conv.size(); ++l) {
        push(grads.fuse_conv[l].weights, grads.fuse_conv[l].bias);
        push(grads.fuse_deconv[l].weights, grads.fuse_deconv[l].bias);
    }
    push(grads.head.weights, grads.head.bias);
    return out;
}

namespace {

std::string join_widths(const std::vector<int>& widths) {
    std::string s;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (i > 0) {
            s += ",";
        }
        s += std::to_string(widths[i]);
    }
    return s;
}

NtrTensor tensor_record(const Tensor4<float>& t) {
    NtrTensor rec;
    rec.dtype = NtrDtype::F32;
    rec.dims = {static_cast<std::uint64_t>(t.n()), static_cast<std::uint64_t>(t.c()),
                static_cast<std::uint64_t>(t.h()), static_cast<std::uint64_t>(t.w())};
    rec.payload.resize(t.size() * sizeof(float));
    std::memcpy(rec.payload.data(), t.data(), rec.payload.size());
    return rec;
}

NtrTensor bias_record(const std::vector<float>& b) {
    NtrTensor rec;
    rec.dtype = NtrDtype::F32;
    rec.dims = {b.size()};
    rec.payload.resize(b.size() * sizeof(float));
    std::memcpy(rec.payload.data(), b.data(), rec.payload.size());
    return rec;
}

// Fixed (name, kernel) enumeration shared by save and load.
template <typename ModelRef, typename Fn>
void for_each_kernel(ModelRef& m, Fn&& fn) {
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        fn("block" + std::to_string(l) + ".conv0", m.blocks[l][0]);
        fn("block" + std::to_string(l) + ".conv1", m.blocks[l][1]);
    }
    for (std::size_t l = 0; l < m.fuse_conv.size(); ++l) {
        fn("fuse" + std::to_string(l) + ".conv", m.fuse_conv[l]);
        fn("fuse" + std::to_string(l) + ".deconv", m.fuse_deconv[l]);
    }
    fn("head", m.head);
}

void load_tensor(const NtrTensor& rec, Tensor4<float>& dst, const std::string& name) {
    if (rec.dtype != NtrDtype::F32 || rec.dims.size() != 4) {
        throw DataError("checkpoint: record " + name + " has unexpected dtype or rank");
    }
    if (rec.dims[0] != static_cast<std::uint64_t>(dst.n()) || rec.dims[1] != static_cast<std::uint64_t>(dst.c()) ||
        rec.dims[2] != static_cast<std::uint64_t>(dst.h()) || rec.dims[3] != static_cast<std::uint64_t>(dst.w())) {
        throw DataError("checkpoint: record " + name + " has unexpected shape");
    }
    if (rec.payload.size() != dst.size() * sizeof(float)) {
        throw DataError("checkpoint: record " + name + " has truncated payload");
    }
    std::memcpy(dst.data(), rec.payload.data(), rec.payload.size());
}

void load_bias(const NtrTensor& rec, std::vector<float>& dst, const std::string& name) {
    if (rec.dtype != NtrDtype::F32 || rec.dims.size() != 1 || rec.dims[0] != dst.size() ||
        rec.payload.size() != dst.size() * sizeof(float)) {
        throw DataError("checkpoint: record " + name + " has unexpected shape");
    }
    std::memcpy(dst.data(), rec.payload.data(), rec.payload.size());
}

} // namespace

void serialize_model(const Model<float>& model, const std::filesystem::path& path) {
    std::string manifest;
    manifest += "format_version=1\n";
    manifest += "levels=" + std::to_string(model.spec.levels) + "\n";
    manifest += "widths=" + join_widths(model.spec.block_widths) + "\n";
    manifest += "in_channels=" + std::to_string(model.spec.in_channels) + "\n";
    manifest += "num_classes=" + std::to_string(model.num_classes) + "\n";
    manifest += "head_kind=" + to_string(model.head_kind) + "\n";

    std::vector<std::pair<std::string, NtrTensor>> records;
    NtrTensor man;
    man.dtype = NtrDtype::U8;
    man.dims = {manifest.size()};
    man.payload.assign(manifest.begin(), manifest.end());
    records.emplace_back("manifest", std::move(man));

    for_each_kernel(model, [&records](const std::string& name, const ConvKernel<float>& k) {
        records.emplace_back(name + ".w", tensor_record(k.weights));
        records.emplace_back(name + ".b", bias_record(k.bias));
    });
    write_ntr_records(path, records);
}

Model<float> deserialize_model(const std::filesystem::path& path) {
    auto records = read_ntr_records(path);
    const NtrTensor* manifest = nullptr;
    for (const auto& [name, rec] : records) {
        if (name == "manifest") {
            manifest = &rec;
            break;
        }
    }
    if (manifest == nullptr) {
        throw DataError("checkpoint: missing manifest record");
    }
    std::string text(manifest->payload.begin(), manifest->payload.end());

    ForwardStreamSpec spec;
    spec.block_widths.clear();
    int num_classes = -1;
    std::string head_kind_str;
    int version = -1;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() : nl + 1;
        if (line.empty()) {
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError("checkpoint: malformed manifest line: " + line);
        }
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "format_version") {
            version = std::stoi(val);
        } else if (key == "levels") {
            spec.levels = std::stoi(val);
        } else if (key == "widths") {
            std::size_t p = 0;
            while (p < val.size()) {
                const std::size_t comma = val.find(',', p);
                spec.block_widths.push_back(std::stoi(val.substr(p, comma - p)));
                p = comma == std::string::npos ? val.size() : comma + 1;
            }
        } else if (key == "in_channels") {
            spec.in_channels = std::stoi(val);
        } else if (key == "num_classes") {
            num_classes = std::stoi(val);
        } else if (key == "head_kind") {
            head_kind_str = val;
        } else {
            throw DataError("checkpoint: unknown manifest key: " + key);
        }
    }
    if (version != 1) {
        throw DataError("checkpoint: format version mismatch (expected 1, got " + std::to_string(version) + ")");
    }
    if (num_classes < 1 || head_kind_str.empty()) {
        throw DataError("checkpoint: manifest missing num_classes or head_kind");
    }

    Model<float> model = make_structure<float>(spec, num_classes);
    if (to_string(model.head_kind) != head_kind_str) {
        throw DataError("checkpoint: head_kind " + head_kind_str + " inconsistent with num_classes");
    }

    std::size_t used = 1; // manifest
    auto find_record = [&records](const std::string& name) -> const NtrTensor& {
        for (const auto& [n, rec] : records) {
            if (n == name) {
                return rec;
            }
        }
        throw DataError("checkpoint: missing record " + name);
    };
    for_each_kernel(model, [&](const std::string& name, ConvKernel<float>& k) {
        load_tensor(find_record(name + ".w"), k.weights, name + ".w");
        load_bias(find_record(name + ".b"), k.bias, name + ".b");
        used += 2;
    });
    if (used != records.size()) {
        throw DataError("checkpoint: unexpected extra records");
    }
    return model;
}

#define RIFCN_INSTANTIATE_MODEL(T)                                                                          \
    template struct Model<T>;                                                                               \
    template Model<T> build_model<T>(const ForwardStreamSpec&, int, std::uint64_t);                         \
    template void forward_stream<T>(const Model<T>&, const Tensor4<T>&, ActivationCache<T>&);               \
    template Tensor4<T> backward_stream_fuse<T>(const Model<T>&, FeaturePyramid<T>&, ActivationCache<T>&);  \
    template Tensor4<T> forward_train<T>(const Model<T>&, const Tensor4<T>&, ActivationCache<T>&);          \
    template Tensor4<T> predict<T>(const Model<T>&, const Tensor4<T>&);                                     \
    template double compute_loss<T>(const Tensor4<T>&, std::span<const LabelRaster>, HeadKind);             \
    template double compute_loss<T>(const Tensor4<T>&, const LabelRaster&, HeadKind);                       \
    template Tensor4<T> loss_grad_logits<T>(const Tensor4<T>&, std::span<const LabelRaster>, HeadKind);     \
    template Gradients<T> backprop<T>(const Model<T>&, ActivationCache<T>&, const Tensor4<T>&,              \
                                      std::span<const LabelRaster>);                                        \
    template std::vector<std::span<T>> param_views<T>(Model<T>&);                                           \
    template std::vector<std::span<const T>> grad_views<T>(const Gradients<T>&);

RIFCN_INSTANTIATE_MODEL(float)
RIFCN_INSTANTIATE_MODEL(double)

#undef RIFCN_INSTANTIATE_MODEL

} // namespace rifcn
