#include "rifcn/selfcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "rifcn/metrics.hpp"
#include "rifcn/model.hpp"
#include "rifcn/tensor_ops.hpp"

namespace rifcn {

namespace {

double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(unit_uniform(rng) * (hi - lo + 1));
}

void fill_uniform(Tensor4<double>& t, std::mt19937_64& rng, double lo, double hi) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.data()[i] = lo + (hi - lo) * unit_uniform(rng);
    }
}

// ---------------------------------------------------------------------------
// reference implementations (kept deliberately naive and separate from the
// optimized kernels they check)
// ---------------------------------------------------------------------------

Tensor4<double> naive_conv2d(const Tensor4<double>& x, const ConvKernel<double>& k) {
    const int kh = k.kh(), kw = k.kw(), st = k.stride, pad = k.padding;
    const int ho = (x.h() + 2 * pad - kh) / st + 1;
    const int wo = (x.w() + 2 * pad - kw) / st + 1;
    Tensor4<double> out(x.n(), k.d0(), ho, wo);
    for (int n = 0; n < x.n(); ++n) {
        for (int oc = 0; oc < k.d0(); ++oc) {
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int ci = 0; ci < x.c(); ++ci) {
                        for (int ki = 0; ki < kh; ++ki) {
                            for (int kj = 0; kj < kw; ++kj) {
                                const int iy = oy * st + ki - pad;
                                const int ix = ox * st + kj - pad;
                                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) {
                                    continue;
                                }
                                acc += k.weights.at(oc, ci, ki, kj) * x.at(n, ci, iy, ix);
                            }
                        }
                    }
                    out.at(n, oc, oy, ox) = acc + k.bias[oc];
                }
            }
        }
    }
    return out;
}

struct SuiteAccum {
    double max_err = 0.0;
    void update(double err) { max_err = std::max(max_err, err); }
};

double rel_err(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// ---------------------------------------------------------------------------
// suites
// ---------------------------------------------------------------------------

SuiteResult adjoint_suite(bool inject_fault) {
    std::mt19937_64 rng(0xad011);
    SuiteAccum acc;
    for (int trial = 0; trial < 100; ++trial) {
        const int ks = std::array<int, 4>{1, 3, 4, 5}[uniform_int(rng, 0, 3)];
        const int stride = uniform_int(rng, 1, 2);
        const int pad = uniform_int(rng, 0, std::min(2, ks - 1));
        const int n = uniform_int(rng, 1, 2);
        const int ci = uniform_int(rng, 1, 4);
        const int co = uniform_int(rng, 1, 4);
        // choose output size first so the conv geometry always divides
        const int ho = uniform_int(rng, 1, 6);
        const int wo = uniform_int(rng, 1, 6);
        const int h = (ho - 1) * stride + ks - 2 * pad;
        const int w = (wo - 1) * stride + ks - 2 * pad;
        if (h < 1 || w < 1) {
            continue;
        }
        ConvKernel<double> k = make_conv_kernel<double>(ci, co, ks, stride, pad);
        fill_uniform(k.weights, rng, -1.0, 1.0);
        Tensor4<double> x(n, ci, h, w);
        fill_uniform(x, rng, -1.0, 1.0);
        Tensor4<double> y(n, co, ho, wo);
        fill_uniform(y, rng, -1.0, 1.0);

        const double lhs = dot(y, conv2d(x, k));
        ConvKernel<double> kd = k;
        if (inject_fault) {
            // spatially flipped kernel: the classic transposed-conv mistake
            for (int a = 0; a < kd.d0(); ++a) {
                for (int b = 0; b < kd.d1(); ++b) {
                    for (int i = 0; i < ks; ++i) {
                        for (int j = 0; j < ks; ++j) {
                            kd.weights.at(a, b, i, j) = k.weights.at(a, b, ks - 1 - i, ks - 1 - j);
                        }
                    }
                }
            }
        }
        kd.bias.assign(static_cast<std::size_t>(kd.d1()), 0.0);
        const double rhs = dot(deconv2d(y, kd), x);
        acc.update(std::abs(lhs - rhs) / (std::abs(lhs) + 1e-30));
    }
    return {"adjoint", acc.max_err, 1e-10, acc.max_err <= 1e-10, "100 random conv/deconv pairs, f64"};
}

SuiteResult conv_oracle_suite() {
    std::mt19937_64 rng(0xc0c0);
    SuiteAccum acc;
    for (int trial = 0; trial < 20; ++trial) {
        const int ks = std::array<int, 3>{1, 3, 5}[uniform_int(rng, 0, 2)];
        const int stride = uniform_int(rng, 1, 2);
        const int pad = uniform_int(rng, 0, ks / 2);
        const int ho = uniform_int(rng, 1, 5);
        const int wo = uniform_int(rng, 1, 5);
        const int h = (ho - 1) * stride + ks - 2 * pad;
        const int w = (wo - 1) * stride + ks - 2 * pad;
        if (h < 1 || w < 1) {
            continue;
        }
        ConvKernel<double> k = make_conv_kernel<double>(uniform_int(rng, 1, 3), uniform_int(rng, 1, 4), ks, stride, pad);
        fill_uniform(k.weights, rng, -1.0, 1.0);
        for (double& b : k.bias) {
            b = 2.0 * unit_uniform(rng) - 1.0;
        }
        Tensor4<double> x(uniform_int(rng, 1, 2), k.d1(), h, w);
        fill_uniform(x, rng, -1.0, 1.0);
        const Tensor4<double> got = conv2d(x, k);
        const Tensor4<double> want = naive_conv2d(x, k);
        for (std::size_t i = 0; i < got.size(); ++i) {
            acc.update(std::abs(got.data()[i] - want.data()[i]) / (std::abs(want.data()[i]) + 1e-30));
        }
    }
    return {"conv-vs-naive", acc.max_err, 1e-12, acc.max_err <= 1e-12, "20 random shapes vs quadruple-loop oracle"};
}

// central finite difference of scalar() after nudging *slot
template <typename F>
double central_fd(double* slot, double h, F&& scalar) {
    const double keep = *slot;
    *slot = keep + h;
    const double up = scalar();
    *slot = keep - h;
    const double down = scalar();
    *slot = keep;
    return (up - down) / (2.0 * h);
}

SuiteResult kernel_fd_suite() {
    std::mt19937_64 rng(0xfd01);
    SuiteAccum acc;
    const double h = 1e-5;
    const double floor = 1e-6;

    { // conv2d gradients
        ConvKernel<double> k = make_conv_kernel<double>(2, 3, 3, 1, 1);
        fill_uniform(k.weights, rng, -1.0, 1.0);
        for (double& b : k.bias) {
            b = 2.0 * unit_uniform(rng) - 1.0;
        }
        Tensor4<double> x(1, 2, 6, 6);
        fill_uniform(x, rng, -1.0, 1.0);
        Tensor4<double> g(1, 3, 6, 6);
        fill_uniform(g, rng, -1.0, 1.0);
        const ConvBackward<double> bwd = conv2d_backward(x, k, g);
        auto scalar = [&]() { return dot(conv2d(x, k), g); };
        for (int s = 0; s < 12; ++s) {
            const std::size_t wi = static_cast<std::size_t>(unit_uniform(rng) * k.weights.size());
            acc.update(rel_err(central_fd(k.weights.data() + wi, h, scalar), bwd.grad_k.weights.data()[wi], floor));
            const std::size_t xi = static_cast<std::size_t>(unit_uniform(rng) * x.size());
            acc.update(rel_err(central_fd(x.data() + xi, h, scalar), bwd.grad_x.data()[xi], floor));
        }
        for (std::size_t bi = 0; bi < k.bias.size(); ++bi) {
            acc.update(rel_err(central_fd(&k.bias[bi], h, scalar), bwd.grad_k.bias[bi], floor));
        }
    }
    { // deconv2d gradients
        ConvKernel<double> k = make_deconv_kernel<double>(3, 2, 4, 2, 1);
        fill_uniform(k.weights, rng, -1.0, 1.0);
        for (double& b : k.bias) {
            b = 2.0 * unit_uniform(rng) - 1.0;
        }
        Tensor4<double> x(1, 3, 5, 5);
        fill_uniform(x, rng, -1.0, 1.0);
        Tensor4<double> g(1, 2, 10, 10);
        fill_uniform(g, rng, -1.0, 1.0);
        const ConvBackward<double> bwd = deconv2d_backward(x, k, g);
        auto scalar = [&]() { return dot(deconv2d(x, k), g); };
        for (int s = 0; s < 12; ++s) {
            const std::size_t wi = static_cast<std::size_t>(unit_uniform(rng) * k.weights.size());
            acc.update(rel_err(central_fd(k.weights.data() + wi, h, scalar), bwd.grad_k.weights.data()[wi], floor));
            const std::size_t xi = static_cast<std::size_t>(unit_uniform(rng) * x.size());
            acc.update(rel_err(central_fd(x.data() + xi, h, scalar), bwd.grad_x.data()[xi], floor));
        }
        for (std::size_t bi = 0; bi < k.bias.size(); ++bi) {
            acc.update(rel_err(central_fd(&k.bias[bi], h, scalar), bwd.grad_k.bias[bi], floor));
        }
    }
    { // max pooling, inputs spaced far from ties
        Tensor4<double> x(1, 2, 6, 6);
        std::vector<std::size_t> perm(x.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            perm[i] = i;
        }
        for (std::size_t i = perm.size(); i > 1; --i) {
            std::swap(perm[i - 1], perm[rng() % i]);
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.data()[i] = 0.1 * static_cast<double>(perm[i]);
        }
        Tensor4<double> g(1, 2, 3, 3);
        fill_uniform(g, rng, -1.0, 1.0);
        const PoolResult<double> fwd = maxpool2d(x);
        const Tensor4<double> gx = maxpool2d_backward(fwd, g);
        auto scalar = [&]() { return dot(maxpool2d(x).y, g); };
        for (int s = 0; s < 16; ++s) {
            const std::size_t xi = static_cast<std::size_t>(unit_uniform(rng) * x.size());
            acc.update(rel_err(central_fd(x.data() + xi, h, scalar), gx.data()[xi], floor));
        }
    }
    { // activations, relu inputs bounded away from the kink
        Tensor4<double> x(1, 1, 8, 8);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = 2.0 * unit_uniform(rng) - 1.0;
            x.data()[i] = v + (v >= 0 ? 1e-3 : -1e-3);
        }
        Tensor4<double> g(1, 1, 8, 8);
        fill_uniform(g, rng, -1.0, 1.0);
        for (Activation kind : {Activation::Relu, Activation::Sigmoid}) {
            const Tensor4<double> gx = activation_backward(kind, x, g);
            auto scalar = [&]() { return dot(activation(kind, x), g); };
            for (int s = 0; s < 10; ++s) {
                const std::size_t xi = static_cast<std::size_t>(unit_uniform(rng) * x.size());
                acc.update(rel_err(central_fd(x.data() + xi, h, scalar), gx.data()[xi], floor));
            }
        }
    }
    return {"kernel-fd", acc.max_err, 1e-6, acc.max_err <= 1e-6, "conv/deconv/pool/activation finite differences"};
}

SuiteResult model_fd_suite() {
    std::mt19937_64 rng(0xe2e2);
    ForwardStreamSpec spec;
    spec.levels = 2;
    spec.block_widths = {4, 8, 16};
    spec.in_channels = 3;
    Model<double> model = build_model<double>(spec, 3, 7);
    // Zero-initialized biases put dead-region pre-activations exactly on the
    // ReLU kink, where central differences measure the one-sided average
    // instead of the subgradient. Check at a generic point instead.
    for (auto views = param_views(model); auto& span : views) {
        for (double& v : span) {
            if (v == 0.0) {
                v = 0.1 * (2.0 * unit_uniform(rng) - 1.0);
            }
        }
    }

    Tensor4<double> x(1, 3, 16, 16);
    fill_uniform(x, rng, 0.0, 1.0);
    std::vector<LabelRaster> labels(1, LabelRaster(16, 16));
    for (auto& v : labels[0].v) {
        v = static_cast<std::uint8_t>(uniform_int(rng, 0, 2));
    }
    const std::span<const LabelRaster> labspan(labels);

    ActivationCache<double> cache;
    const Tensor4<double> probs = forward_train(model, x, cache);
    const Gradients<double> grads = backprop(model, cache, probs, labspan);

    auto params = param_views(model);
    const auto gviews = grad_views(grads);
    auto loss_fn = [&]() {
        ActivationCache<double> c2;
        return compute_loss(forward_train(model, x, c2), labspan, model.head_kind);
    };

    const double h = 1e-5;
    const double floor = 1e-6;
    SuiteAccum acc;
    int checked = 0;
    for (std::size_t b = 0; b < params.size(); ++b) {
        const int samples = std::min<std::size_t>(10, params[b].size());
        for (int s = 0; s < samples; ++s) {
            const std::size_t i = static_cast<std::size_t>(unit_uniform(rng) * params[b].size());
            const double fd = central_fd(&params[b][i], h, loss_fn);
            acc.update(rel_err(fd, gviews[b][i], floor));
            ++checked;
        }
    }
    return {"model-fd", acc.max_err, 1e-4, acc.max_err <= 1e-4,
            std::to_string(checked) + " parameters across every group, f64"};
}

SuiteResult metric_oracle_suite() {
    std::mt19937_64 rng(0x3e7a);
    const int M = 6;
    SuiteAccum acc;
    for (int trial = 0; trial < 50; ++trial) {
        LabelRaster truth(64, 64), pred(64, 64);
        for (std::size_t i = 0; i < truth.size(); ++i) {
            truth.v[i] = unit_uniform(rng) < 0.05 ? kIgnoreLabel : static_cast<std::uint8_t>(uniform_int(rng, 0, M - 1));
            pred.v[i] = static_cast<std::uint8_t>(uniform_int(rng, 0, M - 1));
        }

        ConfusionMatrix cm(M);
        accumulate(cm, truth, pred);

        // naive counting, straight off the rasters
        std::vector<std::uint64_t> naive(M * M, 0);
        std::uint64_t supervised = 0, agree = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth.v[i] == kIgnoreLabel || pred.v[i] == kIgnoreLabel) {
                continue;
            }
            naive[truth.v[i] * M + pred.v[i]] += 1;
            ++supervised;
            if (truth.v[i] == pred.v[i]) {
                ++agree;
            }
        }
        for (int t = 0; t < M; ++t) {
            for (int p = 0; p < M; ++p) {
                if (cm.at(t, p) != naive[t * M + p]) {
                    acc.update(1.0);
                }
            }
        }
        acc.update(std::abs(overall_accuracy(cm) - static_cast<double>(agree) / static_cast<double>(supervised)));

        const auto scores = f1_scores(cm);
        for (int c = 0; c < M; ++c) {
            std::uint64_t tp = 0, fp = 0, fn = 0, inter = 0, uni = 0;
            for (std::size_t i = 0; i < truth.size(); ++i) {
                if (truth.v[i] == kIgnoreLabel || pred.v[i] == kIgnoreLabel) {
                    continue;
                }
                const bool a = truth.v[i] == c, b = pred.v[i] == c;
                tp += a && b;
                fp += b && !a;
                fn += a && !b;
                inter += a && b;
                uni += a || b;
            }
            const double prec = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
            const double rec = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
            const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
            acc.update(std::abs(scores[c].precision - prec));
            acc.update(std::abs(scores[c].recall - rec));
            acc.update(std::abs(scores[c].f1 - f1));
            const double want_iou = uni > 0 ? static_cast<double>(inter) / uni : 1.0;
            acc.update(std::abs(iou(truth, pred, c) - want_iou));
            acc.update(std::abs(scores[c].iou - want_iou));
        }
    }
    return {"metric-oracles", acc.max_err, 1e-12, acc.max_err <= 1e-12, "50 random 64x64 label pairs, M=6"};
}

SuiteResult erosion_suite() {
    std::mt19937_64 rng(0xe70d);
    const int radius = 3;
    SuiteAccum acc;
    for (int trial = 0; trial < 20; ++trial) {
        const int size = 24;
        LabelRaster truth(size, size, 0);
        const int shapes = uniform_int(rng, 2, 5);
        for (int s = 0; s < shapes; ++s) {
            const std::uint8_t cls =
                unit_uniform(rng) < 0.12 ? kIgnoreLabel : static_cast<std::uint8_t>(uniform_int(rng, 1, 3));
            const int cy = uniform_int(rng, 0, size - 1), cx = uniform_int(rng, 0, size - 1);
            const int hh = uniform_int(rng, 2, 6), hw = uniform_int(rng, 2, 6);
            const bool disk = unit_uniform(rng) < 0.5;
            for (int y = std::max(0, cy - hh); y <= std::min(size - 1, cy + hh); ++y) {
                for (int x = std::max(0, cx - hw); x <= std::min(size - 1, cx + hw); ++x) {
                    if (!disk || (y - cy) * (y - cy) + (x - cx) * (x - cx) <= hh * hh) {
                        truth.at(y, x) = cls;
                    }
                }
            }
        }

        const LabelRaster got = erode_boundary_gt(truth, radius);
        // brute force: scan every pixel pair
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const std::uint8_t v = truth.at(y, x);
                std::uint8_t want = v;
                if (v != kIgnoreLabel) {
                    bool boundary = false;
                    for (int qy = 0; qy < size && !boundary; ++qy) {
                        for (int qx = 0; qx < size; ++qx) {
                            const int dy = qy - y, dx = qx - x;
                            if (dy * dy + dx * dx > radius * radius) {
                                continue;
                            }
                            const std::uint8_t u = truth.at(qy, qx);
                            if (u != kIgnoreLabel && u != v) {
                                boundary = true;
                                break;
                            }
                        }
                    }
                    if (boundary) {
                        want = kIgnoreLabel;
                    }
                }
                if (got.at(y, x) != want) {
                    acc.update(1.0);
                }
            }
        }
    }
    return {"boundary-erosion", acc.max_err, 0.0, acc.max_err <= 0.0, "20 random mask fixtures vs full scan"};
}

} // namespace

std::vector<SuiteResult> run_selfcheck(bool inject_adjoint_fault) {
    std::vector<SuiteResult> results;
    results.push_back(adjoint_suite(inject_adjoint_fault));
    results.push_back(conv_oracle_suite());
    results.push_back(kernel_fd_suite());
    results.push_back(model_fd_suite());
    results.push_back(metric_oracle_suite());
    results.push_back(erosion_suite());
    return results;
}

} // namespace rifcn
