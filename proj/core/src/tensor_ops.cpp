#include "rifcn/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "rifcn/parallel.hpp"

namespace rifcn {

namespace {

struct Geom {
    int ho = 0;
    int wo = 0;
};

// Each output cell of every kernel below accumulates its sum in one fixed
// ascending order (channel, then kernel row, then kernel column, with batch
// outermost where batch items are reduced together). Parallel loops only ever
// split writes across disjoint cells, so results are bit-identical for any
// thread budget.

Geom conv_geom(int h, int w, int kh, int kw, int stride, int pad, const char* op) {
    if (stride < 1 || pad < 0) {
        throw ShapeError(std::string(op) + ": stride must be >= 1 and padding >= 0");
    }
    const int nh = h + 2 * pad - kh;
    const int nw = w + 2 * pad - kw;
    if (nh < 0 || nw < 0 || nh % stride != 0 || nw % stride != 0) {
        throw ShapeError(std::string(op) + ": non-integral output dims for input " + std::to_string(h) + "x" +
                         std::to_string(w) + ", kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
    }
    return {nh / stride + 1, nw / stride + 1};
}

// Lowers one batch item to a (channels*kh*kw) x (ho*wo) matrix; out-of-bounds
// taps are zero. Row r = (ci*kh + ki)*kw + kj matches the weight layout, so a
// row-dot against it reproduces the naive (ci, ki, kj) accumulation order.
template <typename T>
void im2col_item(const Tensor4<T>& x, int in, int kh, int kw, int stride, int pad, int ho, int wo, T* cols) {
    const int h = x.h(), w = x.w();
    const std::size_t S = static_cast<std::size_t>(ho) * wo;
    std::size_t r = 0;
    for (int ci = 0; ci < x.c(); ++ci) {
        const T* plane = x.plane(in, ci);
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++r) {
                T* dst = cols + r * S;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ki - pad;
                    T* drow = dst + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(drow, drow + wo, T(0));
                        continue;
                    }
                    const T* srow = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kj - pad;
                        drow[ox] = (ix < 0 || ix >= w) ? T(0) : srow[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
std::vector<T> im2col_all(const Tensor4<T>& x, int kh, int kw, int stride, int pad, int ho, int wo) {
    const std::size_t K = static_cast<std::size_t>(x.c()) * kh * kw;
    const std::size_t S = static_cast<std::size_t>(ho) * wo;
    std::vector<T> cols(static_cast<std::size_t>(x.n()) * K * S);
    parallel_for(x.n(), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t in = b; in < e; ++in) {
            im2col_item(x, static_cast<int>(in), kh, kw, stride, pad, ho, wo, cols.data() + in * K * S);
        }
    });
    return cols;
}

template <typename T>
void check_conv_kernel(const Tensor4<T>& x, const ConvKernel<T>& k, const char* op) {
    if (x.c() != k.d1()) {
        throw ShapeError(std::string(op) + ": input has " + std::to_string(x.c()) + " channels, kernel expects " +
                         std::to_string(k.d1()));
    }
    if (static_cast<int>(k.bias.size()) != k.d0()) {
        throw ShapeError(std::string(op) + ": bias length " + std::to_string(k.bias.size()) +
                         " != output channels " + std::to_string(k.d0()));
    }
}

// Forward convolution without the bias term; shared by conv2d and the
// grad_x path of deconv2d_backward (adjoint of the adjoint).
template <typename T>
Tensor4<T> conv_core(const Tensor4<T>& x, const ConvKernel<T>& k, bool add_bias, const char* op) {
    const Geom g = conv_geom(x.h(), x.w(), k.kh(), k.kw(), k.stride, k.padding, op);
    const int n = x.n(), cout = k.d0();
    const std::size_t K = static_cast<std::size_t>(k.d1()) * k.kh() * k.kw();
    const std::size_t S = static_cast<std::size_t>(g.ho) * g.wo;
    const std::vector<T> cols = im2col_all(x, k.kh(), k.kw(), k.stride, k.padding, g.ho, g.wo);

    Tensor4<T> out(n, cout, g.ho, g.wo);
    const T* wts = k.weights.data();
    const std::int64_t grain = std::max<std::int64_t>(1, 4096 / static_cast<std::int64_t>(S + 1));
    parallel_for(static_cast<std::int64_t>(n) * cout, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t idx = b; idx < e; ++idx) {
            const int in = static_cast<int>(idx / cout);
            const int oc = static_cast<int>(idx % cout);
            const T* wrow = wts + oc * K;
            const T* B = cols.data() + in * K * S;
            T* cplane = out.plane(in, oc);
            for (std::size_t kk = 0; kk < K; ++kk) {
                const T a = wrow[kk];
                const T* brow = B + kk * S;
                for (std::size_t s = 0; s < S; ++s) {
                    cplane[s] += a * brow[s];
                }
            }
            if (add_bias) {
                const T bias = k.bias[oc];
                for (std::size_t s = 0; s < S; ++s) {
                    cplane[s] += bias;
                }
            }
        }
    }, grain);
    return out;
}

} // namespace

template <typename T>
ConvKernel<T> make_conv_kernel(int in_ch, int out_ch, int ksize, int stride, int padding) {
    ConvKernel<T> k;
    k.weights = Tensor4<T>(out_ch, in_ch, ksize, ksize);
    k.bias.assign(static_cast<std::size_t>(out_ch), T(0));
    k.stride = stride;
    k.padding = padding;
    return k;
}

template <typename T>
ConvKernel<T> make_deconv_kernel(int in_ch, int out_ch, int ksize, int stride, int padding) {
    ConvKernel<T> k;
    k.weights = Tensor4<T>(in_ch, out_ch, ksize, ksize);
    k.bias.assign(static_cast<std::size_t>(out_ch), T(0));
    k.stride = stride;
    k.padding = padding;
    return k;
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvKernel<T>& k) {
    check_conv_kernel(x, k, "conv2d");
    return conv_core(x, k, /*add_bias=*/true, "conv2d");
}

template <typename T>
ConvBackward<T> conv2d_backward(const Tensor4<T>& x, const ConvKernel<T>& k, const Tensor4<T>& grad_out) {
    check_conv_kernel(x, k, "conv2d_backward");
    const Geom g = conv_geom(x.h(), x.w(), k.kh(), k.kw(), k.stride, k.padding, "conv2d_backward");
    if (grad_out.n() != x.n() || grad_out.c() != k.d0() || grad_out.h() != g.ho || grad_out.w() != g.wo) {
        throw ShapeError("conv2d_backward: grad_out shape (" + grad_out.shape() + ") does not match output (" +
                         Tensor4<T>::shape_str(x.n(), k.d0(), g.ho, g.wo) + ")");
    }
    const int n = x.n(), cout = k.d0();
    const std::size_t K = static_cast<std::size_t>(k.d1()) * k.kh() * k.kw();
    const std::size_t S = static_cast<std::size_t>(g.ho) * g.wo;
    const std::vector<T> cols = im2col_all(x, k.kh(), k.kw(), k.stride, k.padding, g.ho, g.wo);

    ConvBackward<T> bwd;
    bwd.grad_k.weights = Tensor4<T>(k.d0(), k.d1(), k.kh(), k.kw());
    bwd.grad_k.bias.assign(k.bias.size(), T(0));
    bwd.grad_x = zeros_like(x);

    for (int oc = 0; oc < cout; ++oc) {
        T acc = T(0);
        for (int in = 0; in < n; ++in) {
            const T* gp = grad_out.plane(in, oc);
            for (std::size_t s = 0; s < S; ++s) {
                acc += gp[s];
            }
        }
        bwd.grad_k.bias[oc] = acc;
    }

    T* gw = bwd.grad_k.weights.data();
    parallel_for(cout, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t oc = b; oc < e; ++oc) {
            T* gwrow = gw + oc * K;
            for (int in = 0; in < n; ++in) {
                const T* gp = grad_out.plane(static_cast<int>(in), static_cast<int>(oc));
                const T* B = cols.data() + in * K * S;
                for (std::size_t kk = 0; kk < K; ++kk) {
                    const T* brow = B + kk * S;
                    T acc = T(0);
                    for (std::size_t s = 0; s < S; ++s) {
                        acc += gp[s] * brow[s];
                    }
                    gwrow[kk] += acc;
                }
            }
        }
    });

    const T* wts = k.weights.data();
    const int kh = k.kh(), kw = k.kw(), stride = k.stride, pad = k.padding;
    parallel_for(n, [&](std::int64_t b, std::int64_t e) {
        std::vector<T> colsgrad(K * S);
        for (std::int64_t in = b; in < e; ++in) {
            std::fill(colsgrad.begin(), colsgrad.end(), T(0));
            for (int oc = 0; oc < cout; ++oc) {
                const T* wrow = wts + oc * K;
                const T* gp = grad_out.plane(static_cast<int>(in), oc);
                for (std::size_t kk = 0; kk < K; ++kk) {
                    const T wv = wrow[kk];
                    T* dst = colsgrad.data() + kk * S;
                    for (std::size_t s = 0; s < S; ++s) {
                        dst[s] += wv * gp[s];
                    }
                }
            }
            // col2im scatter, fixed (row, cell) order
            std::size_t r = 0;
            for (int ci = 0; ci < x.c(); ++ci) {
                T* gxplane = bwd.grad_x.plane(static_cast<int>(in), ci);
                for (int ki = 0; ki < kh; ++ki) {
                    for (int kj = 0; kj < kw; ++kj, ++r) {
                        const T* src = colsgrad.data() + r * S;
                        for (int oy = 0; oy < g.ho; ++oy) {
                            const int iy = oy * stride + ki - pad;
                            if (iy < 0 || iy >= x.h()) {
                                continue;
                            }
                            for (int ox = 0; ox < g.wo; ++ox) {
                                const int ix = ox * stride + kj - pad;
                                if (ix < 0 || ix >= x.w()) {
                                    continue;
                                }
                                gxplane[static_cast<std::size_t>(iy) * x.w() + ix] +=
                                    src[static_cast<std::size_t>(oy) * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    });
    return bwd;
}

template <typename T>
Tensor4<T> deconv2d(const Tensor4<T>& x, const ConvKernel<T>& k) {
    if (x.c() != k.d0()) {
        throw ShapeError("deconv2d: input has " + std::to_string(x.c()) + " channels, kernel expects " +
                         std::to_string(k.d0()));
    }
    if (static_cast<int>(k.bias.size()) != k.d1()) {
        throw ShapeError("deconv2d: bias length " + std::to_string(k.bias.size()) + " != output channels " +
                         std::to_string(k.d1()));
    }
    if (k.stride < 1 || k.padding < 0) {
        throw ShapeError("deconv2d: stride must be >= 1 and padding >= 0");
    }
    const int ho = k.stride * (x.h() - 1) + k.kh() - 2 * k.padding;
    const int wo = k.stride * (x.w() - 1) + k.kw() - 2 * k.padding;
    if (ho < 1 || wo < 1) {
        throw ShapeError("deconv2d: output would be empty for input " + x.shape());
    }
    const int n = x.n(), cin = k.d0(), cout = k.d1();
    const int kh = k.kh(), kw = k.kw(), stride = k.stride, pad = k.padding;
    const std::size_t Kp = static_cast<std::size_t>(cout) * kh * kw;
    const std::size_t S = static_cast<std::size_t>(x.h()) * x.w();

    Tensor4<T> out(n, cout, ho, wo);
    const T* wts = k.weights.data();
    parallel_for(n, [&](std::int64_t b, std::int64_t e) {
        std::vector<T> cols(Kp * S);
        for (std::int64_t in = b; in < e; ++in) {
            std::fill(cols.begin(), cols.end(), T(0));
            for (int ic = 0; ic < cin; ++ic) {
                const T* wrow = wts + ic * Kp;
                const T* xp = x.plane(static_cast<int>(in), ic);
                for (std::size_t r = 0; r < Kp; ++r) {
                    const T wv = wrow[r];
                    T* dst = cols.data() + r * S;
                    for (std::size_t s = 0; s < S; ++s) {
                        dst[s] += wv * xp[s];
                    }
                }
            }
            std::size_t r = 0;
            for (int oc = 0; oc < cout; ++oc) {
                T* oplane = out.plane(static_cast<int>(in), oc);
                for (int ki = 0; ki < kh; ++ki) {
                    for (int kj = 0; kj < kw; ++kj, ++r) {
                        const T* src = cols.data() + r * S;
                        for (int oy = 0; oy < x.h(); ++oy) {
                            const int iy = oy * stride + ki - pad;
                            if (iy < 0 || iy >= ho) {
                                continue;
                            }
                            for (int ox = 0; ox < x.w(); ++ox) {
                                const int ix = ox * stride + kj - pad;
                                if (ix < 0 || ix >= wo) {
                                    continue;
                                }
                                oplane[static_cast<std::size_t>(iy) * wo + ix] +=
                                    src[static_cast<std::size_t>(oy) * x.w() + ox];
                            }
                        }
                    }
                }
                const T bias = k.bias[oc];
                const std::size_t So = static_cast<std::size_t>(ho) * wo;
                for (std::size_t s = 0; s < So; ++s) {
                    oplane[s] += bias;
                }
            }
        }
    });
    return out;
}

template <typename T>
ConvBackward<T> deconv2d_backward(const Tensor4<T>& x, const ConvKernel<T>& k, const Tensor4<T>& grad_out) {
    const int ho = k.stride * (x.h() - 1) + k.kh() - 2 * k.padding;
    const int wo = k.stride * (x.w() - 1) + k.kw() - 2 * k.padding;
    if (x.c() != k.d0()) {
        throw ShapeError("deconv2d_backward: input has " + std::to_string(x.c()) + " channels, kernel expects " +
                         std::to_string(k.d0()));
    }
    if (grad_out.n() != x.n() || grad_out.c() != k.d1() || grad_out.h() != ho || grad_out.w() != wo) {
        throw ShapeError("deconv2d_backward: grad_out shape (" + grad_out.shape() + ") does not match output (" +
                         Tensor4<T>::shape_str(x.n(), k.d1(), ho, wo) + ")");
    }

    ConvBackward<T> bwd;
    // Adjoint of the adjoint: grad_x is the forward strided convolution of
    // grad_out with the same kernel (bias excluded from the linear map).
    bwd.grad_x = conv_core(grad_out, k, /*add_bias=*/false, "deconv2d_backward");

    bwd.grad_k.weights = Tensor4<T>(k.d0(), k.d1(), k.kh(), k.kw());
    bwd.grad_k.bias.assign(static_cast<std::size_t>(k.d1()), T(0));

    const int n = x.n(), cin = k.d0(), cout = k.d1();
    const std::size_t Kp = static_cast<std::size_t>(cout) * k.kh() * k.kw();
    const std::size_t S = static_cast<std::size_t>(x.h()) * x.w();
    const std::size_t So = static_cast<std::size_t>(ho) * wo;

    for (int oc = 0; oc < cout; ++oc) {
        T acc = T(0);
        for (int in = 0; in < n; ++in) {
            const T* gp = grad_out.plane(in, oc);
            for (std::size_t s = 0; s < So; ++s) {
                acc += gp[s];
            }
        }
        bwd.grad_k.bias[oc] = acc;
    }

    // cols_g[(oc, ki, kj)][input cell] gathers grad_out at the stride-mapped
    // positions; dotting x rows against it yields the weight gradient.
    const std::vector<T> cols_g = im2col_all(grad_out, k.kh(), k.kw(), k.stride, k.padding, x.h(), x.w());
    T* gw = bwd.grad_k.weights.data();
    parallel_for(cin, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t ic = b; ic < e; ++ic) {
            T* gwrow = gw + ic * Kp;
            for (int in = 0; in < n; ++in) {
                const T* xp = x.plane(in, static_cast<int>(ic));
                const T* B = cols_g.data() + static_cast<std::size_t>(in) * Kp * S;
                for (std::size_t r = 0; r < Kp; ++r) {
                    const T* brow = B + r * S;
                    T acc = T(0);
                    for (std::size_t s = 0; s < S; ++s) {
                        acc += xp[s] * brow[s];
                    }
                    gwrow[r] += acc;
                }
            }
        }
    });
    return bwd;
}

template <typename T>
PoolResult<T> maxpool2d(const Tensor4<T>& x) {
    if (x.h() % 2 != 0 || x.w() % 2 != 0) {
        throw ShapeError("maxpool2d: spatial dims must be even, got " + x.shape());
    }
    PoolResult<T> res;
    res.in_n = x.n();
    res.in_c = x.c();
    res.in_h = x.h();
    res.in_w = x.w();
    res.y = Tensor4<T>(x.n(), x.c(), x.h() / 2, x.w() / 2);
    res.argmax.assign(res.y.size(), 0);

    const int planes = x.n() * x.c();
    const int ho = res.y.h(), wo = res.y.w();
    parallel_for(planes, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t p = b; p < e; ++p) {
            const int in = static_cast<int>(p / x.c());
            const int ci = static_cast<int>(p % x.c());
            const T* src = x.plane(in, ci);
            T* dst = res.y.plane(in, ci);
            std::int64_t* amax = res.argmax.data() + res.y.index(in, ci, 0, 0);
            const std::size_t plane_base = x.index(in, ci, 0, 0);
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    const int iy = 2 * oy, ix = 2 * ox;
                    std::size_t best = static_cast<std::size_t>(iy) * x.w() + ix;
                    T bv = src[best];
                    // row-major scan; strictly-greater keeps the first maximum
                    const std::size_t cand[3] = {best + 1, best + static_cast<std::size_t>(x.w()),
                                                 best + static_cast<std::size_t>(x.w()) + 1};
                    for (std::size_t cidx : cand) {
                        if (src[cidx] > bv) {
                            bv = src[cidx];
                            best = cidx;
                        }
                    }
                    dst[static_cast<std::size_t>(oy) * wo + ox] = bv;
                    amax[static_cast<std::size_t>(oy) * wo + ox] = static_cast<std::int64_t>(plane_base + best);
                }
            }
        }
    });
    return res;
}

template <typename T>
Tensor4<T> maxpool2d_backward(const PoolResult<T>& pooled, const Tensor4<T>& grad_out) {
    require_same_shape(pooled.y, grad_out, "maxpool2d_backward");
    Tensor4<T> gx(pooled.in_n, pooled.in_c, pooled.in_h, pooled.in_w);
    const std::int64_t limit = static_cast<std::int64_t>(gx.size());
    for (std::size_t i = 0; i < pooled.argmax.size(); ++i) {
        const std::int64_t idx = pooled.argmax[i];
        if (idx < 0 || idx >= limit) {
            throw Error("maxpool2d_backward: argmax index out of range (corrupted cache)");
        }
        gx.data()[idx] += grad_out.data()[i];
    }
    return gx;
}

template <typename T>
Tensor4<T> activation(Activation kind, const Tensor4<T>& x) {
    Tensor4<T> out = zeros_like(x);
    const T* src = x.data();
    T* dst = out.data();
    parallel_for(static_cast<std::int64_t>(x.size()), [&](std::int64_t b, std::int64_t e) {
        if (kind == Activation::Relu) {
            for (std::int64_t i = b; i < e; ++i) {
                dst[i] = src[i] > T(0) ? src[i] : T(0);
            }
        } else {
            for (std::int64_t i = b; i < e; ++i) {
                dst[i] = T(1) / (T(1) + std::exp(-src[i]));
            }
        }
    }, 4096);
    return out;
}

template <typename T>
Tensor4<T> activation_backward(Activation kind, const Tensor4<T>& x, const Tensor4<T>& grad_out) {
    require_same_shape(x, grad_out, "activation_backward");
    Tensor4<T> out = zeros_like(x);
    const T* src = x.data();
    const T* g = grad_out.data();
    T* dst = out.data();
    parallel_for(static_cast<std::int64_t>(x.size()), [&](std::int64_t b, std::int64_t e) {
        if (kind == Activation::Relu) {
            for (std::int64_t i = b; i < e; ++i) {
                dst[i] = src[i] > T(0) ? g[i] : T(0);
            }
        } else {
            for (std::int64_t i = b; i < e; ++i) {
                const T s = T(1) / (T(1) + std::exp(-src[i]));
                dst[i] = g[i] * s * (T(1) - s);
            }
        }
    }, 4096);
    return out;
}

template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& x) {
    Tensor4<T> out = zeros_like(x);
    const int c = x.c();
    const std::size_t S = static_cast<std::size_t>(x.h()) * x.w();
    parallel_for(x.n(), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t in = b; in < e; ++in) {
            const T* base = x.plane(static_cast<int>(in), 0);
            T* obase = out.plane(static_cast<int>(in), 0);
            for (std::size_t s = 0; s < S; ++s) {
                T mx = base[s];
                for (int ci = 1; ci < c; ++ci) {
                    mx = std::max(mx, base[ci * S + s]);
                }
                T sum = T(0);
                for (int ci = 0; ci < c; ++ci) {
                    const T ev = std::exp(base[ci * S + s] - mx);
                    obase[ci * S + s] = ev;
                    sum += ev;
                }
                for (int ci = 0; ci < c; ++ci) {
                    obase[ci * S + s] /= sum;
                }
            }
        }
    });
    return out;
}

template <typename T>
T dot(const Tensor4<T>& a, const Tensor4<T>& b) {
    require_same_shape(a, b, "dot");
    T acc = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a.data()[i] * b.data()[i];
    }
    return acc;
}

#define RIFCN_INSTANTIATE_OPS(T)                                                                           \
    template ConvKernel<T> make_conv_kernel<T>(int, int, int, int, int);                                   \
    template ConvKernel<T> make_deconv_kernel<T>(int, int, int, int, int);                                 \
    template Tensor4<T> conv2d<T>(const Tensor4<T>&, const ConvKernel<T>&);                                \
    template ConvBackward<T> conv2d_backward<T>(const Tensor4<T>&, const ConvKernel<T>&, const Tensor4<T>&); \
    template Tensor4<T> deconv2d<T>(const Tensor4<T>&, const ConvKernel<T>&);                              \
    template ConvBackward<T> deconv2d_backward<T>(const Tensor4<T>&, const ConvKernel<T>&, const Tensor4<T>&); \
    template PoolResult<T> maxpool2d<T>(const Tensor4<T>&);                                                \
    template Tensor4<T> maxpool2d_backward<T>(const PoolResult<T>&, const Tensor4<T>&);                    \
    template Tensor4<T> activation<T>(Activation, const Tensor4<T>&);                                      \
    template Tensor4<T> activation_backward<T>(Activation, const Tensor4<T>&, const Tensor4<T>&);          \
    template Tensor4<T> softmax_channels<T>(const Tensor4<T>&);                                            \
    template T dot<T>(const Tensor4<T>&, const Tensor4<T>&);

RIFCN_INSTANTIATE_OPS(float)
RIFCN_INSTANTIATE_OPS(double)

#undef RIFCN_INSTANTIATE_OPS

} // namespace rifcn
