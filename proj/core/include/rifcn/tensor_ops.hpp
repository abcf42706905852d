#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rifcn/tensor.hpp"

namespace rifcn {

/// Weights plus bias for a (de)convolution.
///
/// The weight array is shaped (d0, d1, kh, kw). conv2d reads it as
/// (out_channels, in_channels, kh, kw); deconv2d reads the same array with the
/// channel axes swapped, i.e. d0 is the deconvolution's input and d1 its
/// output. With that convention deconv2d(y, k) is the exact linear adjoint of
/// conv2d(x, k) for the same kernel object, and the bias always has the length
/// of the producing operation's output channel count.
template <typename T>
struct ConvKernel {
    Tensor4<T> weights;
    std::vector<T> bias;
    int stride = 1;
    int padding = 0;

    int d0() const { return weights.n(); }
    int d1() const { return weights.c(); }
    int kh() const { return weights.h(); }
    int kw() const { return weights.w(); }
};

/// Zero-initialized convolution kernel mapping in_ch -> out_ch.
template <typename T>
ConvKernel<T> make_conv_kernel(int in_ch, int out_ch, int ksize, int stride, int padding);

/// Zero-initialized transposed-convolution kernel mapping in_ch -> out_ch.
template <typename T>
ConvKernel<T> make_deconv_kernel(int in_ch, int out_ch, int ksize, int stride, int padding);

/// Parameter gradient (or any value congruent with a kernel's parameters).
template <typename T>
struct KernelGrad {
    Tensor4<T> weights;
    std::vector<T> bias;
};

/// Strided 2-D convolution. Output spatial dims are
/// (h + 2*pad - kh)/stride + 1 and must divide exactly.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvKernel<T>& k);

/// Gradients of conv2d w.r.t. input, weights, and bias given the output
/// cotangent. Exact for the linear map.
template <typename T>
struct ConvBackward {
    Tensor4<T> grad_x;
    KernelGrad<T> grad_k;
};

template <typename T>
ConvBackward<T> conv2d_backward(const Tensor4<T>& x, const ConvKernel<T>& k, const Tensor4<T>& grad_out);

/// Strided transposed convolution (fractionally-strided upsampling).
/// Output spatial dims are stride*(h-1) + kh - 2*pad. The linear part is the
/// adjoint of conv2d with the same kernel, stride, and padding.
template <typename T>
Tensor4<T> deconv2d(const Tensor4<T>& x, const ConvKernel<T>& k);

template <typename T>
ConvBackward<T> deconv2d_backward(const Tensor4<T>& x, const ConvKernel<T>& k, const Tensor4<T>& grad_out);

/// 2x2/stride-2 max pooling. argmax holds, per output cell, the flat index of
/// the selected input element (ties go to the first element in row-major scan
/// order, which keeps the routing deterministic).
template <typename T>
struct PoolResult {
    Tensor4<T> y;
    std::vector<std::int64_t> argmax;
    int in_n = 0, in_c = 0, in_h = 0, in_w = 0;
};

template <typename T>
PoolResult<T> maxpool2d(const Tensor4<T>& x);

/// Routes grad_out entries back to the recorded argmax positions; all other
/// cells receive zero, so total gradient mass is conserved exactly.
template <typename T>
Tensor4<T> maxpool2d_backward(const PoolResult<T>& pooled, const Tensor4<T>& grad_out);

enum class Activation { Relu, Sigmoid };

template <typename T>
Tensor4<T> activation(Activation kind, const Tensor4<T>& x);

/// Chain-rule factor of the activation. For ReLU the subgradient at exactly
/// zero is zero.
template <typename T>
Tensor4<T> activation_backward(Activation kind, const Tensor4<T>& x, const Tensor4<T>& grad_out);

/// Channelwise softmax per pixel, computed with max-subtraction.
template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& x);

/// <a, b> over all elements, summed in flat index order.
template <typename T>
T dot(const Tensor4<T>& a, const Tensor4<T>& b);

} // namespace rifcn
