#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rifcn/error.hpp"

namespace rifcn {

/// Dense 4-D array in (batch, channel, height, width) order, row-major.
/// The single value carrier for activations, gradients, and kernel weights.
template <typename T>
class Tensor4 {
public:
    Tensor4() = default;

    Tensor4(int n, int c, int h, int w)
        : n_(n), c_(c), h_(h), w_(w) {
        if (n < 1 || c < 1 || h < 1 || w < 1) {
            throw ShapeError("Tensor4: all dims must be >= 1, got (" + shape_str(n, c, h, w) + ")");
        }
        data_.assign(static_cast<std::size_t>(n) * c * h * w, T(0));
    }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }

    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * c_ + ic) * h_ + iy) * w_ + ix;
    }

    T& at(int in, int ic, int iy, int ix) { return data_[index(in, ic, iy, ix)]; }
    const T& at(int in, int ic, int iy, int ix) const { return data_[index(in, ic, iy, ix)]; }

    /// Pointer to the (in, ic) spatial plane of h*w contiguous values.
    T* plane(int in, int ic) { return data_.data() + index(in, ic, 0, 0); }
    const T* plane(int in, int ic) const { return data_.data() + index(in, ic, 0, 0); }

    void fill(T v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor4& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    std::string shape() const { return shape_str(n_, c_, h_, w_); }

    static std::string shape_str(int n, int c, int h, int w) {
        return std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w);
    }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) {
                return false;
            }
        }
        return true;
    }

    /// Converts elementwise to another scalar type.
    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(n_, c_, h_, w_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out.data()[i] = static_cast<U>(data_[i]);
        }
        return out;
    }

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<T> data_;
};

template <typename T>
Tensor4<T> zeros_like(const Tensor4<T>& t) {
    return Tensor4<T>(t.n(), t.c(), t.h(), t.w());
}

template <typename T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch (" + a.shape() + ") vs (" + b.shape() + ")");
    }
}

} // namespace rifcn
