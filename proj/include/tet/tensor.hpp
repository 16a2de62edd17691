#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tet/errors.hpp"

namespace tet {

// Dense row-major array. Feature maps are [C,H,W]; an optional leading batch
// dimension gives [N,C,H,W]. Two precisions are instantiated: float for
// training/eval, double for gradient checking and oracle comparisons.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {}
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != checked_numel(shape))
            throw ShapeError("tensor data length does not match shape product");
    }

    static std::size_t checked_numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + std::to_string(d));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    int rank() const { return static_cast<int>(shape.size()); }

    // [C,H,W] access
    T& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    const T& at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    // [O,I,KH,KW] access (conv kernels)
    T& at4(int o, int i, int ky, int kx) {
        return data[((static_cast<std::size_t>(o) * shape[1] + i) * shape[2] + ky) * shape[3] + kx];
    }
    const T& at4(int o, int i, int ky, int kx) const {
        return data[((static_cast<std::size_t>(o) * shape[1] + i) * shape[2] + ky) * shape[3] + kx];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    std::size_t count_zeros() const {
        std::size_t z = 0;
        for (T v : data) z += (v == T(0));
        return z;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <class T>
TensorT<T> zeros_like(const TensorT<T>& t) {
    return TensorT<T>(t.shape);
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// NaN/Inf anywhere is a hard error; `where` names the producing op.
template <class T>
void require_finite(const TensorT<T>& t, const char* where) {
    if (!t.all_finite())
        throw NumericError(std::string(where) + ": non-finite value in tensor " + shape_str(t.shape));
}

template <class T>
void require_finite(const std::vector<T>& v, const char* where) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string(where) + ": non-finite value in vector");
}

template <class T>
void require_finite_buf(const T* p, std::size_t n, const char* where) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(static_cast<double>(p[i])))
            throw NumericError(std::string(where) + ": non-finite value");
}

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

} // namespace tet
