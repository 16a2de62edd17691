#pragma once

// Independent reference implementations used as test oracles. Everything here
// is written as plain nested loops over CHW tensors, deliberately sharing no
// code with the library's compute kernels.

#include <array>
#include <cmath>
#include <vector>

#include "tet/convlstm.hpp"
#include "tet/nn_ops.hpp"
#include "tet/rng.hpp"
#include "tet/tensor.hpp"

namespace oracle {

template <class T>
tet::TensorT<T> naive_conv2d(const tet::TensorT<T>& in, const tet::ConvKernelT<T>& k, int pad) {
    const int Cin = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int Cout = k.out_ch(), kH = k.kh(), kW = k.kw();
    const int Ho = H + 2 * pad - kH + 1;
    const int Wo = W + 2 * pad - kW + 1;
    tet::TensorT<T> out({Cout, Ho, Wo});
    for (int co = 0; co < Cout; ++co)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                T acc = k.bias[co];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int ky = 0; ky < kH; ++ky)
                        for (int kx = 0; kx < kW; ++kx) {
                            const int iy = oy + ky - pad;
                            const int ix = ox + kx - pad;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += in.at(ci, iy, ix) * k.weights.at4(co, ci, ky, kx);
                        }
                out.at(co, oy, ox) = acc;
            }
    return out;
}

template <class T>
struct NaiveCellRef {
    tet::TensorT<T> h, c;
};

// Scalar-loop ConvLSTM update; recurrent_in is H_{t-1} for the vanilla cell or
// an externally encoded delta for the change-based one.
template <class T>
NaiveCellRef<T> naive_cell_step(const tet::CellParams<T>& p, const tet::TensorT<T>& x,
                                const tet::TensorT<T>& recurrent_in, const tet::TensorT<T>& c_prev) {
    auto gate = [&](const tet::TensorT<T>& wx, const tet::TensorT<T>& wh, const std::vector<T>& b) {
        tet::ConvKernelT<T> kx{wx, b};
        std::vector<T> zero_bias(p.hidden, T(0));
        tet::ConvKernelT<T> kh{wh, zero_bias};
        tet::TensorT<T> ax = naive_conv2d(x, kx, 1);
        const tet::TensorT<T> ah = naive_conv2d(recurrent_in, kh, 1);
        for (std::size_t i = 0; i < ax.numel(); ++i) ax.data[i] += ah.data[i];
        return ax;
    };
    tet::TensorT<T> ai = gate(p.w_xi, p.w_hi, p.b_i);
    tet::TensorT<T> af = gate(p.w_xf, p.w_hf, p.b_f);
    tet::TensorT<T> ag = gate(p.w_xg, p.w_hg, p.b_g);
    tet::TensorT<T> ao = gate(p.w_xo, p.w_ho, p.b_o);

    NaiveCellRef<T> out;
    out.c = tet::TensorT<T>(c_prev.shape);
    out.h = tet::TensorT<T>(c_prev.shape);
    for (std::size_t i = 0; i < c_prev.numel(); ++i) {
        const T gi = T(1) / (T(1) + std::exp(-ai.data[i]));
        const T gf = T(1) / (T(1) + std::exp(-af.data[i]));
        const T gg = std::tanh(ag.data[i]);
        const T go = T(1) / (T(1) + std::exp(-ao.data[i]));
        out.c.data[i] = gf * c_prev.data[i] + gi * gg;
        out.h.data[i] = go * std::tanh(out.c.data[i]);
    }
    return out;
}

template <class T>
tet::TensorT<T> naive_delta(const tet::TensorT<T>& h1, const tet::TensorT<T>& h2, double theta) {
    tet::TensorT<T> d(h1.shape);
    for (std::size_t i = 0; i < h1.numel(); ++i) {
        const T diff = h1.data[i] - h2.data[i];
        d.data[i] = std::abs(static_cast<double>(diff)) >= theta ? diff : T(0);
    }
    return d;
}

// ---- random helpers

template <class T>
void fill_uniform(tet::TensorT<T>& t, tet::Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
}

template <class T>
void fill_uniform(std::vector<T>& v, tet::Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
}

template <class T>
void sparsify(tet::TensorT<T>& t, tet::Rng& rng, double zero_fraction) {
    for (auto& v : t.data)
        if (rng.uniform() < zero_fraction) v = T(0);
}

template <class T>
tet::CellParams<T> random_cell(int in_ch, int hidden, tet::Rng& rng, double scale = 0.5) {
    tet::CellParams<T> p(in_ch, hidden);
    fill_uniform(p.w_xi, rng, -scale, scale);
    fill_uniform(p.w_xf, rng, -scale, scale);
    fill_uniform(p.w_xg, rng, -scale, scale);
    fill_uniform(p.w_xo, rng, -scale, scale);
    fill_uniform(p.w_hi, rng, -scale, scale);
    fill_uniform(p.w_hf, rng, -scale, scale);
    fill_uniform(p.w_hg, rng, -scale, scale);
    fill_uniform(p.w_ho, rng, -scale, scale);
    fill_uniform(p.b_i, rng, -scale, scale);
    fill_uniform(p.b_f, rng, -scale, scale);
    fill_uniform(p.b_g, rng, -scale, scale);
    fill_uniform(p.b_o, rng, -scale, scale);
    return p;
}

template <class T>
double max_abs_diff(const tet::TensorT<T>& a, const tet::TensorT<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

} // namespace oracle
