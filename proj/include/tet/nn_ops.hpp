#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tet/errors.hpp"
#include "tet/ops_counter.hpp"
#include "tet/tensor.hpp"

// Neural-net primitives: convolution, pooling, batch norm, activations, FC.
// Convolutions run input-stationary over an HWC scratch layout so that zero
// input elements are literally skipped and the per-output-channel inner loop
// stays contiguous for the vectorizer.
//
// MAC accounting uses the operand fan-out convention: every input element
// feeds C_out*kH*kW MACs (boundary positions included, matching the dense
// closed form C_out*C_in*kH*kW*H*W), and a zero element skips all of them.
// Hence effective == dense * (1 - zero fraction) holds exactly.

namespace tet {

template <class T>
struct ConvKernelT {
    TensorT<T> weights;  // [out_ch, in_ch, kH, kW]
    std::vector<T> bias; // [out_ch]

    int out_ch() const { return weights.dim(0); }
    int in_ch() const { return weights.dim(1); }
    int kh() const { return weights.dim(2); }
    int kw() const { return weights.dim(3); }
};

using ConvKernel = ConvKernelT<float>;

namespace detail {

template <class T>
inline std::size_t nnz(const T* p, std::size_t n) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) k += (p[i] != T(0));
    return k;
}

template <class T>
inline void chw_to_hwc(const T* src, int C, int H, int W, T* dst) {
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H * W; ++i) dst[static_cast<std::size_t>(i) * C + c] = src[static_cast<std::size_t>(c) * H * W + i];
}

template <class T>
inline void hwc_to_chw(const T* src, int C, int H, int W, T* dst) {
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H * W; ++i) dst[static_cast<std::size_t>(c) * H * W + i] = src[static_cast<std::size_t>(i) * C + c];
}

// [O,I,kh,kw] -> [kh][kw][I][O]; contiguous O is what the scatter loop wants.
template <class T>
inline void pack_weights_kkio(const TensorT<T>& w, T* wpack) {
    const int O = w.dim(0), I = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i)
            for (int ky = 0; ky < KH; ++ky)
                for (int kx = 0; kx < KW; ++kx)
                    wpack[(((static_cast<std::size_t>(ky) * KW + kx) * I + i) * O) + o] = w.at4(o, i, ky, kx);
}

template <class T>
inline void unpack_weights_kkio(const T* wpack, TensorT<T>& w) {
    const int O = w.dim(0), I = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i)
            for (int ky = 0; ky < KH; ++ky)
                for (int kx = 0; kx < KW; ++kx)
                    w.at4(o, i, ky, kx) = wpack[(((static_cast<std::size_t>(ky) * KW + kx) * I + i) * O) + o];
}

// [O,I,kh,kw] -> [kh][kw][O][I]; contiguous I for the grad-input scatter.
template <class T>
inline void pack_weights_kkoi(const TensorT<T>& w, T* wt) {
    const int O = w.dim(0), I = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i)
            for (int ky = 0; ky < KH; ++ky)
                for (int kx = 0; kx < KW; ++kx)
                    wt[(((static_cast<std::size_t>(ky) * KW + kx) * O + o) * I) + i] = w.at4(o, i, ky, kx);
}

// out_hwc must be pre-initialized (bias broadcast or zeros). Zero input
// elements skip their whole fan-out when skip_zeros is set; adding them would
// contribute exact zeros, so both modes produce identical bits.
template <class T>
void conv_scatter_hwc(const T* in_hwc, int Cin, int H, int W, const T* wpack, int Cout, int kH, int kW,
                      int pad, T* out_hwc, int Ho, int Wo, bool skip_zeros) {
    for (int iy = 0; iy < H; ++iy) {
        for (int ix = 0; ix < W; ++ix) {
            const T* in_px = in_hwc + (static_cast<std::size_t>(iy) * W + ix) * Cin;
            for (int ci = 0; ci < Cin; ++ci) {
                const T v = in_px[ci];
                if (skip_zeros && v == T(0)) continue;
                for (int ky = 0; ky < kH; ++ky) {
                    const int oy = iy + pad - ky;
                    if (static_cast<unsigned>(oy) >= static_cast<unsigned>(Ho)) continue;
                    for (int kx = 0; kx < kW; ++kx) {
                        const int ox = ix + pad - kx;
                        if (static_cast<unsigned>(ox) >= static_cast<unsigned>(Wo)) continue;
                        const T* __restrict__ w = wpack + ((static_cast<std::size_t>(ky) * kW + kx) * Cin + ci) * Cout;
                        T* __restrict__ o = out_hwc + (static_cast<std::size_t>(oy) * Wo + ox) * Cout;
                        for (int co = 0; co < Cout; ++co) o[co] += w[co] * v;
                    }
                }
            }
        }
    }
}

// dwpack layout [kh][kw][Cin][Cout], accumulated in place.
template <class T>
void conv_grad_weights_hwc(const T* in_hwc, int Cin, int H, int W, const T* gout_hwc, int Cout, int kH,
                           int kW, int pad, int Ho, int Wo, T* dwpack) {
    for (int iy = 0; iy < H; ++iy) {
        for (int ix = 0; ix < W; ++ix) {
            const T* in_px = in_hwc + (static_cast<std::size_t>(iy) * W + ix) * Cin;
            for (int ci = 0; ci < Cin; ++ci) {
                const T v = in_px[ci];
                if (v == T(0)) continue; // zero operand feeds no weight gradient
                for (int ky = 0; ky < kH; ++ky) {
                    const int oy = iy + pad - ky;
                    if (static_cast<unsigned>(oy) >= static_cast<unsigned>(Ho)) continue;
                    for (int kx = 0; kx < kW; ++kx) {
                        const int ox = ix + pad - kx;
                        if (static_cast<unsigned>(ox) >= static_cast<unsigned>(Wo)) continue;
                        const T* __restrict__ g = gout_hwc + (static_cast<std::size_t>(oy) * Wo + ox) * Cout;
                        T* __restrict__ dw = dwpack + ((static_cast<std::size_t>(ky) * kW + kx) * Cin + ci) * Cout;
                        for (int co = 0; co < Cout; ++co) dw[co] += g[co] * v;
                    }
                }
            }
        }
    }
}

// wt is the [kh][kw][Cout][Cin] pack; din_hwc is overwritten. Accumulation is
// output-stationary; the compile-time channel width keeps the accumulator in
// registers for the widths the topology actually uses.
template <class T, int CIN>
void conv_grad_input_hwc_fixed(const T* gout_hwc, int Cout, int Ho, int Wo, const T* wt, int kH, int kW,
                               int pad, int H, int W, T* din_hwc) {
    for (int iy = 0; iy < H; ++iy) {
        for (int ix = 0; ix < W; ++ix) {
            // four independent accumulators break the FMA dependency chain
            T a0[CIN] = {}, a1[CIN] = {}, a2[CIN] = {}, a3[CIN] = {};
            for (int ky = 0; ky < kH; ++ky) {
                const int oy = iy + pad - ky;
                if (static_cast<unsigned>(oy) >= static_cast<unsigned>(Ho)) continue;
                for (int kx = 0; kx < kW; ++kx) {
                    const int ox = ix + pad - kx;
                    if (static_cast<unsigned>(ox) >= static_cast<unsigned>(Wo)) continue;
                    const T* __restrict__ g = gout_hwc + (static_cast<std::size_t>(oy) * Wo + ox) * Cout;
                    const T* __restrict__ wk = wt + (static_cast<std::size_t>(ky) * kW + kx) *
                                                        static_cast<std::size_t>(Cout) * CIN;
                    int co = 0;
                    for (; co + 4 <= Cout; co += 4) {
                        const T* __restrict__ w = wk + static_cast<std::size_t>(co) * CIN;
                        const T v0 = g[co], v1 = g[co + 1], v2 = g[co + 2], v3 = g[co + 3];
                        for (int ci = 0; ci < CIN; ++ci) a0[ci] += w[ci] * v0;
                        for (int ci = 0; ci < CIN; ++ci) a1[ci] += w[CIN + ci] * v1;
                        for (int ci = 0; ci < CIN; ++ci) a2[ci] += w[2 * CIN + ci] * v2;
                        for (int ci = 0; ci < CIN; ++ci) a3[ci] += w[3 * CIN + ci] * v3;
                    }
                    for (; co < Cout; ++co) {
                        const T v = g[co];
                        const T* __restrict__ w = wk + static_cast<std::size_t>(co) * CIN;
                        for (int ci = 0; ci < CIN; ++ci) a0[ci] += w[ci] * v;
                    }
                }
            }
            T* __restrict__ d = din_hwc + (static_cast<std::size_t>(iy) * W + ix) * CIN;
            for (int ci = 0; ci < CIN; ++ci) d[ci] = (a0[ci] + a1[ci]) + (a2[ci] + a3[ci]);
        }
    }
}

template <class T>
void conv_grad_input_hwc(const T* gout_hwc, int Cout, int Ho, int Wo, const T* wt, int Cin, int kH,
                         int kW, int pad, int H, int W, T* din_hwc) {
    switch (Cin) {
        case 1: return conv_grad_input_hwc_fixed<T, 1>(gout_hwc, Cout, Ho, Wo, wt, kH, kW, pad, H, W, din_hwc);
        case 2: return conv_grad_input_hwc_fixed<T, 2>(gout_hwc, Cout, Ho, Wo, wt, kH, kW, pad, H, W, din_hwc);
        case 4: return conv_grad_input_hwc_fixed<T, 4>(gout_hwc, Cout, Ho, Wo, wt, kH, kW, pad, H, W, din_hwc);
        case 8: return conv_grad_input_hwc_fixed<T, 8>(gout_hwc, Cout, Ho, Wo, wt, kH, kW, pad, H, W, din_hwc);
        case 16: return conv_grad_input_hwc_fixed<T, 16>(gout_hwc, Cout, Ho, Wo, wt, kH, kW, pad, H, W, din_hwc);
        case 32: return conv_grad_input_hwc_fixed<T, 32>(gout_hwc, Cout, Ho, Wo, wt, kH, kW, pad, H, W, din_hwc);
        case 64: return conv_grad_input_hwc_fixed<T, 64>(gout_hwc, Cout, Ho, Wo, wt, kH, kW, pad, H, W, din_hwc);
        default: break;
    }
    // arbitrary widths fall back to a heap accumulator
    std::vector<T> acc(Cin);
    for (int iy = 0; iy < H; ++iy) {
        for (int ix = 0; ix < W; ++ix) {
            std::fill(acc.begin(), acc.end(), T(0));
            for (int ky = 0; ky < kH; ++ky) {
                const int oy = iy + pad - ky;
                if (static_cast<unsigned>(oy) >= static_cast<unsigned>(Ho)) continue;
                for (int kx = 0; kx < kW; ++kx) {
                    const int ox = ix + pad - kx;
                    if (static_cast<unsigned>(ox) >= static_cast<unsigned>(Wo)) continue;
                    const T* __restrict__ g = gout_hwc + (static_cast<std::size_t>(oy) * Wo + ox) * Cout;
                    const T* __restrict__ wk = wt + (static_cast<std::size_t>(ky) * kW + kx) *
                                                        static_cast<std::size_t>(Cout) * Cin;
                    for (int co = 0; co < Cout; ++co) {
                        const T v = g[co];
                        const T* __restrict__ w = wk + static_cast<std::size_t>(co) * Cin;
                        for (int ci = 0; ci < Cin; ++ci) acc[ci] += w[ci] * v;
                    }
                }
            }
            T* __restrict__ d = din_hwc + (static_cast<std::size_t>(iy) * W + ix) * Cin;
            for (int ci = 0; ci < Cin; ++ci) d[ci] = acc[ci];
        }
    }
}

// Masked variant: only input positions with a set mask need their gradient
// (straight-through delta threshold); everything else is written as zero.
// wpack is the forward [kh][kw][Cin][Cout] layout (contiguous out channels).
template <class T>
void conv_grad_input_hwc_masked(const T* gout_hwc, int Cout, int Ho, int Wo, const T* wpack, int Cin,
                                int kH, int kW, int pad, int H, int W, const std::uint8_t* mask_hwc,
                                T* din_hwc) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W * Cin; ++i) din_hwc[i] = T(0);
    for (int iy = 0; iy < H; ++iy) {
        for (int ix = 0; ix < W; ++ix) {
            const std::size_t px = static_cast<std::size_t>(iy) * W + ix;
            for (int ci = 0; ci < Cin; ++ci) {
                if (!mask_hwc[px * Cin + ci]) continue;
                T acc = T(0);
                for (int ky = 0; ky < kH; ++ky) {
                    const int oy = iy + pad - ky;
                    if (static_cast<unsigned>(oy) >= static_cast<unsigned>(Ho)) continue;
                    for (int kx = 0; kx < kW; ++kx) {
                        const int ox = ix + pad - kx;
                        if (static_cast<unsigned>(ox) >= static_cast<unsigned>(Wo)) continue;
                        const T* __restrict__ g =
                            gout_hwc + (static_cast<std::size_t>(oy) * Wo + ox) * Cout;
                        const T* __restrict__ w =
                            wpack + ((static_cast<std::size_t>(ky) * kW + kx) * Cin + ci) * Cout;
                        for (int co = 0; co < Cout; ++co) acc += w[co] * g[co];
                    }
                }
                din_hwc[px * Cin + ci] = acc;
            }
        }
    }
}

} // namespace detail

inline std::pair<int, int> conv2d_out_dims(int H, int W, int kH, int kW, int pad) {
    const int ho = H + 2 * pad - kH + 1;
    const int wo = W + 2 * pad - kW + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
    return {ho, wo};
}

// Cross-correlation with zero padding. Charges `macs` with the dense closed
// form and the effective (nonzero-operand) count.
template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const ConvKernelT<T>& k, int pad,
                          MacCount* macs = nullptr, bool skip_zeros = true) {
    if (input.rank() != 3) throw ShapeError("conv2d_forward: input must be [C,H,W]");
    if (input.dim(0) != k.in_ch())
        throw ShapeError("conv2d_forward: input channels " + std::to_string(input.dim(0)) +
                         " != kernel in_ch " + std::to_string(k.in_ch()));
    if (static_cast<int>(k.bias.size()) != k.out_ch())
        throw ShapeError("conv2d_forward: bias length != out_ch");
    const int Cin = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int Cout = k.out_ch(), kH = k.kh(), kW = k.kw();
    const auto [Ho, Wo] = conv2d_out_dims(H, W, kH, kW, pad);

    std::vector<T> in_hwc(input.numel());
    detail::chw_to_hwc(input.data.data(), Cin, H, W, in_hwc.data());
    std::vector<T> wpack(k.weights.numel());
    detail::pack_weights_kkio(k.weights, wpack.data());

    std::vector<T> out_hwc(static_cast<std::size_t>(Ho) * Wo * Cout);
    for (int i = 0; i < Ho * Wo; ++i)
        for (int co = 0; co < Cout; ++co) out_hwc[static_cast<std::size_t>(i) * Cout + co] = k.bias[co];

    detail::conv_scatter_hwc(in_hwc.data(), Cin, H, W, wpack.data(), Cout, kH, kW, pad, out_hwc.data(),
                             Ho, Wo, skip_zeros);

    if (macs) {
        const std::uint64_t fanout = static_cast<std::uint64_t>(Cout) * kH * kW;
        macs->dense += fanout * input.numel();
        macs->effective += fanout * detail::nnz(in_hwc.data(), in_hwc.size());
    }

    TensorT<T> out({Cout, Ho, Wo});
    detail::hwc_to_chw(out_hwc.data(), Cout, Ho, Wo, out.data.data());
    require_finite(out, "conv2d_forward");
    return out;
}

template <class T>
struct Conv2dGrads {
    TensorT<T> grad_input;
    TensorT<T> grad_weights;
    std::vector<T> grad_bias;
};

template <class T>
Conv2dGrads<T> conv2d_backward(const TensorT<T>& input, const ConvKernelT<T>& k,
                               const TensorT<T>& grad_out, int pad) {
    const int Cin = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int Cout = k.out_ch(), kH = k.kh(), kW = k.kw();
    const auto [Ho, Wo] = conv2d_out_dims(H, W, kH, kW, pad);
    if (grad_out.shape != std::vector<int>{Cout, Ho, Wo})
        throw ShapeError("conv2d_backward: grad_out shape " + shape_str(grad_out.shape) +
                         " inconsistent with forward output " + shape_str({Cout, Ho, Wo}));

    std::vector<T> in_hwc(input.numel()), gout_hwc(grad_out.numel());
    detail::chw_to_hwc(input.data.data(), Cin, H, W, in_hwc.data());
    detail::chw_to_hwc(grad_out.data.data(), Cout, Ho, Wo, gout_hwc.data());

    Conv2dGrads<T> g;
    std::vector<T> dwpack(k.weights.numel(), T(0));
    detail::conv_grad_weights_hwc(in_hwc.data(), Cin, H, W, gout_hwc.data(), Cout, kH, kW, pad, Ho, Wo,
                                  dwpack.data());
    g.grad_weights = TensorT<T>(k.weights.shape);
    detail::unpack_weights_kkio(dwpack.data(), g.grad_weights);

    std::vector<T> wt(k.weights.numel());
    detail::pack_weights_kkoi(k.weights, wt.data());
    std::vector<T> din_hwc(input.numel());
    detail::conv_grad_input_hwc(gout_hwc.data(), Cout, Ho, Wo, wt.data(), Cin, kH, kW, pad, H, W,
                                din_hwc.data());
    g.grad_input = TensorT<T>(input.shape);
    detail::hwc_to_chw(din_hwc.data(), Cin, H, W, g.grad_input.data.data());

    g.grad_bias.assign(Cout, T(0));
    for (int co = 0; co < Cout; ++co) {
        T s = T(0);
        for (int i = 0; i < Ho * Wo; ++i) s += grad_out.data[static_cast<std::size_t>(co) * Ho * Wo + i];
        g.grad_bias[co] = s;
    }
    require_finite(g.grad_input, "conv2d_backward");
    require_finite(g.grad_weights, "conv2d_backward");
    return g;
}

// ---- max pooling, 2x2 stride 2, floor semantics (trailing odd row/col dropped)

template <class T>
std::pair<TensorT<T>, std::vector<std::int32_t>> maxpool2x2_forward(const TensorT<T>& in) {
    if (in.rank() != 3) throw ShapeError("maxpool2x2: input must be [C,H,W]");
    const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
    if (H < 2 || W < 2) throw ShapeError("maxpool2x2: spatial dims must be >= 2");
    const int Ho = H / 2, Wo = W / 2;
    TensorT<T> out({C, Ho, Wo});
    std::vector<std::int32_t> argmax(out.numel());
    for (int c = 0; c < C; ++c) {
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                // ties keep the first element in row-major scan order
                std::int32_t best_idx = (c * H + 2 * oy) * W + 2 * ox;
                T best = in.data[best_idx];
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::int32_t idx = (c * H + 2 * oy + dy) * W + 2 * ox + dx;
                        if (in.data[idx] > best) {
                            best = in.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.at(c, oy, ox) = best;
                argmax[(static_cast<std::size_t>(c) * Ho + oy) * Wo + ox] = best_idx;
            }
        }
    }
    return {std::move(out), std::move(argmax)};
}

template <class T>
TensorT<T> maxpool2x2_backward(const std::vector<std::int32_t>& argmax, const TensorT<T>& grad_out,
                               const std::vector<int>& in_shape) {
    if (argmax.size() != grad_out.numel())
        throw ShapeError("maxpool2x2_backward: argmax/grad_out size mismatch");
    TensorT<T> grad_in(in_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) grad_in.data[argmax[i]] += grad_out.data[i];
    return grad_in;
}

// ---- batch normalization

template <class T>
struct BatchNormParams {
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    std::int64_t batches_seen = 0; // eval before any update is an error

    explicit BatchNormParams(int channels = 0)
        : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
          running_var(channels, T(1)) {}
    int channels() const { return static_cast<int>(gamma.size()); }
};

enum class BnMode { train, eval };

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <class T>
struct BatchNormCache {
    std::vector<T> xhat;   // [N * C * HW]
    std::vector<T> invstd; // [C]
    int lanes = 0, hw = 0;
};

namespace detail {

// x,y are [N][C][HW] flat; biased variance throughout.
template <class T>
void batchnorm_train_forward(const T* x, int N, int C, int HW, BatchNormParams<T>& bn,
                             bool update_running, T* y, BatchNormCache<T>* cache) {
    const std::size_t plane = static_cast<std::size_t>(C) * HW;
    const T inv_count = T(1) / static_cast<T>(static_cast<std::size_t>(N) * HW);
    if (cache) {
        cache->xhat.resize(static_cast<std::size_t>(N) * plane);
        cache->invstd.assign(C, T(0));
        cache->lanes = N;
        cache->hw = HW;
    }
    for (int c = 0; c < C; ++c) {
        T mean = T(0);
        for (int n = 0; n < N; ++n) {
            const T* p = x + n * plane + static_cast<std::size_t>(c) * HW;
            for (int i = 0; i < HW; ++i) mean += p[i];
        }
        mean *= inv_count;
        T var = T(0);
        for (int n = 0; n < N; ++n) {
            const T* p = x + n * plane + static_cast<std::size_t>(c) * HW;
            for (int i = 0; i < HW; ++i) {
                const T d = p[i] - mean;
                var += d * d;
            }
        }
        var *= inv_count;
        const T invstd = T(1) / std::sqrt(var + static_cast<T>(kBnEpsilon));
        const T g = bn.gamma[c], b = bn.beta[c];
        for (int n = 0; n < N; ++n) {
            const T* p = x + n * plane + static_cast<std::size_t>(c) * HW;
            T* q = y + n * plane + static_cast<std::size_t>(c) * HW;
            T* xh = cache ? cache->xhat.data() + n * plane + static_cast<std::size_t>(c) * HW : nullptr;
            for (int i = 0; i < HW; ++i) {
                const T v = (p[i] - mean) * invstd;
                if (xh) xh[i] = v;
                q[i] = g * v + b;
            }
        }
        if (cache) cache->invstd[c] = invstd;
        if (update_running) {
            const T m = static_cast<T>(kBnMomentum);
            bn.running_mean[c] = (T(1) - m) * bn.running_mean[c] + m * mean;
            bn.running_var[c] = (T(1) - m) * bn.running_var[c] + m * var;
        }
    }
    if (update_running) bn.batches_seen += 1;
}

template <class T>
void batchnorm_eval_forward(const T* x, int N, int C, int HW, const BatchNormParams<T>& bn, T* y) {
    if (bn.batches_seen == 0)
        throw DataError("batchnorm: eval mode requested before any running statistics exist");
    const std::size_t plane = static_cast<std::size_t>(C) * HW;
    for (int c = 0; c < C; ++c) {
        const T invstd = T(1) / std::sqrt(bn.running_var[c] + static_cast<T>(kBnEpsilon));
        const T g = bn.gamma[c], b = bn.beta[c], mean = bn.running_mean[c];
        for (int n = 0; n < N; ++n) {
            const T* p = x + n * plane + static_cast<std::size_t>(c) * HW;
            T* q = y + n * plane + static_cast<std::size_t>(c) * HW;
            for (int i = 0; i < HW; ++i) q[i] = g * (p[i] - mean) * invstd + b;
        }
    }
}

// dgamma/dbeta accumulate; dx may alias dy.
template <class T>
void batchnorm_train_backward(const T* dy, const BatchNormCache<T>& cache, const std::vector<T>& gamma,
                              int C, T* dx, T* dgamma, T* dbeta) {
    const int N = cache.lanes, HW = cache.hw;
    const std::size_t plane = static_cast<std::size_t>(C) * HW;
    const T count = static_cast<T>(static_cast<std::size_t>(N) * HW);
    for (int c = 0; c < C; ++c) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int n = 0; n < N; ++n) {
            const T* d = dy + n * plane + static_cast<std::size_t>(c) * HW;
            const T* xh = cache.xhat.data() + n * plane + static_cast<std::size_t>(c) * HW;
            for (int i = 0; i < HW; ++i) {
                sum_dy += d[i];
                sum_dy_xhat += d[i] * xh[i];
            }
        }
        dgamma[c] += sum_dy_xhat;
        dbeta[c] += sum_dy;
        const T scale = gamma[c] * cache.invstd[c] / count;
        for (int n = 0; n < N; ++n) {
            const T* d = dy + n * plane + static_cast<std::size_t>(c) * HW;
            const T* xh = cache.xhat.data() + n * plane + static_cast<std::size_t>(c) * HW;
            T* o = dx + n * plane + static_cast<std::size_t>(c) * HW;
            for (int i = 0; i < HW; ++i) o[i] = scale * (count * d[i] - sum_dy - xh[i] * sum_dy_xhat);
        }
    }
}

} // namespace detail

// Spec-shaped wrapper; input is [N,C,H,W] or [C,H,W] (N=1).
template <class T>
TensorT<T> batchnorm_forward(const TensorT<T>& input, BatchNormParams<T>& bn, BnMode mode,
                             bool update_running = true, BatchNormCache<T>* cache = nullptr) {
    int N, C, HW;
    if (input.rank() == 4) {
        N = input.dim(0);
        C = input.dim(1);
        HW = input.dim(2) * input.dim(3);
    } else if (input.rank() == 3) {
        N = 1;
        C = input.dim(0);
        HW = input.dim(1) * input.dim(2);
    } else {
        throw ShapeError("batchnorm_forward: input must be [N,C,H,W] or [C,H,W]");
    }
    if (C != bn.channels()) throw ShapeError("batchnorm_forward: gamma/beta length != channel count");
    TensorT<T> out(input.shape);
    if (mode == BnMode::train)
        detail::batchnorm_train_forward(input.data.data(), N, C, HW, bn, update_running,
                                        out.data.data(), cache);
    else
        detail::batchnorm_eval_forward(input.data.data(), N, C, HW, bn, out.data.data());
    require_finite(out, "batchnorm_forward");
    return out;
}

// ---- activations

template <class T>
inline T sigmoid_scalar(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = sigmoid_scalar(x.data[i]);
    return y;
}

template <class T>
TensorT<T> tanh_act(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = std::tanh(x.data[i]);
    return y;
}

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return y;
}

// backward maps take the forward *output* for sigmoid/tanh, the input for relu
template <class T>
TensorT<T> sigmoid_backward(const TensorT<T>& y, const TensorT<T>& dy) {
    TensorT<T> dx(y.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) dx.data[i] = dy.data[i] * y.data[i] * (T(1) - y.data[i]);
    return dx;
}

template <class T>
TensorT<T> tanh_backward(const TensorT<T>& y, const TensorT<T>& dy) {
    TensorT<T> dx(y.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) dx.data[i] = dy.data[i] * (T(1) - y.data[i] * y.data[i]);
    return dx;
}

// derivative at exactly 0 is defined as 0
template <class T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& dy) {
    TensorT<T> dx(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(0);
    return dx;
}

// ---- fully connected

template <class T>
struct FcParams {
    std::vector<T> w; // [out][in] row-major
    std::vector<T> b; // [out]
    int in = 0, out = 0;

    FcParams() = default;
    FcParams(int in_, int out_) : w(static_cast<std::size_t>(in_) * out_, T(0)), b(out_, T(0)), in(in_), out(out_) {}
};

template <class T>
std::vector<T> fc_forward(const std::vector<T>& x, const FcParams<T>& fc, MacCount* macs = nullptr) {
    if (static_cast<int>(x.size()) != fc.in)
        throw ShapeError("fc_forward: input length " + std::to_string(x.size()) + " != weight columns " +
                         std::to_string(fc.in));
    std::vector<T> y(fc.b);
    for (int o = 0; o < fc.out; ++o) {
        const T* __restrict__ row = fc.w.data() + static_cast<std::size_t>(o) * fc.in;
        T acc = T(0);
        for (int i = 0; i < fc.in; ++i) {
            if (x[i] == T(0)) continue;
            acc += row[i] * x[i];
        }
        y[o] += acc;
    }
    if (macs) {
        macs->dense += static_cast<std::uint64_t>(fc.in) * fc.out;
        macs->effective += static_cast<std::uint64_t>(detail::nnz(x.data(), x.size())) * fc.out;
    }
    require_finite(y, "fc_forward");
    return y;
}

template <class T>
struct FcGrads {
    std::vector<T> dw, db;
    explicit FcGrads(const FcParams<T>& fc) : dw(fc.w.size(), T(0)), db(fc.b.size(), T(0)) {}
    FcGrads() = default;
};

template <class T>
std::vector<T> fc_backward(const std::vector<T>& x, const FcParams<T>& fc, const std::vector<T>& dy,
                           FcGrads<T>& grads) {
    if (static_cast<int>(dy.size()) != fc.out) throw ShapeError("fc_backward: dy length != out");
    std::vector<T> dx(fc.in, T(0));
    for (int o = 0; o < fc.out; ++o) {
        const T g = dy[o];
        grads.db[o] += g;
        const T* __restrict__ row = fc.w.data() + static_cast<std::size_t>(o) * fc.in;
        T* __restrict__ drow = grads.dw.data() + static_cast<std::size_t>(o) * fc.in;
        for (int i = 0; i < fc.in; ++i) {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    return dx;
}

} // namespace tet
