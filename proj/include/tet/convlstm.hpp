#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "tet/fastmath.hpp"
#include "tet/nn_ops.hpp"
#include "tet/ops_counter.hpp"
#include "tet/tensor.hpp"

// ConvLSTM cell and its change-based variant. The change-based cell feeds the
// thresholded hidden-state difference into the recurrent convolutions instead
// of the hidden state itself; the difference is consumed directly, never
// re-accumulated into a reconstructed state.

namespace tet {

template <class T>
struct CellParams {
    // input-path kernels [hidden, in_ch, 3, 3]
    TensorT<T> w_xi, w_xf, w_xg, w_xo;
    // hidden-path kernels [hidden, hidden, 3, 3]
    TensorT<T> w_hi, w_hf, w_hg, w_ho;
    std::vector<T> b_i, b_f, b_g, b_o;

    int in_ch = 0, hidden = 0;

    CellParams() = default;
    CellParams(int in, int h)
        : w_xi({h, in, 3, 3}), w_xf({h, in, 3, 3}), w_xg({h, in, 3, 3}), w_xo({h, in, 3, 3}),
          w_hi({h, h, 3, 3}), w_hf({h, h, 3, 3}), w_hg({h, h, 3, 3}), w_ho({h, h, 3, 3}),
          b_i(h, T(0)), b_f(h, T(0)), b_g(h, T(0)), b_o(h, T(0)), in_ch(in), hidden(h) {}

    std::size_t param_count() const {
        return 4 * (w_xi.numel() + w_hi.numel()) + 4 * static_cast<std::size_t>(hidden);
    }
};

template <class T>
struct CellState {
    TensorT<T> h;      // H_t
    TensorT<T> c;      // C_t
    TensorT<T> h_prev; // H_{t-1}, retained for delta encoding

    static CellState zero(int hidden, int H, int W) {
        CellState s;
        s.h = TensorT<T>({hidden, H, W});
        s.c = TensorT<T>({hidden, H, W});
        s.h_prev = TensorT<T>({hidden, H, W});
        return s;
    }
};

enum class DeltaRule {
    magnitude,  // pass when |H_{t-1} - H_{t-2}| >= theta
    signed_only // pass when (H_{t-1} - H_{t-2}) >= theta
};

namespace detail {

// delta + optional straight-through mask; nnz counts exact nonzeros of delta
template <class T>
void delta_encode_core(const T* h1, const T* h2, std::size_t n, double theta, DeltaRule rule, T* delta,
                       std::uint8_t* mask, std::uint64_t* nnz_out) {
    const T th = static_cast<T>(theta);
    std::uint64_t nz = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = h1[i] - h2[i];
        const bool pass = rule == DeltaRule::magnitude ? (d >= th || -d >= th) : (d >= th);
        const T v = pass ? d : T(0);
        delta[i] = v;
        if (mask) mask[i] = pass ? 1 : 0;
        nz += (v != T(0));
    }
    if (nnz_out) *nnz_out = nz;
}

// gate nonlinearities: scalar libm in the high-precision build, batched
// vector math for float
template <class T>
inline void batch_sigmoid(T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = sigmoid_scalar(x[i]);
}
inline void batch_sigmoid(float* x, std::size_t n) { fastmath::sigmoid_inplace(x, n); }

template <class T>
inline void batch_tanh(T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::tanh(x[i]);
}
inline void batch_tanh(float* x, std::size_t n) { fastmath::tanh_inplace(x, n); }

} // namespace detail

template <class T>
struct DeltaResult {
    TensorT<T> delta;
    std::uint64_t nonzeros = 0;
};

template <class T>
DeltaResult<T> delta_encode(const TensorT<T>& h1, const TensorT<T>& h2, double theta,
                            DeltaRule rule = DeltaRule::magnitude) {
    if (!h1.same_shape(h2)) throw ShapeError("delta_encode: shape mismatch");
    if (theta < 0) throw ShapeError("delta_encode: theta must be >= 0");
    DeltaResult<T> r;
    r.delta = TensorT<T>(h1.shape);
    detail::delta_encode_core(h1.data.data(), h2.data.data(), h1.numel(), theta, rule,
                              r.delta.data.data(), nullptr, &r.nonzeros);
    return r;
}

// straight-through: gradient flows through surviving entries unchanged
template <class T>
void delta_encode_backward(const std::vector<std::uint8_t>& mask, const TensorT<T>& grad_delta,
                           TensorT<T>& grad_h1_acc, TensorT<T>& grad_h2_acc) {
    for (std::size_t i = 0; i < grad_delta.numel(); ++i) {
        if (!mask[i]) continue;
        grad_h1_acc.data[i] += grad_delta.data[i];
        grad_h2_acc.data[i] -= grad_delta.data[i];
    }
}

// Fused gate weights in the scatter layouts. Internal gate order is
// (i, f, o, g) so the three sigmoid gates form one contiguous span.
template <class T>
struct PackedCell {
    std::vector<T> wx, wh;   // [3][3][ci][4h]
    std::vector<T> wxT, whT; // [3][3][4h][ci], for the grad-input scatter
    std::vector<T> bias;     // [4h]
    int in_ch = 0, hidden = 0;

    static constexpr int kGateI = 0, kGateF = 1, kGateO = 2, kGateG = 3;

    static PackedCell pack(const CellParams<T>& p) {
        PackedCell pc;
        pc.in_ch = p.in_ch;
        pc.hidden = p.hidden;
        const int h = p.hidden;
        pc.wx.assign(static_cast<std::size_t>(9) * p.in_ch * 4 * h, T(0));
        pc.wh.assign(static_cast<std::size_t>(9) * h * 4 * h, T(0));
        pc.wxT.assign(pc.wx.size(), T(0));
        pc.whT.assign(pc.wh.size(), T(0));
        pc.bias.assign(static_cast<std::size_t>(4) * h, T(0));
        const std::array<const TensorT<T>*, 4> xs = {&p.w_xi, &p.w_xf, &p.w_xo, &p.w_xg};
        const std::array<const TensorT<T>*, 4> hs = {&p.w_hi, &p.w_hf, &p.w_ho, &p.w_hg};
        const std::array<const std::vector<T>*, 4> bs = {&p.b_i, &p.b_f, &p.b_o, &p.b_g};
        for (int g = 0; g < 4; ++g) {
            pack_gate(*xs[g], p.in_ch, h, g, pc.wx.data(), pc.wxT.data());
            pack_gate(*hs[g], h, h, g, pc.wh.data(), pc.whT.data());
            for (int c = 0; c < h; ++c) pc.bias[static_cast<std::size_t>(g) * h + c] = (*bs[g])[c];
        }
        return pc;
    }

    static void pack_gate(const TensorT<T>& w, int cin, int h, int gate, T* dst, T* dstT) {
        const int cout = 4 * h;
        for (int o = 0; o < h; ++o)
            for (int i = 0; i < cin; ++i)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const T v = w.at4(o, i, ky, kx);
                        const std::size_t kk = static_cast<std::size_t>(ky) * 3 + kx;
                        dst[(kk * cin + i) * cout + gate * h + o] = v;
                        dstT[(kk * cout + gate * h + o) * cin + i] = v;
                    }
    }

    static void unpack_gate(const T* src, int cin, int h, int gate, TensorT<T>& w) {
        const int cout = 4 * h;
        for (int o = 0; o < h; ++o)
            for (int i = 0; i < cin; ++i)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        w.at4(o, i, ky, kx) =
                            src[((static_cast<std::size_t>(ky) * 3 + kx) * cin + i) * cout + gate * h + o];
    }
};

// Per-step tensors retained for BPTT. Everything stays in the HWC compute
// layout; gate values are post-nonlinearity in (i, f, o, g) order.
template <class T>
struct CellStepCache {
    std::vector<T> gates_hwc;  // [H*W][4*hidden]
    std::vector<T> c_prev_hwc; // [H*W][hidden]
    std::vector<T> c_t_hwc;
    std::vector<T> x_hwc; // [H*W][in_ch]
    std::vector<T> r_hwc; // recurrent input: H_{t-1} or delta
    // change-based cells only; CHW feeds the BPTT ring, HWC the masked kernels
    std::vector<std::uint8_t> delta_mask;
    std::vector<std::uint8_t> delta_mask_hwc;
    int H = 0, W = 0;
};

namespace detail {

// All buffers HWC. r_hwc is H_{t-1} (vanilla) or the encoded delta (CB).
// gates buffer enters as scratch and leaves holding gate values.
template <class T>
void cell_step_core(const PackedCell<T>& pc, const T* x_hwc, const T* r_hwc, const T* c_prev_hwc, int H,
                    int W, T* gates_hwc, T* c_t_hwc, T* h_t_hwc, MacCount* in_macs, MacCount* hid_macs) {
    const int h = pc.hidden;
    const int cout = 4 * h;
    const std::size_t px_count = static_cast<std::size_t>(H) * W;
    for (std::size_t i = 0; i < px_count; ++i)
        for (int c = 0; c < cout; ++c) gates_hwc[i * cout + c] = pc.bias[c];

    conv_scatter_hwc(x_hwc, pc.in_ch, H, W, pc.wx.data(), cout, 3, 3, 1, gates_hwc, H, W, true);
    conv_scatter_hwc(r_hwc, h, H, W, pc.wh.data(), cout, 3, 3, 1, gates_hwc, H, W, true);
    // checked before the saturating nonlinearities can mask a NaN/Inf
    require_finite_buf(gates_hwc, px_count * cout, "convlstm gate pre-activations");

    if (in_macs) {
        const std::uint64_t fanout = static_cast<std::uint64_t>(cout) * 9;
        in_macs->dense += fanout * px_count * pc.in_ch;
        in_macs->effective += fanout * nnz(x_hwc, px_count * pc.in_ch);
    }
    if (hid_macs) {
        const std::uint64_t fanout = static_cast<std::uint64_t>(cout) * 9;
        hid_macs->dense += fanout * px_count * h;
        hid_macs->effective += fanout * nnz(r_hwc, px_count * h);
    }

    for (std::size_t i = 0; i < px_count; ++i) {
        T* g4 = gates_hwc + i * cout;
        batch_sigmoid(g4, static_cast<std::size_t>(3) * h); // i, f, o
        batch_tanh(g4 + 3 * h, static_cast<std::size_t>(h)); // g
    }
    for (std::size_t i = 0; i < px_count; ++i) {
        const T* g4 = gates_hwc + i * cout;
        const T* cp = c_prev_hwc + i * h;
        T* ct = c_t_hwc + i * h;
        for (int c = 0; c < h; ++c) ct[c] = g4[h + c] * cp[c] + g4[c] * g4[3 * h + c];
    }
    // h_t = o * tanh(c_t); tanh runs over the whole plane in one pass
    for (std::size_t i = 0; i < px_count * h; ++i) h_t_hwc[i] = c_t_hwc[i];
    batch_tanh(h_t_hwc, px_count * h);
    for (std::size_t i = 0; i < px_count; ++i) {
        const T* g4 = gates_hwc + i * cout;
        T* ht = h_t_hwc + i * h;
        for (int c = 0; c < h; ++c) ht[c] *= g4[2 * h + c];
    }
}

// dh_hwc: upstream grad on H_t. dc_hwc enters holding the grad on C_t coming
// from step t+1 and leaves holding the grad on C_{t-1}. Parameter gradients
// accumulate into packed buffers. da_scratch holds [H*W][4h]; tanhc_scratch
// holds [H*W][h]. dx_hwc may be null when the input grad is not needed.
template <class T>
void cell_step_backward_core(const PackedCell<T>& pc, const CellStepCache<T>& cache, const T* dh_hwc,
                             T* dc_hwc, T* dx_hwc, T* dr_hwc, T* dwx_pack, T* dwh_pack, T* dbias,
                             T* da_scratch, T* tanhc_scratch,
                             const std::uint8_t* r_mask_hwc = nullptr) {
    const int h = pc.hidden;
    const int cout = 4 * h;
    const int H = cache.H, W = cache.W;
    const std::size_t px_count = static_cast<std::size_t>(H) * W;

    for (std::size_t i = 0; i < px_count * h; ++i) tanhc_scratch[i] = cache.c_t_hwc[i];
    batch_tanh(tanhc_scratch, px_count * h);

    for (std::size_t i = 0; i < px_count; ++i) {
        const T* g4 = cache.gates_hwc.data() + i * cout;
        const T* cp = cache.c_prev_hwc.data() + i * h;
        const T* tc = tanhc_scratch + i * h;
        const T* dh = dh_hwc + i * h;
        T* dc = dc_hwc + i * h;
        T* da = da_scratch + i * cout;
        for (int c = 0; c < h; ++c) {
            const T gi = g4[c], gf = g4[h + c], go = g4[2 * h + c], gg = g4[3 * h + c];
            const T d_o = dh[c] * tc[c];
            const T d_c = dc[c] + dh[c] * go * (T(1) - tc[c] * tc[c]);
            const T d_f = d_c * cp[c];
            const T d_i = d_c * gg;
            const T d_g = d_c * gi;
            dc[c] = d_c * gf; // becomes grad on C_{t-1}
            da[c] = d_i * gi * (T(1) - gi);
            da[h + c] = d_f * gf * (T(1) - gf);
            da[2 * h + c] = d_o * go * (T(1) - go);
            da[3 * h + c] = d_g * (T(1) - gg * gg);
        }
    }

    for (int c = 0; c < cout; ++c) {
        T s = T(0);
        for (std::size_t i = 0; i < px_count; ++i) s += da_scratch[i * cout + c];
        dbias[c] += s;
    }

    conv_grad_weights_hwc(cache.x_hwc.data(), pc.in_ch, H, W, da_scratch, cout, 3, 3, 1, H, W, dwx_pack);
    conv_grad_weights_hwc(cache.r_hwc.data(), h, H, W, da_scratch, cout, 3, 3, 1, H, W, dwh_pack);
    if (dx_hwc)
        conv_grad_input_hwc(da_scratch, cout, H, W, pc.wxT.data(), pc.in_ch, 3, 3, 1, H, W, dx_hwc);
    if (r_mask_hwc)
        conv_grad_input_hwc_masked(da_scratch, cout, H, W, pc.wh.data(), h, 3, 3, 1, H, W, r_mask_hwc,
                                   dr_hwc);
    else
        conv_grad_input_hwc(da_scratch, cout, H, W, pc.whT.data(), h, 3, 3, 1, H, W, dr_hwc);
}

template <class T>
void check_step_shapes(const CellParams<T>& p, const TensorT<T>& x, const CellState<T>& state) {
    if (x.rank() != 3 || x.dim(0) != p.in_ch)
        throw ShapeError("convlstm_step: input shape " + shape_str(x.shape) + " does not match in_ch " +
                         std::to_string(p.in_ch));
    const std::vector<int> want{p.hidden, x.dim(1), x.dim(2)};
    if (state.h.shape != want || state.c.shape != want || state.h_prev.shape != want)
        throw ShapeError("convlstm_step: state shape does not match " + shape_str(want));
}

// shared tail of the two public step wrappers
template <class T>
TensorT<T> run_cell_step(const CellParams<T>& p, const PackedCell<T>* prepacked, const TensorT<T>& x,
                         CellState<T>& state, const TensorT<T>* recurrent_chw, OpsCounter* counter,
                         std::string_view layer_id, CellStepCache<T>& cc, const char* where) {
    const int H = x.dim(1), W = x.dim(2), h = p.hidden;
    const std::size_t px_count = static_cast<std::size_t>(H) * W;

    PackedCell<T> local_pack;
    if (!prepacked) {
        local_pack = PackedCell<T>::pack(p);
        prepacked = &local_pack;
    }
    cc.H = H;
    cc.W = W;
    cc.gates_hwc.resize(px_count * 4 * h);
    cc.c_prev_hwc.resize(px_count * h);
    cc.c_t_hwc.resize(px_count * h);
    cc.x_hwc.resize(px_count * p.in_ch);
    cc.r_hwc.resize(px_count * h);

    chw_to_hwc(x.data.data(), p.in_ch, H, W, cc.x_hwc.data());
    chw_to_hwc(recurrent_chw->data.data(), h, H, W, cc.r_hwc.data());
    chw_to_hwc(state.c.data.data(), h, H, W, cc.c_prev_hwc.data());

    std::vector<T> h_t_hwc(px_count * h);
    MacCount* in_macs = counter ? &counter->slot(layer_id, MacPath::input) : nullptr;
    MacCount* hid_macs = counter ? &counter->slot(layer_id, MacPath::hidden) : nullptr;
    cell_step_core(*prepacked, cc.x_hwc.data(), cc.r_hwc.data(), cc.c_prev_hwc.data(), H, W,
                   cc.gates_hwc.data(), cc.c_t_hwc.data(), h_t_hwc.data(), in_macs, hid_macs);

    state.h_prev = state.h;
    hwc_to_chw(cc.c_t_hwc.data(), h, H, W, state.c.data.data());
    hwc_to_chw(h_t_hwc.data(), h, H, W, state.h.data.data());
    require_finite(state.h, where);
    require_finite(state.c, where);
    return state.h;
}

} // namespace detail

// One vanilla ConvLSTM update. Advances the state and returns H_t.
template <class T>
TensorT<T> convlstm_step(const CellParams<T>& p, const TensorT<T>& x, CellState<T>& state,
                         OpsCounter* counter = nullptr, std::string_view layer_id = "cell",
                         CellStepCache<T>* cache = nullptr, const PackedCell<T>* prepacked = nullptr) {
    detail::check_step_shapes(p, x, state);
    CellStepCache<T> local;
    CellStepCache<T>& cc = cache ? *cache : local;
    // state.h is read into the HWC scratch before the update touches it
    return detail::run_cell_step(p, prepacked, x, state, &state.h, counter, layer_id, cc,
                                 "convlstm_step");
}

// Change-based step: recurrent convolutions see the thresholded hidden change
// instead of H_{t-1}. State keeps H_{t-1} for the next encode.
template <class T>
TensorT<T> cb_convlstm_step(const CellParams<T>& p, const TensorT<T>& x, CellState<T>& state,
                            double theta, OpsCounter* counter = nullptr,
                            std::string_view layer_id = "cell", CellStepCache<T>* cache = nullptr,
                            DeltaRule rule = DeltaRule::magnitude,
                            const PackedCell<T>* prepacked = nullptr) {
    detail::check_step_shapes(p, x, state);
    CellStepCache<T> local;
    CellStepCache<T>& cc = cache ? *cache : local;
    cc.delta_mask.resize(state.h.numel());
    cc.delta_mask_hwc.resize(state.h.numel());

    TensorT<T> delta(state.h.shape);
    detail::delta_encode_core(state.h.data.data(), state.h_prev.data.data(), state.h.numel(), theta,
                              rule, delta.data.data(), cc.delta_mask.data(), nullptr);
    const int h = p.hidden;
    const std::size_t px_count = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    for (int c = 0; c < h; ++c)
        for (std::size_t i = 0; i < px_count; ++i)
            cc.delta_mask_hwc[i * h + c] = cc.delta_mask[static_cast<std::size_t>(c) * px_count + i];
    return detail::run_cell_step(p, prepacked, x, state, &delta, counter, layer_id, cc,
                                 "cb_convlstm_step");
}

template <class T>
struct CellGrads {
    TensorT<T> w_xi, w_xf, w_xg, w_xo;
    TensorT<T> w_hi, w_hf, w_hg, w_ho;
    std::vector<T> b_i, b_f, b_g, b_o;

    explicit CellGrads(const CellParams<T>& p)
        : w_xi(zeros_like(p.w_xi)), w_xf(zeros_like(p.w_xf)), w_xg(zeros_like(p.w_xg)),
          w_xo(zeros_like(p.w_xo)), w_hi(zeros_like(p.w_hi)), w_hf(zeros_like(p.w_hf)),
          w_hg(zeros_like(p.w_hg)), w_ho(zeros_like(p.w_ho)), b_i(p.hidden, T(0)), b_f(p.hidden, T(0)),
          b_g(p.hidden, T(0)), b_o(p.hidden, T(0)) {}
};

namespace detail {

// scatter packed-layout gradient buffers into the named tensors
template <class T>
void unpack_cell_grads(const T* dwx, const T* dwh, const T* dbias, const CellParams<T>& p,
                       CellGrads<T>& grads) {
    const int h = p.hidden;
    const std::array<TensorT<T>*, 4> gx = {&grads.w_xi, &grads.w_xf, &grads.w_xo, &grads.w_xg};
    const std::array<TensorT<T>*, 4> gh = {&grads.w_hi, &grads.w_hf, &grads.w_ho, &grads.w_hg};
    const std::array<std::vector<T>*, 4> gb = {&grads.b_i, &grads.b_f, &grads.b_o, &grads.b_g};
    TensorT<T> tmp_x({h, p.in_ch, 3, 3});
    TensorT<T> tmp_h({h, h, 3, 3});
    for (int g = 0; g < 4; ++g) {
        PackedCell<T>::unpack_gate(dwx, p.in_ch, h, g, tmp_x);
        for (std::size_t i = 0; i < tmp_x.numel(); ++i) gx[g]->data[i] += tmp_x.data[i];
        PackedCell<T>::unpack_gate(dwh, h, h, g, tmp_h);
        for (std::size_t i = 0; i < tmp_h.numel(); ++i) gh[g]->data[i] += tmp_h.data[i];
        for (int c = 0; c < h; ++c) (*gb[g])[c] += dbias[static_cast<std::size_t>(g) * h + c];
    }
}

} // namespace detail

// Exact gradients of one step. grad_c enters with dL/dC_t and leaves with
// dL/dC_{t-1}; grad_r is the grad on the recurrent input (H_{t-1} for the
// vanilla cell, the encoded delta for the change-based one).
template <class T>
void convlstm_step_backward(const CellParams<T>& p, const CellStepCache<T>& cache,
                            const TensorT<T>& grad_h, TensorT<T>& grad_c, TensorT<T>& grad_x,
                            TensorT<T>& grad_r, CellGrads<T>& grads) {
    if (cache.gates_hwc.empty()) throw ShapeError("convlstm_step_backward: missing forward cache");
    const int H = cache.H, W = cache.W, h = p.hidden;
    const std::size_t px_count = static_cast<std::size_t>(H) * W;

    const PackedCell<T> pc = PackedCell<T>::pack(p);
    std::vector<T> dh_hwc(px_count * h), dc_hwc(px_count * h);
    detail::chw_to_hwc(grad_h.data.data(), h, H, W, dh_hwc.data());
    detail::chw_to_hwc(grad_c.data.data(), h, H, W, dc_hwc.data());

    std::vector<T> dx_hwc(px_count * p.in_ch), dr_hwc(px_count * h);
    std::vector<T> dwx(pc.wx.size(), T(0)), dwh(pc.wh.size(), T(0)), dbias(4 * h, T(0));
    std::vector<T> da(px_count * 4 * h), tanhc(px_count * h);
    detail::cell_step_backward_core(pc, cache, dh_hwc.data(), dc_hwc.data(), dx_hwc.data(),
                                    dr_hwc.data(), dwx.data(), dwh.data(), dbias.data(), da.data(),
                                    tanhc.data());

    grad_x = TensorT<T>({p.in_ch, H, W});
    detail::hwc_to_chw(dx_hwc.data(), p.in_ch, H, W, grad_x.data.data());
    grad_r = TensorT<T>({h, H, W});
    detail::hwc_to_chw(dr_hwc.data(), h, H, W, grad_r.data.data());
    detail::hwc_to_chw(dc_hwc.data(), h, H, W, grad_c.data.data());

    detail::unpack_cell_grads(dwx.data(), dwh.data(), dbias.data(), p, grads);
}

} // namespace tet
