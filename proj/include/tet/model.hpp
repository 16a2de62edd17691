#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tet/convlstm.hpp"
#include "tet/events.hpp"
#include "tet/fileio.hpp"
#include "tet/nn_ops.hpp"
#include "tet/rng.hpp"
#include "tet/sparsity.hpp"

// The tracking network: a stack of recurrent conv layers, each followed by
// batch norm, ReLU and 2x2 max pooling, then two FC layers regressing the
// pupil center in [0,1]^2 coordinates.

namespace tet {

enum class CellKind { vanilla, change_based };

inline const char* cell_kind_name(CellKind k) {
    return k == CellKind::vanilla ? "vanilla" : "cb";
}

struct ModelConfig {
    int width = 80, height = 60;
    std::vector<int> channels = {8, 16, 32, 64};
    int fc_hidden = 128;
    int outputs = 2;
    CellKind cell = CellKind::vanilla;
    DeltaRule delta_rule = DeltaRule::magnitude;
    double theta = 0.0;
    int seq_len = 40;
};

template <class T>
struct ModelLayer {
    CellParams<T> cell;
    BatchNormParams<T> bn;
    int in_h = 0, in_w = 0; // spatial dims entering this layer
};

template <class T>
struct Model {
    ModelConfig cfg;
    std::vector<ModelLayer<T>> layers;
    FcParams<T> fc1, fc2;

    int flattened_size() const { return fc1.in; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.cell.param_count() + l.bn.gamma.size() + l.bn.beta.size();
        n += fc1.w.size() + fc1.b.size() + fc2.w.size() + fc2.b.size();
        return n;
    }
};

// ---- construction

template <class T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.channels.empty()) throw ShapeError("build_model: channel plan is empty");
    if (cfg.theta < 0) throw ShapeError("build_model: theta must be >= 0");
    Model<T> m;
    m.cfg = cfg;
    Rng rng(sub_seed(seed, "model-init"));
    auto uniform_fill = [&rng](std::vector<T>& v, double bound) {
        for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    };

    int h = cfg.height, w = cfg.width;
    int in_ch = 1;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        const int hid = cfg.channels[i];
        if (hid <= 0) throw ShapeError("build_model: channel counts must be positive");
        if (h < 2 || w < 2)
            throw ShapeError("build_model: resolution collapses at layer " + std::to_string(i + 1) +
                             " (" + std::to_string(h) + "x" + std::to_string(w) + ")");
        ModelLayer<T> layer;
        layer.cell = CellParams<T>(in_ch, hid);
        layer.bn = BatchNormParams<T>(hid);
        layer.in_h = h;
        layer.in_w = w;
        const double bx = 1.0 / std::sqrt(9.0 * in_ch);
        const double bh = 1.0 / std::sqrt(9.0 * hid);
        uniform_fill(layer.cell.w_xi.data, bx);
        uniform_fill(layer.cell.w_xf.data, bx);
        uniform_fill(layer.cell.w_xg.data, bx);
        uniform_fill(layer.cell.w_xo.data, bx);
        uniform_fill(layer.cell.w_hi.data, bh);
        uniform_fill(layer.cell.w_hf.data, bh);
        uniform_fill(layer.cell.w_hg.data, bh);
        uniform_fill(layer.cell.w_ho.data, bh);
        // forget gate opens the memory path early in the sequence
        std::fill(layer.cell.b_f.begin(), layer.cell.b_f.end(), T(1));
        m.layers.push_back(std::move(layer));
        in_ch = hid;
        h /= 2;
        w /= 2;
    }

    const int flat = cfg.channels.back() * h * w;
    m.fc1 = FcParams<T>(flat, cfg.fc_hidden);
    m.fc2 = FcParams<T>(cfg.fc_hidden, cfg.outputs);
    uniform_fill(m.fc1.w, 1.0 / std::sqrt(static_cast<double>(flat)));
    uniform_fill(m.fc2.w, 1.0 / std::sqrt(static_cast<double>(cfg.fc_hidden)));
    // the head regresses normalized coordinates; start at the frame center
    std::fill(m.fc2.b.begin(), m.fc2.b.end(), T(0.5));
    return m;
}

// ---- parameter enumeration (ordering is the serialization contract)

template <class T>
struct ParamEntry {
    std::string name;
    std::vector<int> shape;
    T* data = nullptr;
    std::size_t n = 0;
};

template <class T>
std::vector<ParamEntry<T>> collect_param_entries(Model<T>& m) {
    std::vector<ParamEntry<T>> out;
    auto add_t = [&out](const std::string& name, TensorT<T>& t) {
        out.push_back({name, t.shape, t.data.data(), t.numel()});
    };
    auto add_v = [&out](const std::string& name, std::vector<T>& v) {
        out.push_back({name, {static_cast<int>(v.size())}, v.data(), v.size()});
    };
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const std::string p = "convlstm" + std::to_string(i + 1) + ".";
        auto& c = m.layers[i].cell;
        add_t(p + "w_xi", c.w_xi);
        add_t(p + "w_xf", c.w_xf);
        add_t(p + "w_xg", c.w_xg);
        add_t(p + "w_xo", c.w_xo);
        add_t(p + "w_hi", c.w_hi);
        add_t(p + "w_hf", c.w_hf);
        add_t(p + "w_hg", c.w_hg);
        add_t(p + "w_ho", c.w_ho);
        add_v(p + "b_i", c.b_i);
        add_v(p + "b_f", c.b_f);
        add_v(p + "b_g", c.b_g);
        add_v(p + "b_o", c.b_o);
        const std::string b = "bn" + std::to_string(i + 1) + ".";
        add_v(b + "gamma", m.layers[i].bn.gamma);
        add_v(b + "beta", m.layers[i].bn.beta);
    }
    out.push_back({"fc1.weight", {m.fc1.out, m.fc1.in}, m.fc1.w.data(), m.fc1.w.size()});
    out.push_back({"fc1.bias", {m.fc1.out}, m.fc1.b.data(), m.fc1.b.size()});
    out.push_back({"fc2.weight", {m.fc2.out, m.fc2.in}, m.fc2.w.data(), m.fc2.w.size()});
    out.push_back({"fc2.bias", {m.fc2.out}, m.fc2.b.data(), m.fc2.b.size()});
    return out;
}

// BN running statistics; serialized after the parameters. The batch counter
// rides along as a 1-element tensor so eval-readiness survives a round trip.
template <class T>
std::vector<ParamEntry<T>> collect_stat_entries(Model<T>& m, std::vector<std::vector<T>>& count_storage) {
    std::vector<ParamEntry<T>> out;
    count_storage.assign(m.layers.size(), {});
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const std::string b = "bn" + std::to_string(i + 1) + ".";
        auto& bn = m.layers[i].bn;
        out.push_back({b + "running_mean", {static_cast<int>(bn.running_mean.size())},
                       bn.running_mean.data(), bn.running_mean.size()});
        out.push_back({b + "running_var", {static_cast<int>(bn.running_var.size())},
                       bn.running_var.data(), bn.running_var.size()});
        count_storage[i].assign(1, static_cast<T>(bn.batches_seen));
        out.push_back({b + "running_count", {1}, count_storage[i].data(), 1});
    }
    return out;
}

// ---- gradients

template <class T>
struct ModelGrads {
    std::vector<CellGrads<T>> cells;
    std::vector<std::vector<T>> bn_gamma, bn_beta;
    FcGrads<T> fc1, fc2;

    explicit ModelGrads(const Model<T>& m) : fc1(m.fc1), fc2(m.fc2) {
        for (const auto& l : m.layers) {
            cells.emplace_back(l.cell);
            bn_gamma.emplace_back(l.bn.gamma.size(), T(0));
            bn_beta.emplace_back(l.bn.beta.size(), T(0));
        }
    }

    void zero() {
        auto zt = [](TensorT<T>& t) { t.fill(T(0)); };
        for (auto& c : cells) {
            zt(c.w_xi); zt(c.w_xf); zt(c.w_xg); zt(c.w_xo);
            zt(c.w_hi); zt(c.w_hf); zt(c.w_hg); zt(c.w_ho);
            std::fill(c.b_i.begin(), c.b_i.end(), T(0));
            std::fill(c.b_f.begin(), c.b_f.end(), T(0));
            std::fill(c.b_g.begin(), c.b_g.end(), T(0));
            std::fill(c.b_o.begin(), c.b_o.end(), T(0));
        }
        for (auto& g : bn_gamma) std::fill(g.begin(), g.end(), T(0));
        for (auto& b : bn_beta) std::fill(b.begin(), b.end(), T(0));
        std::fill(fc1.dw.begin(), fc1.dw.end(), T(0));
        std::fill(fc1.db.begin(), fc1.db.end(), T(0));
        std::fill(fc2.dw.begin(), fc2.dw.end(), T(0));
        std::fill(fc2.db.begin(), fc2.db.end(), T(0));
    }
};

// flat view pairing every parameter with its gradient, in serialization order
template <class T>
std::vector<std::pair<T*, T*>> param_grad_pairs(Model<T>& m, ModelGrads<T>& g, std::vector<std::size_t>& sizes) {
    std::vector<std::pair<T*, T*>> out;
    sizes.clear();
    auto add = [&](T* p, T* gr, std::size_t n) {
        out.emplace_back(p, gr);
        sizes.push_back(n);
    };
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        auto& c = m.layers[i].cell;
        auto& cg = g.cells[i];
        add(c.w_xi.data.data(), cg.w_xi.data.data(), c.w_xi.numel());
        add(c.w_xf.data.data(), cg.w_xf.data.data(), c.w_xf.numel());
        add(c.w_xg.data.data(), cg.w_xg.data.data(), c.w_xg.numel());
        add(c.w_xo.data.data(), cg.w_xo.data.data(), c.w_xo.numel());
        add(c.w_hi.data.data(), cg.w_hi.data.data(), c.w_hi.numel());
        add(c.w_hf.data.data(), cg.w_hf.data.data(), c.w_hf.numel());
        add(c.w_hg.data.data(), cg.w_hg.data.data(), c.w_hg.numel());
        add(c.w_ho.data.data(), cg.w_ho.data.data(), c.w_ho.numel());
        add(c.b_i.data(), cg.b_i.data(), c.b_i.size());
        add(c.b_f.data(), cg.b_f.data(), c.b_f.size());
        add(c.b_g.data(), cg.b_g.data(), c.b_g.size());
        add(c.b_o.data(), cg.b_o.data(), c.b_o.size());
        add(m.layers[i].bn.gamma.data(), g.bn_gamma[i].data(), m.layers[i].bn.gamma.size());
        add(m.layers[i].bn.beta.data(), g.bn_beta[i].data(), m.layers[i].bn.beta.size());
    }
    add(m.fc1.w.data(), g.fc1.dw.data(), m.fc1.w.size());
    add(m.fc1.b.data(), g.fc1.db.data(), m.fc1.b.size());
    add(m.fc2.w.data(), g.fc2.dw.data(), m.fc2.w.size());
    add(m.fc2.b.data(), g.fc2.db.data(), m.fc2.b.size());
    return out;
}

// ---- forward paths

struct ModelOutput {
    std::vector<std::array<double, 2>> norm; // per-timestep (x,y) in [0,1]
    std::vector<Label> px;                   // rescaled to pixels
};

namespace detail {

template <class T>
void record(std::vector<SparsityStepRecord>* rec, const T* p, std::size_t n) {
    if (!rec) return;
    rec->push_back({n - nnz(p, n), n});
}

// CHW flatten is the FC input contract
template <class T>
std::vector<T> flatten_chw(const TensorT<T>& t) {
    return t.data;
}

} // namespace detail

// Per-(t,layer,lane) tensors needed for BPTT, plus FC activations.
template <class T>
struct BatchCaches {
    int steps = 0, lanes = 0, num_layers = 0;
    std::vector<CellStepCache<T>> cell;              // [t][l][b]
    std::vector<BatchNormCache<T>> bn;               // [t][l]
    std::vector<std::vector<std::int32_t>> argmax;   // [t][l][b]
    std::vector<std::vector<T>> fc1_in, fc1_pre, fc2_in; // [t][b]

    CellStepCache<T>& cell_at(int t, int l, int b) {
        return cell[(static_cast<std::size_t>(t) * num_layers + l) * lanes + b];
    }
    BatchNormCache<T>& bn_at(int t, int l) { return bn[static_cast<std::size_t>(t) * num_layers + l]; }
    std::vector<std::int32_t>& argmax_at(int t, int l, int b) {
        return argmax[(static_cast<std::size_t>(t) * num_layers + l) * lanes + b];
    }
    std::vector<T>& fc_at(std::vector<std::vector<T>>& v, int t, int b) {
        return v[static_cast<std::size_t>(t) * lanes + b];
    }

    void resize(int t, int l, int b) {
        steps = t;
        num_layers = l;
        lanes = b;
        cell.resize(static_cast<std::size_t>(t) * l * b);
        bn.resize(static_cast<std::size_t>(t) * l);
        argmax.resize(static_cast<std::size_t>(t) * l * b);
        fc1_in.resize(static_cast<std::size_t>(t) * b);
        fc1_pre.resize(static_cast<std::size_t>(t) * b);
        fc2_in.resize(static_cast<std::size_t>(t) * b);
    }
};

template <class T>
TensorT<T> frame_to_input(const VoxelFrame& f) {
    TensorT<T> x({1, f.values.dim(1), f.values.dim(2)});
    for (std::size_t i = 0; i < f.values.numel(); ++i) x.data[i] = static_cast<T>(f.values.data[i]);
    return x;
}

// Batched training forward. BN statistics are taken across the lanes at each
// timestep; every lane keeps its own cell states. Predictions land in
// preds[t*lanes + b].
template <class T>
void forward_batch(Model<T>& model, std::span<const SequenceSample> clips, bool update_running,
                   BatchCaches<T>& caches, std::vector<std::array<T, 2>>& preds,
                   OpsCounter* counter = nullptr) {
    const int B = static_cast<int>(clips.size());
    if (B == 0) throw ShapeError("forward_batch: empty batch");
    const int steps = static_cast<int>(clips[0].frames.size());
    const int L = static_cast<int>(model.layers.size());
    for (const auto& c : clips)
        if (static_cast<int>(c.frames.size()) != steps)
            throw ShapeError("forward_batch: ragged clip lengths");
    caches.resize(steps, L, B);
    preds.assign(static_cast<std::size_t>(steps) * B, {T(0), T(0)});

    std::vector<PackedCell<T>> packed;
    packed.reserve(L);
    for (int l = 0; l < L; ++l) packed.push_back(PackedCell<T>::pack(model.layers[l].cell));

    std::vector<std::vector<CellState<T>>> states(L);
    for (int l = 0; l < L; ++l)
        for (int b = 0; b < B; ++b)
            states[l].push_back(CellState<T>::zero(model.cfg.channels[l], model.layers[l].in_h,
                                                   model.layers[l].in_w));

    std::vector<TensorT<T>> lane_x(B);
    std::vector<T> bn_flat_in, bn_flat_out;

    for (int t = 0; t < steps; ++t) {
        for (int b = 0; b < B; ++b) {
            const VoxelFrame& f = clips[b].frames[t];
            if (f.values.dim(1) != model.cfg.height || f.values.dim(2) != model.cfg.width)
                throw ShapeError("forward_batch: frame resolution mismatch");
            lane_x[b] = frame_to_input<T>(f);
        }
        for (int l = 0; l < L; ++l) {
            auto& layer = model.layers[l];
            const std::string layer_id = "convlstm" + std::to_string(l + 1);
            const int hid = model.cfg.channels[l];
            const std::size_t plane = static_cast<std::size_t>(hid) * layer.in_h * layer.in_w;
            bn_flat_in.resize(plane * B);
            bn_flat_out.resize(plane * B);
            for (int b = 0; b < B; ++b) {
                CellStepCache<T>& cc = caches.cell_at(t, l, b);
                TensorT<T> h_t =
                    model.cfg.cell == CellKind::vanilla
                        ? convlstm_step(layer.cell, lane_x[b], states[l][b], counter, layer_id, &cc,
                                        &packed[l])
                        : cb_convlstm_step(layer.cell, lane_x[b], states[l][b], model.cfg.theta, counter,
                                           layer_id, &cc, model.cfg.delta_rule, &packed[l]);
                std::copy(h_t.data.begin(), h_t.data.end(), bn_flat_in.begin() + b * plane);
            }
            detail::batchnorm_train_forward(bn_flat_in.data(), B, hid, layer.in_h * layer.in_w, layer.bn,
                                            update_running, bn_flat_out.data(), &caches.bn_at(t, l));
            for (int b = 0; b < B; ++b) {
                TensorT<T> y({hid, layer.in_h, layer.in_w});
                std::copy(bn_flat_out.begin() + b * plane, bn_flat_out.begin() + (b + 1) * plane,
                          y.data.begin());
                require_finite(y, "forward_batch:batchnorm");
                for (auto& v : y.data) v = v > T(0) ? v : T(0);
                auto [pooled, argmax] = maxpool2x2_forward(y);
                caches.argmax_at(t, l, b) = std::move(argmax);
                lane_x[b] = std::move(pooled);
            }
        }
        for (int b = 0; b < B; ++b) {
            MacCount* fc1_macs = counter ? &counter->slot("fc1", MacPath::fc) : nullptr;
            MacCount* fc2_macs = counter ? &counter->slot("fc2", MacPath::fc) : nullptr;
            auto& x1 = caches.fc_at(caches.fc1_in, t, b);
            x1 = detail::flatten_chw(lane_x[b]);
            auto& pre = caches.fc_at(caches.fc1_pre, t, b);
            pre = fc_forward(x1, model.fc1, fc1_macs);
            auto& x2 = caches.fc_at(caches.fc2_in, t, b);
            x2 = pre;
            for (auto& v : x2) v = v > T(0) ? v : T(0);
            const std::vector<T> out = fc_forward(x2, model.fc2, fc2_macs);
            preds[static_cast<std::size_t>(t) * B + b] = {out[0], out[1]};
        }
    }
}

// Exact BPTT over the cached batch. dpreds matches preds' layout; parameter
// gradients accumulate into `grads`.
template <class T>
void backward_batch(Model<T>& model, BatchCaches<T>& caches,
                    const std::vector<std::array<T, 2>>& dpreds, ModelGrads<T>& grads) {
    const int steps = caches.steps, B = caches.lanes, L = caches.num_layers;

    std::vector<PackedCell<T>> packed;
    std::vector<std::vector<T>> dwx(L), dwh(L), dbias(L); // packed-layout accumulators
    for (int l = 0; l < L; ++l) {
        packed.push_back(PackedCell<T>::pack(model.layers[l].cell));
        dwx[l].assign(packed[l].wx.size(), T(0));
        dwh[l].assign(packed[l].wh.size(), T(0));
        dbias[l].assign(packed[l].bias.size(), T(0));
    }

    // recurrent hidden grads arrive from steps t+1 (vanilla/CB) and t+2 (CB);
    // ring slot (t % 3) accumulates the grad aimed at time t
    std::vector<std::vector<std::array<TensorT<T>, 3>>> ring(L);
    std::vector<std::vector<std::vector<T>>> grad_c(L); // HWC, persistent per lane
    std::size_t max_plane = 0, max_gates = 0;
    for (int l = 0; l < L; ++l) {
        ring[l].resize(B);
        grad_c[l].resize(B);
        const std::vector<int> shape{model.cfg.channels[l], model.layers[l].in_h, model.layers[l].in_w};
        const std::size_t plane = static_cast<std::size_t>(model.cfg.channels[l]) *
                                  model.layers[l].in_h * model.layers[l].in_w;
        max_plane = std::max(max_plane, plane);
        max_gates = std::max(max_gates, 4 * plane);
        for (int b = 0; b < B; ++b) {
            for (auto& r : ring[l][b]) r = TensorT<T>(shape);
            grad_c[l][b].assign(plane, T(0));
        }
    }
    std::vector<T> dh_hwc(max_plane), dr_hwc(max_plane), dx_hwc(max_plane), da(max_gates),
        tanhc(max_plane);
    TensorT<T> dr_chw;

    std::vector<TensorT<T>> lane_dx(B); // grad flowing down through the layer stack
    std::vector<T> bn_flat_dy, bn_flat_dx;

    for (int t = steps - 1; t >= 0; --t) {
        for (int b = 0; b < B; ++b) {
            const auto& dp = dpreds[static_cast<std::size_t>(t) * B + b];
            std::vector<T> dout = {dp[0], dp[1]};
            const std::vector<T> dx2 = fc_backward(caches.fc_at(caches.fc2_in, t, b), model.fc2, dout, grads.fc2);
            std::vector<T> dpre = dx2;
            const auto& pre = caches.fc_at(caches.fc1_pre, t, b);
            for (std::size_t i = 0; i < dpre.size(); ++i)
                if (pre[i] <= T(0)) dpre[i] = T(0);
            const std::vector<T> dflat = fc_backward(caches.fc_at(caches.fc1_in, t, b), model.fc1, dpre, grads.fc1);
            const auto& last = model.layers[L - 1];
            lane_dx[b] = TensorT<T>({model.cfg.channels[L - 1], last.in_h / 2, last.in_w / 2}, dflat);
        }

        for (int l = L - 1; l >= 0; --l) {
            auto& layer = model.layers[l];
            const int hid = model.cfg.channels[l];
            const std::size_t plane = static_cast<std::size_t>(hid) * layer.in_h * layer.in_w;
            bn_flat_dy.resize(plane * B);
            bn_flat_dx.resize(plane * B);
            const BatchNormCache<T>& bnc = caches.bn_at(t, l);
            for (int b = 0; b < B; ++b) {
                // pool backward, then ReLU mask from the recomputed BN output
                TensorT<T> drelu = maxpool2x2_backward(caches.argmax_at(t, l, b), lane_dx[b],
                                                       {hid, layer.in_h, layer.in_w});
                const T* xh = bnc.xhat.data() + b * plane;
                const int hw = layer.in_h * layer.in_w;
                for (int c = 0; c < hid; ++c) {
                    const T g = layer.bn.gamma[c], be = layer.bn.beta[c];
                    T* d = drelu.data.data() + static_cast<std::size_t>(c) * hw;
                    const T* x = xh + static_cast<std::size_t>(c) * hw;
                    for (int i = 0; i < hw; ++i)
                        if (g * x[i] + be <= T(0)) d[i] = T(0);
                }
                std::copy(drelu.data.begin(), drelu.data.end(), bn_flat_dy.begin() + b * plane);
            }
            detail::batchnorm_train_backward(bn_flat_dy.data(), bnc, layer.bn.gamma, hid,
                                             bn_flat_dx.data(), grads.bn_gamma[l].data(),
                                             grads.bn_beta[l].data());
            dr_chw = TensorT<T>({hid, layer.in_h, layer.in_w});
            for (int b = 0; b < B; ++b) {
                TensorT<T> dh({hid, layer.in_h, layer.in_w});
                std::copy(bn_flat_dx.begin() + b * plane, bn_flat_dx.begin() + (b + 1) * plane,
                          dh.data.begin());
                TensorT<T>& pending = ring[l][b][t % 3];
                for (std::size_t i = 0; i < dh.numel(); ++i) dh.data[i] += pending.data[i];
                pending.fill(T(0));
                detail::chw_to_hwc(dh.data.data(), hid, layer.in_h, layer.in_w, dh_hwc.data());

                // input grads are only needed above the first layer; the
                // masked kernel skips recurrent grads the threshold gates off
                T* dxp = l > 0 ? dx_hwc.data() : nullptr;
                const CellStepCache<T>& cc = caches.cell_at(t, l, b);
                const std::uint8_t* mask_hwc =
                    model.cfg.cell == CellKind::change_based ? cc.delta_mask_hwc.data() : nullptr;
                detail::cell_step_backward_core(packed[l], cc, dh_hwc.data(), grad_c[l][b].data(), dxp,
                                                dr_hwc.data(), dwx[l].data(), dwh[l].data(),
                                                dbias[l].data(), da.data(), tanhc.data(), mask_hwc);

                if (t > 0) {
                    detail::hwc_to_chw(dr_hwc.data(), hid, layer.in_h, layer.in_w, dr_chw.data.data());
                    if (model.cfg.cell == CellKind::vanilla) {
                        TensorT<T>& dst = ring[l][b][(t - 1) % 3];
                        for (std::size_t i = 0; i < dr_chw.numel(); ++i) dst.data[i] += dr_chw.data[i];
                    } else {
                        // straight-through split onto H_{t-1} and H_{t-2}
                        TensorT<T>& dst1 = ring[l][b][(t - 1) % 3];
                        TensorT<T> dummy(dr_chw.shape);
                        TensorT<T>& dst2 = t >= 2 ? ring[l][b][(t - 2) % 3] : dummy;
                        const auto& mask = caches.cell_at(t, l, b).delta_mask;
                        for (std::size_t i = 0; i < dr_chw.numel(); ++i) {
                            if (!mask[i]) continue;
                            dst1.data[i] += dr_chw.data[i];
                            dst2.data[i] -= dr_chw.data[i];
                        }
                    }
                }
                if (l > 0) {
                    const int in_ch = model.cfg.channels[l - 1];
                    lane_dx[b] = TensorT<T>({in_ch, layer.in_h, layer.in_w});
                    detail::hwc_to_chw(dx_hwc.data(), in_ch, layer.in_h, layer.in_w,
                                       lane_dx[b].data.data());
                }
            }
        }
    }
    for (int l = 0; l < L; ++l)
        detail::unpack_cell_grads(dwx[l].data(), dwh[l].data(), dbias[l].data(), model.layers[l].cell,
                                  grads.cells[l]);
}

// Single-sequence inference with eval-mode batch norm. Counted MACs and the
// sparsity trace are optional.
template <class T>
ModelOutput forward_sequence(const Model<T>& model, const SequenceSample& sample,
                             OpsCounter* counter = nullptr, SparsityTrace* trace = nullptr,
                             std::optional<double> theta_override = {}) {
    const int steps = static_cast<int>(sample.frames.size());
    const int L = static_cast<int>(model.layers.size());
    const double theta = theta_override.value_or(model.cfg.theta);

    if (trace && trace->conv_layers.empty())
        for (int l = 0; l < L; ++l)
            trace->conv_layers.push_back({"convlstm" + std::to_string(l + 1), {}, {}});

    std::vector<CellState<T>> states;
    std::vector<PackedCell<T>> packed;
    for (int l = 0; l < L; ++l) {
        states.push_back(CellState<T>::zero(model.cfg.channels[l], model.layers[l].in_h, model.layers[l].in_w));
        packed.push_back(PackedCell<T>::pack(model.layers[l].cell));
    }

    ModelOutput out;
    out.norm.reserve(steps);
    out.px.reserve(steps);

    CellStepCache<T> scratch;
    for (int t = 0; t < steps; ++t) {
        const VoxelFrame& f = sample.frames[t];
        if (f.values.dim(1) != model.cfg.height || f.values.dim(2) != model.cfg.width)
            throw ShapeError("forward_sequence: frame resolution mismatch");
        TensorT<T> x = frame_to_input<T>(f);
        for (int l = 0; l < L; ++l) {
            const auto& layer = model.layers[l];
            const std::string layer_id = "convlstm" + std::to_string(l + 1);
            if (trace) detail::record(&trace->conv_layers[l].input, x.data.data(), x.numel());
            TensorT<T> h_t;
            if (model.cfg.cell == CellKind::vanilla)
                h_t = convlstm_step(layer.cell, x, states[l], counter, layer_id, &scratch, &packed[l]);
            else
                h_t = cb_convlstm_step(layer.cell, x, states[l], theta, counter, layer_id, &scratch,
                                       model.cfg.delta_rule, &packed[l]);
            if (trace)
                detail::record(&trace->conv_layers[l].hidden, scratch.r_hwc.data(), scratch.r_hwc.size());

            TensorT<T> y(h_t.shape);
            detail::batchnorm_eval_forward(h_t.data.data(), 1, model.cfg.channels[l],
                                           layer.in_h * layer.in_w, layer.bn, y.data.data());
            require_finite(y, "forward_sequence:batchnorm");
            for (auto& v : y.data) v = v > T(0) ? v : T(0);
            auto [pooled, argmax] = maxpool2x2_forward(y);
            x = std::move(pooled);
        }
        MacCount* fc1_macs = counter ? &counter->slot("fc1", MacPath::fc) : nullptr;
        MacCount* fc2_macs = counter ? &counter->slot("fc2", MacPath::fc) : nullptr;
        const std::vector<T> flat = detail::flatten_chw(x);
        if (trace) detail::record(&trace->fc1.input, flat.data(), flat.size());
        std::vector<T> hid = fc_forward(flat, model.fc1, fc1_macs);
        for (auto& v : hid) v = v > T(0) ? v : T(0);
        if (trace) detail::record(&trace->fc2.input, hid.data(), hid.size());
        const std::vector<T> pred = fc_forward(hid, model.fc2, fc2_macs);
        const double nx = static_cast<double>(pred[0]);
        const double ny = static_cast<double>(pred[1]);
        out.norm.push_back({nx, ny});
        out.px.push_back({nx * model.cfg.width, ny * model.cfg.height});
    }
    return out;
}

} // namespace tet
