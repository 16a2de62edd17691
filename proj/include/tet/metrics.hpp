#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tet/dataset_io.hpp"
#include "tet/model.hpp"
#include "tet/ops_counter.hpp"
#include "tet/sparsity.hpp"

namespace tet {

// Fraction of frames whose prediction lies strictly within p pixels of the
// label (Euclidean, at the evaluation resolution).
inline double detection_rate(std::span<const Label> preds, std::span<const Label> labels, double p) {
    if (preds.empty() || preds.size() != labels.size())
        throw DataError("detection_rate: empty or mismatched inputs");
    if (p <= 0) throw DataError("detection_rate: p must be positive");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double dx = preds[i].x - labels[i].x;
        const double dy = preds[i].y - labels[i].y;
        if (std::sqrt(dx * dx + dy * dy) < p) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// ---- analytic MAC counts (per timestep)

struct LayerDenseMacs {
    std::string layer;
    std::uint64_t input_path = 0;
    std::uint64_t hidden_path = 0;
};

struct DenseMacsReport {
    std::vector<LayerDenseMacs> conv; // per timestep
    std::uint64_t fc1 = 0, fc2 = 0;   // per timestep

    std::uint64_t conv_total() const {
        std::uint64_t t = 0;
        for (const auto& l : conv) t += l.input_path + l.hidden_path;
        return t;
    }
    std::uint64_t fc_total() const { return fc1 + fc2; }
    std::uint64_t total() const { return conv_total() + fc_total(); }
};

inline DenseMacsReport count_dense_macs(const ModelConfig& cfg) {
    DenseMacsReport r;
    int h = cfg.height, w = cfg.width;
    int in_ch = 1;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
        const std::uint64_t hid = cfg.channels[i];
        LayerDenseMacs l;
        l.layer = "convlstm" + std::to_string(i + 1);
        l.input_path = 9ull * in_ch * 4 * hid * hw;
        l.hidden_path = 9ull * hid * 4 * hid * hw;
        r.conv.push_back(l);
        in_ch = cfg.channels[i];
        h /= 2;
        w /= 2;
    }
    const std::uint64_t flat = static_cast<std::uint64_t>(cfg.channels.back()) * h * w;
    r.fc1 = flat * cfg.fc_hidden;
    r.fc2 = static_cast<std::uint64_t>(cfg.fc_hidden) * cfg.outputs;
    return r;
}

// closed-form trainable parameter count for arbitrary valid configs
inline std::uint64_t count_parameters(const ModelConfig& cfg) {
    std::uint64_t n = 0;
    int h = cfg.height, w = cfg.width;
    int in_ch = 1;
    for (int hid : cfg.channels) {
        n += 4ull * 9 * (static_cast<std::uint64_t>(in_ch) + hid) * hid; // conv weights
        n += 4ull * hid;                                                 // conv biases
        n += 2ull * hid;                                                 // bn gamma/beta
        in_ch = hid;
        h /= 2;
        w /= 2;
    }
    const std::uint64_t flat = static_cast<std::uint64_t>(cfg.channels.back()) * h * w;
    n += flat * cfg.fc_hidden + cfg.fc_hidden;
    n += static_cast<std::uint64_t>(cfg.fc_hidden) * cfg.outputs + cfg.outputs;
    return n;
}

// ---- sparsity aggregation (element-weighted per tensor, MAC-weighted totals)

struct LayerSparsity {
    std::string layer;
    double inp_sp = 0, hid_sp = 0, tot_sp = 0;
    std::uint64_t dense_input = 0, dense_hidden = 0;      // over the traced steps
    std::uint64_t effective_input = 0, effective_hidden = 0;
};

struct SparsitySummary {
    std::vector<LayerSparsity> layers;
    double net_inp_sp = 0, net_hid_sp = 0;
    double net_tot_sp = 0;           // MAC-weighted over all conv paths
    double net_tot_sp_layer_avg = 0; // unweighted mean of the per-layer tot_sp
    double fc1_sp = 0, fc2_sp = 0;
    std::uint64_t conv_dense = 0, conv_effective = 0;
    std::uint64_t fc_dense = 0, fc_effective = 0;
    std::size_t steps = 0;

    std::uint64_t all_dense() const { return conv_dense + fc_dense; }
    std::uint64_t all_effective() const { return conv_effective + fc_effective; }
};

inline SparsitySummary sparsity_summary(const SparsityTrace& trace, const ModelConfig& cfg) {
    if (trace.conv_layers.empty() || trace.conv_layers[0].input.empty())
        throw DataError("sparsity_summary: empty trace");
    SparsitySummary s;
    s.steps = trace.conv_layers[0].input.size();

    auto aggregate = [](const std::vector<SparsityStepRecord>& recs, std::uint64_t fanout,
                        std::uint64_t* dense_out, std::uint64_t* eff_out) {
        std::uint64_t zeros = 0, elems = 0;
        for (const auto& r : recs) {
            zeros += r.zeros;
            elems += r.elems;
        }
        *dense_out = elems * fanout;
        *eff_out = (elems - zeros) * fanout;
        return elems ? static_cast<double>(zeros) / static_cast<double>(elems) : 0.0;
    };

    double tot_sp_sum = 0;
    for (std::size_t l = 0; l < trace.conv_layers.size(); ++l) {
        const LayerTrace& lt = trace.conv_layers[l];
        const std::uint64_t hid = cfg.channels[l];
        const std::uint64_t fanout = 9ull * 4 * hid; // per element, both paths
        LayerSparsity row;
        row.layer = lt.layer_id;
        row.inp_sp = aggregate(lt.input, fanout, &row.dense_input, &row.effective_input);
        row.hid_sp = aggregate(lt.hidden, fanout, &row.dense_hidden, &row.effective_hidden);
        const std::uint64_t d = row.dense_input + row.dense_hidden;
        row.tot_sp = d ? (row.inp_sp * row.dense_input + row.hid_sp * row.dense_hidden) / d : 0.0;
        tot_sp_sum += row.tot_sp;
        s.conv_dense += d;
        s.conv_effective += row.effective_input + row.effective_hidden;
        s.layers.push_back(row);
    }
    std::uint64_t din = 0, dhid = 0;
    double in_w = 0, hid_w = 0;
    for (const auto& row : s.layers) {
        din += row.dense_input;
        dhid += row.dense_hidden;
        in_w += row.inp_sp * row.dense_input;
        hid_w += row.hid_sp * row.dense_hidden;
    }
    s.net_inp_sp = din ? in_w / din : 0.0;
    s.net_hid_sp = dhid ? hid_w / dhid : 0.0;
    s.net_tot_sp = (din + dhid) ? (in_w + hid_w) / static_cast<double>(din + dhid) : 0.0;
    s.net_tot_sp_layer_avg = s.layers.empty() ? 0.0 : tot_sp_sum / static_cast<double>(s.layers.size());

    // fc fan-out per input element is the layer's output width
    std::uint64_t fd = 0, fe = 0;
    s.fc1_sp = trace.fc1.input.empty()
                   ? 0.0
                   : aggregate(trace.fc1.input, static_cast<std::uint64_t>(cfg.fc_hidden), &fd, &fe);
    s.fc_dense = fd;
    s.fc_effective = fe;
    fd = 0;
    fe = 0;
    s.fc2_sp = trace.fc2.input.empty()
                   ? 0.0
                   : aggregate(trace.fc2.input, static_cast<std::uint64_t>(cfg.outputs), &fd, &fe);
    s.fc_dense += fd;
    s.fc_effective += fe;
    return s;
}

// ---- whole-dataset evaluation

struct EvalResult {
    std::vector<Label> preds_px; // one per evaluated frame
    std::vector<Label> labels_px;
    double p3 = 0, p5 = 0, p10 = 0;
    double mse_norm = 0;
    SparsityTrace trace;
    OpsCounter counter;
    std::size_t frames = 0;
};

// Runs the model over [begin, end) in consecutive windows of `window` frames
// (state reset per window, trailing short window kept) so every frame is
// evaluated exactly once.
template <class T>
EvalResult evaluate_model(const Model<T>& model, const Dataset& ds, std::size_t begin, std::size_t end,
                          double theta, int window) {
    if (end > ds.frames.size() || begin >= end) throw DataError("evaluate_model: bad frame range");
    if (window < 1) throw DataError("evaluate_model: window must be >= 1");
    EvalResult r;
    double se = 0;
    for (std::size_t start = begin; start < end; start += window) {
        const std::size_t len = std::min<std::size_t>(window, end - start);
        SequenceSample sample{std::span<const VoxelFrame>(ds.frames).subspan(start, len),
                              std::span<const Label>(ds.labels).subspan(start, len)};
        const ModelOutput out = forward_sequence(model, sample, &r.counter, &r.trace, theta);
        for (std::size_t i = 0; i < len; ++i) {
            r.preds_px.push_back(out.px[i]);
            r.labels_px.push_back(sample.labels[i]);
            const double dx = out.norm[i][0] - sample.labels[i].x / ds.width;
            const double dy = out.norm[i][1] - sample.labels[i].y / ds.height;
            se += dx * dx + dy * dy;
        }
    }
    r.frames = r.preds_px.size();
    r.mse_norm = se / (2.0 * static_cast<double>(r.frames));
    r.p3 = detection_rate(r.preds_px, r.labels_px, 3.0);
    r.p5 = detection_rate(r.preds_px, r.labels_px, 5.0);
    r.p10 = detection_rate(r.preds_px, r.labels_px, 10.0);
    return r;
}

} // namespace tet
