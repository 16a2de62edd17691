#pragma once

#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "tet/metrics.hpp"
#include "tet/training.hpp"

namespace tet {

struct ThetaSweepRow {
    double theta = 0;
    double p3 = 0, p5 = 0, p10 = 0;
    std::size_t frames = 0;
    SparsitySummary summary;
    // effective-MAC ratio of a named baseline run over this row; 0 when unset
    double reduction_vs_baseline = 0;
};

// Evaluates the same weights at each threshold (inference-time thresholding)
// over frames [begin, end) of the dataset.
template <class T>
std::vector<ThetaSweepRow> sweep_theta(const Model<T>& model, const Dataset& ds,
                                       std::span<const double> thetas, std::size_t begin, std::size_t end,
                                       int window) {
    std::vector<ThetaSweepRow> rows;
    for (double theta : thetas) {
        const EvalResult r = evaluate_model(model, ds, begin, end, theta, window);
        ThetaSweepRow row;
        row.theta = theta;
        row.p3 = r.p3;
        row.p5 = r.p5;
        row.p10 = r.p10;
        row.frames = r.frames;
        row.summary = sparsity_summary(r.trace, model.cfg);
        rows.push_back(std::move(row));
    }
    return rows;
}

// Long-format CSV mirroring the sparsity/ops table structure: one row per
// layer plus conv-only and whole-network aggregate rows per theta. MAC totals
// cover the evaluated frames; *_per_frame divides by the frame count.
inline std::string theta_sweep_csv(std::span<const ThetaSweepRow> rows) {
    std::string out = "theta,layer,inp_sp,hid_sp,tot_sp,tot_sp_layer_avg,dense_macs,effective_macs,"
                      "dense_macs_per_frame,effective_macs_per_frame,p3,p5,p10,reduction_vs_baseline\n";
    char buf[512];
    auto emit = [&](double theta, const std::string& layer, const char* inp, const char* hid,
                    const char* tot, const char* avg, std::uint64_t dense, std::uint64_t eff,
                    std::size_t frames, double p3, double p5, double p10, const char* reduction) {
        std::snprintf(buf, sizeof(buf), "%.3f,%s,%s,%s,%s,%s,%llu,%llu,%.1f,%.1f,%.6f,%.6f,%.6f,%s\n",
                      theta, layer.c_str(), inp, hid, tot, avg,
                      static_cast<unsigned long long>(dense), static_cast<unsigned long long>(eff),
                      frames ? static_cast<double>(dense) / frames : 0.0,
                      frames ? static_cast<double>(eff) / frames : 0.0, p3, p5, p10, reduction);
        out += buf;
    };
    char a[32], b[32], c[32], d[32], r[32];
    auto fmt = [](char* dst, double v) {
        std::snprintf(dst, 32, "%.6f", v);
        return dst;
    };
    for (const auto& row : rows) {
        const SparsitySummary& s = row.summary;
        for (const auto& l : s.layers)
            emit(row.theta, l.layer, fmt(a, l.inp_sp), fmt(b, l.hid_sp), fmt(c, l.tot_sp), "",
                 l.dense_input + l.dense_hidden, l.effective_input + l.effective_hidden, row.frames,
                 row.p3, row.p5, row.p10, "");
        emit(row.theta, "fc1", fmt(a, s.fc1_sp), "", "", "", 0, 0, row.frames, row.p3, row.p5, row.p10, "");
        emit(row.theta, "fc2", fmt(a, s.fc2_sp), "", "", "", 0, 0, row.frames, row.p3, row.p5, row.p10, "");
        emit(row.theta, "network_conv", fmt(a, s.net_inp_sp), fmt(b, s.net_hid_sp), fmt(c, s.net_tot_sp),
             fmt(d, s.net_tot_sp_layer_avg), s.conv_dense, s.conv_effective, row.frames, row.p3, row.p5,
             row.p10, "");
        const double all_sp =
            s.all_dense() ? 1.0 - static_cast<double>(s.all_effective()) / static_cast<double>(s.all_dense()) : 0.0;
        emit(row.theta, "network_all", "", "", fmt(c, all_sp), "", s.all_dense(), s.all_effective(),
             row.frames, row.p3, row.p5, row.p10,
             row.reduction_vs_baseline > 0 ? fmt(r, row.reduction_vs_baseline) : "");
    }
    return out;
}

struct SeqLenRow {
    int seq_len = 0;
    double p3 = 0, p5 = 0, p10 = 0;
    double train_seconds = 0;
};

// Trains one model per sequence length with otherwise identical seeds/config
// and reports validation detection rates.
template <class T>
std::vector<SeqLenRow> sweep_sequence_length(const Dataset& ds, std::span<const int> seq_lens,
                                             ModelConfig model_cfg, TrainConfig train_cfg) {
    std::vector<SeqLenRow> rows;
    for (int seq_len : seq_lens) {
        if (seq_len < 2) throw DataError("sweep_sequence_length: sequence lengths must be >= 2");
        model_cfg.seq_len = seq_len;
        train_cfg.seq_len = seq_len;
        Model<T> model = build_model<T>(model_cfg, train_cfg.seed);
        const TrainReport rep = train(model, ds, train_cfg);
        double secs = 0;
        for (const auto& e : rep.epochs) secs += e.seconds;
        const std::size_t n_train = train_frame_count(ds.frames.size(), train_cfg.split);
        const EvalResult val =
            evaluate_model(model, ds, n_train, ds.frames.size(), train_cfg.theta, seq_len);
        rows.push_back({seq_len, val.p3, val.p5, val.p10, secs});
    }
    return rows;
}

inline std::string seqlen_sweep_csv(std::span<const SeqLenRow> rows) {
    std::string out = "seq_len,p3,p5,p10\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", r.seq_len, r.p3, r.p5, r.p10);
        out += buf;
    }
    return out;
}

} // namespace tet
