#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tet/metrics.hpp"
#include "tet/model.hpp"
#include "tet/rng.hpp"

namespace tet {

struct TrainConfig {
    double lr = 0.001;
    int epochs = 30;
    int batch = 16;
    int seq_len = 40;
    double split = 0.8;  // leading fraction of each stream used for training
    double theta = 0.0;  // delta threshold active during training (straight-through)
    std::uint64_t seed = 1;
    int clips_per_epoch = 0; // 0 = all stride-1 clips; otherwise a per-epoch subsample
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0, val_loss = 0;
    double p3 = 0, p5 = 0, p10 = 0;
    double seconds = 0;
};

struct TrainReport {
    std::vector<EpochRow> epochs;
    bool nan_aborted = false;
    std::string note;
};

// mean over all T*2 coordinate terms; gradient wrt predictions
template <class T>
struct MseResult {
    T loss = T(0);
    std::vector<std::array<T, 2>> grad;
};

template <class T>
MseResult<T> mse_loss(std::span<const std::array<T, 2>> preds, std::span<const std::array<T, 2>> labels) {
    if (preds.size() != labels.size() || preds.empty())
        throw ShapeError("mse_loss: length mismatch or empty");
    MseResult<T> r;
    r.grad.resize(preds.size());
    const T scale = T(1) / static_cast<T>(preds.size() * 2);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (int k = 0; k < 2; ++k) {
            const T d = preds[i][k] - labels[i][k];
            r.loss += d * d * scale;
            r.grad[i][k] = T(2) * d * scale;
        }
    }
    return r;
}

// plain SGD; non-finite gradients trip the NaN guard
template <class T>
void sgd_step(Model<T>& model, ModelGrads<T>& grads, double lr) {
    std::vector<std::size_t> sizes;
    const auto pairs = param_grad_pairs(model, grads, sizes);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        T* w = pairs[i].first;
        const T* g = pairs[i].second;
        for (std::size_t k = 0; k < sizes[i]; ++k) {
            if (!std::isfinite(static_cast<double>(g[k])))
                throw NumericError("sgd_step: non-finite gradient");
            w[k] -= static_cast<T>(lr) * g[k];
        }
    }
}

// 80/20 contiguous temporal split per stream; clip-level random splits would
// leak through stride-1 overlap.
inline std::size_t train_frame_count(std::size_t total, double split) {
    if (split <= 0.0 || split >= 1.0) throw DataError("train: split ratio must be in (0,1)");
    return static_cast<std::size_t>(static_cast<double>(total) * split);
}

template <class T>
TrainReport train(Model<T>& model, const Dataset& ds, const TrainConfig& cfg) {
    if (cfg.lr < 0 || cfg.epochs < 0 || cfg.batch < 1 || cfg.seq_len < 1)
        throw DataError("train: invalid configuration");
    if (ds.frames.empty()) throw DataError("train: empty dataset");

    const std::size_t n_train = train_frame_count(ds.frames.size(), cfg.split);
    const auto train_frames = std::span<const VoxelFrame>(ds.frames).first(n_train);
    const auto train_labels = std::span<const Label>(ds.labels).first(n_train);
    const std::vector<SequenceSample> clips = slice_clips(train_frames, train_labels, cfg.seq_len, 1);
    if (clips.empty())
        throw DataError("train: dataset yields no training clips (need >= " +
                        std::to_string(cfg.seq_len) + " training frames, have " +
                        std::to_string(n_train) + ")");
    const bool have_val = n_train < ds.frames.size();

    Rng shuffle_rng(sub_seed(cfg.seed, "epoch-shuffle"));
    std::vector<std::size_t> order(clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainReport report;
    BatchCaches<T> caches;
    ModelGrads<T> grads(model);
    std::vector<std::array<T, 2>> preds, dpreds;
    std::vector<std::array<T, 2>> lab_norm;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t_start = std::chrono::steady_clock::now();
        deterministic_shuffle(order, shuffle_rng);
        const std::size_t use =
            cfg.clips_per_epoch > 0 ? std::min<std::size_t>(cfg.clips_per_epoch, order.size()) : order.size();

        double loss_sum = 0;
        std::size_t clip_count = 0;
        try {
            for (std::size_t pos = 0; pos < use; pos += cfg.batch) {
                const std::size_t bsz = std::min<std::size_t>(cfg.batch, use - pos);
                std::vector<SequenceSample> batch;
                batch.reserve(bsz);
                for (std::size_t k = 0; k < bsz; ++k) batch.push_back(clips[order[pos + k]]);

                // lr 0 must leave every serialized value untouched, running
                // statistics included
                forward_batch(model, batch, /*update_running=*/cfg.lr != 0.0, caches, preds);

                const int steps = static_cast<int>(batch[0].frames.size());
                lab_norm.assign(preds.size(), {T(0), T(0)});
                for (int t = 0; t < steps; ++t)
                    for (std::size_t b = 0; b < bsz; ++b) {
                        const Label& l = batch[b].labels[t];
                        lab_norm[static_cast<std::size_t>(t) * bsz + b] = {
                            static_cast<T>(l.x / ds.width), static_cast<T>(l.y / ds.height)};
                    }
                const MseResult<T> mse = mse_loss<T>(preds, lab_norm);
                if (!std::isfinite(static_cast<double>(mse.loss)))
                    throw NumericError("train: non-finite loss");
                loss_sum += static_cast<double>(mse.loss) * static_cast<double>(bsz);
                clip_count += bsz;

                grads.zero();
                backward_batch(model, caches, mse.grad, grads);
                sgd_step(model, grads, cfg.lr);
            }
        } catch (const NumericError& e) {
            report.nan_aborted = true;
            report.note = std::string("NaN guard: ") + e.what() + " (epoch " + std::to_string(epoch + 1) + ")";
            break;
        }

        bool bn_ready = true;
        for (const auto& l : model.layers) bn_ready &= l.bn.batches_seen > 0;

        EpochRow row;
        row.epoch = epoch + 1;
        row.train_loss = clip_count ? loss_sum / static_cast<double>(clip_count) : 0.0;
        if (have_val && bn_ready) {
            const EvalResult val =
                evaluate_model(model, ds, n_train, ds.frames.size(), cfg.theta, cfg.seq_len);
            row.val_loss = val.mse_norm;
            row.p3 = val.p3;
            row.p5 = val.p5;
            row.p10 = val.p10;
        }
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        report.epochs.push_back(row);
    }
    return report;
}

inline std::string train_report_csv(const TrainReport& report) {
    std::string out = "epoch,train_loss,val_loss,p3,p5,p10,seconds\n";
    char buf[256];
    for (const auto& row : report.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.6f,%.6f,%.6f,%.3f\n", row.epoch, row.train_loss,
                      row.val_loss, row.p3, row.p5, row.p10, row.seconds);
        out += buf;
    }
    return out;
}

} // namespace tet
