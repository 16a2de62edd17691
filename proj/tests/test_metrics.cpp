#include <doctest.h>

#include "helpers/oracles.hpp"
#include "tet/metrics.hpp"
#include "tet/sweeps.hpp"
#include "tet/synth.hpp"
#include "tet/training.hpp"

using namespace tet;

namespace {

Dataset desk_dataset(std::uint64_t seed, std::uint64_t duration_us) {
    SyntheticSceneConfig cfg;
    cfg.width = 32;
    cfg.height = 24;
    cfg.pupil_radius_min = 4.0;
    cfg.pupil_radius_max = 6.0;
    cfg.max_speed = 45.0;
    cfg.saccade_rate = 0.5;
    cfg.saccade_amplitude = 8.0;
    cfg.noise_rate = 0.05;
    cfg.seed = seed;
    const std::uint64_t dt = 4400;
    const auto stream = generate_synthetic_stream(cfg, duration_us);
    const std::size_t n_frames = duration_us / dt;
    std::vector<Event> events;
    for (const auto& e : stream.events)
        if (e.t <= n_frames * dt) events.push_back(e);
    std::vector<Label> labels(n_frames);
    for (std::size_t k = 0; k < n_frames; ++k)
        labels[k] = stream.trajectory.position_at((k + 1) * dt);
    return assemble_dataset(cfg.width, cfg.height, dt, seed, std::move(events), std::move(labels));
}

ModelConfig desk_model_config(CellKind kind) {
    ModelConfig cfg;
    cfg.width = 32;
    cfg.height = 24;
    cfg.channels = {4, 8};
    cfg.fc_hidden = 16;
    cfg.seq_len = 8;
    cfg.cell = kind;
    return cfg;
}

} // namespace

TEST_CASE("detection rate counts strict sub-p distances") {
    std::vector<Label> labels = {{10, 10}, {20, 20}, {30, 30}};
    CHECK(detection_rate(labels, labels, 3) == 1.0);
    CHECK(detection_rate(labels, labels, 10) == 1.0);

    // distance exactly p fails
    std::vector<Label> off = {{13, 10}, {20, 20}, {30, 30}};
    CHECK(detection_rate(off, labels, 3.0) == doctest::Approx(2.0 / 3.0));

    std::vector<Label> empty;
    CHECK_THROWS_AS(detection_rate(empty, empty, 3), DataError);
}

TEST_CASE("detection rate matches a brute-force loop and is monotone in p") {
    Rng rng(181);
    std::vector<Label> preds(100), labels(100);
    for (std::size_t i = 0; i < 100; ++i) {
        labels[i] = {rng.uniform(0, 80), rng.uniform(0, 60)};
        preds[i] = {labels[i].x + rng.uniform(-8, 8), labels[i].y + rng.uniform(-8, 8)};
    }
    for (double p : {3.0, 5.0, 10.0}) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < 100; ++i) {
            const double dx = preds[i].x - labels[i].x, dy = preds[i].y - labels[i].y;
            if (std::sqrt(dx * dx + dy * dy) < p) ++hits;
        }
        CHECK(detection_rate(preds, labels, p) == doctest::Approx(hits / 100.0));
    }
    const double p3 = detection_rate(preds, labels, 3);
    const double p5 = detection_rate(preds, labels, 5);
    const double p10 = detection_rate(preds, labels, 10);
    CHECK(p3 <= p5);
    CHECK(p5 <= p10);
}

TEST_CASE("dense MAC closed forms at the paper topology") {
    ModelConfig cfg; // defaults: 80x60, 8/16/32/64
    const DenseMacsReport r = count_dense_macs(cfg);
    REQUIRE(r.conv.size() == 4);
    CHECK(r.conv[0].input_path == 1'382'400);
    CHECK(r.conv[0].hidden_path == 11'059'200);
    CHECK(r.conv_total() == 61'102'080); // ~61.1M per timestep
    CHECK(r.fc1 == 122'880);
    CHECK(r.fc2 == 256);
}

TEST_CASE("instrumented counters equal the closed form exactly") {
    ModelConfig cfg = desk_model_config(CellKind::vanilla);
    auto model = build_model<double>(cfg, 3);
    for (auto& l : model.layers) l.bn.batches_seen = 1;

    Rng rng(191);
    const int steps = 4;
    std::vector<VoxelFrame> frames(steps);
    std::vector<Label> labels(steps, {1, 1});
    for (auto& f : frames) {
        f.values = Tensor({1, cfg.height, cfg.width});
        for (auto& v : f.values.data)
            if (rng.uniform() < 0.2) v = 1.0f;
    }

    OpsCounter counter;
    forward_sequence(model, {frames, labels}, &counter);
    const DenseMacsReport closed = count_dense_macs(cfg);
    for (std::size_t l = 0; l < closed.conv.size(); ++l) {
        const auto& slot = counter.slot(closed.conv[l].layer, MacPath::input);
        const auto& hslot = counter.slot(closed.conv[l].layer, MacPath::hidden);
        CHECK(slot.dense == closed.conv[l].input_path * steps);
        CHECK(hslot.dense == closed.conv[l].hidden_path * steps);
    }
    CHECK(counter.slot("fc1", MacPath::fc).dense == closed.fc1 * steps);
    CHECK(counter.slot("fc2", MacPath::fc).dense == closed.fc2 * steps);
    CHECK(counter.total().dense == closed.total() * steps);
}

TEST_CASE("sparsity summary extremes") {
    ModelConfig cfg = desk_model_config(CellKind::vanilla);
    SparsityTrace trace;
    trace.conv_layers.push_back({"convlstm1", {}, {}});
    trace.conv_layers.push_back({"convlstm2", {}, {}});
    for (int t = 0; t < 3; ++t) {
        trace.conv_layers[0].input.push_back({768, 768}); // all zeros
        trace.conv_layers[0].hidden.push_back({3072, 3072});
        trace.conv_layers[1].input.push_back({768, 768});
        trace.conv_layers[1].hidden.push_back({1536, 1536});
        trace.fc1.input.push_back({384, 384});
        trace.fc2.input.push_back({16, 16});
    }
    const SparsitySummary s = sparsity_summary(trace, cfg);
    CHECK(s.net_tot_sp == doctest::Approx(1.0));
    CHECK(s.conv_effective == 0);
    CHECK(s.fc_effective == 0);

    SparsityTrace dense_trace;
    dense_trace.conv_layers.push_back({"convlstm1", {}, {}});
    dense_trace.conv_layers.push_back({"convlstm2", {}, {}});
    for (int t = 0; t < 3; ++t) {
        dense_trace.conv_layers[0].input.push_back({0, 768});
        dense_trace.conv_layers[0].hidden.push_back({0, 3072});
        dense_trace.conv_layers[1].input.push_back({0, 768});
        dense_trace.conv_layers[1].hidden.push_back({0, 1536});
        dense_trace.fc1.input.push_back({0, 384});
        dense_trace.fc2.input.push_back({0, 16});
    }
    const SparsitySummary d = sparsity_summary(dense_trace, cfg);
    CHECK(d.net_tot_sp == doctest::Approx(0.0));
    CHECK(d.conv_effective == d.conv_dense);
}

TEST_CASE("effective MACs equal dense times one minus sparsity, and match the counter") {
    ModelConfig cfg = desk_model_config(CellKind::change_based);
    cfg.theta = 0.1;
    auto model = build_model<double>(cfg, 13);
    for (auto& l : model.layers) l.bn.batches_seen = 1;

    Rng rng(193);
    const int steps = 6;
    std::vector<VoxelFrame> frames(steps);
    std::vector<Label> labels(steps, {1, 1});
    for (auto& f : frames) {
        f.values = Tensor({1, cfg.height, cfg.width});
        for (auto& v : f.values.data)
            if (rng.uniform() < 0.1) v = static_cast<float>(1 + static_cast<int>(rng.index(2)));
    }

    OpsCounter counter;
    SparsityTrace trace;
    forward_sequence(model, {frames, labels}, &counter, &trace);
    const SparsitySummary s = sparsity_summary(trace, cfg);

    // counter and trace describe the same run
    std::uint64_t counter_conv_eff = 0, counter_conv_dense = 0;
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
        const auto& in = counter.slot(s.layers[l].layer, MacPath::input);
        const auto& hid = counter.slot(s.layers[l].layer, MacPath::hidden);
        CHECK(in.effective == s.layers[l].effective_input);
        CHECK(hid.effective == s.layers[l].effective_hidden);
        counter_conv_eff += in.effective + hid.effective;
        counter_conv_dense += in.dense + hid.dense;
    }
    CHECK(counter_conv_eff == s.conv_effective);
    CHECK(counter_conv_dense == s.conv_dense);

    // definitional identity of the MAC-weighted combination
    const double lhs = static_cast<double>(s.conv_effective);
    const double rhs = static_cast<double>(s.conv_dense) * (1.0 - s.net_tot_sp);
    CHECK(std::abs(lhs - rhs) <= 1e-9 * static_cast<double>(s.conv_dense));

    const auto fc1 = counter.slot("fc1", MacPath::fc);
    const auto fc2 = counter.slot("fc2", MacPath::fc);
    CHECK(fc1.effective + fc2.effective == s.fc_effective);
}

TEST_CASE("theta sweep: theta 0 reproduces the plain evaluation, monotone columns") {
    const Dataset ds = desk_dataset(51, 1'200'000);
    ModelConfig mcfg = desk_model_config(CellKind::change_based);
    auto model = build_model<float>(mcfg, 14);
    TrainConfig tcfg;
    tcfg.lr = 0.01;
    tcfg.epochs = 2;
    tcfg.batch = 8;
    tcfg.seq_len = 8;
    tcfg.clips_per_epoch = 24;
    tcfg.seed = 14;
    train(model, ds, tcfg);

    const std::size_t n_train = train_frame_count(ds.frames.size(), 0.8);
    const std::vector<double> thetas = {0.0, 0.1, 0.2, 0.5};
    const auto rows = sweep_theta(model, ds, thetas, n_train, ds.frames.size(), 8);
    REQUIRE(rows.size() == 4);

    const EvalResult plain = evaluate_model(model, ds, n_train, ds.frames.size(), 0.0, 8);
    CHECK(rows[0].p5 == plain.p5);
    CHECK(rows[0].summary.net_hid_sp == sparsity_summary(plain.trace, mcfg).net_hid_sp);

    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].summary.net_hid_sp >= rows[i - 1].summary.net_hid_sp);
        CHECK(rows[i].summary.all_effective() <= rows[i - 1].summary.all_effective());
    }

    const std::string csv = theta_sweep_csv(rows);
    CHECK(csv.find("theta,layer,inp_sp") == 0);
    // per theta: one row per conv layer + fc1 + fc2 + two network rows
    const std::size_t lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == 1 + 4 * (mcfg.channels.size() + 4));
}

TEST_CASE("sequence-length sweep emits one deterministic row per length") {
    const Dataset ds = desk_dataset(52, 1'000'000);
    ModelConfig mcfg = desk_model_config(CellKind::vanilla);
    TrainConfig tcfg;
    tcfg.lr = 0.01;
    tcfg.epochs = 1;
    tcfg.batch = 8;
    tcfg.clips_per_epoch = 16;
    tcfg.seed = 15;

    const std::vector<int> lens = {2, 4};
    const auto rows = sweep_sequence_length<float>(ds, lens, mcfg, tcfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].seq_len == 2);
    CHECK(rows[1].seq_len == 4);

    const auto again = sweep_sequence_length<float>(ds, lens, mcfg, tcfg);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].p3 == again[i].p3);
        CHECK(rows[i].p5 == again[i].p5);
        CHECK(rows[i].p10 == again[i].p10);
    }
    const std::string csv = seqlen_sweep_csv(rows);
    CHECK(csv.find("seq_len,p3,p5,p10\n") == 0);
}
