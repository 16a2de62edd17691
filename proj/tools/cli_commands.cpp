#include "cli_commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "tet/dataset_io.hpp"
#include "tet/manifest.hpp"
#include "tet/metrics.hpp"
#include "tet/model_io.hpp"
#include "tet/sweeps.hpp"

namespace fs = std::filesystem;

namespace tet::cli {

namespace {

CellKind parse_cell(const std::string& s) {
    if (s == "vanilla") return CellKind::vanilla;
    if (s == "cb") return CellKind::change_based;
    throw DataError("unknown cell kind '" + s + "' (expected vanilla|cb)");
}

DeltaRule parse_rule(const std::string& s) {
    if (s == "magnitude") return DeltaRule::magnitude;
    if (s == "signed") return DeltaRule::signed_only;
    throw DataError("unknown delta rule '" + s + "' (expected magnitude|signed)");
}

ModelConfig make_model_config(const ModelFlags& f, int width, int height) {
    ModelConfig cfg;
    cfg.width = width;
    cfg.height = height;
    cfg.channels = f.channels;
    cfg.fc_hidden = f.fc_hidden;
    cfg.cell = parse_cell(f.cell);
    cfg.delta_rule = parse_rule(f.delta_rule);
    cfg.theta = f.theta;
    cfg.seq_len = f.seq_len;
    return cfg;
}

std::pair<std::size_t, std::size_t> split_range(const Dataset& ds, const std::string& split,
                                                double ratio) {
    const std::size_t n_train = train_frame_count(ds.frames.size(), ratio);
    if (split == "train") return {0, n_train};
    if (split == "val") return {n_train, ds.frames.size()};
    if (split == "all") return {0, ds.frames.size()};
    throw DataError("unknown split '" + split + "' (expected train|val|all)");
}

void add_model_flags(RunManifest& m, const ModelFlags& f) {
    m.set("cell", f.cell);
    m.set("delta_rule", f.delta_rule);
    std::string ch;
    for (std::size_t i = 0; i < f.channels.size(); ++i)
        ch += (i ? "," : "") + std::to_string(f.channels[i]);
    m.set("channels", ch);
    m.set("fc_hidden", f.fc_hidden);
    m.set("theta", f.theta);
    m.set("seq_len", f.seq_len);
}

void add_train_flags(RunManifest& m, const TrainConfig& t) {
    m.set("lr", t.lr);
    m.set("epochs", t.epochs);
    m.set("batch", t.batch);
    m.set("split_ratio", t.split);
    m.set("train_theta", t.theta);
    m.set("seed", t.seed);
    m.set("clips_per_epoch", t.clips_per_epoch);
}

void finish_manifest(RunManifest& m, const fs::path& dir) {
    m.set("threads", effective_threads());
    m.set("finished_utc", timestamp_utc_now());
    m.write(dir / "manifest.txt");
}

RunManifest start_manifest(const std::string& command) {
    RunManifest m;
    m.set("command", command);
    m.set("version", tool_version());
    m.set("started_utc", timestamp_utc_now());
    return m;
}

void print_table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width;
    for (const auto& row : rows) {
        if (width.size() < row.size()) width.resize(row.size(), 0);
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    for (const auto& row : rows) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) {
            line += row[c];
            if (c + 1 < row.size()) line += std::string(width[c] - row[c].size() + 2, ' ');
        }
        std::puts(line.c_str());
    }
}

std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

void print_sweep_rows(std::span<const ThetaSweepRow> rows) {
    std::vector<std::vector<std::string>> table;
    table.push_back({"theta", "p3", "p5", "p10", "inp_sp", "hid_sp", "tot_sp", "eff_macs/frame"});
    for (const auto& r : rows) {
        const double eff = r.frames ? static_cast<double>(r.summary.all_effective()) / r.frames : 0;
        table.push_back({fmt(r.theta, "%.3f"), fmt(r.p3), fmt(r.p5), fmt(r.p10),
                         fmt(r.summary.net_inp_sp), fmt(r.summary.net_hid_sp),
                         fmt(r.summary.net_tot_sp), fmt(eff, "%.0f")});
    }
    print_table(table);
}

} // namespace

int effective_threads() {
    int requested = 1;
    if (const char* env = std::getenv("THREETET_THREADS")) {
        requested = std::atoi(env);
        if (requested < 1) requested = 1;
    }
    return std::min(requested, 1);
}

void cmd_gen(const GenOptions& opt) {
    const fs::path dir(opt.out);
    if (fs::exists(dir) && !opt.force)
        throw DataError("output path '" + opt.out + "' exists; pass --force to overwrite");
    if (opt.duration_s <= 0) throw DataError("duration must be positive");

    RunManifest manifest = start_manifest("gen");
    SyntheticSceneConfig scene = opt.scene;
    scene.seed = opt.seed;

    const std::uint64_t duration_us = static_cast<std::uint64_t>(opt.duration_s * 1e6);
    const std::uint64_t n_frames = duration_us / opt.delta_t_us;
    if (n_frames == 0) throw DataError("duration shorter than one frame bin");
    const std::uint64_t effective_us = n_frames * opt.delta_t_us;

    const SyntheticStream stream = generate_synthetic_stream(scene, effective_us);
    std::vector<Label> labels(n_frames);
    for (std::uint64_t k = 0; k < n_frames; ++k)
        labels[k] = stream.trajectory.position_at((k + 1) * opt.delta_t_us);

    const Dataset ds = assemble_dataset(scene.width, scene.height, opt.delta_t_us, opt.seed,
                                        stream.events, std::move(labels));
    write_dataset(dir, ds);

    manifest.set("seed", opt.seed);
    manifest.set("gen_sub_seed_scene", sub_seed(opt.seed, "synthetic-scene"));
    manifest.set("gen_sub_seed_noise", sub_seed(opt.seed, "synthetic-noise"));
    manifest.set("duration_s", opt.duration_s);
    manifest.set("delta_t_us", opt.delta_t_us);
    manifest.set("width", scene.width);
    manifest.set("height", scene.height);
    manifest.set("frames", n_frames);
    manifest.set("events", static_cast<std::uint64_t>(ds.events.size()));
    manifest.set("noise_rate", scene.noise_rate);
    manifest.set("event_threshold", scene.event_threshold);
    manifest.set("max_speed", scene.max_speed);
    manifest.set("saccade_rate", scene.saccade_rate);
    manifest.set("saccade_amplitude", scene.saccade_amplitude);
    manifest.set("pupil_radius_min", scene.pupil_radius_min);
    manifest.set("pupil_radius_max", scene.pupil_radius_max);
    manifest.set("out", opt.out);
    finish_manifest(manifest, dir);
    std::printf("wrote %zu events over %llu frames to %s\n", ds.events.size(),
                static_cast<unsigned long long>(n_frames), opt.out.c_str());
}

bool cmd_train(const TrainOptions& opt) {
    const Dataset ds = read_dataset(opt.data);
    const fs::path dir(opt.out);
    fs::create_directories(dir);

    RunManifest manifest = start_manifest("train");
    ModelConfig mcfg = make_model_config(opt.model, ds.width, ds.height);
    mcfg.seq_len = opt.train.seq_len;
    mcfg.theta = opt.train.theta;

    Model<float> model = build_model<float>(mcfg, sub_seed(opt.train.seed, "model-weights"));
    const TrainReport report = train(model, ds, opt.train);

    save_weights(model, dir / "weights.3etw");
    atomic_write_file(dir / "report.csv", train_report_csv(report));

    manifest.set("data", opt.data);
    add_model_flags(manifest, opt.model);
    add_train_flags(manifest, opt.train);
    manifest.set("model_sub_seed", sub_seed(opt.train.seed, "model-weights"));
    manifest.set("parameters", static_cast<std::uint64_t>(model.param_count()));
    manifest.set("train_clips",
                 static_cast<std::uint64_t>(
                     train_frame_count(ds.frames.size(), opt.train.split) >= static_cast<std::size_t>(opt.train.seq_len)
                         ? train_frame_count(ds.frames.size(), opt.train.split) - opt.train.seq_len + 1
                         : 0));
    manifest.set("nan_aborted", report.nan_aborted ? "true" : "false");
    if (!report.note.empty()) manifest.set("note", report.note);
    manifest.set("out", opt.out);
    finish_manifest(manifest, dir);

    if (!report.epochs.empty()) {
        const EpochRow& last = report.epochs.back();
        std::printf("epoch %d: train_loss %.6g val_loss %.6g p5 %.4f p10 %.4f\n", last.epoch,
                    last.train_loss, last.val_loss, last.p5, last.p10);
    }
    if (report.nan_aborted) std::fprintf(stderr, "%s\n", report.note.c_str());
    return !report.nan_aborted;
}

void cmd_eval(const EvalOptions& opt) {
    const Dataset ds = read_dataset(opt.data);
    const ModelConfig mcfg = make_model_config(opt.model, ds.width, ds.height);
    const Model<float> model = load_weights<float>(opt.weights, mcfg);
    const auto [begin, end] = split_range(ds, opt.split, opt.split_ratio);
    if (begin >= end) throw DataError("selected split is empty");

    const std::vector<double> theta = {opt.model.theta};
    const auto rows = sweep_theta(model, ds, theta, begin, end, opt.model.seq_len);

    const fs::path dir(opt.out);
    fs::create_directories(dir);
    atomic_write_file(dir / "metrics.csv", theta_sweep_csv(rows));

    RunManifest manifest = start_manifest("eval");
    manifest.set("data", opt.data);
    manifest.set("weights", opt.weights);
    add_model_flags(manifest, opt.model);
    manifest.set("split", opt.split);
    manifest.set("frames", static_cast<std::uint64_t>(rows[0].frames));
    manifest.set("out", opt.out);
    finish_manifest(manifest, dir);
    print_sweep_rows(rows);
}

void cmd_sweep_theta(const SweepThetaOptions& opt) {
    const Dataset ds = read_dataset(opt.data);
    const ModelConfig mcfg = make_model_config(opt.model, ds.width, ds.height);
    const Model<float> model = load_weights<float>(opt.weights, mcfg);
    const auto [begin, end] = split_range(ds, opt.split, opt.split_ratio);
    if (begin >= end) throw DataError("selected split is empty");

    auto rows = sweep_theta(model, ds, opt.thetas, begin, end, opt.model.seq_len);

    if (!opt.baseline_weights.empty()) {
        ModelFlags base_flags = opt.model;
        base_flags.cell = "vanilla";
        const ModelConfig base_cfg = make_model_config(base_flags, ds.width, ds.height);
        const Model<float> baseline = load_weights<float>(opt.baseline_weights, base_cfg);
        const EvalResult base =
            evaluate_model(baseline, ds, begin, end, 0.0, opt.model.seq_len);
        const SparsitySummary bsum = sparsity_summary(base.trace, base_cfg);
        for (auto& row : rows)
            if (row.summary.all_effective() > 0)
                row.reduction_vs_baseline = static_cast<double>(bsum.all_effective()) /
                                            static_cast<double>(row.summary.all_effective());
    }

    const fs::path dir(opt.out);
    fs::create_directories(dir);
    atomic_write_file(dir / "sweep_theta.csv", theta_sweep_csv(rows));

    RunManifest manifest = start_manifest("sweep-theta");
    manifest.set("data", opt.data);
    manifest.set("weights", opt.weights);
    if (!opt.baseline_weights.empty()) manifest.set("baseline_weights", opt.baseline_weights);
    add_model_flags(manifest, opt.model);
    std::string ts;
    for (std::size_t i = 0; i < opt.thetas.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", opt.thetas[i]);
        ts += (i ? "," : "") + std::string(buf);
    }
    manifest.set("thetas", ts);
    manifest.set("split", opt.split);
    manifest.set("out", opt.out);
    finish_manifest(manifest, dir);
    print_sweep_rows(rows);
}

void cmd_sweep_seqlen(const SweepSeqLenOptions& opt) {
    const Dataset ds = read_dataset(opt.data);
    ModelConfig mcfg = make_model_config(opt.model, ds.width, ds.height);
    TrainConfig tcfg = opt.train;
    mcfg.theta = tcfg.theta;

    const auto rows = sweep_sequence_length<float>(ds, opt.seq_lens, mcfg, tcfg);

    const fs::path dir(opt.out);
    fs::create_directories(dir);
    atomic_write_file(dir / "sweep_seqlen.csv", seqlen_sweep_csv(rows));

    RunManifest manifest = start_manifest("sweep-seqlen");
    manifest.set("data", opt.data);
    add_model_flags(manifest, opt.model);
    add_train_flags(manifest, opt.train);
    std::string ls;
    for (std::size_t i = 0; i < opt.seq_lens.size(); ++i)
        ls += (i ? "," : "") + std::to_string(opt.seq_lens[i]);
    manifest.set("seq_lens", ls);
    manifest.set("out", opt.out);
    finish_manifest(manifest, dir);

    std::vector<std::vector<std::string>> table;
    table.push_back({"seq_len", "p3", "p5", "p10"});
    for (const auto& r : rows)
        table.push_back({std::to_string(r.seq_len), fmt(r.p3), fmt(r.p5), fmt(r.p10)});
    print_table(table);
}

void cmd_count_ops(const CountOpsOptions& opt) {
    int width = opt.width, height = opt.height;
    Dataset ds;
    const bool measured = !opt.data.empty();
    if (measured) {
        ds = read_dataset(opt.data);
        width = ds.width;
        height = ds.height;
    }
    const ModelConfig mcfg = make_model_config(opt.model, width, height);
    const DenseMacsReport dense = count_dense_macs(mcfg);
    const int k = opt.flops_per_mac;
    if (k != 1 && k != 2) throw DataError("flops-per-mac must be 1 or 2");

    SparsitySummary summary;
    bool have_summary = false;
    if (measured) {
        if (opt.weights.empty()) throw DataError("count-ops with --data also needs --weights");
        const Model<float> model = load_weights<float>(opt.weights, mcfg);
        const auto [begin, end] = split_range(ds, opt.split, opt.split_ratio);
        if (begin >= end) throw DataError("selected split is empty");
        const EvalResult r = evaluate_model(model, ds, begin, end, opt.model.theta, opt.model.seq_len);
        summary = sparsity_summary(r.trace, mcfg);
        have_summary = true;
    }

    std::string csv = "layer,path,dense_macs_per_frame,dense_flops_per_frame,dense_macs_per_sequence,"
                      "effective_macs_per_frame,effective_flops_per_frame\n";
    std::vector<std::vector<std::string>> table;
    table.push_back({"layer", "path", "dense MACs/frame", "dense/seq", "effective/frame"});
    char buf[256];
    auto add_row = [&](const std::string& layer, const char* path, std::uint64_t per_frame,
                       double eff_per_frame, bool have_eff) {
        const std::uint64_t per_seq = per_frame * mcfg.seq_len;
        std::string eff_m = "", eff_f = "";
        if (have_eff) {
            eff_m = fmt(eff_per_frame, "%.1f");
            eff_f = fmt(eff_per_frame * k, "%.1f");
        }
        std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%llu,%llu,%s,%s\n", layer.c_str(), path,
                      static_cast<unsigned long long>(per_frame),
                      static_cast<unsigned long long>(per_frame * k),
                      static_cast<unsigned long long>(per_seq), eff_m.c_str(), eff_f.c_str());
        csv += buf;
        table.push_back({layer, path, std::to_string(per_frame), std::to_string(per_seq),
                         have_eff ? eff_m : std::string("-")});
    };

    for (std::size_t l = 0; l < dense.conv.size(); ++l) {
        double eff_in = 0, eff_hid = 0;
        if (have_summary && summary.steps) {
            eff_in = static_cast<double>(summary.layers[l].effective_input) / summary.steps;
            eff_hid = static_cast<double>(summary.layers[l].effective_hidden) / summary.steps;
        }
        add_row(dense.conv[l].layer, "input", dense.conv[l].input_path, eff_in, have_summary);
        add_row(dense.conv[l].layer, "hidden", dense.conv[l].hidden_path, eff_hid, have_summary);
    }
    double eff_fc1 = 0, eff_fc2 = 0, eff_total = 0;
    if (have_summary && summary.steps) {
        eff_fc1 = static_cast<double>(dense.fc1) * (1.0 - summary.fc1_sp);
        eff_fc2 = static_cast<double>(dense.fc2) * (1.0 - summary.fc2_sp);
        eff_total = static_cast<double>(summary.all_effective()) / summary.steps;
    }
    add_row("fc1", "fc", dense.fc1, eff_fc1, have_summary);
    add_row("fc2", "fc", dense.fc2, eff_fc2, have_summary);
    add_row("total", "all", dense.total(), eff_total, have_summary);

    std::printf("parameters: %llu\n", static_cast<unsigned long long>(count_parameters(mcfg)));
    print_table(table);

    if (!opt.out.empty()) {
        const fs::path dir(opt.out);
        fs::create_directories(dir);
        atomic_write_file(dir / "count_ops.csv", csv);
        RunManifest manifest = start_manifest("count-ops");
        if (measured) {
            manifest.set("data", opt.data);
            manifest.set("weights", opt.weights);
            manifest.set("split", opt.split);
        }
        add_model_flags(manifest, opt.model);
        manifest.set("width", width);
        manifest.set("height", height);
        manifest.set("flops_per_mac", k);
        manifest.set("parameters", count_parameters(mcfg));
        manifest.set("out", opt.out);
        finish_manifest(manifest, dir);
    }
}

} // namespace tet::cli
