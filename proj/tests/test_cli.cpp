#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "cli_commands.hpp"
#include "tet/dataset_io.hpp"
#include "tet/fileio.hpp"
#include "tet/manifest.hpp"

using namespace tet;
namespace fs = std::filesystem;

#ifndef TET_BINARY_PATH
#define TET_BINARY_PATH ""
#endif

namespace {

struct TempDir {
    fs::path path;
    TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string s(const char* sub) const { return (path / sub).string(); }
};

// desk-scale generation settings shared by the tests below
cli::GenOptions desk_gen(const std::string& out, std::uint64_t seed, double duration_s = 4.0) {
    cli::GenOptions g;
    g.out = out;
    g.seed = seed;
    g.duration_s = duration_s;
    g.scene.width = 32;
    g.scene.height = 24;
    g.scene.pupil_radius_min = 4;
    g.scene.pupil_radius_max = 6;
    g.scene.max_speed = 40;
    g.scene.saccade_amplitude = 8;
    return g;
}

cli::ModelFlags desk_model() {
    cli::ModelFlags m;
    m.cell = "vanilla";
    m.channels = {4, 8};
    m.fc_hidden = 16;
    m.seq_len = 8;
    return m;
}

int run_binary(const std::string& args) {
    const std::string cmd = std::string(TET_BINARY_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

} // namespace

TEST_CASE("gen is deterministic and respects --force") {
    TempDir dir("tet_cli_gen");
    cli::cmd_gen(desk_gen(dir.s("d1"), 7));
    CHECK_THROWS_AS(cli::cmd_gen(desk_gen(dir.s("d1"), 7)), DataError); // exists, no --force

    auto again = desk_gen(dir.s("d1"), 7);
    again.force = true;
    cli::cmd_gen(again);
    cli::cmd_gen(desk_gen(dir.s("d2"), 7));
    CHECK(read_file_bytes(dir.path / "d1/events.evt") == read_file_bytes(dir.path / "d2/events.evt"));
    CHECK(read_file_bytes(dir.path / "d1/labels.csv") == read_file_bytes(dir.path / "d2/labels.csv"));

    const RunManifest m = RunManifest::read(dir.path / "d1/manifest.txt");
    CHECK(m.find("command"));
    CHECK(*m.find("command") == "gen");
    CHECK(*m.find("frames") == "909"); // floor(4.0 / 0.0044)
}

TEST_CASE("gen frame count follows floor(duration / delta_t)") {
    TempDir dir("tet_cli_frames");
    auto g = desk_gen(dir.s("d"), 3, 1.0);
    cli::cmd_gen(g);
    const Dataset ds = read_dataset(dir.s("d"));
    CHECK(ds.frames.size() == 227); // floor(1e6 / 4400)
}

TEST_CASE("train writes weights, report, and manifest; epochs 0 trains nothing") {
    TempDir dir("tet_cli_train");
    cli::cmd_gen(desk_gen(dir.s("ds"), 21));
    const std::string ds_events_before = read_file_bytes(dir.path / "ds/events.evt");

    cli::TrainOptions t0;
    t0.data = dir.s("ds");
    t0.out = dir.s("run0");
    t0.model = desk_model();
    t0.train.epochs = 0;
    t0.train.seq_len = 8;
    t0.train.seed = 5;
    CHECK(cli::cmd_train(t0));
    CHECK(read_file_bytes(dir.path / "run0/report.csv") == "epoch,train_loss,val_loss,p3,p5,p10,seconds\n");
    CHECK(fs::exists(dir.path / "run0/weights.3etw"));
    CHECK(fs::exists(dir.path / "run0/manifest.txt"));

    // lr 0 for any number of epochs leaves the weight file byte-identical
    cli::TrainOptions tz = t0;
    tz.out = dir.s("runz");
    tz.train.epochs = 3;
    tz.train.lr = 0.0;
    tz.train.clips_per_epoch = 8;
    CHECK(cli::cmd_train(tz));
    CHECK(read_file_bytes(dir.path / "run0/weights.3etw") == read_file_bytes(dir.path / "runz/weights.3etw"));

    // inputs are never mutated
    CHECK(read_file_bytes(dir.path / "ds/events.evt") == ds_events_before);
}

TEST_CASE("gen-train-eval pipeline is reproducible byte for byte") {
    TempDir dir("tet_cli_pipe");
    for (const char* tag : {"a", "b"}) {
        const std::string base = dir.s(tag);
        auto g = desk_gen(base + "/ds", 42, 6.0);
        cli::cmd_gen(g);
        cli::TrainOptions t;
        t.data = base + "/ds";
        t.out = base + "/run";
        t.model = desk_model();
        t.train.epochs = 2;
        t.train.batch = 8;
        t.train.seq_len = 8;
        t.train.lr = 0.01;
        t.train.clips_per_epoch = 24;
        t.train.seed = 42;
        CHECK(cli::cmd_train(t));
        cli::EvalOptions e;
        e.data = base + "/ds";
        e.weights = base + "/run/weights.3etw";
        e.out = base + "/eval";
        e.model = desk_model();
        cli::cmd_eval(e);
    }
    for (const char* f : {"ds/events.evt", "ds/labels.csv", "ds/meta.toml", "run/weights.3etw",
                          "eval/metrics.csv"})
        CHECK(read_file_bytes(dir.path / "a" / f) == read_file_bytes(dir.path / "b" / f));

    // train report differs only in the wall-clock column
    const std::string ra = read_file_bytes(dir.path / "a/run/report.csv");
    const std::string rb = read_file_bytes(dir.path / "b/run/report.csv");
    auto strip_seconds = [](const std::string& csv) {
        std::string out;
        for (std::size_t pos = 0; pos < csv.size();) {
            const std::size_t eol = csv.find('\n', pos);
            const std::string line = csv.substr(pos, eol - pos);
            out += line.substr(0, line.rfind(','));
            out += '\n';
            pos = eol + 1;
        }
        return out;
    };
    CHECK(strip_seconds(ra) == strip_seconds(rb));
}

TEST_CASE("eval on the training split is at least as good as validation") {
    TempDir dir("tet_cli_optimism");
    cli::cmd_gen(desk_gen(dir.s("ds"), 31, 6.0));
    cli::TrainOptions t;
    t.data = dir.s("ds");
    t.out = dir.s("run");
    t.model = desk_model();
    t.train.epochs = 6;
    t.train.batch = 8;
    t.train.seq_len = 8;
    t.train.lr = 0.02;
    t.train.clips_per_epoch = 64;
    t.train.seed = 31;
    REQUIRE(cli::cmd_train(t));

    auto eval_split = [&](const char* split, const char* out) {
        cli::EvalOptions e;
        e.data = dir.s("ds");
        e.weights = dir.s("run") + "/weights.3etw";
        e.out = dir.s(out);
        e.model = desk_model();
        e.split = split;
        cli::cmd_eval(e);
        // p10 is the last full-rate column on the network_all row
        const std::string csv = read_file_bytes(fs::path(dir.s(out)) / "metrics.csv");
        const std::size_t row = csv.find("network_all");
        REQUIRE(row != std::string::npos);
        // columns: ...,p3,p5,p10,reduction
        std::size_t end = csv.find('\n', row);
        std::string line = csv.substr(row, end - row);
        std::vector<std::string> cols;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const std::size_t c = line.find(',', pos);
            cols.push_back(line.substr(pos, c - pos));
            if (c == std::string::npos) break;
            pos = c + 1;
        }
        return std::stod(cols[cols.size() - 2]); // p10
    };
    const double train_p10 = eval_split("train", "ev_train");
    const double val_p10 = eval_split("val", "ev_val");
    // sanity check, not a theorem: allow a little saturation noise at desk scale
    CHECK(train_p10 >= val_p10 - 0.02);
}

TEST_CASE("count-ops and sweep commands write their CSVs") {
    TempDir dir("tet_cli_ops");
    cli::CountOpsOptions co;
    co.model = desk_model();
    co.width = 80;
    co.height = 60;
    co.model.channels = {8, 16, 32, 64};
    co.model.fc_hidden = 128;
    co.model.seq_len = 40;
    co.out = dir.s("ops");
    cli::cmd_count_ops(co);
    const std::string csv = read_file_bytes(dir.path / "ops/count_ops.csv");
    CHECK(csv.find("convlstm1,input,1382400") != std::string::npos);
    CHECK(csv.find("convlstm1,hidden,11059200") != std::string::npos);

    cli::cmd_gen(desk_gen(dir.s("ds"), 17));
    cli::TrainOptions t;
    t.data = dir.s("ds");
    t.out = dir.s("cb");
    t.model = desk_model();
    t.model.cell = "cb";
    t.train.epochs = 1;
    t.train.batch = 8;
    t.train.seq_len = 8;
    t.train.lr = 0.01;
    t.train.clips_per_epoch = 16;
    REQUIRE(cli::cmd_train(t));
    cli::TrainOptions tv = t;
    tv.model.cell = "vanilla";
    tv.out = dir.s("van");
    REQUIRE(cli::cmd_train(tv));

    cli::SweepThetaOptions st;
    st.data = dir.s("ds");
    st.weights = dir.s("cb") + "/weights.3etw";
    st.baseline_weights = dir.s("van") + "/weights.3etw";
    st.out = dir.s("sweep");
    st.model = t.model;
    cli::cmd_sweep_theta(st);
    const std::string sweep = read_file_bytes(dir.path / "sweep/sweep_theta.csv");
    CHECK(sweep.find("reduction_vs_baseline") != std::string::npos);
    CHECK(sweep.find("0.500,network_all") != std::string::npos);

    cli::SweepSeqLenOptions sl;
    sl.data = dir.s("ds");
    sl.out = dir.s("seq");
    sl.model = t.model;
    sl.train = t.train;
    sl.seq_lens = {2, 4};
    cli::cmd_sweep_seqlen(sl);
    const std::string seq = read_file_bytes(dir.path / "seq/sweep_seqlen.csv");
    CHECK(seq.rfind("seq_len,p3,p5,p10\n", 0) == 0);
}

TEST_CASE("binary exit codes: 0 success, 2 usage, 3 data validation") {
    if (std::string(TET_BINARY_PATH).empty()) return;
    TempDir dir("tet_cli_exit");
    CHECK(run_binary("definitely-not-a-command") == 2);
    CHECK(run_binary("gen") == 2); // missing required --out
    CHECK(run_binary("eval --data /nonexistent --weights /nope --out " + dir.s("x")) == 3);
    CHECK(run_binary("gen --out " + dir.s("ok") + " --duration-s 0.5 --width 32 --height 24"
                     " --pupil-r-min 4 --pupil-r-max 6") == 0);
    CHECK(run_binary("gen --out " + dir.s("ok") + " --duration-s 0.5 --width 32 --height 24"
                     " --pupil-r-min 4 --pupil-r-max 6") == 3); // exists without --force
}
