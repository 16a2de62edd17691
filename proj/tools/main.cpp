// 3et: event-based pupil tracking pipeline.
// Subcommands cover the whole flow: synthetic dataset generation, training,
// evaluation, the theta / sequence-length sweeps, and operation counting.

#include <CLI11.hpp>
#include <cstdio>

#include "cli_commands.hpp"
#include "tet/errors.hpp"

namespace {

void add_model_flags(CLI::App* cmd, tet::cli::ModelFlags& f, bool with_theta = true) {
    cmd->add_option("--cell", f.cell, "Cell kind: vanilla|cb")->default_val(f.cell);
    cmd->add_option("--delta-rule", f.delta_rule, "Delta threshold rule: magnitude|signed")
        ->default_val(f.delta_rule);
    cmd->add_option("--channels", f.channels, "Hidden channels per recurrent layer")
        ->delimiter(',')
        ->default_val(f.channels);
    cmd->add_option("--fc-hidden", f.fc_hidden, "First FC layer width")->default_val(f.fc_hidden);
    if (with_theta)
        cmd->add_option("--theta", f.theta, "Delta threshold")->default_val(f.theta);
    cmd->add_option("--seq-len", f.seq_len, "Sequence length / evaluation window")
        ->default_val(f.seq_len);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"3et: efficient event-based pupil tracking"};
    app.require_subcommand(1);

    tet::cli::GenOptions gen;
    CLI::App* cgen = app.add_subcommand("gen", "Generate a synthetic labeled event dataset");
    cgen->add_option("--out", gen.out, "Output dataset directory")->required();
    cgen->add_flag("--force", gen.force, "Overwrite an existing output directory");
    cgen->add_option("--seed", gen.seed)->default_val(gen.seed);
    cgen->add_option("--duration-s", gen.duration_s)->default_val(gen.duration_s);
    cgen->add_option("--delta-t-us", gen.delta_t_us)->default_val(gen.delta_t_us);
    cgen->add_option("--width", gen.scene.width)->default_val(gen.scene.width);
    cgen->add_option("--height", gen.scene.height)->default_val(gen.scene.height);
    cgen->add_option("--noise-rate", gen.scene.noise_rate, "Background events/pixel/second")
        ->default_val(gen.scene.noise_rate);
    cgen->add_option("--event-threshold", gen.scene.event_threshold)
        ->default_val(gen.scene.event_threshold);
    cgen->add_option("--max-speed", gen.scene.max_speed)->default_val(gen.scene.max_speed);
    cgen->add_option("--saccade-rate", gen.scene.saccade_rate)->default_val(gen.scene.saccade_rate);
    cgen->add_option("--saccade-amplitude", gen.scene.saccade_amplitude)
        ->default_val(gen.scene.saccade_amplitude);
    cgen->add_option("--pupil-r-min", gen.scene.pupil_radius_min)->default_val(gen.scene.pupil_radius_min);
    cgen->add_option("--pupil-r-max", gen.scene.pupil_radius_max)->default_val(gen.scene.pupil_radius_max);

    tet::cli::TrainOptions tr;
    CLI::App* ctrain = app.add_subcommand("train", "Train a tracking model on a dataset");
    ctrain->add_option("--data", tr.data)->required();
    ctrain->add_option("--out", tr.out)->required();
    add_model_flags(ctrain, tr.model, false);
    ctrain->add_option("--theta", tr.train.theta, "Delta threshold active during training")
        ->default_val(tr.train.theta);
    ctrain->add_option("--lr", tr.train.lr)->default_val(tr.train.lr);
    ctrain->add_option("--epochs", tr.train.epochs)->default_val(tr.train.epochs);
    ctrain->add_option("--batch", tr.train.batch)->default_val(tr.train.batch);
    ctrain->add_option("--split", tr.train.split)->default_val(tr.train.split);
    ctrain->add_option("--seed", tr.train.seed)->default_val(tr.train.seed);
    ctrain->add_option("--clips-per-epoch", tr.train.clips_per_epoch,
                       "Cap on shuffled stride-1 clips per epoch (0 = all)")
        ->default_val(tr.train.clips_per_epoch);

    tet::cli::EvalOptions ev;
    CLI::App* ceval = app.add_subcommand("eval", "Evaluate trained weights on a dataset split");
    ceval->add_option("--data", ev.data)->required();
    ceval->add_option("--weights", ev.weights)->required();
    ceval->add_option("--out", ev.out)->required();
    add_model_flags(ceval, ev.model);
    ceval->add_option("--split", ev.split, "train|val|all")->default_val(ev.split);
    ceval->add_option("--split-ratio", ev.split_ratio)->default_val(ev.split_ratio);

    tet::cli::SweepThetaOptions st;
    CLI::App* csweep = app.add_subcommand("sweep-theta", "Evaluate one model across thresholds");
    csweep->add_option("--data", st.data)->required();
    csweep->add_option("--weights", st.weights)->required();
    csweep->add_option("--baseline-weights", st.baseline_weights,
                       "Vanilla weights for the reduction column");
    csweep->add_option("--out", st.out)->required();
    add_model_flags(csweep, st.model, false);
    csweep->add_option("--thetas", st.thetas)->delimiter(',')->default_val(st.thetas);
    csweep->add_option("--split", st.split)->default_val(st.split);
    csweep->add_option("--split-ratio", st.split_ratio)->default_val(st.split_ratio);

    tet::cli::SweepSeqLenOptions sl;
    CLI::App* cseq = app.add_subcommand("sweep-seqlen", "Train and evaluate across sequence lengths");
    cseq->add_option("--data", sl.data)->required();
    cseq->add_option("--out", sl.out)->required();
    add_model_flags(cseq, sl.model, false);
    cseq->add_option("--seq-lens", sl.seq_lens)->delimiter(',')->default_val(sl.seq_lens);
    cseq->add_option("--lr", sl.train.lr)->default_val(sl.train.lr);
    cseq->add_option("--epochs", sl.train.epochs)->default_val(sl.train.epochs);
    cseq->add_option("--batch", sl.train.batch)->default_val(sl.train.batch);
    cseq->add_option("--split", sl.train.split)->default_val(sl.train.split);
    cseq->add_option("--seed", sl.train.seed)->default_val(sl.train.seed);
    cseq->add_option("--theta", sl.train.theta)->default_val(sl.train.theta);
    cseq->add_option("--clips-per-epoch", sl.train.clips_per_epoch)
        ->default_val(sl.train.clips_per_epoch);

    tet::cli::CountOpsOptions co;
    CLI::App* cops = app.add_subcommand("count-ops", "Analytic and measured MAC counts");
    cops->add_option("--data", co.data, "Dataset for measured effective counts");
    cops->add_option("--weights", co.weights);
    cops->add_option("--out", co.out, "Optional output directory for the CSV");
    add_model_flags(cops, co.model);
    cops->add_option("--width", co.width)->default_val(co.width);
    cops->add_option("--height", co.height)->default_val(co.height);
    cops->add_option("--flops-per-mac", co.flops_per_mac, "Report flops as 1 or 2 per MAC")
        ->default_val(co.flops_per_mac);
    cops->add_option("--split", co.split)->default_val(co.split);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cgen->parsed()) tet::cli::cmd_gen(gen);
        if (ctrain->parsed()) {
            tr.train.seq_len = tr.model.seq_len;
            if (!tet::cli::cmd_train(tr)) return 4;
        }
        if (ceval->parsed()) tet::cli::cmd_eval(ev);
        if (csweep->parsed()) tet::cli::cmd_sweep_theta(st);
        if (cseq->parsed()) tet::cli::cmd_sweep_seqlen(sl);
        if (cops->parsed()) tet::cli::cmd_count_ops(co);
    } catch (const tet::NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const tet::DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
    return 0;
}
